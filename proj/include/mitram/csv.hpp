#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mitram {

struct CsvParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source;

  int col(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    throw CsvParseError(source + ": no column named '" + name + "'");
  }

  bool has_col(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"')
        quoted = false;
      else
        field.push_back(c);
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw CsvParseError(where + ": unterminated quote");
  out.push_back(trim(field));
  return out;
}

}  // namespace detail

inline CsvTable parse_csv_text(const std::string& text, const std::string& source = "<string>") {
  CsvTable t;
  t.source = source;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    std::ostringstream where;
    where << source << ":" << lineno;
    auto fields = detail::split_csv_line(line, where.str());
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size())
        throw CsvParseError(where.str() + ": expected " + std::to_string(t.header.size()) +
                            " fields, got " + std::to_string(fields.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw CsvParseError(source + ": empty file");
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvParseError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_text(buf.str(), path);
}

// Strict numeric conversion; empty cells are the caller's business.
inline double parse_number(const std::string& s, const std::string& where) {
  const std::string v = detail::trim(s);
  if (v.empty()) throw CsvParseError(where + ": empty numeric field");
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size())
    throw CsvParseError(where + ": not a number: '" + v + "'");
  return x;
}

// Shortest representation that round-trips a double exactly.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace mitram
