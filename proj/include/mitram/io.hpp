#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mitram/csv.hpp"
#include "mitram/data.hpp"

namespace mitram {

// Which CSV columns play which part.  Exact (or ordinal) responses use `y`;
// interval responses use the bound pair, where an empty cell means the
// interval is open on that side.  Random-design tokens may be column names or
// the literal "1" for a constant.
struct DataRoles {
  std::string cluster;
  std::string y;
  std::string y_lower;
  std::string y_upper;
  std::vector<std::string> fixed;
  std::vector<std::string> random;
  std::string strata;

  bool interval() const { return y.empty(); }
};

inline Dataset parse_dataset(const CsvTable& t, const DataRoles& roles) {
  const int c_cluster = t.col(roles.cluster);
  int c_y = -1, c_lo = -1, c_hi = -1, c_strata = -1;
  if (roles.interval()) {
    if (roles.y_lower.empty() || roles.y_upper.empty())
      throw CsvParseError(t.source + ": interval data needs both bound columns");
    c_lo = t.col(roles.y_lower);
    c_hi = t.col(roles.y_upper);
  } else {
    c_y = t.col(roles.y);
  }
  if (!roles.strata.empty()) c_strata = t.col(roles.strata);

  std::vector<int> c_fixed, c_random;
  for (const auto& f : roles.fixed) c_fixed.push_back(t.col(f));
  for (const auto& r : roles.random) c_random.push_back(r == "1" ? -1 : t.col(r));

  Dataset data;
  data.exact = !roles.interval();
  data.fixed_names = roles.fixed;
  data.random_names = roles.random;

  // group rows by cluster id in order of first appearance
  std::map<std::string, std::size_t> cluster_index;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& id = t.rows[r][static_cast<std::size_t>(c_cluster)];
    auto [it, inserted] = cluster_index.try_emplace(id, members.size());
    if (inserted) {
      members.emplace_back();
      ids.push_back(id);
    }
    members[it->second].push_back(r);
  }

  std::map<std::string, int> strata_index;
  auto stratum_of = [&](const std::string& label) {
    auto [it, inserted] = strata_index.try_emplace(label, static_cast<int>(data.strata_labels.size()));
    if (inserted) data.strata_labels.push_back(label);
    return it->second;
  };

  const double inf = std::numeric_limits<double>::infinity();
  data.clusters.resize(members.size());
  for (std::size_t ci = 0; ci < members.size(); ++ci) {
    ClusterData& cl = data.clusters[ci];
    cl.id = ids[ci];
    cl.exact = data.exact;
    const int n = static_cast<int>(members[ci].size());
    cl.lo.resize(n);
    cl.hi.resize(n);
    cl.X.resize(n, static_cast<long>(c_fixed.size()));
    cl.U.resize(n, static_cast<long>(c_random.size()));
    if (c_strata >= 0) cl.stratum.resize(n);
    for (int i = 0; i < n; ++i) {
      const auto& row = t.rows[members[ci][static_cast<std::size_t>(i)]];
      const std::string where = t.source + " cluster " + cl.id;
      if (c_y >= 0) {
        cl.lo[i] = cl.hi[i] = parse_number(row[static_cast<std::size_t>(c_y)], where);
      } else {
        const std::string& slo = row[static_cast<std::size_t>(c_lo)];
        const std::string& shi = row[static_cast<std::size_t>(c_hi)];
        cl.lo[i] = slo.empty() ? -inf : parse_number(slo, where);
        cl.hi[i] = shi.empty() ? inf : parse_number(shi, where);
      }
      for (std::size_t j = 0; j < c_fixed.size(); ++j)
        cl.X(i, static_cast<long>(j)) =
            parse_number(row[static_cast<std::size_t>(c_fixed[j])], where);
      for (std::size_t j = 0; j < c_random.size(); ++j)
        cl.U(i, static_cast<long>(j)) =
            c_random[j] < 0 ? 1.0 : parse_number(row[static_cast<std::size_t>(c_random[j])], where);
      if (c_strata >= 0) cl.stratum[i] = stratum_of(row[static_cast<std::size_t>(c_strata)]);
    }
  }
  data.validate();
  return data;
}

// Canonical CSV form: cluster, bounds (or the exact value), stratum when
// present, then every named design column once.  parse(serialize(d)) == d.
inline void write_dataset(std::ostream& os, const Dataset& data) {
  std::vector<std::string> design_cols;
  auto add_col = [&](const std::string& name) {
    if (name == "1") return;
    if (std::find(design_cols.begin(), design_cols.end(), name) == design_cols.end())
      design_cols.push_back(name);
  };
  for (const auto& f : data.fixed_names) add_col(f);
  for (const auto& r : data.random_names) add_col(r);
  const bool strata = !data.strata_labels.empty();

  os << "cluster";
  if (data.exact)
    os << ",y";
  else
    os << ",y_lower,y_upper";
  if (strata) os << ",stratum";
  for (const auto& c : design_cols) os << "," << c;
  os << "\n";

  auto design_value = [&](const ClusterData& cl, int i, const std::string& name) {
    for (std::size_t j = 0; j < data.fixed_names.size(); ++j)
      if (data.fixed_names[j] == name) return cl.X(i, static_cast<long>(j));
    for (std::size_t j = 0; j < data.random_names.size(); ++j)
      if (data.random_names[j] == name) return cl.U(i, static_cast<long>(j));
    return 0.0;  // unreachable for columns collected above
  };

  for (const auto& cl : data.clusters) {
    for (int i = 0; i < cl.size(); ++i) {
      os << cl.id;
      if (data.exact) {
        os << "," << format_number(cl.lo[i]);
      } else {
        os << ",";
        if (std::isfinite(cl.lo[i])) os << format_number(cl.lo[i]);
        os << ",";
        if (std::isfinite(cl.hi[i])) os << format_number(cl.hi[i]);
      }
      if (strata) os << "," << data.strata_labels[static_cast<std::size_t>(cl.stratum_of(i))];
      for (const auto& c : design_cols) os << "," << format_number(design_value(cl, i, c));
      os << "\n";
    }
  }
}

inline DataRoles roles_of(const Dataset& data) {
  DataRoles roles;
  roles.cluster = "cluster";
  if (data.exact) {
    roles.y = "y";
  } else {
    roles.y_lower = "y_lower";
    roles.y_upper = "y_upper";
  }
  if (!data.strata_labels.empty()) roles.strata = "stratum";
  roles.fixed = data.fixed_names;
  roles.random = data.random_names;
  return roles;
}

}  // namespace mitram
