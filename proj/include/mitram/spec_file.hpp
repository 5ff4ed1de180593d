#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitram/csv.hpp"
#include "mitram/cubature.hpp"
#include "mitram/data.hpp"
#include "mitram/io.hpp"
#include "mitram/simulate.hpp"

namespace mitram {

struct SpecParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sectioned key = value text, '#' comments, keys may contain spaces:
//
//   [model]
//   response = continuous
//   basis = bernstein 4
//
// Values are whitespace-separated token lists.  Unknown keys are rejected so
// typos surface instead of silently applying defaults.
class SpecFile {
 public:
  struct Entry {
    std::string value;
    long line = 0;
    mutable bool used = false;
  };

  static SpecFile parse_text(const std::string& text, const std::string& source) {
    SpecFile f;
    f.source_ = source;
    std::istringstream in(text);
    std::string line, section;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string s = detail::trim(line);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw SpecParseError(f.where(lineno) + ": malformed section header");
        section = detail::trim(s.substr(1, s.size() - 2));
        f.sections_[section];
        continue;
      }
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw SpecParseError(f.where(lineno) + ": expected key = value");
      if (section.empty())
        throw SpecParseError(f.where(lineno) + ": entry before any [section]");
      const std::string key = detail::trim(s.substr(0, eq));
      Entry e;
      e.value = detail::trim(s.substr(eq + 1));
      e.line = lineno;
      if (!f.sections_[section].emplace(key, e).second)
        throw SpecParseError(f.where(lineno) + ": duplicate key '" + key + "'");
    }
    return f;
  }

  static SpecFile parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SpecParseError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
  }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  std::optional<std::string> get(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    k->second.used = true;
    return k->second.value;
  }

  std::string require(const std::string& section, const std::string& key) const {
    auto v = get(section, key);
    if (!v)
      throw SpecParseError(source_ + ": missing required key '" + key + "' in [" + section + "]");
    return *v;
  }

  // every (section, key) pair whose key starts with `prefix `
  std::vector<std::pair<std::string, std::string>> prefixed(const std::string& section,
                                                            const std::string& prefix) const {
    std::vector<std::pair<std::string, std::string>> out;
    auto s = sections_.find(section);
    if (s == sections_.end()) return out;
    for (const auto& [key, entry] : s->second)
      if (key.rfind(prefix + " ", 0) == 0) {
        entry.used = true;
        out.emplace_back(detail::trim(key.substr(prefix.size() + 1)), entry.value);
      }
    return out;
  }

  void reject_unused(const std::vector<std::string>& known_sections) const {
    for (const auto& [sec, entries] : sections_) {
      bool known = false;
      for (const auto& k : known_sections) known = known || k == sec;
      if (!known) throw SpecParseError(source_ + ": unknown section [" + sec + "]");
      for (const auto& [key, entry] : entries)
        if (!entry.used)
          throw SpecParseError(where(entry.line) + ": unknown key '" + key + "' in [" + sec + "]");
    }
  }

  const std::string& source() const { return source_; }

 private:
  std::string where(long line) const { return source_ + ":" + std::to_string(line); }

  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

namespace detail {

inline std::vector<std::string> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline double spec_number(const std::string& s, const std::string& what) {
  try {
    return parse_number(s, what);
  } catch (const CsvParseError& e) {
    throw SpecParseError(e.what());
  }
}

}  // namespace detail

// Model + data-role + optimizer settings from a model spec file, before the
// dataset is seen.  Bernstein support and the strata count are resolved
// against the data later.
struct ModelConfig {
  std::string response;  // continuous | ordinal | interval
  int n_categories = 0;
  BasisKind basis = BasisKind::Linear;
  int order = 1;
  std::optional<std::pair<double, double>> support;
  LinkFamily link;
  Marginalization marg = Marginalization::M1;
  DataRoles roles;
  CubatureRule rule;
  int max_outer = 25;
  int max_inner = 200;
  double tol = 1e-6;
};

namespace detail {

inline void parse_model_section(const SpecFile& f, ModelConfig& cfg) {
  const auto resp = tokens(f.require("model", "response"));
  if (resp.empty()) throw SpecParseError(f.source() + ": empty response");
  cfg.response = resp[0];
  if (cfg.response == "ordinal") {
    if (resp.size() != 2)
      throw SpecParseError(f.source() + ": response = ordinal <categories>");
    cfg.n_categories = static_cast<int>(spec_number(resp[1], "categories"));
    cfg.basis = BasisKind::OrdinalThresholds;
  } else if (cfg.response == "continuous" || cfg.response == "interval") {
    const auto bas = tokens(f.require("model", "basis"));
    if (bas.empty()) throw SpecParseError(f.source() + ": empty basis");
    if (bas[0] == "linear") {
      cfg.basis = BasisKind::Linear;
    } else if (bas[0] == "loglinear") {
      cfg.basis = BasisKind::LogLinear;
    } else if (bas[0] == "bernstein") {
      cfg.basis = BasisKind::Bernstein;
      if (bas.size() != 2)
        throw SpecParseError(f.source() + ": basis = bernstein <order>");
      cfg.order = static_cast<int>(spec_number(bas[1], "order"));
    } else {
      throw SpecParseError(f.source() + ": unknown basis '" + bas[0] + "'");
    }
    if (auto sup = f.get("model", "support")) {
      const auto sv = tokens(*sup);
      if (sv.size() != 2) throw SpecParseError(f.source() + ": support = <lo> <hi>");
      cfg.support = {spec_number(sv[0], "support"), spec_number(sv[1], "support")};
    }
  } else {
    throw SpecParseError(f.source() + ": unknown response kind '" + cfg.response + "'");
  }
  try {
    cfg.link = LinkFamily::from_name(f.require("model", "link"));
  } catch (const std::invalid_argument& e) {
    throw SpecParseError(f.source() + ": " + e.what());
  }
  if (auto m = f.get("model", "marginalization")) {
    if (*m == "M1")
      cfg.marg = Marginalization::M1;
    else if (*m == "M2")
      cfg.marg = Marginalization::M2;
    else
      throw SpecParseError(f.source() + ": marginalization must be M1 or M2");
  }
}

inline void parse_data_section(const SpecFile& f, ModelConfig& cfg) {
  cfg.roles.cluster = f.require("data", "cluster");
  if (cfg.response == "interval") {
    cfg.roles.y_lower = f.require("data", "y_lower");
    cfg.roles.y_upper = f.require("data", "y_upper");
  } else {
    cfg.roles.y = f.require("data", "y");
  }
  if (auto v = f.get("data", "fixed")) cfg.roles.fixed = tokens(*v);
  cfg.roles.random = tokens(f.require("data", "random"));
  if (cfg.roles.random.empty())
    throw SpecParseError(f.source() + ": random design needs at least one column");
  if (auto v = f.get("data", "strata")) cfg.roles.strata = *v;
}

inline void parse_optimizer_section(const SpecFile& f, ModelConfig& cfg) {
  if (auto v = f.get("optimizer", "nodes"))
    cfg.rule.n = static_cast<long>(spec_number(*v, "nodes"));
  if (auto v = f.get("optimizer", "cubature")) {
    if (*v == "qmc")
      cfg.rule.kind = CubatureKind::QuasiMonteCarlo;
    else if (*v == "sparse")
      cfg.rule.kind = CubatureKind::SparseGrid;
    else
      throw SpecParseError(f.source() + ": cubature must be qmc or sparse");
  }
  if (auto v = f.get("optimizer", "max_outer"))
    cfg.max_outer = static_cast<int>(spec_number(*v, "max_outer"));
  if (auto v = f.get("optimizer", "max_inner"))
    cfg.max_inner = static_cast<int>(spec_number(*v, "max_inner"));
  if (auto v = f.get("optimizer", "tol")) cfg.tol = spec_number(*v, "tol");
}

}  // namespace detail

inline ModelConfig parse_model_config(const SpecFile& f) {
  ModelConfig cfg;
  detail::parse_model_section(f, cfg);
  detail::parse_data_section(f, cfg);
  detail::parse_optimizer_section(f, cfg);
  f.reject_unused({"model", "data", "optimizer"});
  return cfg;
}

// Builds the concrete model once the data are known: random-effect dimension
// from the design width, strata count from the label set, Bernstein support
// from the observed response range unless the file pinned one.
inline ModelSpec make_model_spec(const ModelConfig& cfg, const Dataset& data) {
  ModelSpec spec;
  spec.link = cfg.link;
  spec.marg = cfg.marg;
  spec.R = data.n_random();
  spec.n_strata = data.n_strata();
  switch (cfg.basis) {
    case BasisKind::Linear:
      spec.basis = TransformationBasis::linear();
      break;
    case BasisKind::LogLinear:
      spec.basis = TransformationBasis::log_linear();
      break;
    case BasisKind::OrdinalThresholds:
      spec.basis = TransformationBasis::ordinal(cfg.n_categories);
      break;
    case BasisKind::Bernstein: {
      double lo, hi;
      if (cfg.support) {
        lo = cfg.support->first;
        hi = cfg.support->second;
      } else {
        lo = std::numeric_limits<double>::infinity();
        hi = -lo;
        for (const auto& cl : data.clusters)
          for (int i = 0; i < cl.size(); ++i) {
            if (std::isfinite(cl.lo[i])) {
              lo = std::min(lo, cl.lo[i]);
              hi = std::max(hi, cl.lo[i]);
            }
            if (std::isfinite(cl.hi[i])) {
              lo = std::min(lo, cl.hi[i]);
              hi = std::max(hi, cl.hi[i]);
            }
          }
        if (!(lo < hi))
          throw std::invalid_argument("cannot infer a support interval from the responses");
      }
      spec.basis = TransformationBasis::bernstein(cfg.order, lo, hi);
      break;
    }
  }
  return spec;
}

// Simulation designs reuse the model grammar and add the generative sections.
inline SimulationDesign parse_design(const SpecFile& f) {
  ModelConfig cfg;
  detail::parse_model_section(f, cfg);

  SimulationDesign d;
  d.fixed_cols = detail::tokens(f.get("simulate", "fixed").value_or(""));
  d.random_cols = detail::tokens(f.require("simulate", "random"));
  if (d.random_cols.empty())
    throw SpecParseError(f.source() + ": random design needs at least one column");

  d.model.link = cfg.link;
  d.model.marg = cfg.marg;
  d.model.R = static_cast<int>(d.random_cols.size());
  d.model.n_strata = 1;
  switch (cfg.basis) {
    case BasisKind::Linear:
      d.model.basis = TransformationBasis::linear();
      break;
    case BasisKind::LogLinear:
      d.model.basis = TransformationBasis::log_linear();
      break;
    case BasisKind::OrdinalThresholds:
      d.model.basis = TransformationBasis::ordinal(cfg.n_categories);
      break;
    case BasisKind::Bernstein:
      if (!cfg.support)
        throw SpecParseError(f.source() + ": simulating a bernstein model requires explicit support");
      d.model.basis =
          TransformationBasis::bernstein(cfg.order, cfg.support->first, cfg.support->second);
      break;
  }

  auto vec = [&](const std::string& key, long expected) {
    const auto tv = detail::tokens(f.require("truth", key));
    if (static_cast<long>(tv.size()) != expected)
      throw SpecParseError(f.source() + ": [truth] " + key + " needs " +
                           std::to_string(expected) + " values");
    Eigen::VectorXd v(expected);
    for (long i = 0; i < expected; ++i)
      v[i] = detail::spec_number(tv[static_cast<std::size_t>(i)], key);
    return v;
  };
  d.truth.theta = vec("theta", d.model.basis.dim());
  d.truth.beta = vec("beta", static_cast<long>(d.fixed_cols.size()));
  d.truth.gamma = vec("gamma", d.model.gamma_dim());

  d.n_clusters = static_cast<int>(detail::spec_number(f.require("simulate", "clusters"), "clusters"));
  const auto sz = detail::tokens(f.require("simulate", "size"));
  if (sz.size() == 1) {
    d.size_lo = d.size_hi = static_cast<int>(detail::spec_number(sz[0], "size"));
  } else if (sz.size() == 2) {
    d.size_lo = static_cast<int>(detail::spec_number(sz[0], "size"));
    d.size_hi = static_cast<int>(detail::spec_number(sz[1], "size"));
  } else {
    throw SpecParseError(f.source() + ": size = <n> or <lo> <hi>");
  }
  if (auto v = f.get("simulate", "seed"))
    d.seed = static_cast<std::uint64_t>(detail::spec_number(*v, "seed"));
  if (auto v = f.get("simulate", "interval_width"))
    d.interval_width = detail::spec_number(*v, "interval_width");
  if (auto v = f.get("simulate", "right_censor"))
    d.right_censor = detail::spec_number(*v, "right_censor");

  for (const auto& [name, value] : f.prefixed("simulate", "covariate")) {
    const auto tv = detail::tokens(value);
    if (tv.empty()) throw SpecParseError(f.source() + ": empty covariate definition");
    CovariateSpec cs;
    cs.name = name;
    if (tv[0] == "normal" && tv.size() == 3) {
      cs.kind = CovariateSpec::Kind::Normal;
      cs.a = detail::spec_number(tv[1], name);
      cs.b = detail::spec_number(tv[2], name);
    } else if (tv[0] == "bernoulli" && tv.size() == 2) {
      cs.kind = CovariateSpec::Kind::Bernoulli;
      cs.a = detail::spec_number(tv[1], name);
    } else if (tv[0] == "uniform" && tv.size() == 3) {
      cs.kind = CovariateSpec::Kind::Uniform;
      cs.a = detail::spec_number(tv[1], name);
      cs.b = detail::spec_number(tv[2], name);
    } else if (tv[0] == "seq" && tv.size() == 1) {
      cs.kind = CovariateSpec::Kind::Seq;
    } else {
      throw SpecParseError(f.source() + ": covariate " + name +
                           " must be normal <m> <sd>, bernoulli <p>, uniform <a> <b>, or seq");
    }
    d.covariates.push_back(cs);
  }

  f.reject_unused({"model", "truth", "simulate"});
  return d;
}

}  // namespace mitram
