// Command-line front end: fit models, simulate datasets, evaluate marginal
// cdf curves.  Exit codes: 0 success, 2 fit did not converge, 3 bad input.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mitram/mitram.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_number_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::string token;
  std::istringstream in(s);
  while (std::getline(in, token, ',')) {
    try {
      out.push_back(mitram::parse_number(token, what));
    } catch (const mitram::CsvParseError& e) {
      throw InputError(e.what());
    }
  }
  if (out.empty()) throw InputError(what + ": empty value list");
  return out;
}

struct GridSpec {
  double lo = 0.0, hi = 1.0;
  long n = 0;
};

GridSpec parse_grid(const std::string& s) {
  GridSpec g;
  const auto c1 = s.find(':');
  const auto c2 = s.rfind(':');
  if (c1 == std::string::npos || c2 == c1)
    throw InputError("--grid expects lo:hi:count");
  try {
    g.lo = mitram::parse_number(s.substr(0, c1), "grid");
    g.hi = mitram::parse_number(s.substr(c1 + 1, c2 - c1 - 1), "grid");
    g.n = static_cast<long>(mitram::parse_number(s.substr(c2 + 1), "grid"));
  } catch (const mitram::CsvParseError& e) {
    throw InputError(e.what());
  }
  if (g.n < 2 || !(g.lo < g.hi)) throw InputError("--grid expects lo < hi and count >= 2");
  return g;
}

Eigen::VectorXd make_grid(const mitram::ModelSpec& spec, const std::optional<GridSpec>& flag) {
  if (spec.basis.kind() == mitram::BasisKind::OrdinalThresholds) {
    const int K = spec.basis.n_categories();
    Eigen::VectorXd g(K);
    for (int k = 0; k < K; ++k) g[k] = k + 1;
    return g;
  }
  if (flag) {
    Eigen::VectorXd g(flag->n);
    for (long i = 0; i < flag->n; ++i)
      g[i] = flag->lo + (flag->hi - flag->lo) * static_cast<double>(i) /
                            static_cast<double>(flag->n - 1);
    return g;
  }
  if (spec.basis.kind() == mitram::BasisKind::Bernstein) {
    Eigen::VectorXd g(101);
    for (long i = 0; i <= 100; ++i)
      g[i] = spec.basis.support_lo() +
             (spec.basis.support_hi() - spec.basis.support_lo()) * static_cast<double>(i) / 100.0;
    return g;
  }
  throw InputError("this basis has no natural response grid; pass --grid lo:hi:count");
}

std::vector<mitram::MarginalQuery> parse_queries(const mitram::CsvTable& t,
                                                 const std::vector<std::string>& fixed_names,
                                                 const std::vector<std::string>& random_names,
                                                 const std::vector<std::string>& strata_labels) {
  std::vector<int> fixed_cols, random_cols;
  for (const auto& f : fixed_names) fixed_cols.push_back(t.col(f));
  for (const auto& r : random_names) random_cols.push_back(r == "1" ? -1 : t.col(r));
  const int strat_col = t.has_col("stratum") ? t.col("stratum") : -1;

  std::vector<mitram::MarginalQuery> out;
  for (const auto& row : t.rows) {
    mitram::MarginalQuery q;
    q.x.resize(static_cast<long>(fixed_cols.size()));
    q.u.resize(static_cast<long>(random_cols.size()));
    for (std::size_t j = 0; j < fixed_cols.size(); ++j)
      q.x[static_cast<long>(j)] =
          mitram::parse_number(row[static_cast<std::size_t>(fixed_cols[j])], t.source);
    for (std::size_t j = 0; j < random_cols.size(); ++j)
      q.u[static_cast<long>(j)] =
          random_cols[j] < 0 ? 1.0
                             : mitram::parse_number(row[static_cast<std::size_t>(random_cols[j])], t.source);
    if (strat_col >= 0) {
      const std::string& label = row[static_cast<std::size_t>(strat_col)];
      q.stratum = -1;
      for (std::size_t s = 0; s < strata_labels.size(); ++s)
        if (strata_labels[s] == label) q.stratum = static_cast<int>(s);
      if (strata_labels.empty() && label.empty()) q.stratum = 0;
      if (q.stratum < 0) throw InputError(t.source + ": unknown stratum label '" + label + "'");
    }
    out.push_back(std::move(q));
  }
  return out;
}

void write_marginal_csv(const std::string& path, const mitram::ModelSpec& spec,
                        const mitram::ParameterVector& params,
                        const std::vector<mitram::MarginalQuery>& queries,
                        const Eigen::VectorXd& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path);
  os << "config,y,cdf\n";
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    for (long i = 0; i < grid.size(); ++i) {
      const double cdf = mitram::marginal_cdf(spec, params, queries[qi], grid[i]);
      os << (qi + 1) << "," << mitram::format_number(grid[i]) << ","
         << mitram::format_number(cdf) << "\n";
    }
}

json model_to_json(const mitram::ModelSpec& spec, const mitram::Dataset& data) {
  json m;
  m["basis"] = spec.basis.name();
  if (spec.basis.kind() == mitram::BasisKind::Bernstein) {
    m["order"] = spec.basis.order();
    m["support"] = {spec.basis.support_lo(), spec.basis.support_hi()};
  }
  if (spec.basis.kind() == mitram::BasisKind::OrdinalThresholds)
    m["categories"] = spec.basis.n_categories();
  m["link"] = spec.link.name();
  m["marginalization"] = spec.marg == mitram::Marginalization::M1 ? "M1" : "M2";
  m["r"] = spec.R;
  m["n_strata"] = spec.n_strata;
  m["strata_labels"] = data.strata_labels;
  m["fixed_names"] = data.fixed_names;
  m["random_names"] = data.random_names;
  return m;
}

mitram::ModelSpec model_from_json(const json& m) {
  mitram::ModelSpec spec;
  const std::string basis = m.at("basis").get<std::string>();
  if (basis == "linear")
    spec.basis = mitram::TransformationBasis::linear();
  else if (basis == "loglinear")
    spec.basis = mitram::TransformationBasis::log_linear();
  else if (basis == "bernstein")
    spec.basis = mitram::TransformationBasis::bernstein(
        m.at("order").get<int>(), m.at("support")[0].get<double>(),
        m.at("support")[1].get<double>());
  else if (basis == "ordinal")
    spec.basis = mitram::TransformationBasis::ordinal(m.at("categories").get<int>());
  else
    throw InputError("fit metadata names an unknown basis: " + basis);
  spec.link = mitram::LinkFamily::from_name(m.at("link").get<std::string>());
  spec.marg = m.at("marginalization").get<std::string>() == "M2" ? mitram::Marginalization::M2
                                                                 : mitram::Marginalization::M1;
  spec.R = m.at("r").get<int>();
  spec.n_strata = m.at("n_strata").get<int>();
  return spec;
}

int run_fit(const std::string& spec_path, const std::string& data_path,
            const std::string& out_dir, long nodes, const std::string& cubature,
            std::uint64_t seed, const std::string& fix_gamma,
            const std::vector<std::string>& marginal_files,
            const std::optional<GridSpec>& grid_flag) {
  const mitram::SpecFile sf = mitram::SpecFile::parse_file(spec_path);
  const mitram::ModelConfig cfg = mitram::parse_model_config(sf);
  const mitram::CsvTable table = mitram::read_csv(data_path);
  const mitram::Dataset data = mitram::parse_dataset(table, cfg.roles);
  const mitram::ModelSpec spec = mitram::make_model_spec(cfg, data);

  mitram::FitOptions opts;
  opts.rule = cfg.rule;
  opts.max_outer = cfg.max_outer;
  opts.max_inner = cfg.max_inner;
  opts.grad_tol = cfg.tol;
  if (nodes > 0) opts.rule.n = nodes;
  if (!cubature.empty()) {
    if (cubature == "qmc")
      opts.rule.kind = mitram::CubatureKind::QuasiMonteCarlo;
    else if (cubature == "sparse")
      opts.rule.kind = mitram::CubatureKind::SparseGrid;
    else
      throw InputError("--cubature must be qmc or sparse");
  }
  if (!fix_gamma.empty()) {
    const auto vals = parse_number_list(fix_gamma, "--fix-gamma");
    if (static_cast<int>(vals.size()) != spec.gamma_dim())
      throw InputError("--fix-gamma needs " + std::to_string(spec.gamma_dim()) + " values");
    Eigen::VectorXd g(spec.gamma_dim());
    for (int i = 0; i < spec.gamma_dim(); ++i) g[i] = vals[static_cast<std::size_t>(i)];
    opts.fix_gamma = g;
  }

  const mitram::ParameterVector init = mitram::initial_params(spec, data, opts.rule);
  const mitram::FitResult fit = mitram::maximize(spec, data, init, opts);

  fs::create_directories(out_dir);
  const Eigen::VectorXd est = fit.params.flat();
  const int n = static_cast<int>(est.size());

  // per-parameter activity: touched by a constraint row with zero slack
  const mitram::ConstraintSystem cons = mitram::assemble_constraints(spec, data.n_fixed());
  std::vector<int> active(static_cast<std::size_t>(n), 0);
  for (int row : fit.convergence.active_constraints)
    for (int j = 0; j < n; ++j)
      if (cons.coef(row, j) != 0.0) active[static_cast<std::size_t>(j)] = 1;

  {
    std::ofstream os(fs::path(out_dir) / "params.csv", std::ios::binary);
    if (!os) throw InputError("cannot write params.csv in " + out_dir);
    os << "name,estimate,se,active\n";
    for (int j = 0; j < n; ++j)
      os << fit.names[static_cast<std::size_t>(j)] << "," << mitram::format_number(est[j]) << ","
         << mitram::format_number(std::sqrt(std::max(0.0, fit.vcov(j, j)))) << ","
         << active[static_cast<std::size_t>(j)] << "\n";
  }
  {
    json out;
    out["loglik"] = fit.loglik;
    out["converged"] = fit.convergence.converged;
    out["outer_iterations"] = fit.convergence.outer_iterations;
    out["inner_iterations"] = fit.convergence.inner_iterations;
    out["grad_norm"] = fit.convergence.grad_norm;
    out["max_violation"] = fit.convergence.max_violation;
    out["active_constraints"] = fit.convergence.active_constraints;
    out["n_nodes"] = fit.n_nodes;
    out["cubature"] =
        opts.rule.kind == mitram::CubatureKind::QuasiMonteCarlo ? "qmc" : "sparse";
    out["warnings"] = fit.warnings;
    out["seed"] = seed;
    out["names"] = fit.names;
    out["estimates"] = std::vector<double>(est.data(), est.data() + n);
    std::vector<std::vector<double>> vcov(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
      vcov[static_cast<std::size_t>(a)] =
          std::vector<double>(fit.vcov.row(a).data(), fit.vcov.row(a).data() + n);
    out["vcov"] = vcov;
    out["model"] = model_to_json(spec, data);
    std::ofstream os(fs::path(out_dir) / "fit.json", std::ios::binary);
    if (!os) throw InputError("cannot write fit.json in " + out_dir);
    os << out.dump(2) << "\n";
  }

  for (const auto& qfile : marginal_files) {
    const mitram::CsvTable qt = mitram::read_csv(qfile);
    const auto queries = parse_queries(qt, data.fixed_names, data.random_names, data.strata_labels);
    const Eigen::VectorXd grid = make_grid(spec, grid_flag);
    const std::string stem = fs::path(qfile).stem().string();
    write_marginal_csv((fs::path(out_dir) / ("marginal_" + stem + ".csv")).string(), spec,
                       fit.params, queries, grid);
  }

  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "loglik " << mitram::format_number(fit.loglik) << " ("
            << fit.convergence.inner_iterations << " iterations, "
            << (fit.convergence.converged ? "converged" : "NOT converged") << ")\n";
  return fit.convergence.converged ? 0 : 2;
}

int run_simulate(const std::string& design_path, const std::string& out_path) {
  const mitram::SpecFile sf = mitram::SpecFile::parse_file(design_path);
  const mitram::SimulationDesign design = mitram::parse_design(sf);
  mitram::SimulationInfo info;
  const mitram::Dataset data = mitram::simulate(design, &info);
  if (info.boundary_hits > 0)
    std::cerr << "warning: " << info.boundary_hits
              << " responses clipped to the transformation support boundary\n";
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw InputError("cannot write " + out_path);
  mitram::write_dataset(os, data);
  std::cout << "wrote " << data.n_obs() << " observations in " << data.n_clusters()
            << " clusters\n";
  return 0;
}

int run_marginal(const std::string& spec_path, const std::string& fit_dir,
                 const std::string& queries_path, const std::string& out_path,
                 const std::optional<GridSpec>& grid_flag) {
  std::ifstream in(fs::path(fit_dir) / "fit.json", std::ios::binary);
  if (!in) throw InputError("cannot open fit.json in " + fit_dir);
  json meta;
  in >> meta;
  const mitram::ModelSpec spec = model_from_json(meta.at("model"));

  // cross-check the declared model against the fit metadata
  const mitram::SpecFile sf = mitram::SpecFile::parse_file(spec_path);
  const mitram::ModelConfig cfg = mitram::parse_model_config(sf);
  if (cfg.link.name() != spec.link.name())
    throw InputError("spec file and fit metadata disagree on the link family");

  const auto est = meta.at("estimates").get<std::vector<double>>();
  const int n_theta = spec.theta_dim();
  const int n_gamma = spec.gamma_dim();
  const int n_beta = static_cast<int>(est.size()) - n_theta - n_gamma;
  if (n_beta < 0) throw InputError("fit metadata estimate vector is too short");
  mitram::ParameterVector params = mitram::ParameterVector::unflatten(
      Eigen::Map<const Eigen::VectorXd>(est.data(), static_cast<long>(est.size())), n_theta,
      n_beta, n_gamma);

  const auto fixed_names = meta.at("model").at("fixed_names").get<std::vector<std::string>>();
  const auto random_names = meta.at("model").at("random_names").get<std::vector<std::string>>();
  const auto strata_labels = meta.at("model").at("strata_labels").get<std::vector<std::string>>();
  const mitram::CsvTable qt = mitram::read_csv(queries_path);
  const auto queries = parse_queries(qt, fixed_names, random_names, strata_labels);
  const Eigen::VectorXd grid = make_grid(spec, grid_flag);
  write_marginal_csv(out_path, spec, params, queries, grid);
  std::cout << "wrote " << queries.size() * static_cast<std::size_t>(grid.size())
            << " cdf values\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-effects transformation models"};
  app.require_subcommand(1);

  std::string spec_path, data_path, out_dir, cubature, fix_gamma;
  std::string design_path, out_path, fit_dir, queries_path, grid_arg;
  std::vector<std::string> marginal_files;
  long nodes = 0;
  std::uint64_t seed = 1;

  auto* fit = app.add_subcommand("fit", "maximum likelihood fit");
  fit->add_option("--spec", spec_path, "model spec file")->required();
  fit->add_option("--data", data_path, "data CSV")->required();
  fit->add_option("--out", out_dir, "output directory")->required();
  fit->add_option("--nodes", nodes, "integration nodes (QMC) or level (sparse)");
  fit->add_option("--cubature", cubature, "qmc or sparse");
  fit->add_option("--seed", seed, "seed for any simulation-based summaries");
  fit->add_option("--fix-gamma", fix_gamma, "hold gamma fixed (comma-separated values)");
  fit->add_option("--marginal", marginal_files, "marginal query CSV (repeatable)");
  fit->add_option("--grid", grid_arg, "response grid lo:hi:count for marginal output");

  auto* sim = app.add_subcommand("simulate", "draw a dataset from a design file");
  sim->add_option("--design", design_path, "design spec file")->required();
  sim->add_option("--out", out_path, "output CSV")->required();

  auto* marg = app.add_subcommand("marginal", "marginal cdf curves from a saved fit");
  marg->add_option("--spec", spec_path, "model spec file")->required();
  marg->add_option("--fit", fit_dir, "directory written by fit")->required();
  marg->add_option("--queries", queries_path, "covariate configurations CSV")->required();
  marg->add_option("--out", out_path, "output CSV")->required();
  marg->add_option("--grid", grid_arg, "response grid lo:hi:count");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<GridSpec> grid_flag;
    if (!grid_arg.empty()) grid_flag = parse_grid(grid_arg);
    if (fit->parsed())
      return run_fit(spec_path, data_path, out_dir, nodes, cubature, seed, fix_gamma,
                     marginal_files, grid_flag);
    if (sim->parsed()) return run_simulate(design_path, out_path);
    if (marg->parsed())
      return run_marginal(spec_path, fit_dir, queries_path, out_path, grid_flag);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mitram::SpecParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const mitram::CsvParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
