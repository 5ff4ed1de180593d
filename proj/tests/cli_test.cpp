#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include "mitram/csv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(MITRAM_BIN) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
#ifdef _WIN32
  return status;
#else
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#endif
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const std::string kDesign =
    "[model]\n"
    "response = continuous\n"
    "basis = linear\n"
    "link = probit\n"
    "\n"
    "[truth]\n"
    "theta = 1.1 -0.3\n"
    "beta = 0.5\n"
    "gamma = 0.6\n"
    "\n"
    "[simulate]\n"
    "clusters = 40\n"
    "size = 2 4\n"
    "seed = 11\n"
    "fixed = x\n"
    "random = 1\n"
    "covariate x = normal 0 1\n";

const std::string kModel =
    "[model]\n"
    "response = continuous\n"
    "basis = linear\n"
    "link = probit\n"
    "\n"
    "[data]\n"
    "cluster = cluster\n"
    "y = y\n"
    "fixed = x\n"
    "random = 1\n";

// One simulate + fit pair shared by the tests below; built on first use.
struct Workspace {
  fs::path root, design, model, data, fitdir, log;

  static const Workspace& get() {
    static Workspace w = [] {
      Workspace v;
      v.root = fs::temp_directory_path() / "mitram_cli_test";
      fs::remove_all(v.root);
      fs::create_directories(v.root);
      v.design = v.root / "design.cfg";
      v.model = v.root / "model.cfg";
      v.data = v.root / "sim.csv";
      v.fitdir = v.root / "fit";
      v.log = v.root / "log.txt";
      spit(v.design, kDesign);
      spit(v.model, kModel);
      spit(v.root / "queries.csv", "x\n0\n1.5\n");

      if (run_cli("simulate --design " + v.design.string() + " --out " + v.data.string(),
                  v.log) != 0)
        throw std::runtime_error("simulate failed: " + slurp(v.log));
      if (run_cli("fit --spec " + v.model.string() + " --data " + v.data.string() + " --out " +
                      v.fitdir.string() + " --marginal " + (v.root / "queries.csv").string() +
                      " --grid -3:3:25",
                  v.log) != 0)
        throw std::runtime_error("fit failed: " + slurp(v.log));
      return v;
    }();
    return w;
  }
};

TEST(CliTest, SimulatedDataLooksLikeACsvDataset) {
  const auto& w = Workspace::get();
  const auto t = mitram::read_csv(w.data.string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"cluster", "y", "x"}));
  EXPECT_GE(t.rows.size(), 80u);
  EXPECT_LE(t.rows.size(), 160u);
}

TEST(CliTest, FitWritesParameterTable) {
  const auto& w = Workspace::get();
  const auto t = mitram::read_csv((w.fitdir / "params.csv").string());
  EXPECT_EQ(t.header, (std::vector<std::string>{"name", "estimate", "se", "active"}));
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0][0], "theta_1");
  EXPECT_EQ(t.rows[1][0], "theta_2");
  EXPECT_EQ(t.rows[2][0], "beta_x");
  EXPECT_EQ(t.rows[3][0], "gamma_1_1");
  for (const auto& row : t.rows) {
    const double est = mitram::parse_number(row[1], "estimate");
    const double se = mitram::parse_number(row[2], "se");
    EXPECT_TRUE(std::isfinite(est));
    EXPECT_GE(se, 0.0);
  }
  // slope of the transformation is constrained positive and should be near 1.1
  EXPECT_GT(mitram::parse_number(t.rows[0][1], "estimate"), 0.5);
}

TEST(CliTest, FitWritesMachineReadableSummary) {
  const auto& w = Workspace::get();
  std::ifstream in(w.fitdir / "fit.json");
  ASSERT_TRUE(in.good());
  json meta;
  in >> meta;
  EXPECT_TRUE(meta.at("converged").get<bool>());
  EXPECT_TRUE(std::isfinite(meta.at("loglik").get<double>()));
  EXPECT_EQ(meta.at("names").size(), 4u);
  EXPECT_EQ(meta.at("estimates").size(), 4u);
  EXPECT_EQ(meta.at("vcov").size(), 4u);
  EXPECT_EQ(meta.at("vcov")[0].size(), 4u);
  EXPECT_EQ(meta.at("model").at("basis").get<std::string>(), "linear");
  EXPECT_EQ(meta.at("model").at("link").get<std::string>(), "probit");
  EXPECT_EQ(meta.at("model").at("r").get<int>(), 1);
}

TEST(CliTest, MarginalCurvesAreCdfs) {
  const auto& w = Workspace::get();
  // once from the fit run itself, once through the standalone subcommand
  const fs::path standalone = w.root / "marg.csv";
  ASSERT_EQ(run_cli("marginal --spec " + w.model.string() + " --fit " + w.fitdir.string() +
                        " --queries " + (w.root / "queries.csv").string() + " --out " +
                        standalone.string() + " --grid -3:3:25",
                    w.log),
            0)
      << slurp(w.log);

  for (const fs::path p : {w.fitdir / "marginal_queries.csv", standalone}) {
    const auto t = mitram::read_csv(p.string());
    EXPECT_EQ(t.header, (std::vector<std::string>{"config", "y", "cdf"}));
    ASSERT_EQ(t.rows.size(), 50u);  // two configurations, 25 grid points each
    double prev = -1.0;
    std::string prev_config;
    for (const auto& row : t.rows) {
      const double cdf = mitram::parse_number(row[2], "cdf");
      EXPECT_GE(cdf, 0.0);
      EXPECT_LE(cdf, 1.0);
      if (row[0] == prev_config) EXPECT_GE(cdf, prev - 1e-12);
      prev = cdf;
      prev_config = row[0];
    }
  }
  // the two output paths should agree line for line
  EXPECT_EQ(slurp(w.fitdir / "marginal_queries.csv"), slurp(standalone));
}

TEST(CliTest, RepeatedFitsAreByteIdentical) {
  const auto& w = Workspace::get();
  const fs::path again = w.root / "fit2";
  ASSERT_EQ(run_cli("fit --spec " + w.model.string() + " --data " + w.data.string() +
                        " --out " + again.string(),
                    w.log),
            0)
      << slurp(w.log);
  EXPECT_EQ(slurp(w.fitdir / "params.csv"), slurp(again / "params.csv"));
  const json a = json::parse(slurp(w.fitdir / "fit.json"));
  const json b = json::parse(slurp(again / "fit.json"));
  EXPECT_EQ(a.at("estimates"), b.at("estimates"));
  EXPECT_EQ(a.at("loglik"), b.at("loglik"));
}

TEST(CliTest, HoldingGammaFixedIsReflectedInTheOutputs) {
  const auto& w = Workspace::get();
  const fs::path dir = w.root / "fit_fixed";
  ASSERT_EQ(run_cli("fit --spec " + w.model.string() + " --data " + w.data.string() +
                        " --out " + dir.string() + " --fix-gamma 0.25",
                    w.log),
            0)
      << slurp(w.log);
  const auto t = mitram::read_csv((dir / "params.csv").string());
  EXPECT_DOUBLE_EQ(mitram::parse_number(t.rows[3][1], "estimate"), 0.25);
  EXPECT_DOUBLE_EQ(mitram::parse_number(t.rows[3][2], "se"), 0.0);
}

TEST(CliTest, BadInputsExitWithCodeThree) {
  const auto& w = Workspace::get();
  const std::string out = " --out " + (w.root / "junk").string();

  EXPECT_EQ(run_cli("fit --spec " + w.model.string() + " --data " +
                        (w.root / "missing.csv").string() + out,
                    w.log),
            3);
  EXPECT_NE(slurp(w.log).find("error:"), std::string::npos);

  spit(w.root / "typo.cfg", kModel + "speling = 1\n");
  EXPECT_EQ(run_cli("fit --spec " + (w.root / "typo.cfg").string() + " --data " +
                        w.data.string() + out,
                    w.log),
            3);

  EXPECT_EQ(run_cli("fit --spec " + w.model.string() + " --data " + w.data.string() + out +
                        " --fix-gamma 0.1,0.2",
                    w.log),
            3);

  EXPECT_EQ(run_cli("marginal --spec " + w.model.string() + " --fit " + w.fitdir.string() +
                        " --queries " + (w.root / "queries.csv").string() + " --out " +
                        (w.root / "m.csv").string() + " --grid 3:-3:25",
                    w.log),
            3);
}

TEST(CliTest, NonConvergenceExitsWithCodeTwo) {
  const auto& w = Workspace::get();
  spit(w.root / "starved.cfg",
       kModel + "\n[optimizer]\nmax_outer = 1\nmax_inner = 1\ntol = 1e-14\n");
  EXPECT_EQ(run_cli("fit --spec " + (w.root / "starved.cfg").string() + " --data " +
                        w.data.string() + " --out " + (w.root / "fit_starved").string(),
                    w.log),
            2);
  const json meta = json::parse(slurp(w.root / "fit_starved" / "fit.json"));
  EXPECT_FALSE(meta.at("converged").get<bool>());
}

}  // namespace
