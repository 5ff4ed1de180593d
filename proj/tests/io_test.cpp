#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "mitram/io.hpp"
#include "mitram/spec_file.hpp"

namespace {

using mitram::CsvParseError;
using mitram::DataRoles;
using mitram::Dataset;
using mitram::SpecFile;
using mitram::SpecParseError;

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(CsvTest, QuotedFieldsAndTrimming) {
  const auto t = mitram::parse_csv_text("a, b ,c\n1,\"x, y\", 3 \n", "t.csv");
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_EQ(t.header[1], "b");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][1], "x, y");
  EXPECT_EQ(t.rows[0][2], "3");
  EXPECT_TRUE(t.has_col("c"));
  EXPECT_FALSE(t.has_col("d"));
  EXPECT_EQ(t.col("c"), 2);
  EXPECT_THROW(t.col("d"), CsvParseError);
}

TEST(CsvTest, BlankLinesSkipped) {
  const auto t = mitram::parse_csv_text("a,b\n\n1,2\n   \n3,4\n");
  EXPECT_EQ(t.rows.size(), 2u);
}

TEST(CsvTest, RaggedRowReportsLine) {
  try {
    mitram::parse_csv_text("a,b,c\n1,2,3\n4,5\n", "t.csv");
    FAIL() << "expected a parse error";
  } catch (const CsvParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("t.csv:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected 3"), std::string::npos) << msg;
  }
}

TEST(CsvTest, UnterminatedQuote) {
  EXPECT_THROW(mitram::parse_csv_text("a,b\n\"oops,2\n", "t.csv"), CsvParseError);
}

TEST(CsvTest, EmptyFileRejected) {
  EXPECT_THROW(mitram::parse_csv_text("", "t.csv"), CsvParseError);
  EXPECT_THROW(mitram::parse_csv_text("\n  \n", "t.csv"), CsvParseError);
}

TEST(CsvTest, NumberParsing) {
  EXPECT_DOUBLE_EQ(mitram::parse_number("  -1.5e3 ", "x"), -1500.0);
  EXPECT_THROW(mitram::parse_number("", "x"), CsvParseError);
  EXPECT_THROW(mitram::parse_number("12abc", "x"), CsvParseError);
  try {
    mitram::parse_number("  ", "row 4");
    FAIL();
  } catch (const CsvParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 4"), std::string::npos);
  }
}

TEST(CsvTest, FormatRoundTripsDoubles) {
  for (double v : {1.0 / 3.0, std::sqrt(2.0), -1e-17, 6.02214076e23, 0.1}) {
    const std::string s = mitram::format_number(v);
    EXPECT_EQ(mitram::parse_number(s, "x"), v) << s;
  }
}

// ---------------------------------------------------------------------------

void expect_same_dataset(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.exact, b.exact);
  EXPECT_EQ(a.fixed_names, b.fixed_names);
  EXPECT_EQ(a.random_names, b.random_names);
  EXPECT_EQ(a.strata_labels, b.strata_labels);
  ASSERT_EQ(a.clusters.size(), b.clusters.size());
  for (std::size_t c = 0; c < a.clusters.size(); ++c) {
    const auto& ca = a.clusters[c];
    const auto& cb = b.clusters[c];
    EXPECT_EQ(ca.id, cb.id);
    ASSERT_EQ(ca.size(), cb.size());
    for (int i = 0; i < ca.size(); ++i) {
      EXPECT_EQ(ca.lo[i], cb.lo[i]);
      EXPECT_EQ(ca.hi[i], cb.hi[i]);
      EXPECT_EQ(ca.stratum_of(i), cb.stratum_of(i));
      for (long j = 0; j < ca.X.cols(); ++j) EXPECT_EQ(ca.X(i, j), cb.X(i, j));
      for (long j = 0; j < ca.U.cols(); ++j) EXPECT_EQ(ca.U(i, j), cb.U(i, j));
    }
  }
}

TEST(DatasetIoTest, ClusterGroupingByFirstAppearance) {
  const std::string csv =
      "id,resp,x\n"
      "A,1.0,0.1\n"
      "B,2.0,0.2\n"
      "A,3.0,0.3\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y = "resp";
  roles.fixed = {"x"};
  roles.random = {"1"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);
  ASSERT_EQ(data.clusters.size(), 2u);
  EXPECT_EQ(data.clusters[0].id, "A");
  EXPECT_EQ(data.clusters[0].size(), 2);
  EXPECT_DOUBLE_EQ(data.clusters[0].lo[1], 3.0);
  EXPECT_DOUBLE_EQ(data.clusters[0].hi[1], 3.0);
  EXPECT_EQ(data.clusters[1].id, "B");
  // the "1" token expands to a constant column
  EXPECT_DOUBLE_EQ(data.clusters[0].U(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(data.clusters[1].U(0, 0), 1.0);
}

TEST(DatasetIoTest, EmptyBoundsBecomeInfinite) {
  const std::string csv =
      "id,lo,hi\n"
      "1,,2.5\n"
      "1,0.5,\n"
      "2,1,2\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y_lower = "lo";
  roles.y_upper = "hi";
  roles.random = {"1"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);
  EXPECT_FALSE(data.exact);
  EXPECT_EQ(data.clusters[0].lo[0], -kInf);
  EXPECT_DOUBLE_EQ(data.clusters[0].hi[0], 2.5);
  EXPECT_DOUBLE_EQ(data.clusters[0].lo[1], 0.5);
  EXPECT_EQ(data.clusters[0].hi[1], kInf);
}

TEST(DatasetIoTest, IntervalRolesNeedBothBounds) {
  DataRoles roles;
  roles.cluster = "id";
  roles.y_lower = "lo";  // y_upper missing
  roles.random = {"1"};
  const auto t = mitram::parse_csv_text("id,lo\n1,2\n", "t.csv");
  EXPECT_THROW(mitram::parse_dataset(t, roles), CsvParseError);
}

TEST(DatasetIoTest, StrataLabelsInFirstAppearanceOrder) {
  const std::string csv =
      "id,y,site\n"
      "1,0.3,west\n"
      "2,0.4,east\n"
      "3,0.5,west\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y = "y";
  roles.strata = "site";
  roles.random = {"1"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);
  ASSERT_EQ(data.strata_labels.size(), 2u);
  EXPECT_EQ(data.strata_labels[0], "west");
  EXPECT_EQ(data.strata_labels[1], "east");
  EXPECT_EQ(data.clusters[0].stratum_of(0), 0);
  EXPECT_EQ(data.clusters[1].stratum_of(0), 1);
  EXPECT_EQ(data.clusters[2].stratum_of(0), 0);
}

TEST(DatasetIoTest, ExactRoundTripPreservesEveryDouble) {
  const std::string csv =
      "id,y,x,grp,t\n"
      "a,0.3333333333333333,0.1,1,0\n"
      "a,-2.7182818284590452,0.2,1,1\n"
      "b,1.4142135623730951,0.3,0,0\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y = "y";
  roles.fixed = {"x", "grp"};
  roles.random = {"1", "t"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);

  std::ostringstream out;
  mitram::write_dataset(out, data);
  const auto again = mitram::parse_dataset(mitram::parse_csv_text(out.str(), "rt.csv"),
                                           mitram::roles_of(data));
  expect_same_dataset(data, again);
}

TEST(DatasetIoTest, IntervalRoundTripWithOpenEndsAndStrata) {
  const std::string csv =
      "id,lo,hi,s,x\n"
      "1,,0.25,u,0.7\n"
      "1,0.25,0.5,u,0.7\n"
      "2,1.5,,v,-0.2\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y_lower = "lo";
  roles.y_upper = "hi";
  roles.strata = "s";
  roles.fixed = {"x"};
  roles.random = {"1"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);

  std::ostringstream out;
  mitram::write_dataset(out, data);
  // open ends serialize as empty cells, not as "inf" strings
  EXPECT_EQ(out.str().find("inf"), std::string::npos);
  const auto again = mitram::parse_dataset(mitram::parse_csv_text(out.str(), "rt.csv"),
                                           mitram::roles_of(data));
  expect_same_dataset(data, again);
}

TEST(DatasetIoTest, SharedDesignColumnWrittenOnce) {
  // a column used in both designs should appear once in the header
  const std::string csv =
      "id,y,t\n"
      "1,0.5,0\n"
      "1,0.6,1\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y = "y";
  roles.fixed = {"t"};
  roles.random = {"1", "t"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);
  std::ostringstream out;
  mitram::write_dataset(out, data);
  std::istringstream lines(out.str());
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "cluster,y,t");
  const auto again = mitram::parse_dataset(mitram::parse_csv_text(out.str(), "rt.csv"),
                                           mitram::roles_of(data));
  expect_same_dataset(data, again);
}

TEST(DatasetIoTest, MissingNumericCellRejected) {
  DataRoles roles;
  roles.cluster = "id";
  roles.y = "y";
  roles.random = {"1"};
  const auto t = mitram::parse_csv_text("id,y\n1,\n", "t.csv");
  EXPECT_THROW(mitram::parse_dataset(t, roles), CsvParseError);
}

// ---------------------------------------------------------------------------

TEST(SpecFileTest, SectionsKeysAndComments) {
  const std::string text =
      "# header comment\n"
      "[model]\n"
      "response = continuous   # trailing comment\n"
      "basis = bernstein 4\n"
      "\n"
      "[simulate]\n"
      "covariate x = normal 0 1\n"
      "covariate grp = bernoulli 0.4\n";
  const auto f = SpecFile::parse_text(text, "m.cfg");
  EXPECT_TRUE(f.has_section("model"));
  EXPECT_EQ(f.require("model", "response"), "continuous");
  EXPECT_EQ(*f.get("model", "basis"), "bernstein 4");
  EXPECT_FALSE(f.get("model", "link").has_value());
  const auto covs = f.prefixed("simulate", "covariate");
  ASSERT_EQ(covs.size(), 2u);
  // map ordering is alphabetical within the section
  EXPECT_EQ(covs[0].first, "grp");
  EXPECT_EQ(covs[1].first, "x");
  EXPECT_EQ(covs[1].second, "normal 0 1");
}

TEST(SpecFileTest, StructuralErrors) {
  EXPECT_THROW(SpecFile::parse_text("key = 1\n", "m.cfg"), SpecParseError);
  EXPECT_THROW(SpecFile::parse_text("[model\nkey = 1\n", "m.cfg"), SpecParseError);
  EXPECT_THROW(SpecFile::parse_text("[model]\nno equals sign\n", "m.cfg"), SpecParseError);
  try {
    SpecFile::parse_text("[model]\nlink = probit\nlink = logit\n", "m.cfg");
    FAIL();
  } catch (const SpecParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("m.cfg:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
  }
}

TEST(SpecFileTest, MissingRequiredKeyNamesSection) {
  const auto f = SpecFile::parse_text("[model]\nresponse = continuous\n", "m.cfg");
  try {
    f.require("model", "link");
    FAIL();
  } catch (const SpecParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("link"), std::string::npos);
    EXPECT_NE(msg.find("[model]"), std::string::npos);
  }
}

TEST(SpecFileTest, RejectUnusedFlagsTyposAndForeignSections) {
  const auto f = SpecFile::parse_text("[model]\nlnik = probit\n", "m.cfg");
  f.get("model", "link");
  EXPECT_THROW(f.reject_unused({"model"}), SpecParseError);

  const auto g = SpecFile::parse_text("[mdoel]\nlink = probit\n", "m.cfg");
  EXPECT_THROW(g.reject_unused({"model"}), SpecParseError);
}

std::string model_file(const std::string& model_extra = "",
                       const std::string& optimizer = "") {
  std::string text =
      "[model]\n"
      "response = interval\n"
      "basis = bernstein 4\n"
      "link = logit\n" +
      model_extra +
      "[data]\n"
      "cluster = id\n"
      "y_lower = lo\n"
      "y_upper = hi\n"
      "fixed = x grp\n"
      "random = 1 t\n"
      "strata = site\n";
  if (!optimizer.empty()) text += "[optimizer]\n" + optimizer;
  return text;
}

TEST(ModelConfigTest, FullFile) {
  const auto f = SpecFile::parse_text(
      model_file("support = -3 3\nmarginalization = M2\n",
                 "nodes = 512\ncubature = sparse\nmax_outer = 12\nmax_inner = 80\ntol = 1e-7\n"),
      "m.cfg");
  const auto cfg = mitram::parse_model_config(f);
  EXPECT_EQ(cfg.response, "interval");
  EXPECT_EQ(cfg.basis, mitram::BasisKind::Bernstein);
  EXPECT_EQ(cfg.order, 4);
  ASSERT_TRUE(cfg.support.has_value());
  EXPECT_DOUBLE_EQ(cfg.support->first, -3.0);
  EXPECT_DOUBLE_EQ(cfg.support->second, 3.0);
  EXPECT_EQ(cfg.link.name(), "logit");
  EXPECT_EQ(cfg.marg, mitram::Marginalization::M2);
  EXPECT_EQ(cfg.roles.cluster, "id");
  EXPECT_TRUE(cfg.roles.interval());
  EXPECT_EQ(cfg.roles.fixed, (std::vector<std::string>{"x", "grp"}));
  EXPECT_EQ(cfg.roles.random, (std::vector<std::string>{"1", "t"}));
  EXPECT_EQ(cfg.roles.strata, "site");
  EXPECT_EQ(cfg.rule.n, 512);
  EXPECT_EQ(cfg.rule.kind, mitram::CubatureKind::SparseGrid);
  EXPECT_EQ(cfg.max_outer, 12);
  EXPECT_EQ(cfg.max_inner, 80);
  EXPECT_DOUBLE_EQ(cfg.tol, 1e-7);
}

TEST(ModelConfigTest, DefaultsAndOrdinal) {
  const auto f = SpecFile::parse_text(
      "[model]\n"
      "response = ordinal 5\n"
      "link = probit\n"
      "[data]\n"
      "cluster = id\n"
      "y = grade\n"
      "random = 1\n",
      "m.cfg");
  const auto cfg = mitram::parse_model_config(f);
  EXPECT_EQ(cfg.basis, mitram::BasisKind::OrdinalThresholds);
  EXPECT_EQ(cfg.n_categories, 5);
  EXPECT_EQ(cfg.marg, mitram::Marginalization::M1);
  EXPECT_TRUE(cfg.roles.fixed.empty());
  EXPECT_EQ(cfg.max_outer, 25);
  EXPECT_EQ(cfg.rule.n, 0);  // resolved later from the dimension
}

TEST(ModelConfigTest, Rejections) {
  auto parse = [](const std::string& text) {
    return mitram::parse_model_config(SpecFile::parse_text(text, "m.cfg"));
  };
  const std::string data =
      "[data]\ncluster = id\ny = y\nrandom = 1\n";
  // unknown response / basis / link / marginalization
  EXPECT_THROW(parse("[model]\nresponse = count\nlink = probit\n" + data), SpecParseError);
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = spline\nlink = probit\n" + data),
               SpecParseError);
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = linear\nlink = cauchit\n" + data),
               SpecParseError);
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = linear\nlink = probit\n"
                     "marginalization = M3\n" + data),
               SpecParseError);
  // ordinal needs a category count, bernstein an order
  EXPECT_THROW(parse("[model]\nresponse = ordinal\nlink = probit\n" + data), SpecParseError);
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = bernstein\nlink = probit\n" + data),
               SpecParseError);
  // empty random design
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = linear\nlink = probit\n"
                     "[data]\ncluster = id\ny = y\nrandom =\n"),
               SpecParseError);
  // stray key caught by the final sweep
  EXPECT_THROW(parse("[model]\nresponse = continuous\nbasis = linear\nlink = probit\n"
                     "speling = 1\n" + data),
               SpecParseError);
}

TEST(ModelSpecBuildTest, InfersBernsteinSupportFromBounds) {
  const std::string csv =
      "id,lo,hi\n"
      "1,,0.5\n"
      "1,0.5,2.5\n"
      "2,-1.25,\n";
  DataRoles roles;
  roles.cluster = "id";
  roles.y_lower = "lo";
  roles.y_upper = "hi";
  roles.random = {"1"};
  const auto data = mitram::parse_dataset(mitram::parse_csv_text(csv, "t.csv"), roles);

  mitram::ModelConfig cfg;
  cfg.response = "interval";
  cfg.basis = mitram::BasisKind::Bernstein;
  cfg.order = 3;
  cfg.link = mitram::LinkFamily::probit();
  const auto spec = mitram::make_model_spec(cfg, data);
  EXPECT_EQ(spec.R, 1);
  EXPECT_EQ(spec.n_strata, 1);
  EXPECT_DOUBLE_EQ(spec.basis.support_lo(), -1.25);
  EXPECT_DOUBLE_EQ(spec.basis.support_hi(), 2.5);

  cfg.support = std::make_pair(-4.0, 4.0);
  const auto pinned = mitram::make_model_spec(cfg, data);
  EXPECT_DOUBLE_EQ(pinned.basis.support_lo(), -4.0);
  EXPECT_DOUBLE_EQ(pinned.basis.support_hi(), 4.0);
}

std::string design_file(const std::string& truth_gamma = "0.8") {
  return
      "[model]\n"
      "response = continuous\n"
      "basis = linear\n"
      "link = probit\n"
      "[truth]\n"
      "theta = 1.2 -0.4\n"
      "beta = 0.5\n"
      "gamma = " + truth_gamma + "\n"
      "[simulate]\n"
      "clusters = 12\n"
      "size = 2 4\n"
      "seed = 7\n"
      "fixed = x\n"
      "random = 1\n"
      "covariate x = normal 0 1\n";
}

TEST(DesignFileTest, ParsesAndSimulates) {
  const auto d = mitram::parse_design(SpecFile::parse_text(design_file(), "d.cfg"));
  EXPECT_EQ(d.n_clusters, 12);
  EXPECT_EQ(d.size_lo, 2);
  EXPECT_EQ(d.size_hi, 4);
  EXPECT_EQ(d.seed, 7u);
  EXPECT_EQ(d.model.R, 1);
  ASSERT_EQ(d.truth.theta.size(), 2);
  EXPECT_DOUBLE_EQ(d.truth.theta[1], -0.4);
  ASSERT_EQ(d.covariates.size(), 1u);
  EXPECT_EQ(d.covariates[0].name, "x");

  const auto data = mitram::simulate(d);
  EXPECT_EQ(data.clusters.size(), 12u);
  EXPECT_TRUE(data.exact);
  EXPECT_EQ(data.n_fixed(), 1);
}

TEST(DesignFileTest, TruthLengthsChecked) {
  EXPECT_THROW(mitram::parse_design(SpecFile::parse_text(design_file("0.8 0.1"), "d.cfg")),
               SpecParseError);
}

TEST(DesignFileTest, BernsteinSimulationNeedsExplicitSupport) {
  const std::string text =
      "[model]\n"
      "response = continuous\n"
      "basis = bernstein 3\n"
      "link = probit\n"
      "[truth]\n"
      "theta = -1 0 1 2\n"
      "beta =\n"
      "gamma = 0.5\n"
      "[simulate]\n"
      "clusters = 5\n"
      "size = 2\n"
      "random = 1\n";
  EXPECT_THROW(mitram::parse_design(SpecFile::parse_text(text, "d.cfg")), SpecParseError);
}

}  // namespace
