#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mhde/families.hpp"
#include "mhde/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() {
    static const fs::path d = [] {
      auto p = fs::temp_directory_path() / ("mhde_cli_" + std::to_string(::getpid()));
      fs::create_directories(p);
      return p;
    }();
    return d;
  }

  static CliRun run(const std::string& args) {
    const auto out = dir() / "stdout.txt", err = dir() / "stderr.txt";
    const std::string cmd = std::string(MHDE_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string config(const char* name) {
    return std::string(MHDE_CONFIG_DIR) + "/" + name + ".cfg";
  }

  // 5000 gamma(2, 35000) draws with equal weights; `outliers` of them
  // replaced by `value`.
  static std::string fixture(const std::string& name, std::size_t outliers, double value) {
    const auto spec = mhde::FamilySpec::gamma();
    mhde::Stream rng(20240611);
    auto y = mhde::sample(spec, mhde::ParamVector(spec, 2.0, 35000.0), 5000, rng);
    for (std::size_t i = 0; i < outliers; ++i) y[i * 97] = value;
    std::ostringstream csv;
    csv << "y,weight\n";
    for (double v : y) csv << exact(v) << ",200\n";
    const auto path = (dir() / name).string();
    mhde::write_text_file(path, csv.str());
    return path;
  }

  static json fit_json(const std::string& data, const std::string& tag) {
    const auto out = (dir() / tag).string();
    const auto r = run("fit --data " + data + " --family gamma --out " + out);
    EXPECT_EQ(r.code, 0) << r.err;
    return json::parse(slurp(out + ".json"));
  }

  static std::size_t data_rows(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
      if (!line.empty() && line[0] != '#') ++n;
    return n == 0 ? 0 : n - 1;
  }
};

const json& block(const json& doc, const std::string& est) {
  for (const auto& b : doc["estimates"])
    if (b["estimator"] == est) return b;
  throw std::runtime_error("missing estimator " + est);
}

}  // namespace

TEST_F(Cli, FitCleanFixture) {
  const auto doc = fit_json(fixture("clean.csv", 0, 0.0), "clean");
  const auto& m = block(doc, "mhde");
  const auto& l = block(doc, "mle");
  for (const char* p : {"shape", "scale"}) {
    const double a = m[p]["estimate"], b = l[p]["estimate"];
    const double truth = std::string(p) == "shape" ? 2.0 : 35000.0;
    EXPECT_NEAR(a / truth, 1.0, 0.05) << p;
    EXPECT_NEAR(b / truth, 1.0, 0.05) << p;
    EXPECT_NEAR(a / b, 1.0, 0.05) << p;
    EXPECT_LT(m[p]["lower"].get<double>(), a);
    EXPECT_GT(m[p]["upper"].get<double>(), a);
  }
  EXPECT_NEAR(m["mean"]["estimate"].get<double>() / 70000.0, 1.0, 0.05);
  EXPECT_NEAR(doc["kish_neff"].get<double>(), 5000.0, 1e-6);
  EXPECT_EQ(doc["config"]["seed"], 1);
}

TEST_F(Cli, FitOutlierMovesMleMore) {
  const auto clean = fit_json(fixture("clean2.csv", 0, 0.0), "clean2");
  // One percent of the records replaced by a value about 33 times the mean.
  const auto dirty = fit_json(fixture("dirty.csv", 50, 2.34e6), "dirty");
  auto shift = [&](const char* est) {
    return std::abs(block(dirty, est)["mean"]["estimate"].get<double>() -
                    block(clean, est)["mean"]["estimate"].get<double>());
  };
  EXPECT_GT(block(dirty, "mle")["mean"]["estimate"].get<double>(),
            block(clean, "mle")["mean"]["estimate"].get<double>());
  EXPECT_GE(shift("mle"), 3.0 * shift("mhde"));
}

TEST_F(Cli, FitReportAndFiles) {
  const auto data = fixture("report.csv", 0, 0.0);
  const auto out = (dir() / "sub" / "report").string();
  const auto r = run("fit --data " + data + " --out " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* s : {"Kish n_eff", "H^2", "mhde", "mle", "mean", "median"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  const auto csv = slurp(out + ".csv");
  EXPECT_NE(csv.find("# config: "), std::string::npos);
  EXPECT_NE(csv.find("# seed: 1"), std::string::npos);
  EXPECT_EQ(data_rows(csv), 8u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("fit").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("--help").code, 0);

  const auto no_weight = (dir() / "noweight.csv").string();
  mhde::write_text_file(no_weight, "y\n1\n2\n");
  auto r = run("fit --data " + no_weight);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("weight"), std::string::npos);

  const auto bad_line = (dir() / "badline.csv").string();
  mhde::write_text_file(bad_line, "y,weight\n1,1\n2,x\n");
  r = run("fit --data " + bad_line);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 3"), std::string::npos);

  EXPECT_EQ(run("fit --data /nonexistent/file.csv").code, 5);
  EXPECT_EQ(run("simulate --config /nonexistent/file.cfg").code, 5);

  const auto bad_cfg = (dir() / "bad.cfg").string();
  mhde::write_text_file(bad_cfg, R"({"schema_version": 1, "model": {"family": "gamma",
    "theta": [2, 35000]}, "design": {"kind": "srs_wor", "alfa": 0.01}})");
  r = run("simulate --config " + bad_cfg);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("design.alfa"), std::string::npos);

  EXPECT_EQ(run("coverage --config " + config("smoke")).code, 3);
  EXPECT_EQ(run("fit --data " + fixture("fam.csv", 0, 0.0) + " --family beta").code, 6);

  // Every record at the same value: the KDE has no spread.
  const auto constant = (dir() / "constant.csv").string();
  mhde::write_text_file(constant, "y,weight\n5,1\n5,1\n5,1\n");
  EXPECT_NE(run("fit --data " + constant).code, 0);
}

TEST_F(Cli, SimulateSmokeIsDeterministic) {
  const auto a = (dir() / "smoke_a").string(), b = (dir() / "smoke_b").string();
  const auto ra = run("simulate --config " + config("smoke") + " --threads 1 --out " + a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  const auto rb = run("simulate --config " + config("smoke") + " --threads 8 --out " + b);
  ASSERT_EQ(rb.code, 0) << rb.err;
  for (const char* ext : {".csv", ".json", ".txt", "_replicates.csv"})
    EXPECT_EQ(slurp(a + ext), slurp(b + ext)) << ext;
  EXPECT_EQ(data_rows(slurp(a + ".csv")), 8u);
  EXPECT_EQ(data_rows(slurp(a + "_replicates.csv")), 2u * 2u * 24u);
  EXPECT_NE(ra.out.find("\"base_seed\": 5"), std::string::npos);

  const auto rs = run("simulate --config " + config("smoke") + " --seed 6 --out " + b);
  ASSERT_EQ(rs.code, 0);
  EXPECT_NE(slurp(a + ".csv"), slurp(b + ".csv"));
}

TEST_F(Cli, SimulateBundledConfigStructure) {
  const auto out = (dir() / "srswor").string();
  const auto r = run("simulate --config " + config("gamma_srswor") + " --replications 2 --out " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(out + ".csv"));
  std::string line;
  std::map<std::string, int> per_n;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    ++per_n[line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1)];
  }
  ASSERT_EQ(per_n.size(), 2u);
  for (const auto& [n, rows] : per_n) EXPECT_EQ(rows, 4) << n;
}

TEST_F(Cli, ReportReadsSimulationOutput) {
  const auto out = (dir() / "rep").string();
  ASSERT_EQ(run("simulate --config " + config("smoke") + " --out " + out).code, 0);
  auto r = run("report --input " + out + ".csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("CI coverage"), std::string::npos);
  r = run("report --input " + out + ".csv --format json");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["cells"].size(), 8u);
  EXPECT_EQ(run("report --input /nonexistent/r.csv").code, 5);
}

TEST_F(Cli, InfluenceResolvesQuantiles) {
  auto r = run("influence --theta 2,35000 --p 0.9999999 --eps 0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("z = 669193"), std::string::npos) << r.err;
  // epsilon = 0 returns the model parameters for both estimators.
  std::istringstream in(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("estimator", 0) == 0) continue;
    ++rows;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 8u);
    EXPECT_NEAR(std::stod(f[3]), 2.0, 1e-5);
    EXPECT_NEAR(std::stod(f[4]), 35000.0, 0.1);
  }
  EXPECT_EQ(rows, 2);

  r = run("influence --theta 2,35000 --p 0.99 --eps 0");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("z = 232342"), std::string::npos) << r.err;

  EXPECT_EQ(run("influence --theta 2,35000 --z 1e5 --p 0.9 --eps 0").code, 3);
  EXPECT_EQ(run("influence --theta 2,35000 --p 1.5 --eps 0").code, 3);
}

TEST_F(Cli, InfluenceCurveFiles) {
  const auto out = (dir() / "ifc").string();
  const auto r = run("influence --theta 2,35000 --probs 0.5,0.99 --if-eps 0.001 --out " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = json::parse(slurp(out + ".json"));
  EXPECT_EQ(doc["rows"].size(), 6u);
  EXPECT_EQ(data_rows(slurp(out + ".csv")), 6u);
  EXPECT_EQ(doc["config"]["probs"].size(), 2u);
}
