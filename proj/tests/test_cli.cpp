#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"

using namespace dynbsde;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

bool has_issue(const std::vector<ConfigIssue>& v, const std::string& field) {
  for (const auto& i : v)
    if (i.field == field) return true;
  return false;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto c = ExperimentConfig::parse("# comment\nexperiment = static-value\n\n n = 8 # trailing\n");
  CHECK(c.str("experiment") == "static-value");
  CHECK(c.integer("n", 0) == 8);
  CHECK_THROWS_AS(ExperimentConfig::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(c.num("experiment", 0.0), ConfigError);
}

TEST_CASE("hash ignores order and output_dir") {
  const auto a = ExperimentConfig::parse("experiment = illposed-demo\nn = 8\noutput_dir = x\n");
  const auto b = ExperimentConfig::parse("n = 8\nexperiment = illposed-demo\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  const auto d = ExperimentConfig::parse("n = 9\nexperiment = illposed-demo\n");
  CHECK(a.hash() != d.hash());
}

TEST_CASE("validation reports field-level issues") {
  CHECK(has_issue(validate_config(ExperimentConfig::parse("experiment = bogus\n")), "experiment"));
  CHECK(has_issue(validate_config(ExperimentConfig::parse("experiment = tau-bound\n")), "seed"));
  CHECK(has_issue(validate_config(ExperimentConfig::parse("experiment = illposed-demo\nT = -1\n")), "T"));
  CHECK(has_issue(validate_config(ExperimentConfig::parse("experiment = illposed-demo\nfoo = 1\n")), "foo"));
  CHECK(validate_config(ExperimentConfig::parse("experiment = illposed-demo\nn = 8\n")).empty());
  CHECK_THROWS_AS(run_experiment(ExperimentConfig::parse("experiment = bogus\n")), ConfigError);
}

TEST_CASE("listing carries every experiment with its anchor") {
  const auto s = format_listing();
  CHECK(list_experiments().size() >= 9);
  CHECK(s.find("duality → §4") != std::string::npos);
  CHECK(s.find("tau-bound → Theorem 5.4 Step 3") != std::string::npos);
}

TEST_CASE("reruns produce byte-identical artifacts") {
  const fs::path root = fs::temp_directory_path() / "dynbsde_cli_test";
  fs::remove_all(root);
  auto cfg = ExperimentConfig::parse("experiment = forward-dpp\nseed = 7\n");
  cfg.set("output_dir", (root / "a").string());
  const auto r1 = run_experiment(cfg);
  cfg.set("output_dir", (root / "b").string());
  const auto r2 = run_experiment(cfg);
  CHECK(r1.pass());
  REQUIRE(r1.artifacts == r2.artifacts);
  CHECK(!r1.artifacts.empty());
  CHECK(fs::path(r1.output_dir).filename() == fs::path(r2.output_dir).filename());
  for (const auto& a : r1.artifacts) {
    INFO(a);
    CHECK(slurp(fs::path(r1.output_dir) / a) == slurp(fs::path(r2.output_dir) / a));
  }
  CHECK(slurp(fs::path(r1.output_dir) / "report.json") == slurp(fs::path(r2.output_dir) / "report.json"));
  fs::remove_all(root);
}
