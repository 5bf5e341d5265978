#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fediskit/cli.hpp"
#include "fediskit/config.hpp"
#include "fediskit/errors.hpp"
#include "fediskit/report.hpp"

using namespace fediskit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fediskit_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const auto p = dir / "config.json";
  std::ofstream(p) << body;
  return p;
}

std::string small_run_json(const fs::path& out_dir) {
  return R"({
  "dataset": {"kind": "synthetic", "num_classes": 4, "train_per_class": 30,
              "test_per_class": 10, "dim": 4},
  "scheme": "weak_noniid",
  "labels_per_client": 2,
  "num_clients": 4,
  "rounds": 3,
  "proxy_batch": 12,
  "learner": {"hidden": [[8]]},
  "output_dir": ")" + out_dir.string() + R"("
})";
}

}  // namespace

TEST_CASE("minimal config fills documented defaults") {
  const auto c = parse_config(R"({"dataset": {"kind": "synthetic"}, "num_clients": 10,
                                  "scheme": "strong_noniid"})", ".");
  CHECK(c.alpha == 0.2);
  REQUIRE(c.threshold.quantile.has_value());
  CHECK(*c.threshold.quantile == 0.95);
  CHECK_FALSE(c.threshold.raw.has_value());
  CHECK(c.rounds == 40);
  CHECK(c.proxy_batch == 256);
  CHECK(c.learner.temperature == 2.0);
  CHECK(c.learner.lr_supervised == 0.05);
  CHECK(c.learner.lr_distill == 0.05);
  CHECK(c.learner.batch_size == 32);
  CHECK(c.kulsif.lambda == 0.1);
  CHECK_FALSE(c.kmeans.clusters.has_value());
  CHECK(c.filter_mode == FilterMode::kKMeans);
  CHECK(c.num_clients == 10);
  CHECK(c.scheme == Scheme::kStrongNonIid);
}

TEST_CASE("range violations name the field") {
  try {
    validate(parse_config(R"({"alpha": 1.5})", "."));
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("alpha") != std::string::npos);
  }
  CHECK_THROWS_AS(validate(parse_config(R"({"threshold": {"quantile": 1.0}})", ".")), ConfigError);
  CHECK_THROWS_AS(validate(parse_config(R"({"rounds": -1})", ".")), ConfigError);
}

TEST_CASE("strong scheme with more clients than labels is infeasible up front") {
  CHECK_THROWS_AS(parse_config(R"({"scheme": "strong_noniid", "num_clients": 12})", "."),
                  InfeasibleError);

  const auto dir = scratch("infeasible");
  const auto cfg = write_config(dir, R"({"scheme": "strong_noniid", "num_clients": 12,
                                         "output_dir": ")" + (dir / "out").string() + R"("})");
  const auto r = cli({"run", "-c", cfg.string()});
  CHECK(r.code == kExitRuntime);
  CHECK(r.err.find("num_clients") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "metrics.csv"));
}

TEST_CASE("unknown keys and malformed documents are rejected with context") {
  try {
    parse_config(R"({"learner": {"hiden": [[4]]}})", ".");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learner.hiden") != std::string::npos);
  }
  try {
    parse_config("{\n  \"alpha\": 0.2,\n  \"rounds\": ,\n}", ".");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"filter_mode": "magic"})", "."), ConfigError);
}

TEST_CASE("config JSON round-trips through its own dump") {
  const auto c = parse_config(R"({"threshold": {"raw": 3.5}, "kmeans": {"clusters": 4},
                                  "learner": {"hidden": [[5], [6, 7]]}, "num_clients": 2})", ".");
  const auto again = parse_config(to_json_text(c), ".");
  CHECK(to_json_text(again) == to_json_text(c));
  CHECK(config_hash(again) == config_hash(c));
  CHECK(*again.threshold.raw == 3.5);
  CHECK(*again.kmeans.clusters == 4);
  CHECK(hidden_plan(again, 1) == std::vector<int>{6, 7});
}

TEST_CASE("usage errors exit with code 2") {
  const auto unknown = cli({"frobnicate"});
  CHECK(unknown.code == kExitUsage);
  CHECK(unknown.err.find("run") != std::string::npos);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"run"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("run is byte-reproducible and its manifest replays it") {
  const auto dir = scratch("replay");
  const auto cfg = write_config(dir, small_run_json(dir / "a"));
  REQUIRE(cli({"run", "-c", cfg.string()}).code == kExitOk);
  const std::string first = slurp(dir / "a" / "metrics.csv");
  REQUIRE(cli({"run", "-c", cfg.string()}).code == kExitOk);
  CHECK(slurp(dir / "a" / "metrics.csv") == first);
  CHECK(fs::exists(dir / "a" / "report.md"));

  const std::string manifest = slurp(dir / "a" / "manifest.txt");
  CHECK(manifest.rfind("# fediskit manifest", 0) == 0);
  CHECK(manifest.find("seed: 0") != std::string::npos);
  CHECK(manifest.find("config_hash: ") != std::string::npos);

  // Replaying from the manifest into another directory.
  fs::copy_file(dir / "a" / "manifest.txt", dir / "replay.txt");
  setenv("FEDISKIT_OUT", (dir / "b").string().c_str(), 1);
  const auto replay = cli({"run", "-c", (dir / "replay.txt").string()});
  unsetenv("FEDISKIT_OUT");
  REQUIRE(replay.code == kExitOk);
  CHECK(slurp(dir / "b" / "metrics.csv") == first);
}

TEST_CASE("flag overrides change the run") {
  const auto dir = scratch("overrides");
  const auto cfg = write_config(dir, small_run_json(dir / "o"));
  REQUIRE(cli({"run", "-c", cfg.string(), "--rounds", "2", "--seed", "9", "--filter-mode",
               "kulsif"}).code == kExitOk);
  std::ifstream in(dir / "o" / "metrics.csv");
  const auto rows = read_metrics_csv(in);
  CHECK(rows.back().round == 2);
  const std::string manifest = slurp(dir / "o" / "manifest.txt");
  CHECK(manifest.find("seed: 9") != std::string::npos);
  CHECK(manifest.find("\"filter_mode\": \"kulsif\"") != std::string::npos);
  CHECK(cli({"run", "-c", cfg.string(), "--filter-mode", "bogus"}).code == kExitRuntime);
}

TEST_CASE("indlearn on strong non-IID digits reports chance accuracy") {
  const auto dir = scratch("indlearn");
  setenv("FEDISKIT_OUT", dir.string().c_str(), 1);
  const auto r = cli({"run", "-c", std::string(FEDISKIT_SOURCE_DIR) + "/configs/digits_strong.json",
                      "--filter-mode", "indlearn", "--rounds", "5"});
  unsetenv("FEDISKIT_OUT");
  REQUIRE(r.code == kExitOk);
  std::ifstream in(dir / "metrics.csv");
  const auto rows = read_metrics_csv(in);
  REQUIRE_FALSE(rows.empty());
  CHECK(rows.back().client == "mean");
  CHECK(rows.back().accuracy == doctest::Approx(0.10).epsilon(0.2));
}

TEST_CASE("sweep, bench-dre and report commands write their files") {
  const auto dir = scratch("commands");
  const auto out = dir / "s";
  std::string body = small_run_json(out);
  body.insert(body.rfind('}'), R"(,
  "sweep": {"thresholds": [{"quantile": 0.9}, {"raw": 1.0}], "alphas": [0.2], "seeds": [0]},
  "bench": {"sizes": [40, 80], "dim": 3, "clusters": [1], "repeats": 3})");
  const auto cfg = write_config(dir, body);
  REQUIRE(cli({"sweep", "-c", cfg.string()}).code == kExitOk);
  std::ifstream sweep_in(out / "sweep.csv");
  CHECK(read_sweep_csv(sweep_in).size() == 2);
  REQUIRE(cli({"bench-dre", "-c", cfg.string()}).code == kExitOk);
  std::ifstream scaling_in(out / "scaling.csv");
  CHECK(read_scaling_csv(scaling_in).size() == 4 * 2 * 3);

  fs::remove(out / "report.md");
  CHECK(cli({"report", out.string()}).code == kExitOk);
  const std::string md = slurp(out / "report.md");
  CHECK(md.find("sweep") != std::string::npos);
  CHECK(md.find("scaling") != std::string::npos);
  CHECK(cli({"report", (dir / "nowhere").string()}).code == kExitRuntime);
}
