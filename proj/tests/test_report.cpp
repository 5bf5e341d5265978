#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fediskit/errors.hpp"
#include "fediskit/report.hpp"

using namespace fediskit;
namespace fs = std::filesystem;

namespace {

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fediskit_test_report_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fixed four-decimal formatting") {
  CHECK(format_fixed4(0.123456) == "0.1235");
  CHECK(format_fixed4(1.0) == "1.0000");
  CHECK(format_fixed4(0.0) == "0.0000");
  for (double v : {0.98765, 0.33333333, 0.5, 1e-5}) {
    CHECK(std::abs(std::stod(format_fixed4(v)) - v) <= 5e-5);
  }
}

TEST_CASE("scaling CSV round-trip") {
  const std::vector<ScalingRecord> in = {
      {Estimator::kKulsif, Phase::kLearn, 250, 50, 0, 0, 1.25e-3, 1002000},
      {Estimator::kKMeans, Phase::kEstimate, 2000, 50, 10, 2, 4.5e-5, 6000},
  };
  std::stringstream s;
  write_scaling_csv(s, in);
  CHECK(s.str().rfind("estimator,phase,size,dim,clusters,repeat,wall_s,bytes\n", 0) == 0);
  const auto out = read_scaling_csv(s);
  REQUIRE(out.size() == in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK(out[i].estimator == in[i].estimator);
    CHECK(out[i].phase == in[i].phase);
    CHECK(out[i].size == in[i].size);
    CHECK(out[i].clusters == in[i].clusters);
    CHECK(out[i].repeat == in[i].repeat);
    CHECK(out[i].accounted_bytes == in[i].accounted_bytes);
    CHECK(out[i].wall_seconds == doctest::Approx(in[i].wall_seconds).epsilon(1e-4));
  }
}

TEST_CASE("sweep CSV round-trip keeps absent fields absent") {
  const std::vector<SweepRecord> in = {
      {std::nullopt, 0.95, 0.2, 0, 0.87654, 0.9, 0.05},
      {10.0, std::nullopt, 0.8, 2, 0.5, 1.0, 0.0},
  };
  std::stringstream s;
  write_sweep_csv(s, in);
  const auto out = read_sweep_csv(s);
  REQUIRE(out.size() == 2);
  CHECK_FALSE(out[0].threshold.has_value());
  CHECK(*out[0].quantile == doctest::Approx(0.95));
  CHECK(*out[1].threshold == doctest::Approx(10.0));
  CHECK_FALSE(out[1].quantile.has_value());
  CHECK(std::abs(out[0].mean_accuracy - 0.87654) <= 5e-5);
  CHECK(out[1].seed == 2);
}

TEST_CASE("grid CSV round-trip and an empty table") {
  const std::vector<GridRecord> in = {{Scheme::kIid, FilterMode::kKulsif, 3, 0.9412}};
  std::stringstream s;
  write_grid_csv(s, in);
  const auto out = read_grid_csv(s);
  REQUIRE(out.size() == 1);
  CHECK(out[0].scheme == Scheme::kIid);
  CHECK(out[0].mode == FilterMode::kKulsif);
  CHECK(out[0].mean_accuracy == doctest::Approx(0.9412));

  std::stringstream empty;
  write_grid_csv(empty, {});
  CHECK(read_grid_csv(empty).empty());
}

TEST_CASE("CSV readers reject malformed input") {
  std::stringstream wrong_header("a,b,c\n");
  CHECK_THROWS_AS(read_grid_csv(wrong_header), FormatError);
  std::stringstream short_row(std::string(kGridHeader) + "\niid,kmeans\n");
  CHECK_THROWS_AS(read_grid_csv(short_row), FormatError);
}

TEST_CASE("metrics CSV has a row per client plus a mean row") {
  ExperimentResult r;
  RoundMetrics m;
  m.round = 1;
  m.client_accuracy = {0.5, 0.7};
  m.kept_fraction = {0.25, 0.75};
  m.mean_accuracy = 0.6;
  m.targets = 12;
  m.uplink_floats = 120;
  r.rounds.push_back(m);
  std::stringstream s;
  write_metrics_csv(s, r);
  const auto rows = read_metrics_csv(s);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].client == "0");
  CHECK(rows[2].client == "mean");
  CHECK(rows[2].accuracy == doctest::Approx(0.6));
  CHECK(rows[2].kept_fraction == doctest::Approx(0.5));
  CHECK(rows[1].uplink_floats == 120);
}

TEST_CASE("grid markdown has one row per method") {
  const std::vector<GridRecord> g = {
      {Scheme::kStrongNonIid, FilterMode::kIndLearn, 0, 0.10},
      {Scheme::kStrongNonIid, FilterMode::kNone, 0, 0.70},
      {Scheme::kStrongNonIid, FilterMode::kKMeans, 0, 0.88},
      {Scheme::kStrongNonIid, FilterMode::kKMeans, 1, 0.90},
  };
  const std::string md = grid_markdown(g, "digits");
  CHECK(md.find("| Scenario | Method | digits |") != std::string::npos);
  CHECK(count_lines_starting(md, "| strong_noniid") == 3);
  CHECK(md.find("| strong_noniid | kmeans | 89.00 |") != std::string::npos);
}

TEST_CASE("write_report renders whatever CSVs exist") {
  const auto dir = scratch("render");
  CHECK_THROWS_AS(write_report(dir), Error);
  {
    std::ofstream out(dir / "grid.csv");
    write_grid_csv(out, std::vector<GridRecord>{{Scheme::kIid, FilterMode::kKMeans, 0, 0.95}});
  }
  const auto path = write_report(dir);
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  CHECK(text.str().find("| iid | kmeans | 95.00 |") != std::string::npos);
  CHECK(text.str().find("sweep") == std::string::npos);
  CHECK_THROWS_AS(write_report(dir / "missing"), Error);
}
