#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fediskit/config.hpp"
#include "fediskit/protocol.hpp"

namespace fediskit {

enum class Estimator { kKMeans, kKulsif };
enum class Phase { kLearn, kEstimate };

std::string to_string(Estimator e);
std::string to_string(Phase p);
Estimator estimator_from_string(const std::string& s);
Phase phase_from_string(const std::string& s);

struct ScalingRecord {
  Estimator estimator = Estimator::kKMeans;
  Phase phase = Phase::kLearn;
  int size = 0;
  int dim = 0;
  int clusters = 0;  // 0 for KuLSIF
  int repeat = 0;
  double wall_seconds = 0.0;
  std::uint64_t accounted_bytes = 0;
};

struct ScalingSlope {
  Estimator estimator;
  Phase phase;
  int clusters;
  double slope;
};

struct ScalingResult {
  std::vector<ScalingRecord> samples;  // one per (series, size, repeat)
  std::vector<ScalingRecord> medians;  // one per (series, size); repeat = -1
  std::vector<ScalingSlope> slopes;

  // Throws if the series was not benchmarked.
  double slope(Estimator e, Phase p, int clusters = 0) const;
  std::vector<double> median_times(Estimator e, Phase p, int clusters = 0) const;
};

// Analytic payload accounting, 8-byte reals and words.
std::uint64_t kulsif_learn_bytes(std::uint64_t m, std::uint64_t n);
std::uint64_t kulsif_estimate_bytes(std::uint64_t t, std::uint64_t n, std::uint64_t m);
std::uint64_t kmeans_learn_bytes(std::uint64_t n, std::uint64_t c, std::uint64_t d);
std::uint64_t kmeans_estimate_bytes(std::uint64_t t, std::uint64_t c, std::uint64_t d);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

// KuLSIF uses m = n = size private/auxiliary samples; every phase scores
// t = size test points. Times are medians over `repeats` after one discarded
// warm-up.
ScalingResult bench_dre_scaling(std::span<const int> sizes, int dim, std::span<const int> clusters,
                                int repeats, std::uint64_t seed);

struct SweepRecord {
  std::optional<double> threshold;  // raw T^ID
  std::optional<double> quantile;   // calibration quantile
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double mean_accuracy = 0.0;
  double id_kept = 0.0;
  double ood_leak = 0.0;
};

// run_experiment plus filter confusion counts computed from the proxy's
// hidden labels. A stage-2 decision is "truly ID" when the sample's label is
// one the client holds.
ExperimentResult run_with_diagnostics(const RunConfig& config, const ExperimentData& data);
ExperimentResult run_with_diagnostics(const RunConfig& config);

std::vector<SweepRecord> sweep(const RunConfig& base, std::span<const ThresholdConfig> thresholds,
                               std::span<const double> alphas,
                               std::span<const std::uint64_t> seeds);
std::vector<SweepRecord> sweep(const RunConfig& base, std::span<const ThresholdConfig> thresholds,
                               std::span<const double> alphas,
                               std::span<const std::uint64_t> seeds, const ExperimentData& data);

struct GridRecord {
  Scheme scheme = Scheme::kStrongNonIid;
  FilterMode mode = FilterMode::kKMeans;
  std::uint64_t seed = 0;
  double mean_accuracy = 0.0;
};

// Scenario x method accuracy table in the layout of a methods comparison.
std::vector<GridRecord> accuracy_grid(const RunConfig& base, std::span<const Scheme> schemes,
                                      std::span<const FilterMode> modes,
                                      std::span<const std::uint64_t> seeds,
                                      const ExperimentData& data);

}  // namespace fediskit
