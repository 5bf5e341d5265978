#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fediskit/data.hpp"

namespace fediskit {

enum class FilterMode { kKMeans, kKulsif, kNone, kIndLearn };

std::string to_string(FilterMode mode);
FilterMode filter_mode_from_string(const std::string& name);

struct DatasetConfig {
  std::string kind = "synthetic";  // "idx" or "synthetic"
  std::string train_images, train_labels, test_images, test_labels;
  int num_classes = 10;
  int train_per_class = 150;  // synthetic: samples per class; idx: cap (0 = all)
  int test_per_class = 30;    // same convention as train_per_class
  int dim = 16;               // synthetic only
  double stddev = 0.08;       // synthetic only; class means are uniform in [0,1]^dim
};

// Exactly one of quantile / raw is set.
struct ThresholdConfig {
  std::optional<double> quantile = 0.95;
  std::optional<double> raw;
};

struct LearnerConfig {
  // One hidden-layer plan per client, or a single plan used by every client.
  std::vector<std::vector<int>> hidden = {{64}};
  double lr_supervised = 0.05;
  double lr_distill = 0.05;
  int epochs_supervised = 1;
  int epochs_distill = 1;
  int batch_size = 32;
  double temperature = 2.0;
};

struct KMeansConfig {
  std::optional<int> clusters;  // empty = one centroid per held label (strong: 1)
  int max_iters = 100;
  double tol = 1e-6;
};

struct KulsifConfig {
  std::optional<double> sigma;  // empty = median heuristic
  double lambda = 0.1;
  std::optional<int> m;         // empty = n (private sample count)
  double aux_margin = 0.1;
  int sigma_subsample = 500;
};

struct BenchConfig {
  std::vector<int> sizes = {250, 500, 1000, 2000};
  int dim = 50;
  std::vector<int> clusters = {1, 10};
  int repeats = 3;
};

struct SweepConfig {
  std::vector<ThresholdConfig> thresholds = {ThresholdConfig{}};
  std::vector<double> alphas = {0.2};
  std::vector<std::uint64_t> seeds = {0};
};

struct GridConfig {
  std::vector<Scheme> schemes = {Scheme::kStrongNonIid, Scheme::kWeakNonIid, Scheme::kIid};
  std::vector<FilterMode> modes = {FilterMode::kIndLearn, FilterMode::kNone, FilterMode::kKulsif,
                                   FilterMode::kKMeans};
  std::vector<std::uint64_t> seeds = {0};
};

struct RunConfig {
  DatasetConfig dataset;
  Scheme scheme = Scheme::kStrongNonIid;
  int num_clients = 10;
  int labels_per_client = 3;
  double alpha = 0.2;
  FilterMode filter_mode = FilterMode::kKMeans;
  ThresholdConfig threshold;
  KMeansConfig kmeans;
  KulsifConfig kulsif;
  int rounds = 40;
  int proxy_batch = 256;
  LearnerConfig learner;
  std::uint64_t seed = 0;
  std::string output_dir = "fediskit-out";
  int threads = 1;
  BenchConfig bench;
  SweepConfig sweep;
  GridConfig grid;
};

// Parses a JSON object. Unknown keys and out-of-range values raise
// ConfigError naming the offending field; syntax errors carry line context.
// Relative dataset paths are resolved against `base_dir`.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});

// Accepts either a config document or a manifest.txt written by `run`.
RunConfig parse_config_file(const std::filesystem::path& path);

// Range and feasibility checks that need no data (e.g. strong non-IID with
// more clients than classes).
void validate(const RunConfig& config);

// Canonical JSON text of a config (all defaults explicit).
std::string to_json_text(const RunConfig& config);

// FNV-1a over the canonical JSON.
std::uint64_t config_hash(const RunConfig& config);

// Hidden-layer plan of one client.
const std::vector<int>& hidden_plan(const RunConfig& config, int client_id);

}  // namespace fediskit
