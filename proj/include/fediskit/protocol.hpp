#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fediskit/config.hpp"
#include "fediskit/data.hpp"
#include "fediskit/dre.hpp"
#include "fediskit/learner.hpp"

namespace fediskit {

struct ClientState {
  int client_id = 0;
  ClientDataset dataset;
  MlpModel model;
  DensityModel dre;                     // monostate when unfiltered
  std::optional<IdThreshold> threshold;  // present iff dre is
  std::vector<bool> contributed;         // indexed by proxy global index

  // Cached training view of `dataset`.
  Eigen::MatrixXd features;
  std::vector<int> labels;

  bool donated(std::size_t global_index) const {
    return global_index < contributed.size() && contributed[global_index];
  }
};

struct Federation {
  std::vector<ClientState> clients;
  ProxyDataset proxy;
};

struct RoundPlan {
  int round = 0;
  std::vector<std::size_t> indices;
};

struct PredictionSet {
  int client_id = 0;
  std::map<std::size_t, Eigen::VectorXd> entries;
  std::size_t dre_evaluations = 0;  // stage-2 scoring calls made
};

struct AggregatedTargets {
  struct Entry {
    Eigen::VectorXd mean;
    int contributors = 0;
  };
  std::map<std::size_t, Entry> entries;

  std::vector<SoftTarget> soft_targets() const;
};

struct RoundMetrics {
  int round = 0;
  std::vector<double> client_accuracy;
  std::vector<double> kept_fraction;
  double mean_accuracy = 0.0;
  std::size_t targets = 0;          // aggregated indices distilled this round
  std::size_t uplink_floats = 0;    // sum over clients of kept * L
  std::size_t downlink_floats = 0;  // targets * L * C
  double wall_seconds = 0.0;        // not part of equality
};

struct FilterConfusion {
  std::size_t id_kept = 0;
  std::size_t id_rejected = 0;
  std::size_t ood_kept = 0;
  std::size_t ood_rejected = 0;

  double id_kept_fraction() const;
  double ood_leak_fraction() const;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  std::vector<double> final_accuracy;
  double mean_accuracy = 0.0;
  std::vector<double> thresholds;  // per client; empty when unfiltered
  std::size_t proxy_size = 0;
  FilterConfusion confusion;       // filled by diagnostics observers only
};

// Equality over everything except wall-clock timings.
bool same_outcome(const ExperimentResult& a, const ExperimentResult& b);

// Called once per client per round after filtering.
using RoundObserver = std::function<void(const ClientState&, const RoundPlan&,
                                         const PredictionSet&, const ProxyDataset&)>;

struct ExperimentData {
  Dataset train;
  Dataset test;
};

// Loads or synthesizes the train/test split described by the config.
ExperimentData load_experiment_data(const RunConfig& config);

Federation initialize(std::vector<ClientDataset> clients_data, const RunConfig& config);

RoundPlan select_round_indices(std::size_t proxy_size, std::size_t batch,
                               std::uint64_t master_seed, int round);

PredictionSet client_filter(const ClientState& state, const ProxyDataset& proxy,
                            const RoundPlan& plan);

AggregatedTargets server_aggregate(std::span<const PredictionSet> submissions,
                                   const RoundPlan& plan);

RoundMetrics run_round(std::vector<ClientState>& states, const ProxyDataset& proxy,
                       const RoundPlan& plan, const RunConfig& config, const Dataset& test_set,
                       const RoundObserver* observer = nullptr);

ExperimentResult run_experiment(const RunConfig& config, const RoundObserver* observer = nullptr);
ExperimentResult run_experiment(const RunConfig& config, const ExperimentData& data,
                                const RoundObserver* observer = nullptr);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions from any
// worker are rethrown on the caller.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fediskit
