#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fediskit/bench.hpp"
#include "fediskit/protocol.hpp"

namespace fediskit {

// CSV headers. Column order is part of the output contract.
inline constexpr const char* kScalingHeader = "estimator,phase,size,dim,clusters,repeat,wall_s,bytes";
inline constexpr const char* kSweepHeader = "threshold,quantile,alpha,seed,mean_acc,id_kept,ood_leak";
inline constexpr const char* kMetricsHeader =
    "round,client,accuracy,kept_fraction,targets,uplink_floats";
inline constexpr const char* kGridHeader = "scheme,method,seed,mean_acc";

// Fixed-point with four decimals; empty string for an absent value.
std::string format_fixed4(double v);

void write_scaling_csv(std::ostream& out, std::span<const ScalingRecord> records);
std::vector<ScalingRecord> read_scaling_csv(std::istream& in);

void write_sweep_csv(std::ostream& out, std::span<const SweepRecord> records);
std::vector<SweepRecord> read_sweep_csv(std::istream& in);

void write_grid_csv(std::ostream& out, std::span<const GridRecord> records);
std::vector<GridRecord> read_grid_csv(std::istream& in);

// One row per (round, client) plus a "mean" row per round.
void write_metrics_csv(std::ostream& out, const ExperimentResult& result);

struct MetricsRow {
  int round = 0;
  std::string client;  // client id or "mean"
  double accuracy = 0.0;
  double kept_fraction = 0.0;
  std::size_t targets = 0;
  std::size_t uplink_floats = 0;
};
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

// Methods comparison: one row per (scenario, method), accuracy in percent
// averaged over seeds; one column per dataset.
std::string grid_markdown(std::span<const GridRecord> records, const std::string& dataset_name);
std::string sweep_markdown(std::span<const SweepRecord> records);
std::string scaling_markdown(std::span<const ScalingRecord> records);
std::string metrics_markdown(std::span<const MetricsRow> rows);

// Renders report.md from whichever of metrics.csv, scaling.csv, sweep.csv and
// grid.csv exist in `dir`. Returns the written path.
std::filesystem::path write_report(const std::filesystem::path& dir);

}  // namespace fediskit
