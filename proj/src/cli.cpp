#include "fediskit/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "fediskit/bench.hpp"
#include "fediskit/errors.hpp"
#include "fediskit/protocol.hpp"
#include "fediskit/report.hpp"

namespace fediskit {

namespace {

constexpr const char* kVersion = "0.1.0";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<std::string> filter_mode;
};

RunConfig load_config(const std::string& path, const Overrides& o) {
  RunConfig config = parse_config_file(path);
  if (o.seed) config.seed = *o.seed;
  if (o.rounds) config.rounds = *o.rounds;
  if (o.filter_mode) config.filter_mode = filter_mode_from_string(*o.filter_mode);
  validate(config);
  return config;
}

std::filesystem::path prepare_dir(const RunConfig& config) {
  auto dir = resolve_output_dir(config);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer writer) {
  std::ofstream out(path);
  if (!out) throw Error("cli: cannot write " + path.string());
  writer(out);
}

int cmd_run(const RunConfig& config, std::ostream& err) {
  const auto dir = prepare_dir(config);
  err << "run: scheme=" << to_string(config.scheme) << " mode=" << to_string(config.filter_mode)
      << " clients=" << config.num_clients << " rounds=" << config.rounds
      << " seed=" << config.seed << '\n';
  const ExperimentResult result = run_with_diagnostics(config);
  double wall = 0.0;
  for (const auto& r : result.rounds) wall += r.wall_seconds;
  err << "run: mean accuracy " << format_fixed4(result.mean_accuracy) << " after "
      << result.rounds.size() << " rounds (" << format_fixed4(wall) << " s in rounds)\n";
  if (config.filter_mode != FilterMode::kIndLearn) {
    err << "run: filter id_kept " << format_fixed4(result.confusion.id_kept_fraction())
        << " ood_leak " << format_fixed4(result.confusion.ood_leak_fraction()) << '\n';
  }
  write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, result); });
  write_manifest(dir, "run", config);
  write_report(dir);
  return kExitOk;
}

int cmd_bench(const RunConfig& config, std::ostream& err) {
  const auto dir = prepare_dir(config);
  const auto& b = config.bench;
  err << "bench-dre: sizes=" << b.sizes.size() << " dim=" << b.dim << " repeats=" << b.repeats
      << '\n';
  const ScalingResult result = bench_dre_scaling(b.sizes, b.dim, b.clusters, b.repeats, config.seed);
  for (const auto& s : result.slopes) {
    err << "bench-dre: " << to_string(s.estimator) << '/' << to_string(s.phase)
        << " c=" << s.clusters << " slope " << format_fixed4(s.slope) << '\n';
  }
  write_file(dir / "scaling.csv", [&](std::ostream& o) { write_scaling_csv(o, result.samples); });
  write_manifest(dir, "bench-dre", config);
  write_report(dir);
  return kExitOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& err) {
  const auto dir = prepare_dir(config);
  const auto& s = config.sweep;
  err << "sweep: " << s.thresholds.size() * s.alphas.size() * s.seeds.size() << " runs\n";
  const auto records = sweep(config, s.thresholds, s.alphas, s.seeds);
  write_file(dir / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, records); });
  write_manifest(dir, "sweep", config);
  write_report(dir);
  return kExitOk;
}

int cmd_grid(const RunConfig& config, std::ostream& err) {
  const auto dir = prepare_dir(config);
  const auto& g = config.grid;
  err << "grid: " << g.schemes.size() * g.modes.size() * g.seeds.size() << " runs\n";
  const auto data = load_experiment_data(config);
  const auto records = accuracy_grid(config, g.schemes, g.modes, g.seeds, data);
  write_file(dir / "grid.csv", [&](std::ostream& o) { write_grid_csv(o, records); });
  write_manifest(dir, "grid", config);
  write_report(dir);
  return kExitOk;
}

}  // namespace

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  if (const char* env = std::getenv("FEDISKIT_OUT"); env && *env) return env;
  return config.output_dir;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const RunConfig& config) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  write_file(dir / "manifest.txt", [&](std::ostream& o) {
    o << "# fediskit manifest\n"
      << "command: " << command << '\n'
      << "seed: " << config.seed << '\n'
      << "config_hash: " << hash << '\n'
      << "fediskit: " << kVersion << '\n'
      << "eigen: " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
      << EIGEN_MINOR_VERSION << '\n'
      << "compiler: " << __VERSION__ << '\n'
      << "config:\n"
      << to_json_text(config) << '\n';
  });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fediskit: federated distillation with density-ratio proxy filtering", "fediskit"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration (JSON or manifest.txt)")
        ->required();
    sub->add_option("--seed", overrides.seed, "override the master seed");
    sub->add_option("--rounds", overrides.rounds, "override the number of rounds");
    sub->add_option("--filter-mode", overrides.filter_mode,
                    "override filter mode: kmeans | kulsif | none | indlearn");
  };
  auto* run = app.add_subcommand("run", "run one federated distillation experiment");
  auto* bench = app.add_subcommand("bench-dre", "benchmark KMeans-DRE against KuLSIF-DRE");
  auto* sweep_cmd = app.add_subcommand("sweep", "threshold x proxy-fraction sweep");
  auto* grid = app.add_subcommand("grid", "scenario x method accuracy grid");
  for (auto* sub : {run, bench, sweep_cmd, grid}) add_common(sub);
  auto* report = app.add_subcommand("report", "render report.md from result CSVs");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory holding result CSVs")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fediskit: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (report->parsed()) {
      err << "report: wrote " << write_report(report_dir).string() << '\n';
      return kExitOk;
    }
    const RunConfig config = load_config(config_path, overrides);
    if (run->parsed()) return cmd_run(config, err);
    if (bench->parsed()) return cmd_bench(config, err);
    if (sweep_cmd->parsed()) return cmd_sweep(config, err);
    if (grid->parsed()) return cmd_grid(config, err);
  } catch (const std::exception& e) {
    err << "fediskit: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace fediskit
