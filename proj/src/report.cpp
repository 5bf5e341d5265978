#include "fediskit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "fediskit/errors.hpp"

namespace fediskit {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_sci4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4e", v);
  return buf;
}

std::string opt_fixed4(const std::optional<double>& v) { return v ? format_fixed4(*v) : ""; }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

// Reads the header, checks it, and hands back the split data rows.
std::vector<std::vector<std::string>> read_rows(std::istream& in, const char* header,
                                                std::size_t columns) {
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw FormatError(std::string("report: expected CSV header '") + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != columns) {
      throw FormatError("report: line " + std::to_string(lineno) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(columns));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

template <typename Reader>
auto read_if_exists(const std::filesystem::path& path, Reader reader)
    -> std::optional<decltype(reader(std::declval<std::istream&>()))> {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw Error("report: cannot read " + path.string());
  return reader(in);
}

}  // namespace

std::string format_fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingRecord> records) {
  out << kScalingHeader << '\n';
  for (const auto& r : records) {
    out << to_string(r.estimator) << ',' << to_string(r.phase) << ',' << r.size << ',' << r.dim
        << ',' << r.clusters << ',' << r.repeat << ',' << format_sci4(r.wall_seconds) << ','
        << r.accounted_bytes << '\n';
  }
}

std::vector<ScalingRecord> read_scaling_csv(std::istream& in) {
  std::vector<ScalingRecord> out;
  for (const auto& f : read_rows(in, kScalingHeader, 8)) {
    out.push_back({estimator_from_string(f[0]), phase_from_string(f[1]), std::stoi(f[2]),
                   std::stoi(f[3]), std::stoi(f[4]), std::stoi(f[5]), std::stod(f[6]),
                   std::stoull(f[7])});
  }
  return out;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRecord> records) {
  out << kSweepHeader << '\n';
  for (const auto& r : records) {
    out << opt_fixed4(r.threshold) << ',' << opt_fixed4(r.quantile) << ','
        << format_fixed4(r.alpha) << ',' << r.seed << ',' << format_fixed4(r.mean_accuracy) << ','
        << format_fixed4(r.id_kept) << ',' << format_fixed4(r.ood_leak) << '\n';
  }
}

std::vector<SweepRecord> read_sweep_csv(std::istream& in) {
  std::vector<SweepRecord> out;
  for (const auto& f : read_rows(in, kSweepHeader, 7)) {
    out.push_back({parse_opt(f[0]), parse_opt(f[1]), std::stod(f[2]), std::stoull(f[3]),
                   std::stod(f[4]), std::stod(f[5]), std::stod(f[6])});
  }
  return out;
}

void write_grid_csv(std::ostream& out, std::span<const GridRecord> records) {
  out << kGridHeader << '\n';
  for (const auto& r : records) {
    out << to_string(r.scheme) << ',' << to_string(r.mode) << ',' << r.seed << ','
        << format_fixed4(r.mean_accuracy) << '\n';
  }
}

std::vector<GridRecord> read_grid_csv(std::istream& in) {
  std::vector<GridRecord> out;
  for (const auto& f : read_rows(in, kGridHeader, 4)) {
    out.push_back({scheme_from_string(f[0]), filter_mode_from_string(f[1]), std::stoull(f[2]),
                   std::stod(f[3])});
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const ExperimentResult& result) {
  out << kMetricsHeader << '\n';
  for (const auto& m : result.rounds) {
    for (std::size_t c = 0; c < m.client_accuracy.size(); ++c) {
      out << m.round << ',' << c << ',' << format_fixed4(m.client_accuracy[c]) << ','
          << format_fixed4(m.kept_fraction[c]) << ',' << m.targets << ',' << m.uplink_floats
          << '\n';
    }
    double mean_kept = 0.0;
    for (double k : m.kept_fraction) mean_kept += k;
    if (!m.kept_fraction.empty()) mean_kept /= static_cast<double>(m.kept_fraction.size());
    out << m.round << ",mean," << format_fixed4(m.mean_accuracy) << ',' << format_fixed4(mean_kept)
        << ',' << m.targets << ',' << m.uplink_floats << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> out;
  for (const auto& f : read_rows(in, kMetricsHeader, 6)) {
    out.push_back({std::stoi(f[0]), f[1], std::stod(f[2]), std::stod(f[3]),
                   static_cast<std::size_t>(std::stoull(f[4])),
                   static_cast<std::size_t>(std::stoull(f[5]))});
  }
  return out;
}

std::string grid_markdown(std::span<const GridRecord> records, const std::string& dataset_name) {
  // Preserve first-appearance order of scenarios and methods.
  std::vector<std::pair<Scheme, FilterMode>> keys;
  std::map<std::pair<Scheme, FilterMode>, std::pair<double, int>> acc;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.scheme, r.mode);
    if (!acc.count(key)) keys.push_back(key);
    auto& slot = acc[key];
    slot.first += r.mean_accuracy;
    ++slot.second;
  }
  std::ostringstream md;
  md << "| Scenario | Method | " << dataset_name << " |\n|---|---|---|\n";
  for (const auto& key : keys) {
    const auto& [sum, n] = acc[key];
    md << "| " << to_string(key.first) << " | " << to_string(key.second) << " | "
       << percent(sum / n) << " |\n";
  }
  return md.str();
}

std::string sweep_markdown(std::span<const SweepRecord> records) {
  std::ostringstream md;
  md << "| threshold | quantile | alpha | seed | accuracy (%) | ID kept | OOD leak |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : records) {
    md << "| " << (r.threshold ? format_fixed4(*r.threshold) : "-") << " | "
       << (r.quantile ? format_fixed4(*r.quantile) : "-") << " | " << format_fixed4(r.alpha)
       << " | " << r.seed << " | " << percent(r.mean_accuracy) << " | "
       << format_fixed4(r.id_kept) << " | " << format_fixed4(r.ood_leak) << " |\n";
  }
  return md.str();
}

std::string scaling_markdown(std::span<const ScalingRecord> records) {
  using Key = std::tuple<std::string, std::string, int>;
  std::map<Key, std::map<int, std::vector<double>>> times;
  std::map<Key, std::map<int, std::uint64_t>> bytes;
  for (const auto& r : records) {
    if (r.repeat < 0) continue;
    const Key key{to_string(r.estimator), to_string(r.phase), r.clusters};
    times[key][r.size].push_back(r.wall_seconds);
    bytes[key][r.size] = r.accounted_bytes;
  }
  std::ostringstream md;
  md << "| estimator | phase | clusters | size | median wall (s) | accounted bytes |\n"
     << "|---|---|---|---|---|---|\n";
  std::ostringstream slopes;
  slopes << "\n| estimator | phase | clusters | log-log slope |\n|---|---|---|---|\n";
  for (auto& [key, by_size] : times) {
    std::vector<double> xs, ys;
    for (auto& [size, ts] : by_size) {
      std::sort(ts.begin(), ts.end());
      const std::size_t n = ts.size();
      const double med = n % 2 ? ts[n / 2] : 0.5 * (ts[n / 2 - 1] + ts[n / 2]);
      md << "| " << std::get<0>(key) << " | " << std::get<1>(key) << " | " << std::get<2>(key)
         << " | " << size << " | " << format_sci4(med) << " | " << bytes[key][size] << " |\n";
      xs.push_back(size);
      ys.push_back(std::max(med, 1e-12));
    }
    if (xs.size() >= 2) {
      slopes << "| " << std::get<0>(key) << " | " << std::get<1>(key) << " | " << std::get<2>(key)
             << " | " << format_fixed4(loglog_slope(xs, ys)) << " |\n";
    }
  }
  return md.str() + slopes.str();
}

std::string metrics_markdown(std::span<const MetricsRow> rows) {
  std::ostringstream md;
  md << "| round | mean accuracy (%) | mean kept fraction | targets |\n|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (r.client != "mean") continue;
    md << "| " << r.round << " | " << percent(r.accuracy) << " | " << format_fixed4(r.kept_fraction)
       << " | " << r.targets << " |\n";
  }
  return md.str();
}

std::filesystem::path write_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("report: " + dir.string() + " is not a directory");
  }
  std::ostringstream md;
  md << "# fediskit report\n";
  bool any = false;
  if (auto grid = read_if_exists(dir / "grid.csv", read_grid_csv)) {
    md << "\n## Accuracy by scenario and method\n\n" << grid_markdown(*grid, "accuracy (%)");
    any = true;
  }
  if (auto metrics = read_if_exists(dir / "metrics.csv", read_metrics_csv)) {
    md << "\n## Run metrics\n\n" << metrics_markdown(*metrics);
    any = true;
  }
  if (auto sweep = read_if_exists(dir / "sweep.csv", read_sweep_csv)) {
    md << "\n## Threshold / proxy-fraction sweep\n\n" << sweep_markdown(*sweep);
    any = true;
  }
  if (auto scaling = read_if_exists(dir / "scaling.csv", read_scaling_csv)) {
    md << "\n## Density-ratio estimator scaling\n\n" << scaling_markdown(*scaling);
    any = true;
  }
  if (!any) throw Error("report: no result CSVs in " + dir.string());
  const auto path = dir / "report.md";
  std::ofstream out(path);
  if (!out) throw Error("report: cannot write " + path.string());
  out << md.str();
  return path;
}

}  // namespace fediskit
