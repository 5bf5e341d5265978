#include "fediskit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

using Clock = std::chrono::steady_clock;

// Very short calls are repeated until the measurement spans at least this long.
constexpr double kMinTimedSeconds = 0.005;

// Keeps the optimizer from discarding benchmarked results.
volatile double g_sink = 0.0;

template <typename Fn>
double time_call(Fn&& fn) {
  auto start = Clock::now();
  fn();
  double once = std::chrono::duration<double>(Clock::now() - start).count();
  if (once >= kMinTimedSeconds) return once;
  const int loops = static_cast<int>(std::ceil(kMinTimedSeconds / std::max(once, 1e-7)));
  start = Clock::now();
  for (int i = 0; i < loops; ++i) fn();
  return std::chrono::duration<double>(Clock::now() - start).count() / loops;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Eigen::MatrixXd to_matrix(const Dataset& ds) {
  ClientDataset view;
  view.samples = ds;
  return view.feature_matrix();
}

// Ten Gaussian blobs in [0,1]^d; the KMeans series converge in a handful of
// iterations at every size, so learn time tracks n rather than k.
Eigen::MatrixXd bench_points(int n, int dim, std::uint64_t seed, std::string_view purpose) {
  constexpr int kBlobs = 10;
  Rng rng = make_rng(seed, "bench-means");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::VectorXd> means;
  for (int k = 0; k < kBlobs; ++k) {
    Eigen::VectorXd m(dim);
    for (int j = 0; j < dim; ++j) m[j] = u(rng);
    means.push_back(std::move(m));
  }
  const int per = (n + kBlobs - 1) / kBlobs;
  Eigen::MatrixXd X = to_matrix(gen_gaussian_mixture(
      kBlobs, per, dim, means, 0.05, derive_seed(seed, purpose, static_cast<std::uint64_t>(n))));
  return X.topRows(n);
}

void add_series(ScalingResult& result, Estimator e, Phase p, int dim, int clusters,
                const std::vector<int>& sizes, const std::vector<std::vector<double>>& times,
                const std::vector<std::uint64_t>& bytes) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (std::size_t r = 0; r < times[i].size(); ++r) {
      result.samples.push_back({e, p, sizes[i], dim, clusters, static_cast<int>(r), times[i][r], bytes[i]});
    }
    const double med = median(times[i]);
    result.medians.push_back({e, p, sizes[i], dim, clusters, -1, med, bytes[i]});
    xs.push_back(sizes[i]);
    ys.push_back(std::max(med, 1e-12));
  }
  result.slopes.push_back({e, p, clusters, loglog_slope(xs, ys)});
}

}  // namespace

std::string to_string(Estimator e) { return e == Estimator::kKMeans ? "kmeans" : "kulsif"; }
std::string to_string(Phase p) { return p == Phase::kLearn ? "learn" : "estimate"; }

Estimator estimator_from_string(const std::string& s) {
  if (s == "kmeans") return Estimator::kKMeans;
  if (s == "kulsif") return Estimator::kKulsif;
  throw FormatError("bench: unknown estimator '" + s + "'");
}

Phase phase_from_string(const std::string& s) {
  if (s == "learn") return Phase::kLearn;
  if (s == "estimate") return Phase::kEstimate;
  throw FormatError("bench: unknown phase '" + s + "'");
}

double ScalingResult::slope(Estimator e, Phase p, int clusters) const {
  for (const auto& s : slopes) {
    if (s.estimator == e && s.phase == p && s.clusters == clusters) return s.slope;
  }
  throw Error("bench: no series " + to_string(e) + "/" + to_string(p) + "/c=" +
              std::to_string(clusters));
}

std::vector<double> ScalingResult::median_times(Estimator e, Phase p, int clusters) const {
  std::vector<double> out;
  for (const auto& r : medians) {
    if (r.estimator == e && r.phase == p && r.clusters == clusters) out.push_back(r.wall_seconds);
  }
  return out;
}

std::uint64_t kulsif_learn_bytes(std::uint64_t m, std::uint64_t n) {
  return 8 * (m * m + n * m + m);
}

std::uint64_t kulsif_estimate_bytes(std::uint64_t t, std::uint64_t n, std::uint64_t m) {
  return 8 * t * (n + m);
}

std::uint64_t kmeans_learn_bytes(std::uint64_t n, std::uint64_t c, std::uint64_t d) {
  return 8 * c * d + sizeof(std::uint64_t) * n;
}

std::uint64_t kmeans_estimate_bytes(std::uint64_t t, std::uint64_t c, std::uint64_t d) {
  return 8 * c * d + t;  // one boolean ID flag per test sample
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InconsistencyError("bench: slope inputs differ in length");
  if (x.size() < 2) throw InfeasibleError("bench: need at least two sizes to fit a slope");
  double mx = 0.0, my = 0.0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw RangeError("slope", "log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw InfeasibleError("bench: sizes must not all be equal");
  return sxy / sxx;
}

ScalingResult bench_dre_scaling(std::span<const int> sizes_in, int dim,
                                std::span<const int> clusters, int repeats, std::uint64_t seed) {
  if (sizes_in.size() < 2) throw InfeasibleError("bench: need at least two sizes to fit a slope");
  if (repeats < 3) throw RangeError("repeats", "must be >= 3");
  if (!std::is_sorted(sizes_in.begin(), sizes_in.end())) {
    throw RangeError("sizes", "must be ascending");
  }
  const std::vector<int> sizes(sizes_in.begin(), sizes_in.end());
  const std::size_t S = sizes.size();
  ScalingResult result;

  std::vector<Eigen::MatrixXd> train(S), test(S);
  for (std::size_t i = 0; i < S; ++i) {
    train[i] = bench_points(sizes[i], dim, seed, "bench-train");
    test[i] = bench_points(sizes[i], dim, seed, "bench-test");
  }

  // KuLSIF: m = n = t = size.
  {
    std::vector<std::vector<double>> learn(S), estimate(S);
    std::vector<std::uint64_t> learn_bytes(S), est_bytes(S);
    for (std::size_t i = 0; i < S; ++i) {
      const auto n = static_cast<std::uint64_t>(sizes[i]);
      const Eigen::MatrixXd aux = generate_aux_samples(train[i], sizes[i], 0.1, seed);
      const double sigma = median_heuristic_sigma(train[i], 500, seed);
      KulsifModel model = kulsif_learn(train[i], aux, sigma, 0.1);  // warm-up
      for (int r = 0; r < repeats; ++r) {
        learn[i].push_back(time_call([&] { model = kulsif_learn(train[i], aux, sigma, 0.1); }));
      }
      const auto score_all = [&] {
        double acc = 0.0;
        for (Eigen::Index t = 0; t < test[i].rows(); ++t) {
          acc += kulsif_score(model, test[i].row(t).transpose());
        }
        g_sink = acc;
      };
      score_all();
      for (int r = 0; r < repeats; ++r) estimate[i].push_back(time_call(score_all));
      learn_bytes[i] = kulsif_learn_bytes(n, n);
      est_bytes[i] = kulsif_estimate_bytes(n, n, n);
    }
    add_series(result, Estimator::kKulsif, Phase::kLearn, dim, 0, sizes, learn, learn_bytes);
    add_series(result, Estimator::kKulsif, Phase::kEstimate, dim, 0, sizes, estimate, est_bytes);
  }

  for (int c : clusters) {
    std::vector<std::vector<double>> learn(S), estimate(S);
    std::vector<std::uint64_t> learn_bytes(S), est_bytes(S);
    for (std::size_t i = 0; i < S; ++i) {
      const auto n = static_cast<std::uint64_t>(sizes[i]);
      KMeansOptions opts;
      opts.clusters = c;
      opts.max_iters = 100;
      opts.tol = 1e-6;
      opts.seed = seed;
      CentroidModel model = kmeans_fit(train[i], opts);  // warm-up
      for (int r = 0; r < repeats; ++r) {
        learn[i].push_back(time_call([&] { model = kmeans_fit(train[i], opts); }));
      }
      const auto score_all = [&] {
        double acc = 0.0;
        for (Eigen::Index t = 0; t < test[i].rows(); ++t) {
          acc += kmeans_score(model, test[i].row(t).transpose());
        }
        g_sink = acc;
      };
      score_all();
      for (int r = 0; r < repeats; ++r) estimate[i].push_back(time_call(score_all));
      learn_bytes[i] = kmeans_learn_bytes(n, static_cast<std::uint64_t>(c),
                                          static_cast<std::uint64_t>(dim));
      est_bytes[i] = kmeans_estimate_bytes(n, static_cast<std::uint64_t>(c),
                                           static_cast<std::uint64_t>(dim));
    }
    add_series(result, Estimator::kKMeans, Phase::kLearn, dim, c, sizes, learn, learn_bytes);
    add_series(result, Estimator::kKMeans, Phase::kEstimate, dim, c, sizes, estimate, est_bytes);
  }
  return result;
}

ExperimentResult run_with_diagnostics(const RunConfig& config, const ExperimentData& data) {
  FilterConfusion confusion;
  const RoundObserver observer = [&confusion](const ClientState& state, const RoundPlan& plan,
                                              const PredictionSet& submitted,
                                              const ProxyDataset& proxy) {
    for (std::size_t g : plan.indices) {
      if (state.donated(g)) continue;  // stage 1 always keeps these
      const bool truly_id = state.dataset.label_set.count(diagnostics::true_label(proxy, g)) > 0;
      const bool kept = submitted.entries.count(g) > 0;
      if (truly_id) {
        ++(kept ? confusion.id_kept : confusion.id_rejected);
      } else {
        ++(kept ? confusion.ood_kept : confusion.ood_rejected);
      }
    }
  };
  ExperimentResult result = run_experiment(config, data, &observer);
  result.confusion = confusion;
  return result;
}

ExperimentResult run_with_diagnostics(const RunConfig& config) {
  return run_with_diagnostics(config, load_experiment_data(config));
}

std::vector<SweepRecord> sweep(const RunConfig& base, std::span<const ThresholdConfig> thresholds,
                               std::span<const double> alphas,
                               std::span<const std::uint64_t> seeds) {
  return sweep(base, thresholds, alphas, seeds, load_experiment_data(base));
}

std::vector<SweepRecord> sweep(const RunConfig& base, std::span<const ThresholdConfig> thresholds,
                               std::span<const double> alphas,
                               std::span<const std::uint64_t> seeds, const ExperimentData& data) {
  if (thresholds.empty() || alphas.empty() || seeds.empty()) {
    throw InfeasibleError("bench: sweep grids must be non-empty");
  }
  std::vector<SweepRecord> out;
  for (const auto& t : thresholds) {
    for (double alpha : alphas) {
      for (std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.threshold = t;
        cfg.alpha = alpha;
        cfg.seed = seed;
        const ExperimentResult r = run_with_diagnostics(cfg, data);
        out.push_back({t.raw, t.quantile, alpha, seed, r.mean_accuracy,
                       r.confusion.id_kept_fraction(), r.confusion.ood_leak_fraction()});
      }
    }
  }
  return out;
}

std::vector<GridRecord> accuracy_grid(const RunConfig& base, std::span<const Scheme> schemes,
                                      std::span<const FilterMode> modes,
                                      std::span<const std::uint64_t> seeds,
                                      const ExperimentData& data) {
  std::vector<GridRecord> out;
  for (Scheme scheme : schemes) {
    for (FilterMode mode : modes) {
      for (std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.scheme = scheme;
        cfg.filter_mode = mode;
        cfg.seed = seed;
        out.push_back({scheme, mode, seed, run_experiment(cfg, data).mean_accuracy});
      }
    }
  }
  return out;
}

}  // namespace fediskit
