#include "fediskit/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

std::vector<int> layer_sizes_for(const RunConfig& config, int client_id, int dim, int L) {
  std::vector<int> sizes{dim};
  const auto& plan = hidden_plan(config, client_id);
  sizes.insert(sizes.end(), plan.begin(), plan.end());
  sizes.push_back(L);
  return sizes;
}

int clusters_for(const RunConfig& config, const ClientDataset& client) {
  if (config.kmeans.clusters) return *config.kmeans.clusters;
  if (config.scheme == Scheme::kStrongNonIid) return 1;
  return static_cast<int>(client.label_set.size());
}

DensityModel fit_estimator(const RunConfig& config, const ClientState& state) {
  const auto cid = static_cast<std::uint64_t>(state.client_id);
  switch (config.filter_mode) {
    case FilterMode::kKMeans: {
      KMeansOptions opts;
      opts.clusters = clusters_for(config, state.dataset);
      opts.max_iters = config.kmeans.max_iters;
      opts.tol = config.kmeans.tol;
      opts.seed = derive_seed(config.seed, "kmeans", cid);
      return kmeans_fit(state.features, opts);
    }
    case FilterMode::kKulsif: {
      const int m = config.kulsif.m.value_or(static_cast<int>(state.features.rows()));
      const Eigen::MatrixXd aux = generate_aux_samples(
          state.features, m, config.kulsif.aux_margin, derive_seed(config.seed, "kulsif-aux", cid));
      const double sigma = config.kulsif.sigma.value_or(median_heuristic_sigma(
          state.features, config.kulsif.sigma_subsample, derive_seed(config.seed, "sigma", cid)));
      return kulsif_learn(state.features, aux, sigma, config.kulsif.lambda);
    }
    case FilterMode::kNone:
    case FilterMode::kIndLearn:
      return std::monostate{};
  }
  return std::monostate{};
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> evaluate_all(const std::vector<ClientState>& states,
                                 const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                                 int threads) {
  std::vector<double> acc(states.size());
  parallel_for(states.size(), threads,
               [&](std::size_t c) { acc[c] = evaluate(states[c].model, test_x, test_y); });
  return acc;
}

struct TestView {
  Eigen::MatrixXd x;
  std::vector<int> y;
};

TestView make_test_view(const Dataset& test_set) {
  ClientDataset view;
  view.samples = test_set;
  return {view.feature_matrix(), view.labels()};
}

}  // namespace

double FilterConfusion::id_kept_fraction() const {
  const auto total = id_kept + id_rejected;
  return total ? static_cast<double>(id_kept) / static_cast<double>(total) : 0.0;
}

double FilterConfusion::ood_leak_fraction() const {
  const auto total = ood_kept + ood_rejected;
  return total ? static_cast<double>(ood_kept) / static_cast<double>(total) : 0.0;
}

std::vector<SoftTarget> AggregatedTargets::soft_targets() const {
  std::vector<SoftTarget> out;
  out.reserve(entries.size());
  for (const auto& [index, entry] : entries) out.push_back({index, entry.mean});
  return out;
}

bool same_outcome(const ExperimentResult& a, const ExperimentResult& b) {
  if (a.rounds.size() != b.rounds.size()) return false;
  for (std::size_t r = 0; r < a.rounds.size(); ++r) {
    const auto& x = a.rounds[r];
    const auto& y = b.rounds[r];
    if (x.round != y.round || x.client_accuracy != y.client_accuracy ||
        x.kept_fraction != y.kept_fraction || x.mean_accuracy != y.mean_accuracy ||
        x.targets != y.targets || x.uplink_floats != y.uplink_floats ||
        x.downlink_floats != y.downlink_floats) {
      return false;
    }
  }
  return a.final_accuracy == b.final_accuracy && a.mean_accuracy == b.mean_accuracy &&
         a.thresholds == b.thresholds && a.proxy_size == b.proxy_size &&
         a.confusion.id_kept == b.confusion.id_kept &&
         a.confusion.id_rejected == b.confusion.id_rejected &&
         a.confusion.ood_kept == b.confusion.ood_kept &&
         a.confusion.ood_rejected == b.confusion.ood_rejected;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

ExperimentData load_experiment_data(const RunConfig& config) {
  const auto& d = config.dataset;
  ExperimentData data;
  if (d.kind == "idx") {
    data.train = load_idx(d.train_images, d.train_labels);
    data.test = load_idx(d.test_images, d.test_labels);
    if (d.train_per_class > 0) data.train = take_per_class(data.train, d.train_per_class);
    if (d.test_per_class > 0) data.test = take_per_class(data.test, d.test_per_class);
    if (num_classes(data.train) > d.num_classes) {
      throw InconsistencyError("protocol: dataset has more labels than dataset.num_classes");
    }
    return data;
  }
  // Synthetic: well-separated Gaussian classes inside the unit cube. Train and
  // test draw from the same means with independent noise streams.
  Rng rng = make_rng(config.seed, "synthetic-means");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::VectorXd> means;
  for (int l = 0; l < d.num_classes; ++l) {
    Eigen::VectorXd m(d.dim);
    for (int j = 0; j < d.dim; ++j) m[j] = u(rng);
    means.push_back(std::move(m));
  }
  data.train = gen_gaussian_mixture(d.num_classes, d.train_per_class, d.dim, means, d.stddev,
                                    derive_seed(config.seed, "synthetic-train"));
  data.test = gen_gaussian_mixture(d.num_classes, d.test_per_class, d.dim, means, d.stddev,
                                   derive_seed(config.seed, "synthetic-test"));
  return data;
}

Federation initialize(std::vector<ClientDataset> clients_data, const RunConfig& config) {
  if (clients_data.empty()) throw InfeasibleError("protocol: no clients");
  const int dim = static_cast<int>(clients_data.front().samples.front().features.size());
  const int L = config.dataset.num_classes;

  Federation fed;
  if (config.filter_mode != FilterMode::kIndLearn) {
    auto extraction = extract_proxy(clients_data, config.alpha, derive_seed(config.seed, "proxy"));
    fed.proxy = std::move(extraction.proxy);
  }

  fed.clients.resize(clients_data.size());
  parallel_for(clients_data.size(), config.threads, [&](std::size_t c) {
    ClientState& s = fed.clients[c];
    s.client_id = clients_data[c].client_id;
    s.dataset = std::move(clients_data[c]);
    s.features = s.dataset.feature_matrix();
    s.labels = s.dataset.labels();
    s.model = model_init(layer_sizes_for(config, s.client_id, dim, L),
                         derive_seed(config.seed, "model-init", static_cast<std::uint64_t>(s.client_id)));
    s.dre = fit_estimator(config, s);
    if (has_estimator(s.dre)) {
      const auto direction = natural_direction(s.dre);
      if (config.threshold.raw) {
        s.threshold = IdThreshold{*config.threshold.raw, direction, std::nullopt};
      } else {
        const auto scores = score_rows(s.dre, s.features);
        s.threshold = calibrate_threshold(scores, config.threshold.quantile.value_or(0.95), direction);
      }
    }
    s.contributed.assign(fed.proxy.size(), false);
    const auto it = fed.proxy.contributions().find(s.client_id);
    if (it != fed.proxy.contributions().end()) {
      for (std::size_t g : it->second) s.contributed[g] = true;
    }
  });
  return fed;
}

RoundPlan select_round_indices(std::size_t proxy_size, std::size_t batch,
                               std::uint64_t master_seed, int round) {
  if (batch < 1 || batch > proxy_size) {
    throw RangeError("proxy_batch", "must be in [1, " + std::to_string(proxy_size) + "]");
  }
  std::vector<std::size_t> idx(proxy_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(master_seed, "round-indices", static_cast<std::uint64_t>(round));
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, proxy_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(batch);
  return {round, std::move(idx)};
}

PredictionSet client_filter(const ClientState& state, const ProxyDataset& proxy,
                            const RoundPlan& plan) {
  PredictionSet out;
  out.client_id = state.client_id;
  const bool filtering = has_estimator(state.dre) && state.threshold.has_value();

  std::vector<std::size_t> kept;
  kept.reserve(plan.indices.size());
  for (std::size_t g : plan.indices) {
    // Stage 1: the client's own donation is ID by construction; no scoring.
    if (!filtering || state.donated(g)) {
      kept.push_back(g);
      continue;
    }
    // Stage 2: density test against the client's private distribution.
    ++out.dre_evaluations;
    if (is_id(density_score(state.dre, proxy.features(g)), *state.threshold)) kept.push_back(g);
  }
  if (kept.empty()) return out;

  Eigen::MatrixXd X(static_cast<Eigen::Index>(kept.size()), proxy.dim());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = proxy.features(kept[i]).transpose();
  }
  const Eigen::MatrixXd logits = forward_batch(state.model, X);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    out.entries.emplace(kept[i], softmax_t(logits.row(static_cast<Eigen::Index>(i)).transpose(), 1.0));
  }
  return out;
}

AggregatedTargets server_aggregate(std::span<const PredictionSet> submissions,
                                   const RoundPlan& plan) {
  // Canonical summation order: ascending client id, regardless of arrival.
  std::vector<const PredictionSet*> ordered;
  ordered.reserve(submissions.size());
  for (const auto& s : submissions) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  std::vector<bool> planned;
  for (std::size_t g : plan.indices) {
    if (g >= planned.size()) planned.resize(g + 1, false);
    planned[g] = true;
  }

  AggregatedTargets out;
  for (const PredictionSet* s : ordered) {
    for (const auto& [g, probs] : s->entries) {
      if (g >= planned.size() || !planned[g]) {
        throw InconsistencyError("protocol: client " + std::to_string(s->client_id) +
                                 " submitted index " + std::to_string(g) + " outside the plan");
      }
      auto [it, inserted] = out.entries.try_emplace(g);
      if (inserted) {
        it->second.mean = probs;
      } else {
        it->second.mean += probs;
      }
      ++it->second.contributors;
    }
  }
  for (auto& [g, entry] : out.entries) entry.mean /= static_cast<double>(entry.contributors);
  return out;
}

RoundMetrics run_round(std::vector<ClientState>& states, const ProxyDataset& proxy,
                       const RoundPlan& plan, const RunConfig& config, const Dataset& test_set,
                       const RoundObserver* observer) {
  const auto start = std::chrono::steady_clock::now();
  const auto C = states.size();
  const auto L = static_cast<std::size_t>(config.dataset.num_classes);
  const bool exchange = config.filter_mode != FilterMode::kIndLearn;

  RoundMetrics metrics;
  metrics.round = plan.round;
  metrics.kept_fraction.assign(C, 0.0);

  std::vector<SoftTarget> targets;
  if (exchange) {
    std::vector<PredictionSet> submissions(C);
    parallel_for(C, config.threads,
                 [&](std::size_t c) { submissions[c] = client_filter(states[c], proxy, plan); });
    for (std::size_t c = 0; c < C; ++c) {
      if (observer) (*observer)(states[c], plan, submissions[c], proxy);
      const auto kept = submissions[c].entries.size();
      metrics.kept_fraction[c] =
          plan.indices.empty() ? 0.0
                               : static_cast<double>(kept) / static_cast<double>(plan.indices.size());
      metrics.uplink_floats += kept * L;
    }
    targets = server_aggregate(submissions, plan).soft_targets();
    metrics.targets = targets.size();
    metrics.downlink_floats = targets.size() * L * C;
  }

  parallel_for(C, config.threads, [&](std::size_t c) {
    ClientState& s = states[c];
    const auto cid = static_cast<std::uint64_t>(s.client_id);
    const auto r = static_cast<std::uint64_t>(plan.round);
    SgdOptions sup{config.learner.epochs_supervised, config.learner.lr_supervised,
                   config.learner.batch_size, derive_seed(config.seed, "local-train", cid, r)};
    train_supervised(s.model, s.features, s.labels, sup);
    if (exchange && !targets.empty()) {
      SgdOptions kd{config.learner.epochs_distill, config.learner.lr_distill,
                    config.learner.batch_size, derive_seed(config.seed, "distill", cid, r)};
      distill(s.model, proxy.feature_matrix(), targets, config.learner.temperature, kd);
    }
  });

  const auto test = make_test_view(test_set);
  metrics.client_accuracy = evaluate_all(states, test.x, test.y, config.threads);
  metrics.mean_accuracy = mean_of(metrics.client_accuracy);
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

ExperimentResult run_experiment(const RunConfig& config, const RoundObserver* observer) {
  return run_experiment(config, load_experiment_data(config), observer);
}

ExperimentResult run_experiment(const RunConfig& config, const ExperimentData& data,
                                const RoundObserver* observer) {
  validate(config);
  PartitionSpec spec{config.scheme, config.num_clients, config.labels_per_client,
                     derive_seed(config.seed, "partition")};
  Federation fed = initialize(partition(data.train, spec), config);

  ExperimentResult result;
  result.proxy_size = fed.proxy.size();
  for (const auto& s : fed.clients) {
    if (s.threshold) result.thresholds.push_back(s.threshold->value);
  }

  const std::size_t batch = std::min<std::size_t>(fed.proxy.size(),
                                                   static_cast<std::size_t>(config.proxy_batch));
  for (int r = 1; r <= config.rounds; ++r) {
    RoundPlan plan;
    plan.round = r;
    if (config.filter_mode != FilterMode::kIndLearn && batch > 0) {
      plan = select_round_indices(fed.proxy.size(), batch, config.seed, r);
    }
    result.rounds.push_back(run_round(fed.clients, fed.proxy, plan, config, data.test, observer));
  }

  if (result.rounds.empty()) {
    const auto test = make_test_view(data.test);
    result.final_accuracy = evaluate_all(fed.clients, test.x, test.y, config.threads);
  } else {
    result.final_accuracy = result.rounds.back().client_accuracy;
  }
  result.mean_accuracy = mean_of(result.final_accuracy);
  return result;
}

}  // namespace fediskit
