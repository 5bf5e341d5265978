#include "fediskit/dre.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

// ||a_i - b_j||^2 for all row pairs, clamped at zero against cancellation.
Eigen::MatrixXd pairwise_sq_dist(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
  const Eigen::VectorXd b2 = B.rowwise().squaredNorm();
  Eigen::MatrixXd D = -2.0 * (A * B.transpose());
  D.colwise() += a2;
  D.rowwise() += b2.transpose();
  return D.cwiseMax(0.0);
}

Eigen::MatrixXd gaussian_gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double sigma) {
  const double scale = -1.0 / (2.0 * sigma * sigma);
  return (pairwise_sq_dist(A, B) * scale).array().exp().matrix();
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& X, int c, Rng& rng) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd centroids(c, X.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = X.row(first(rng));

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    d2[static_cast<std::size_t>(i)] = (X.row(i) - centroids.row(0)).squaredNorm();
  }
  for (int k = 1; k < c; ++k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[static_cast<std::size_t>(i)];
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = first(rng);
    }
    centroids.row(k) = X.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (X.row(i) - centroids.row(k)).squaredNorm();
      auto& slot = d2[static_cast<std::size_t>(i)];
      slot = std::min(slot, d);
    }
  }
  return centroids;
}

// Nearest centroid per row; returns total squared distance.
double assign(const Eigen::MatrixXd& X, const Eigen::MatrixXd& centroids,
              std::vector<int>& labels, std::vector<double>& dist2) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
      const double d = (X.row(i) - centroids.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    dist2[static_cast<std::size_t>(i)] = best_d;
    inertia += best_d;
  }
  return inertia;
}

}  // namespace

CentroidModel kmeans_fit(const Eigen::MatrixXd& X, const KMeansOptions& options) {
  const int c = options.clusters;
  if (c < 1) throw RangeError("clusters", "must be >= 1");
  if (X.rows() < c) {
    throw InfeasibleError("dre: kmeans needs at least " + std::to_string(c) + " samples, got " +
                          std::to_string(X.rows()));
  }
  if (!(options.tol >= 0.0)) throw RangeError("tol", "must be >= 0");
  if (options.max_iters < 1) throw RangeError("max_iters", "must be >= 1");

  Rng rng = make_rng(options.seed, "kmeans-init");
  CentroidModel model;
  model.num_clusters = c;
  model.centroids = kmeanspp_init(X, c, rng);

  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<int> labels(n);
  std::vector<double> dist2(n);
  Eigen::MatrixXd sums(c, X.cols());
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(c));

  for (int it = 1; it <= options.max_iters; ++it) {
    model.inertia_history.push_back(assign(X, model.centroids, labels, dist2));

    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(labels[i]) += X.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    Eigen::MatrixXd updated = model.centroids;
    for (int k = 0; k < c; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) {
        updated.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
      } else {
        // Empty cluster: move it onto the worst-served point.
        const auto far = static_cast<std::size_t>(
            std::max_element(dist2.begin(), dist2.end()) - dist2.begin());
        updated.row(k) = X.row(static_cast<Eigen::Index>(far));
        dist2[far] = 0.0;
      }
    }
    const double moved = (updated - model.centroids).rowwise().norm().maxCoeff();
    model.centroids = std::move(updated);
    model.iterations_used = it;
    if (moved < options.tol || (options.tol == 0.0 && moved == 0.0)) break;
  }
  model.inertia = assign(X, model.centroids, labels, dist2);
  model.inertia_history.push_back(model.inertia);
  return model;
}

double kmeans_score(const CentroidModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.centroids.cols()) {
    throw DimensionError("dre: kmeans_score expects dimension " +
                         std::to_string(model.centroids.cols()) + ", got " +
                         std::to_string(x.size()));
  }
  return std::sqrt((model.centroids.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff());
}

double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y, double sigma) {
  return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
}

KulsifModel kulsif_learn(const Eigen::MatrixXd& private_samples,
                         const Eigen::MatrixXd& aux_samples, double sigma, double lambda) {
  if (!(sigma > 0.0)) throw RangeError("sigma", "must be positive");
  if (!(lambda > 0.0)) throw RangeError("lambda", "must be positive");
  const Eigen::Index n = private_samples.rows();
  const Eigen::Index m = aux_samples.rows();
  if (n < 1 || m < 1) throw InfeasibleError("dre: kulsif needs n, m >= 1");
  if (private_samples.cols() != aux_samples.cols()) {
    throw DimensionError("dre: private and auxiliary samples differ in dimension");
  }

  const Eigen::MatrixXd K11 = gaussian_gram(aux_samples, aux_samples, sigma);      // m x m
  const Eigen::MatrixXd K12 = gaussian_gram(private_samples, aux_samples, sigma);  // n x m

  // (K11/m + lambda I) alpha = -K12^T 1_n / (lambda n m)
  Eigen::MatrixXd A = K11 / static_cast<double>(m);
  A.diagonal().array() += lambda;
  const Eigen::VectorXd rhs =
      -K12.colwise().sum().transpose() / (lambda * static_cast<double>(n) * static_cast<double>(m));

  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) {
    throw SolverError("dre: kulsif system is not positive definite (lambda too small?)");
  }
  Eigen::VectorXd alpha = llt.solve(rhs);
  if (!alpha.allFinite()) throw SolverError("dre: kulsif solve produced non-finite alpha");

  KulsifModel model;
  model.private_samples = private_samples;
  model.aux_samples = aux_samples;
  model.alpha = std::move(alpha);
  model.lambda = lambda;
  model.sigma = sigma;
  return model;
}

double kulsif_score(const KulsifModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.aux_samples.cols()) {
    throw DimensionError("dre: kulsif_score expects dimension " +
                         std::to_string(model.aux_samples.cols()) + ", got " +
                         std::to_string(x.size()));
  }
  const double scale = -1.0 / (2.0 * model.sigma * model.sigma);
  const Eigen::VectorXd k_aux =
      ((model.aux_samples.rowwise() - x.transpose()).rowwise().squaredNorm() * scale)
          .array()
          .exp();
  const double k_priv_sum =
      ((model.private_samples.rowwise() - x.transpose()).rowwise().squaredNorm() * scale)
          .array()
          .exp()
          .sum();
  const auto n = static_cast<double>(model.private_samples.rows());
  return model.alpha.dot(k_aux) + k_priv_sum / (model.lambda * n);
}

Eigen::MatrixXd generate_aux_samples(const Eigen::MatrixXd& X, int m, double margin,
                                     std::uint64_t seed) {
  if (m < 1) throw RangeError("kulsif.m", "must be >= 1");
  if (X.rows() < 1) throw InfeasibleError("dre: cannot bound an empty sample set");
  const Eigen::RowVectorXd lo = X.colwise().minCoeff();
  const Eigen::RowVectorXd hi = X.colwise().maxCoeff();
  const Eigen::RowVectorXd pad = (hi - lo) * margin;
  const Eigen::RowVectorXd low = lo - pad;
  const Eigen::RowVectorXd width = (hi - lo) + 2.0 * pad;

  Rng rng = make_rng(seed, "kulsif-aux");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd aux(m, X.cols());
  for (Eigen::Index i = 0; i < aux.rows(); ++i) {
    for (Eigen::Index j = 0; j < aux.cols(); ++j) aux(i, j) = low[j] + width[j] * u(rng);
  }
  return aux;
}

double median_heuristic_sigma(const Eigen::MatrixXd& X, int max_points, std::uint64_t seed) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  if (static_cast<int>(rows.size()) > max_points) {
    Rng rng = make_rng(seed, "median-heuristic");
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(max_points));
  }
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2 + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      dists.push_back((X.row(rows[i]) - X.row(rows[j])).norm());
    }
  }
  if (dists.empty()) return 1.0;
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid > 0.0 ? *mid : 1.0;
}

double nearest_rank_quantile(std::span<const double> scores, double q) {
  if (scores.empty()) throw InfeasibleError("dre: cannot take a quantile of no scores");
  if (!(q > 0.0 && q < 1.0)) throw RangeError("quantile", "must be in (0, 1)");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto N = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * N - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

IdThreshold calibrate_threshold(std::span<const double> private_scores, double q,
                                ThresholdDirection direction) {
  if (private_scores.empty()) throw InfeasibleError("dre: calibration needs at least one score");
  if (!(q > 0.0 && q < 1.0)) throw RangeError("quantile", "must be in (0, 1)");
  IdThreshold t;
  t.direction = direction;
  t.calibration_quantile = q;
  t.value = direction == ThresholdDirection::kBelowIsId
                ? nearest_rank_quantile(private_scores, q)
                : nearest_rank_quantile(private_scores, 1.0 - q);
  return t;
}

bool is_id(double score, const IdThreshold& threshold) {
  return threshold.direction == ThresholdDirection::kBelowIsId ? score <= threshold.value
                                                               : score >= threshold.value;
}

bool has_estimator(const DensityModel& model) {
  return !std::holds_alternative<std::monostate>(model);
}

double density_score(const DensityModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (const auto* km = std::get_if<CentroidModel>(&model)) return kmeans_score(*km, x);
  if (const auto* ku = std::get_if<KulsifModel>(&model)) return kulsif_score(*ku, x);
  throw Error("dre: no estimator to score with");
}

ThresholdDirection natural_direction(const DensityModel& model) {
  return std::holds_alternative<KulsifModel>(model) ? ThresholdDirection::kAboveIsId
                                                    : ThresholdDirection::kBelowIsId;
}

std::vector<double> score_rows(const DensityModel& model, const Eigen::MatrixXd& X) {
  std::vector<double> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = density_score(model, X.row(i).transpose());
  }
  return out;
}

}  // namespace fediskit
