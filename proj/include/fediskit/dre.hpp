#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace fediskit {

// ---------------------------------------------------------------------------
// KMeans-DRE: a client's private distribution summarized by c centroids; the
// score of a sample is its Euclidean distance to the nearest centroid.
// ---------------------------------------------------------------------------

struct KMeansOptions {
  int clusters = 1;
  int max_iters = 100;
  double tol = 1e-6;  // stop when no centroid moves farther than this
  std::uint64_t seed = 0;
};

struct CentroidModel {
  Eigen::MatrixXd centroids;  // c x d
  int num_clusters = 0;
  double inertia = 0.0;
  int iterations_used = 0;
  // Inertia after every assignment step, final assignment last. Non-increasing.
  std::vector<double> inertia_history;
};

// Lloyd's algorithm with k-means++ seeding. Rows of X are samples.
CentroidModel kmeans_fit(const Eigen::MatrixXd& X, const KMeansOptions& options);

double kmeans_score(const CentroidModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

// ---------------------------------------------------------------------------
// KuLSIF-DRE baseline. Estimates w(x) = p_private(x) / p_aux(x) with a
// Gaussian-kernel least-squares fit whose coefficient vector comes from one
// m x m solve.
// ---------------------------------------------------------------------------

struct KulsifModel {
  Eigen::MatrixXd private_samples;  // n x d
  Eigen::MatrixXd aux_samples;      // m x d
  Eigen::VectorXd alpha;            // m
  double lambda = 0.1;
  double sigma = 1.0;
};

double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y, double sigma);

KulsifModel kulsif_learn(const Eigen::MatrixXd& private_samples,
                         const Eigen::MatrixXd& aux_samples, double sigma, double lambda);

double kulsif_score(const KulsifModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

// Uniform samples over the per-dimension bounding box of X, each side widened
// by `margin` times its extent on both ends.
Eigen::MatrixXd generate_aux_samples(const Eigen::MatrixXd& X, int m, double margin,
                                     std::uint64_t seed);

// Median pairwise Euclidean distance over a seeded subsample of at most
// `max_points` rows. Falls back to 1 when every distance is zero.
double median_heuristic_sigma(const Eigen::MatrixXd& X, int max_points, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

enum class ThresholdDirection { kBelowIsId, kAboveIsId };

struct IdThreshold {
  double value = 0.0;
  ThresholdDirection direction = ThresholdDirection::kBelowIsId;
  // Set when the threshold came from calibration; empty for raw thresholds.
  std::optional<double> calibration_quantile;
};

// Nearest-rank quantile: the ceil(q*N)-th smallest score (1-based).
double nearest_rank_quantile(std::span<const double> scores, double q);

// below_is_id: T is the q-quantile of private distances.
// above_is_id: T is the (1-q)-quantile of private ratios.
IdThreshold calibrate_threshold(std::span<const double> private_scores, double q,
                                ThresholdDirection direction);

// Ties count as ID.
bool is_id(double score, const IdThreshold& threshold);

// ---------------------------------------------------------------------------
// Either estimator behind one scoring call; monostate means "no filter".
// ---------------------------------------------------------------------------

using DensityModel = std::variant<std::monostate, CentroidModel, KulsifModel>;

bool has_estimator(const DensityModel& model);
double density_score(const DensityModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
ThresholdDirection natural_direction(const DensityModel& model);
std::vector<double> score_rows(const DensityModel& model, const Eigen::MatrixXd& X);

}  // namespace fediskit
