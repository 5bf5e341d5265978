#include "fediskit/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

void check_input(const MlpModel& model, Eigen::Index cols) {
  if (cols != model.input_dim()) {
    throw DimensionError("learner: expected input dimension " +
                         std::to_string(model.input_dim()) + ", got " + std::to_string(cols));
  }
}

// Row-wise log-softmax of logits / tau.
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits, double tau) {
  Eigen::MatrixXd scaled = logits / tau;
  const Eigen::VectorXd max = scaled.rowwise().maxCoeff();
  scaled.colwise() -= max;
  const Eigen::VectorXd lse = scaled.array().exp().rowwise().sum().log().matrix();
  scaled.colwise() -= lse;
  return scaled;
}

Eigen::MatrixXd one_hot(std::span<const int> labels, int num_classes) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw RangeError("label", "label " + std::to_string(labels[i]) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
    }
    T(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return T;
}

std::vector<double> sgd_on_targets(MlpModel& model, const Eigen::MatrixXd& X,
                                   const Eigen::MatrixXd& T, double tau,
                                   const SgdOptions& options) {
  if (!(options.lr > 0.0)) throw RangeError("lr", "must be positive");
  if (options.batch_size < 1) throw RangeError("batch_size", "must be >= 1");
  if (options.epochs < 0) throw RangeError("epochs", "must be >= 0");
  check_input(model, X.cols());

  const Eigen::Index n = X.rows();
  std::vector<double> epoch_losses;
  if (n == 0) return epoch_losses;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Gradient grad;
  Eigen::MatrixXd xb;
  Eigen::MatrixXd tb;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng = make_rng(options.seed, "sgd-shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += options.batch_size) {
      const Eigen::Index B = std::min<Eigen::Index>(options.batch_size, n - start);
      xb.resize(B, X.cols());
      tb.resize(B, T.cols());
      for (Eigen::Index i = 0; i < B; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = X.row(src);
        tb.row(i) = T.row(src);
      }
      const double loss = loss_and_gradient(model, xb, tb, tau, &grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("learner: non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(B);
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        model.weights[l].noalias() -= options.lr * grad.weights[l];
        model.biases[l].noalias() -= options.lr * grad.biases[l];
      }
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }
  if (!model.all_finite()) throw DivergenceError("learner: parameters became non-finite");
  return epoch_losses;
}

}  // namespace

std::size_t MlpModel::num_parameters() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    total += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return total;
}

bool MlpModel::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

MlpModel model_init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw RangeError("layer_sizes", "need at least input and output");
  for (int s : layer_sizes) {
    if (s < 1) throw RangeError("layer_sizes", "every layer needs at least one unit");
  }
  MlpModel model;
  model.layer_sizes = layer_sizes;
  Rng rng = make_rng(seed, "mlp-init");
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd W(fan_out, fan_in);
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = u(rng);
    }
    model.weights.push_back(std::move(W));
    model.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return model;
}

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& X) {
  check_input(model, X.cols());
  Eigen::MatrixXd a = X;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    Eigen::MatrixXd z = a * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    if (l + 1 < model.weights.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  check_input(model, x.size());
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    Eigen::VectorXd z = model.weights[l] * a + model.biases[l];
    if (l + 1 < model.weights.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd softmax_t(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature) {
  if (!(temperature > 0.0)) throw RangeError("temperature", "must be positive");
  Eigen::VectorXd e = ((logits.array() - logits.maxCoeff()) / temperature).exp().matrix();
  return e / e.sum();
}

double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& targets, double temperature, Gradient* grad) {
  if (!(temperature > 0.0)) throw RangeError("temperature", "must be positive");
  check_input(model, X.cols());
  if (targets.rows() != X.rows() || targets.cols() != model.num_classes()) {
    throw DimensionError("learner: target matrix shape does not match batch");
  }
  const std::size_t layers = model.weights.size();
  const auto B = static_cast<double>(X.rows());

  // Keep pre-activations for the ReLU masks.
  std::vector<Eigen::MatrixXd> acts;
  std::vector<Eigen::MatrixXd> pre;
  acts.reserve(layers + 1);
  pre.reserve(layers);
  acts.push_back(X);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = acts.back() * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    pre.push_back(z);
    acts.push_back(l + 1 < layers ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z);
  }

  const Eigen::MatrixXd logp = log_softmax_rows(acts.back(), temperature);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (Eigen::Index k = 0; k < targets.cols(); ++k) {
      if (targets(i, k) != 0.0) ce -= targets(i, k) * logp(i, k);
    }
  }
  const double tau2 = temperature * temperature;
  const double loss = tau2 * ce / B;
  if (grad == nullptr) return loss;

  grad->weights.resize(layers);
  grad->biases.resize(layers);
  // d(tau^2 CE)/dz = tau * (softmax(z/tau) - t), averaged over the batch.
  Eigen::MatrixXd delta = (logp.array().exp().matrix() - targets) * (temperature / B);
  for (std::size_t l = layers; l-- > 0;) {
    grad->weights[l].noalias() = delta.transpose() * acts[l];
    grad->biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * model.weights[l];
      delta = (pre[l - 1].array() > 0.0).select(back, 0.0);
    }
  }
  return loss;
}

std::vector<double> train_supervised(MlpModel& model, const Eigen::MatrixXd& X,
                                     std::span<const int> labels, const SgdOptions& options) {
  if (static_cast<Eigen::Index>(labels.size()) != X.rows()) {
    throw DimensionError("learner: label count does not match sample count");
  }
  return sgd_on_targets(model, X, one_hot(labels, model.num_classes()), 1.0, options);
}

std::vector<double> train_supervised(MlpModel& model, const ClientDataset& dataset,
                                     const SgdOptions& options) {
  const auto labels = dataset.labels();
  return train_supervised(model, dataset.feature_matrix(), labels, options);
}

std::vector<double> distill(MlpModel& model, const Eigen::MatrixXd& proxy_features,
                            std::span<const SoftTarget> targets, double temperature,
                            const SgdOptions& options) {
  if (targets.empty()) return {};
  if (!(temperature > 0.0)) throw RangeError("temperature", "must be positive");
  const auto n = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd X(n, proxy_features.cols());
  Eigen::MatrixXd T(n, model.num_classes());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(t.proxy_index) >= proxy_features.rows()) {
      throw RangeError("proxy_index", "no proxy features for index " +
                                          std::to_string(t.proxy_index));
    }
    if (t.probs.size() != model.num_classes()) {
      throw DimensionError("learner: soft target has wrong class count");
    }
    X.row(i) = proxy_features.row(static_cast<Eigen::Index>(t.proxy_index));
    T.row(i) = t.probs.transpose();
  }
  return sgd_on_targets(model, X, T, temperature, options);
}

int predict(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::Index best = 0;
  forward(model, x).maxCoeff(&best);  // first maximum, i.e. lowest class id
  return static_cast<int>(best);
}

double evaluate(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> labels) {
  if (X.rows() == 0) throw InfeasibleError("learner: cannot evaluate on an empty test set");
  if (static_cast<Eigen::Index>(labels.size()) != X.rows()) {
    throw DimensionError("learner: label count does not match sample count");
  }
  const Eigen::MatrixXd logits = forward_batch(model, X);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

double evaluate(const MlpModel& model, const Dataset& test_set) {
  if (test_set.empty()) throw InfeasibleError("learner: cannot evaluate on an empty test set");
  ClientDataset view;
  view.samples = test_set;
  const auto labels = view.labels();
  return evaluate(model, view.feature_matrix(), labels);
}

}  // namespace fediskit
