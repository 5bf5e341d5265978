#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fediskit/data.hpp"

namespace fediskit {

// Fully connected ReLU network; identity on the output layer.
struct MlpModel {
  std::vector<int> layer_sizes;          // [d, h1, ..., L]
  std::vector<Eigen::MatrixXd> weights;  // layer l: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;   // layer l: sizes[l+1]

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  std::size_t num_parameters() const;
  bool all_finite() const;
  bool operator==(const MlpModel&) const = default;
};

struct SoftTarget {
  std::size_t proxy_index = 0;
  Eigen::VectorXd probs;
};

struct SgdOptions {
  int epochs = 1;
  double lr = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

// Glorot-uniform weights, zero biases.
MlpModel model_init(const std::vector<int>& layer_sizes, std::uint64_t seed);

Eigen::VectorXd forward(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
// Batched forward: rows of X in, rows of logits out.
Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& X);

Eigen::VectorXd softmax_t(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature);

// Same shapes as MlpModel's parameters.
struct Gradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

// Mean over rows of tau^2 * CE(targets_i, softmax(logits_i / tau)) and its
// gradient. Rows of `targets` are probability vectors.
double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& targets, double temperature, Gradient* grad);

// Mini-batch SGD on cross-entropy against integer labels. Returns the mean
// loss of every epoch. Throws DivergenceError on a non-finite loss.
std::vector<double> train_supervised(MlpModel& model, const Eigen::MatrixXd& X,
                                     std::span<const int> labels, const SgdOptions& options);
std::vector<double> train_supervised(MlpModel& model, const ClientDataset& dataset,
                                     const SgdOptions& options);

// Soft-target distillation. `proxy_features` row i holds proxy sample i.
// Empty `targets` leaves the model unchanged.
std::vector<double> distill(MlpModel& model, const Eigen::MatrixXd& proxy_features,
                            std::span<const SoftTarget> targets, double temperature,
                            const SgdOptions& options);

// Fraction of rows whose argmax logit equals the label; ties go to the lowest class.
double evaluate(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> labels);
double evaluate(const MlpModel& model, const Dataset& test_set);

int predict(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace fediskit
