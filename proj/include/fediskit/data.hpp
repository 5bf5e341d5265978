#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fediskit {

struct LabeledSample {
  Eigen::VectorXd features;
  int label = 0;
};

using Dataset = std::vector<LabeledSample>;

struct ClientDataset {
  int client_id = 0;
  Dataset samples;
  std::set<int> label_set;

  // Row-major copy of the features, one sample per row.
  Eigen::MatrixXd feature_matrix() const;
  std::vector<int> labels() const;
};

enum class Scheme { kStrongNonIid, kWeakNonIid, kIid };

std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

struct PartitionSpec {
  Scheme scheme = Scheme::kStrongNonIid;
  int num_clients = 10;
  int labels_per_client = 3;  // weak scheme only
  std::uint64_t seed = 0;
};

class ProxyDataset;

namespace diagnostics {
// Hidden ground truth of a proxy sample. Only the benchmark harness may call
// this; the protocol sees features through ProxyDataset's public surface.
int true_label(const ProxyDataset& proxy, std::size_t global_index);
}  // namespace diagnostics

// Pooled proxy samples D^proxy, indexed [0, P). Labels are retained but only
// reachable through diagnostics::true_label.
class ProxyDataset {
 public:
  struct Source {
    int client_id;
    std::size_t private_index;  // position in the donor's ClientDataset
  };

  ProxyDataset() = default;

  std::size_t size() const noexcept { return features_.size(); }
  bool empty() const noexcept { return features_.empty(); }
  int dim() const noexcept;

  const Eigen::VectorXd& features(std::size_t global_index) const;
  // P x d matrix of all proxy features, row i = global index i.
  const Eigen::MatrixXd& feature_matrix() const noexcept { return matrix_; }

  const std::map<int, std::vector<std::size_t>>& contributions() const noexcept {
    return contributions_;
  }
  const Source& source(std::size_t global_index) const { return sources_.at(global_index); }

 private:
  friend class ProxyBuilder;
  friend int diagnostics::true_label(const ProxyDataset&, std::size_t);

  std::vector<Eigen::VectorXd> features_;
  std::vector<int> labels_;
  std::vector<Source> sources_;
  std::map<int, std::vector<std::size_t>> contributions_;
  Eigen::MatrixXd matrix_;
};

struct ProxyExtraction {
  ProxyDataset proxy;
  std::vector<ClientDataset> clients;
};

// Reads an IDX image/label pair (big-endian, magic 0x803 / 0x801). Pixel bytes
// are scaled to [0, 1] and each image is flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Writes the inverse of load_idx: features are scaled by 255 and rounded.
void write_idx(const Dataset& dataset, int rows, int cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

Dataset gen_gaussian_mixture(int num_classes, int per_class, int dim,
                             std::span<const Eigen::VectorXd> class_means,
                             double stddev, std::uint64_t seed);

std::vector<ClientDataset> partition(const Dataset& dataset, const PartitionSpec& spec);

ProxyExtraction extract_proxy(const std::vector<ClientDataset>& clients, double alpha,
                              std::uint64_t seed);

// Number of samples a client of size n donates at fraction alpha.
std::size_t donation_size(std::size_t n, double alpha);

int num_classes(const Dataset& dataset);

// Keeps the first `per_class` samples of each label, preserving order.
Dataset take_per_class(const Dataset& dataset, int per_class);

}  // namespace fediskit
