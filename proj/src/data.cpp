#include "fediskit/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw FormatError("data: truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>((v >> 24) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>(v & 0xff)};
  out.write(b.data(), 4);
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("data: cannot open " + path.string());
  return in;
}

std::string magic_hex(std::uint32_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += kDigits[(v >> shift) & 0xf];
  return s;
}

// Groups sample positions by label, in dataset order.
std::vector<std::vector<std::size_t>> indices_by_label(const Dataset& dataset, int L) {
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(L));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_label[static_cast<std::size_t>(dataset[i].label)].push_back(i);
  }
  return by_label;
}

std::vector<ClientDataset> materialize(const Dataset& dataset,
                                       std::vector<std::vector<std::size_t>> assignment) {
  std::vector<ClientDataset> clients(assignment.size());
  for (std::size_t c = 0; c < assignment.size(); ++c) {
    auto& idx = assignment[c];
    if (idx.empty()) {
      throw InfeasibleError("data: partition leaves client " + std::to_string(c) +
                            " without samples");
    }
    std::sort(idx.begin(), idx.end());
    ClientDataset& client = clients[c];
    client.client_id = static_cast<int>(c);
    client.samples.reserve(idx.size());
    for (std::size_t i : idx) {
      client.samples.push_back(dataset[i]);
      client.label_set.insert(dataset[i].label);
    }
  }
  return clients;
}

}  // namespace

Eigen::MatrixXd ClientDataset::feature_matrix() const {
  if (samples.empty()) return {};
  Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), samples.front().features.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = samples[i].features.transpose();
  }
  return X;
}

std::vector<int> ClientDataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kStrongNonIid: return "strong_noniid";
    case Scheme::kWeakNonIid: return "weak_noniid";
    case Scheme::kIid: return "iid";
  }
  return "unknown";
}

Scheme scheme_from_string(const std::string& name) {
  if (name == "strong_noniid" || name == "strong") return Scheme::kStrongNonIid;
  if (name == "weak_noniid" || name == "weak") return Scheme::kWeakNonIid;
  if (name == "iid") return Scheme::kIid;
  throw RangeError("scheme", "unknown partition scheme '" + name + "'");
}

int ProxyDataset::dim() const noexcept {
  return features_.empty() ? 0 : static_cast<int>(features_.front().size());
}

const Eigen::VectorXd& ProxyDataset::features(std::size_t global_index) const {
  return features_.at(global_index);
}

int diagnostics::true_label(const ProxyDataset& proxy, std::size_t global_index) {
  return proxy.labels_.at(global_index);
}

class ProxyBuilder {
 public:
  void add(int client_id, std::size_t private_index, const LabeledSample& s) {
    const std::size_t g = proxy_.features_.size();
    proxy_.features_.push_back(s.features);
    proxy_.labels_.push_back(s.label);
    proxy_.sources_.push_back({client_id, private_index});
    proxy_.contributions_[client_id].push_back(g);
  }
  void touch(int client_id) { proxy_.contributions_[client_id]; }

  ProxyDataset finish() && {
    const auto P = static_cast<Eigen::Index>(proxy_.features_.size());
    const Eigen::Index d = P ? proxy_.features_.front().size() : 0;
    proxy_.matrix_.resize(P, d);
    for (Eigen::Index i = 0; i < P; ++i) {
      proxy_.matrix_.row(i) = proxy_.features_[static_cast<std::size_t>(i)].transpose();
    }
    return std::move(proxy_);
  }

 private:
  ProxyDataset proxy_;
};

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  auto images = open_binary(images_path);
  auto labels = open_binary(labels_path);

  const std::uint32_t img_magic = read_be32(images, images_path);
  if (img_magic != kImagesMagic) {
    throw FormatError("data: bad IDX image magic " + magic_hex(img_magic) + " in " +
                      images_path.string());
  }
  const std::uint32_t lbl_magic = read_be32(labels, labels_path);
  if (lbl_magic != kLabelsMagic) {
    throw FormatError("data: bad IDX label magic " + magic_hex(lbl_magic) + " in " +
                      labels_path.string());
  }
  const std::uint32_t n_images = read_be32(images, images_path);
  const std::uint32_t rows = read_be32(images, images_path);
  const std::uint32_t cols = read_be32(images, images_path);
  const std::uint32_t n_labels = read_be32(labels, labels_path);
  if (n_images != n_labels) {
    throw InconsistencyError("data: " + std::to_string(n_images) + " images but " +
                             std::to_string(n_labels) + " labels");
  }

  const std::size_t d = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(d);
  Dataset out;
  out.reserve(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    if (!images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(d))) {
      throw FormatError("data: truncated image payload in " + images_path.string());
    }
    char label = 0;
    if (!labels.get(label)) {
      throw FormatError("data: truncated label payload in " + labels_path.string());
    }
    LabeledSample s;
    s.features.resize(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
      s.features[static_cast<Eigen::Index>(j)] = pixels[j] / 255.0;
    }
    s.label = static_cast<unsigned char>(label);
    out.push_back(std::move(s));
  }
  return out;
}

void write_idx(const Dataset& dataset, int rows, int cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images || !labels) throw Error("data: cannot write IDX files");
  const auto n = static_cast<std::uint32_t>(dataset.size());
  write_be32(images, kImagesMagic);
  write_be32(images, n);
  write_be32(images, static_cast<std::uint32_t>(rows));
  write_be32(images, static_cast<std::uint32_t>(cols));
  write_be32(labels, kLabelsMagic);
  write_be32(labels, n);
  for (const auto& s : dataset) {
    if (s.features.size() != static_cast<Eigen::Index>(rows) * cols) {
      throw DimensionError("data: sample size does not match rows*cols");
    }
    for (Eigen::Index j = 0; j < s.features.size(); ++j) {
      const double v = std::clamp(std::round(s.features[j] * 255.0), 0.0, 255.0);
      images.put(static_cast<char>(static_cast<unsigned char>(v)));
    }
    labels.put(static_cast<char>(static_cast<unsigned char>(s.label)));
  }
}

Dataset gen_gaussian_mixture(int num_classes, int per_class, int dim,
                             std::span<const Eigen::VectorXd> class_means,
                             double stddev, std::uint64_t seed) {
  if (!(stddev > 0.0)) throw RangeError("stddev", "must be positive");
  if (num_classes < 1 || per_class < 0 || dim < 1) {
    throw RangeError("gaussian_mixture", "num_classes, dim must be >= 1 and per_class >= 0");
  }
  if (class_means.size() != static_cast<std::size_t>(num_classes)) {
    throw InconsistencyError("data: need one mean per class");
  }
  Dataset out;
  out.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class));
  for (int label = 0; label < num_classes; ++label) {
    const auto& mean = class_means[static_cast<std::size_t>(label)];
    if (mean.size() != dim) throw DimensionError("data: class mean has wrong dimension");
    Rng rng = make_rng(seed, "gaussian-mixture", static_cast<std::uint64_t>(label));
    std::normal_distribution<double> noise(0.0, stddev);
    for (int i = 0; i < per_class; ++i) {
      LabeledSample s;
      s.features = mean;
      for (int j = 0; j < dim; ++j) s.features[j] += noise(rng);
      s.label = label;
      out.push_back(std::move(s));
    }
  }
  return out;
}

int num_classes(const Dataset& dataset) {
  int L = 0;
  for (const auto& s : dataset) L = std::max(L, s.label + 1);
  return L;
}

Dataset take_per_class(const Dataset& dataset, int per_class) {
  std::map<int, int> seen;
  Dataset out;
  for (const auto& s : dataset) {
    if (seen[s.label]++ < per_class) out.push_back(s);
  }
  return out;
}

std::vector<ClientDataset> partition(const Dataset& dataset, const PartitionSpec& spec) {
  const int C = spec.num_clients;
  if (C < 1) throw RangeError("num_clients", "must be >= 1");
  const int L = num_classes(dataset);
  const auto by_label = indices_by_label(dataset, L);
  for (int l = 0; l < L; ++l) {
    if (by_label[static_cast<std::size_t>(l)].empty()) {
      throw InconsistencyError("data: label " + std::to_string(l) + " has no samples");
    }
  }

  std::vector<std::vector<std::size_t>> assignment(static_cast<std::size_t>(C));

  switch (spec.scheme) {
    case Scheme::kStrongNonIid: {
      if (C > L) {
        throw InfeasibleError("data: strong non-IID needs num_clients <= labels (" +
                              std::to_string(C) + " > " + std::to_string(L) + ")");
      }
      std::vector<int> order(static_cast<std::size_t>(L));
      std::iota(order.begin(), order.end(), 0);
      Rng rng = make_rng(spec.seed, "strong-labels");
      std::shuffle(order.begin(), order.end(), rng);
      for (int i = 0; i < L; ++i) {
        const auto& idx = by_label[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        auto& dst = assignment[static_cast<std::size_t>(i % C)];
        dst.insert(dst.end(), idx.begin(), idx.end());
      }
      break;
    }
    case Scheme::kWeakNonIid: {
      const int k = spec.labels_per_client;
      if (k < 1 || k > L) {
        throw RangeError("labels_per_client", "must be in [1, " + std::to_string(L) + "]");
      }
      if (static_cast<long>(C) * k < L) {
        throw InfeasibleError("data: weak non-IID cannot cover all labels with " +
                              std::to_string(C) + " clients x " + std::to_string(k) +
                              " labels");
      }
      // Each client draws k labels independently; the whole draw is repeated
      // until every label has at least one holder so no samples are dropped.
      std::vector<std::vector<int>> holders;
      constexpr int kMaxAttempts = 10000;
      bool covered = false;
      for (int attempt = 0; attempt < kMaxAttempts && !covered; ++attempt) {
        holders.assign(static_cast<std::size_t>(L), {});
        for (int c = 0; c < C; ++c) {
          std::vector<int> labels(static_cast<std::size_t>(L));
          std::iota(labels.begin(), labels.end(), 0);
          Rng rng = make_rng(spec.seed, "weak-labels", static_cast<std::uint64_t>(attempt),
                             static_cast<std::uint64_t>(c));
          std::shuffle(labels.begin(), labels.end(), rng);
          for (int j = 0; j < k; ++j) holders[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])].push_back(c);
        }
        covered = std::none_of(holders.begin(), holders.end(),
                               [](const auto& h) { return h.empty(); });
      }
      if (!covered) throw InfeasibleError("data: could not draw a covering label assignment");
      for (int l = 0; l < L; ++l) {
        auto idx = by_label[static_cast<std::size_t>(l)];
        auto& h = holders[static_cast<std::size_t>(l)];
        std::sort(h.begin(), h.end());
        Rng rng = make_rng(spec.seed, "weak-deal", static_cast<std::uint64_t>(l));
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          assignment[static_cast<std::size_t>(h[i % h.size()])].push_back(idx[i]);
        }
      }
      break;
    }
    case Scheme::kIid: {
      // Per-label round robin; each label continues where the previous one
      // stopped so client totals are balanced as well.
      std::size_t next = 0;
      for (int l = 0; l < L; ++l) {
        auto idx = by_label[static_cast<std::size_t>(l)];
        Rng rng = make_rng(spec.seed, "iid-deal", static_cast<std::uint64_t>(l));
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i : idx) {
          assignment[next % static_cast<std::size_t>(C)].push_back(i);
          ++next;
        }
      }
      break;
    }
  }
  return materialize(dataset, std::move(assignment));
}

std::size_t donation_size(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw RangeError("alpha", "must be in (0, 1]");
  // The epsilon keeps exact products such as 0.2 * 500 from rounding up.
  const double raw = std::ceil(alpha * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(raw, 1.0)));
}

ProxyExtraction extract_proxy(const std::vector<ClientDataset>& clients, double alpha,
                              std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw RangeError("alpha", "must be in (0, 1]");
  ProxyBuilder builder;
  for (const auto& client : clients) {
    const std::size_t n = client.samples.size();
    const std::size_t k = donation_size(n, alpha);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, "proxy-donation", static_cast<std::uint64_t>(client.client_id));
    // Partial Fisher-Yates: the first k positions are a uniform draw without
    // replacement, in draw order.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    builder.touch(client.client_id);
    for (std::size_t i = 0; i < k; ++i) {
      builder.add(client.client_id, idx[i], client.samples[idx[i]]);
    }
  }
  return {std::move(builder).finish(), clients};
}

}  // namespace fediskit
