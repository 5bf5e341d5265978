#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "fediskit/data.hpp"
#include "fediskit/errors.hpp"

using namespace fediskit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fediskit_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Raw IDX writer kept independent of the library's write_idx.
void write_raw_idx(const fs::path& images, const fs::path& labels, std::uint32_t image_magic,
                   std::uint32_t count, std::uint32_t label_count,
                   const std::vector<unsigned char>& pixels,
                   const std::vector<unsigned char>& label_bytes) {
  std::ofstream im(images, std::ios::binary);
  put_u32(im, image_magic);
  put_u32(im, count);
  put_u32(im, 3);
  put_u32(im, 3);
  im.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  std::ofstream lb(labels, std::ios::binary);
  put_u32(lb, 0x00000801);
  put_u32(lb, label_count);
  lb.write(reinterpret_cast<const char*>(label_bytes.data()),
           static_cast<std::streamsize>(label_bytes.size()));
}

Dataset blobs(int L, int per_class, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> means;
  for (int l = 0; l < L; ++l) means.push_back(Eigen::VectorXd::Constant(3, l));
  return gen_gaussian_mixture(L, per_class, 3, means, 0.1, seed);
}

// Canonical multiset key: label plus exact feature bits.
std::multiset<std::pair<int, std::vector<double>>> as_multiset(const Dataset& d) {
  std::multiset<std::pair<int, std::vector<double>>> out;
  for (const auto& s : d) {
    out.emplace(s.label, std::vector<double>(s.features.data(), s.features.data() + s.features.size()));
  }
  return out;
}

Dataset concat(const std::vector<ClientDataset>& clients) {
  Dataset all;
  for (const auto& c : clients) all.insert(all.end(), c.samples.begin(), c.samples.end());
  return all;
}

std::map<int, int> label_counts(const ClientDataset& c) {
  std::map<int, int> out;
  for (const auto& s : c.samples) ++out[s.label];
  return out;
}

}  // namespace

TEST_CASE("load_idx scales a hand-built 3x3 fixture to [0,1]") {
  const auto dir = scratch_dir("fixture");
  std::vector<unsigned char> pixels = {0, 255, 0, 255, 0, 255, 0, 255, 0,
                                       255, 255, 255, 0, 0, 0, 255, 255, 255};
  write_raw_idx(dir / "img", dir / "lbl", 0x00000803, 2, 2, pixels, {7, 3});
  const Dataset d = load_idx(dir / "img", dir / "lbl");
  REQUIRE(d.size() == 2);
  CHECK(d[0].label == 7);
  CHECK(d[1].label == 3);
  REQUIRE(d[0].features.size() == 9);
  for (int i = 0; i < 9; ++i) {
    CHECK(d[0].features[i] == (pixels[i] ? 1.0 : 0.0));
    CHECK(d[1].features[i] == (pixels[9 + i] ? 1.0 : 0.0));
  }
}

TEST_CASE("load_idx on an empty pair gives an empty dataset") {
  const auto dir = scratch_dir("empty");
  write_raw_idx(dir / "img", dir / "lbl", 0x00000803, 0, 0, {}, {});
  CHECK(load_idx(dir / "img", dir / "lbl").empty());
}

TEST_CASE("load_idx rejects bad magic, count mismatch and truncation") {
  const auto dir = scratch_dir("bad");
  std::vector<unsigned char> pixels(9, 0);
  write_raw_idx(dir / "img", dir / "lbl", 0x00000802, 1, 1, pixels, {0});
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "lbl"), FormatError);

  write_raw_idx(dir / "img", dir / "lbl", 0x00000803, 1, 2, pixels, {0, 1});
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "lbl"), InconsistencyError);

  write_raw_idx(dir / "img", dir / "lbl", 0x00000803, 2, 2, pixels, {0, 1});
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "lbl"), FormatError);

  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lbl"), Error);
}

TEST_CASE("write_idx round-trips byte-valued features") {
  const auto dir = scratch_dir("roundtrip");
  Dataset d;
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd f(9);
    for (int j = 0; j < 9; ++j) f[j] = ((i * 9 + j) * 37 % 256) / 255.0;
    d.push_back({f, i % 3});
  }
  write_idx(d, 3, 3, dir / "img", dir / "lbl");
  const Dataset back = load_idx(dir / "img", dir / "lbl");
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back[i].label == d[i].label);
    CHECK((back[i].features - d[i].features).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bundled digits files load as a 10-class 8x8 task") {
  const fs::path dir = fs::path(FEDISKIT_DATA_DIR) / "digits";
  const Dataset train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  const Dataset test = load_idx(dir / "test-images-idx3-ubyte", dir / "test-labels-idx1-ubyte");
  CHECK(train.size() + test.size() == 1797);
  CHECK(train.front().features.size() == 64);
  CHECK(num_classes(train) == 10);
  std::map<int, int> per_label;
  for (const auto& s : test) ++per_label[s.label];
  for (const auto& [label, n] : per_label) CHECK(n == 30);
  for (const auto& s : train) {
    CHECK(s.features.minCoeff() >= 0.0);
    CHECK(s.features.maxCoeff() <= 1.0);
  }
}

TEST_CASE("gaussian mixture sample means approach class means") {
  std::vector<Eigen::VectorXd> means = {Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 10)};
  const Dataset d = gen_gaussian_mixture(2, 100, 2, means, 0.5, 11);
  REQUIRE(d.size() == 200);
  for (int l = 0; l < 2; ++l) {
    Eigen::Vector2d acc = Eigen::Vector2d::Zero();
    int n = 0;
    for (const auto& s : d) {
      if (s.label == l) {
        acc += s.features;
        ++n;
      }
    }
    CHECK(n == 100);
    CHECK(((acc / n) - means[l]).norm() < 0.2);
  }
}

TEST_CASE("gaussian mixture degenerate spread, determinism and bad stddev") {
  std::vector<Eigen::VectorXd> means = {Eigen::Vector2d(1, 2), Eigen::Vector2d(-3, 4)};
  const Dataset tight = gen_gaussian_mixture(2, 50, 2, means, 1e-9, 5);
  for (const auto& s : tight) CHECK((s.features - means[s.label]).cwiseAbs().maxCoeff() < 1e-7);

  const Dataset a = gen_gaussian_mixture(2, 20, 2, means, 0.3, 9);
  const Dataset b = gen_gaussian_mixture(2, 20, 2, means, 0.3, 9);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].features == b[i].features);
  }
  CHECK_THROWS_AS(gen_gaussian_mixture(2, 20, 2, means, 0.0, 9), RangeError);
  CHECK_THROWS_AS(gen_gaussian_mixture(2, 20, 2, means, -1.0, 9), RangeError);
}

TEST_CASE("strong non-IID: one disjoint label per client, conservation") {
  const Dataset d = blobs(10, 23, 1);
  const auto clients = partition(d, {Scheme::kStrongNonIid, 10, 3, 4});
  REQUIRE(clients.size() == 10);
  std::set<int> seen;
  for (const auto& c : clients) {
    CHECK(c.label_set.size() == 1);
    for (int l : c.label_set) CHECK(seen.insert(l).second);
    CHECK(c.samples.size() == 23);
  }
  CHECK(as_multiset(concat(clients)) == as_multiset(d));

  const auto fewer = partition(d, {Scheme::kStrongNonIid, 4, 3, 4});
  std::set<int> all;
  for (std::size_t i = 0; i < fewer.size(); ++i) {
    for (std::size_t j = i + 1; j < fewer.size(); ++j) {
      for (int l : fewer[i].label_set) CHECK(fewer[j].label_set.count(l) == 0);
    }
    all.insert(fewer[i].label_set.begin(), fewer[i].label_set.end());
  }
  CHECK(all.size() == 10);
  CHECK(as_multiset(concat(fewer)) == as_multiset(d));

  CHECK_THROWS_AS(partition(d, {Scheme::kStrongNonIid, 12, 3, 4}), InfeasibleError);
}

TEST_CASE("iid with one client reproduces the input") {
  const Dataset d = blobs(4, 9, 2);
  const auto clients = partition(d, {Scheme::kIid, 1, 3, 8});
  REQUIRE(clients.size() == 1);
  REQUIRE(clients[0].samples.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(clients[0].samples[i].label == d[i].label);
    CHECK(clients[0].samples[i].features == d[i].features);
  }
}

TEST_CASE("iid per-label counts are within one sample of uniform") {
  const Dataset d = blobs(10, 37, 3);
  const auto clients = partition(d, {Scheme::kIid, 7, 3, 21});
  CHECK(as_multiset(concat(clients)) == as_multiset(d));
  for (int l = 0; l < 10; ++l) {
    const double mean = 37.0 / 7.0;
    for (const auto& c : clients) {
      const auto counts = label_counts(c);
      const int n = counts.count(l) ? counts.at(l) : 0;
      CHECK(std::abs(n - mean) <= 1.0);
    }
  }
}

TEST_CASE("weak non-IID: three labels each, full coverage, even shares") {
  const Dataset d = blobs(10, 40, 4);
  for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
    const auto clients = partition(d, {Scheme::kWeakNonIid, 10, 3, seed});
    CHECK(as_multiset(concat(clients)) == as_multiset(d));
    std::map<int, std::vector<int>> shares;
    for (const auto& c : clients) {
      CHECK(c.label_set.size() == 3);
      for (const auto& [label, n] : label_counts(c)) shares[label].push_back(n);
    }
    CHECK(shares.size() == 10);
    for (const auto& [label, ns] : shares) {
      const auto [lo, hi] = std::minmax_element(ns.begin(), ns.end());
      CHECK(*hi - *lo <= 1);
    }
  }
  CHECK_THROWS_AS(partition(d, {Scheme::kWeakNonIid, 10, 11, 1}), RangeError);
  CHECK_THROWS_AS(partition(d, {Scheme::kWeakNonIid, 3, 2, 1}), InfeasibleError);
}

TEST_CASE("label_set matches the labels actually present") {
  const Dataset d = blobs(6, 15, 5);
  for (Scheme s : {Scheme::kStrongNonIid, Scheme::kWeakNonIid, Scheme::kIid}) {
    for (const auto& c : partition(d, {s, 5, 2, 17})) {
      std::set<int> present;
      for (const auto& x : c.samples) present.insert(x.label);
      CHECK(present == c.label_set);
      CHECK_FALSE(c.samples.empty());
    }
  }
}

TEST_CASE("scheme names round-trip") {
  for (Scheme s : {Scheme::kStrongNonIid, Scheme::kWeakNonIid, Scheme::kIid}) {
    CHECK(scheme_from_string(to_string(s)) == s);
  }
  CHECK(to_string(Scheme::kStrongNonIid) == "strong_noniid");
  CHECK_THROWS_AS(scheme_from_string("medium"), RangeError);
}

TEST_CASE("proxy extraction sizes follow the ceiling rule") {
  CHECK(donation_size(505, 0.1) == 51);
  CHECK(donation_size(500, 0.2) == 100);
  CHECK(donation_size(3, 0.01) == 1);
  CHECK(donation_size(7, 1.0) == 7);

  const Dataset d = blobs(10, 500, 6);
  const auto clients = partition(d, {Scheme::kStrongNonIid, 10, 3, 1});
  const auto ex = extract_proxy(clients, 0.2, 42);
  CHECK(ex.proxy.size() == 1000);
  CHECK(ex.proxy.contributions().size() == 10);
  for (const auto& [cid, idx] : ex.proxy.contributions()) CHECK(idx.size() == 100);
  CHECK_THROWS_AS(extract_proxy(clients, 0.0, 1), RangeError);
  CHECK_THROWS_AS(extract_proxy(clients, 1.5, 1), RangeError);
}

TEST_CASE("proxy provenance: partitioned indices, copies of donor samples") {
  const Dataset d = blobs(5, 31, 7);
  const auto clients = partition(d, {Scheme::kWeakNonIid, 5, 2, 3});
  const auto ex = extract_proxy(clients, 0.3, 8);

  std::vector<int> owner(ex.proxy.size(), -1);
  std::size_t expected = 0;
  std::size_t next = 0;
  for (const auto& c : clients) {
    expected += donation_size(c.samples.size(), 0.3);
    const auto& idx = ex.proxy.contributions().at(c.client_id);
    for (std::size_t g : idx) {
      // Global indices run in client order, then donation order.
      CHECK(g == next++);
      CHECK(owner[g] == -1);
      owner[g] = c.client_id;
    }
  }
  CHECK(ex.proxy.size() == expected);
  for (std::size_t g = 0; g < ex.proxy.size(); ++g) {
    CHECK(owner[g] >= 0);
    const auto& src = ex.proxy.source(g);
    CHECK(src.client_id == owner[g]);
    const auto& donor = ex.clients[static_cast<std::size_t>(src.client_id)];
    CHECK(donor.samples[src.private_index].features == ex.proxy.features(g));
    CHECK(diagnostics::true_label(ex.proxy, g) == donor.samples[src.private_index].label);
    CHECK(ex.proxy.feature_matrix().row(static_cast<Eigen::Index>(g)).transpose() ==
          ex.proxy.features(g));
  }
  // Donors keep what they share.
  for (std::size_t c = 0; c < clients.size(); ++c) {
    CHECK(ex.clients[c].samples.size() == clients[c].samples.size());
  }
}

TEST_CASE("alpha=1 with one client shares the whole dataset") {
  const Dataset d = blobs(3, 10, 9);
  const auto clients = partition(d, {Scheme::kIid, 1, 3, 1});
  const auto ex = extract_proxy(clients, 1.0, 3);
  REQUIRE(ex.proxy.size() == d.size());
  Dataset shared;
  for (std::size_t g = 0; g < ex.proxy.size(); ++g) {
    shared.push_back({ex.proxy.features(g), diagnostics::true_label(ex.proxy, g)});
  }
  CHECK(as_multiset(shared) == as_multiset(d));
}

TEST_CASE("proxy extraction is deterministic in the seed") {
  const Dataset d = blobs(4, 25, 10);
  const auto clients = partition(d, {Scheme::kIid, 4, 3, 2});
  const auto a = extract_proxy(clients, 0.25, 77);
  const auto b = extract_proxy(clients, 0.25, 77);
  const auto c = extract_proxy(clients, 0.25, 78);
  CHECK(a.proxy.feature_matrix() == b.proxy.feature_matrix());
  CHECK(a.proxy.feature_matrix() != c.proxy.feature_matrix());
}

TEST_CASE("take_per_class caps each label") {
  const Dataset d = blobs(3, 10, 11);
  const Dataset capped = take_per_class(d, 4);
  CHECK(capped.size() == 12);
  std::map<int, int> counts;
  for (const auto& s : capped) ++counts[s.label];
  for (const auto& [l, n] : counts) CHECK(n == 4);
}
