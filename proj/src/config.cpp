#include "fediskit/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fediskit/errors.hpp"
#include "fediskit/rng.hpp"

namespace fediskit {

namespace {

using nlohmann::json;

constexpr std::string_view kManifestHeader = "# fediskit manifest";

// Walks one JSON object, remembering which keys were consumed so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(name("") + "expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name(key) + ": wrong type");
    }
  }

  template <typename T>
  void read_optional(const std::string& key, std::optional<T>& out) {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    if (obj_.at(key).is_null()) {
      out.reset();
      return;
    }
    T value{};
    try {
      value = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name(key) + ": wrong type");
    }
    out = value;
  }

  const json* child(const std::string& key) {
    if (!obj_.contains(key)) return nullptr;
    seen_.insert(key);
    return &obj_.at(key);
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(name(item.key()) + ": unknown key");
    }
  }

  std::string name(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ + ": " : path_ + "." + key;
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

ThresholdConfig read_threshold(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ThresholdConfig t;
  t.quantile.reset();
  r.read_optional("quantile", t.quantile);
  r.read_optional("raw", t.raw);
  r.finish();
  if (t.quantile.has_value() == t.raw.has_value()) {
    throw ConfigError(path + ": set exactly one of 'quantile' or 'raw'");
  }
  return t;
}

json threshold_json(const ThresholdConfig& t) {
  return t.raw ? json{{"raw", *t.raw}} : json{{"quantile", t.quantile.value_or(0.95)}};
}

void read_dataset(const json& j, DatasetConfig& d, const std::filesystem::path& base_dir) {
  ObjectReader r(j, "dataset");
  r.read("kind", d.kind);
  r.read("train_images", d.train_images);
  r.read("train_labels", d.train_labels);
  r.read("test_images", d.test_images);
  r.read("test_labels", d.test_labels);
  r.read("num_classes", d.num_classes);
  r.read("train_per_class", d.train_per_class);
  r.read("test_per_class", d.test_per_class);
  r.read("dim", d.dim);
  r.read("stddev", d.stddev);
  r.finish();
  if (!base_dir.empty()) {
    for (std::string* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) {
      if (!p->empty() && std::filesystem::path(*p).is_relative()) {
        *p = std::filesystem::absolute(base_dir / *p).lexically_normal().string();
      }
    }
  }
}

void read_learner(const json& j, LearnerConfig& l) {
  ObjectReader r(j, "learner");
  r.read("hidden", l.hidden);
  r.read("lr_supervised", l.lr_supervised);
  r.read("lr_distill", l.lr_distill);
  r.read("epochs_supervised", l.epochs_supervised);
  r.read("epochs_distill", l.epochs_distill);
  r.read("batch_size", l.batch_size);
  r.read("temperature", l.temperature);
  r.finish();
}

void read_kmeans(const json& j, KMeansConfig& k) {
  ObjectReader r(j, "kmeans");
  if (const json* c = r.child("clusters")) {
    if (c->is_string() && c->get<std::string>() == "auto") {
      k.clusters.reset();
    } else if (c->is_number_integer()) {
      k.clusters = c->get<int>();
    } else {
      throw ConfigError("kmeans.clusters: expected \"auto\" or an integer");
    }
  }
  r.read("max_iters", k.max_iters);
  r.read("tol", k.tol);
  r.finish();
}

void read_kulsif(const json& j, KulsifConfig& k) {
  ObjectReader r(j, "kulsif");
  r.read_optional("sigma", k.sigma);
  r.read("lambda", k.lambda);
  r.read_optional("m", k.m);
  r.read("aux_margin", k.aux_margin);
  r.read("sigma_subsample", k.sigma_subsample);
  r.finish();
}

void read_bench(const json& j, BenchConfig& b) {
  ObjectReader r(j, "bench");
  r.read("sizes", b.sizes);
  r.read("dim", b.dim);
  r.read("clusters", b.clusters);
  r.read("repeats", b.repeats);
  r.finish();
}

void read_sweep(const json& j, SweepConfig& s) {
  ObjectReader r(j, "sweep");
  if (const json* t = r.child("thresholds")) {
    if (!t->is_array()) throw ConfigError("sweep.thresholds: expected an array");
    s.thresholds.clear();
    for (std::size_t i = 0; i < t->size(); ++i) {
      s.thresholds.push_back(read_threshold((*t)[i], "sweep.thresholds[" + std::to_string(i) + "]"));
    }
  }
  r.read("alphas", s.alphas);
  r.read("seeds", s.seeds);
  r.finish();
}

void read_grid(const json& j, GridConfig& g) {
  ObjectReader r(j, "grid");
  std::vector<std::string> schemes, modes;
  r.read("schemes", schemes);
  r.read("modes", modes);
  r.read("seeds", g.seeds);
  r.finish();
  if (!schemes.empty()) {
    g.schemes.clear();
    for (const auto& s : schemes) g.schemes.push_back(scheme_from_string(s));
  }
  if (!modes.empty()) {
    g.modes.clear();
    for (const auto& m : modes) g.modes.push_back(filter_mode_from_string(m));
  }
}

template <typename T>
std::vector<std::string> names_of(const std::vector<T>& items) {
  std::vector<std::string> out;
  for (const auto& i : items) out.push_back(to_string(i));
  return out;
}

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"train_images", c.dataset.train_images},
                  {"train_labels", c.dataset.train_labels},
                  {"test_images", c.dataset.test_images},
                  {"test_labels", c.dataset.test_labels},
                  {"num_classes", c.dataset.num_classes},
                  {"train_per_class", c.dataset.train_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"dim", c.dataset.dim},
                  {"stddev", c.dataset.stddev}};
  j["scheme"] = to_string(c.scheme);
  j["num_clients"] = c.num_clients;
  j["labels_per_client"] = c.labels_per_client;
  j["alpha"] = c.alpha;
  j["filter_mode"] = to_string(c.filter_mode);
  j["threshold"] = threshold_json(c.threshold);
  j["kmeans"] = {{"clusters", c.kmeans.clusters ? json(*c.kmeans.clusters) : json("auto")},
                 {"max_iters", c.kmeans.max_iters},
                 {"tol", c.kmeans.tol}};
  j["kulsif"] = {{"sigma", c.kulsif.sigma ? json(*c.kulsif.sigma) : json(nullptr)},
                 {"lambda", c.kulsif.lambda},
                 {"m", c.kulsif.m ? json(*c.kulsif.m) : json(nullptr)},
                 {"aux_margin", c.kulsif.aux_margin},
                 {"sigma_subsample", c.kulsif.sigma_subsample}};
  j["rounds"] = c.rounds;
  j["proxy_batch"] = c.proxy_batch;
  j["learner"] = {{"hidden", c.learner.hidden},
                  {"lr_supervised", c.learner.lr_supervised},
                  {"lr_distill", c.learner.lr_distill},
                  {"epochs_supervised", c.learner.epochs_supervised},
                  {"epochs_distill", c.learner.epochs_distill},
                  {"batch_size", c.learner.batch_size},
                  {"temperature", c.learner.temperature}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  j["bench"] = {{"sizes", c.bench.sizes},
                {"dim", c.bench.dim},
                {"clusters", c.bench.clusters},
                {"repeats", c.bench.repeats}};
  json thresholds = json::array();
  for (const auto& t : c.sweep.thresholds) thresholds.push_back(threshold_json(t));
  j["sweep"] = {{"thresholds", thresholds}, {"alphas", c.sweep.alphas}, {"seeds", c.sweep.seeds}};
  j["grid"] = {{"schemes", names_of(c.grid.schemes)},
               {"modes", names_of(c.grid.modes)},
               {"seeds", c.grid.seeds}};
  return j;
}

// Byte offset -> "line L, column C" for parse error context.
std::string line_context(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  std::size_t begin = text.rfind('\n', byte ? byte - 1 : 0);
  begin = begin == std::string::npos ? 0 : begin + 1;
  std::size_t end = text.find('\n', begin);
  const std::string src = text.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
  return "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + src;
}

}  // namespace

std::string to_string(FilterMode mode) {
  switch (mode) {
    case FilterMode::kKMeans: return "kmeans";
    case FilterMode::kKulsif: return "kulsif";
    case FilterMode::kNone: return "none";
    case FilterMode::kIndLearn: return "indlearn";
  }
  return "unknown";
}

FilterMode filter_mode_from_string(const std::string& name) {
  if (name == "kmeans") return FilterMode::kKMeans;
  if (name == "kulsif") return FilterMode::kKulsif;
  if (name == "none") return FilterMode::kNone;
  if (name == "indlearn") return FilterMode::kIndLearn;
  throw ConfigError("filter_mode: unknown mode '" + name + "'");
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse error at " + line_context(text, e.byte ? e.byte - 1 : 0));
  }
  RunConfig c;
  ObjectReader r(doc, "");
  try {
    if (const json* d = r.child("dataset")) read_dataset(*d, c.dataset, base_dir);
    std::string scheme = to_string(c.scheme);
    r.read("scheme", scheme);
    c.scheme = scheme_from_string(scheme);
    r.read("num_clients", c.num_clients);
    r.read("labels_per_client", c.labels_per_client);
    r.read("alpha", c.alpha);
    std::string mode = to_string(c.filter_mode);
    r.read("filter_mode", mode);
    c.filter_mode = filter_mode_from_string(mode);
    if (const json* t = r.child("threshold")) c.threshold = read_threshold(*t, "threshold");
    if (const json* k = r.child("kmeans")) read_kmeans(*k, c.kmeans);
    if (const json* k = r.child("kulsif")) read_kulsif(*k, c.kulsif);
    r.read("rounds", c.rounds);
    r.read("proxy_batch", c.proxy_batch);
    if (const json* l = r.child("learner")) read_learner(*l, c.learner);
    r.read("seed", c.seed);
    r.read("output_dir", c.output_dir);
    r.read("threads", c.threads);
    if (const json* b = r.child("bench")) read_bench(*b, c.bench);
    if (const json* s = r.child("sweep")) read_sweep(*s, c.sweep);
    if (const json* g = r.child("grid")) read_grid(*g, c.grid);
    r.finish();
  } catch (const RangeError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (text.rfind(kManifestHeader, 0) == 0) {
    // The resolved config follows the "config:" marker line.
    const auto pos = text.find("\nconfig:\n");
    if (pos == std::string::npos) throw ConfigError("config: manifest has no config section");
    text = text.substr(pos + 9);
  }
  return parse_config(text, path.parent_path().empty() ? std::filesystem::current_path()
                                                       : path.parent_path());
}

void validate(const RunConfig& c) {
  const auto fail = [](const std::string& field, const std::string& what) {
    throw ConfigError("config: " + field + ": " + what);
  };
  const auto& d = c.dataset;
  if (d.kind != "idx" && d.kind != "synthetic") fail("dataset.kind", "must be 'idx' or 'synthetic'");
  if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty() ||
                          d.test_images.empty() || d.test_labels.empty())) {
    fail("dataset", "idx datasets need train/test image and label paths");
  }
  if (d.num_classes < 2) fail("dataset.num_classes", "must be >= 2");
  if (d.train_per_class < 0) fail("dataset.train_per_class", "must be >= 0");
  if (d.test_per_class < 0) fail("dataset.test_per_class", "must be >= 0");
  if (d.kind == "synthetic") {
    if (d.train_per_class < 1) fail("dataset.train_per_class", "must be >= 1");
    if (d.test_per_class < 1) fail("dataset.test_per_class", "must be >= 1");
    if (d.dim < 1) fail("dataset.dim", "must be >= 1");
    if (!(d.stddev > 0.0)) fail("dataset.stddev", "must be positive");
  }
  if (c.num_clients < 1) fail("num_clients", "must be >= 1");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) fail("alpha", "must be in (0, 1]");
  if (c.threshold.quantile.has_value() == c.threshold.raw.has_value()) {
    fail("threshold", "set exactly one of quantile or raw");
  }
  if (c.threshold.quantile && !(*c.threshold.quantile > 0.0 && *c.threshold.quantile < 1.0)) {
    fail("threshold.quantile", "must be in (0, 1)");
  }
  if (c.threshold.raw && !std::isfinite(*c.threshold.raw)) fail("threshold.raw", "must be finite");
  if (c.kmeans.clusters && *c.kmeans.clusters < 1) fail("kmeans.clusters", "must be >= 1");
  if (c.kmeans.max_iters < 1) fail("kmeans.max_iters", "must be >= 1");
  if (!(c.kmeans.tol >= 0.0)) fail("kmeans.tol", "must be >= 0");
  if (c.kulsif.sigma && !(*c.kulsif.sigma > 0.0)) fail("kulsif.sigma", "must be positive");
  if (!(c.kulsif.lambda > 0.0)) fail("kulsif.lambda", "must be positive");
  if (c.kulsif.m && *c.kulsif.m < 1) fail("kulsif.m", "must be >= 1");
  if (!(c.kulsif.aux_margin >= 0.0)) fail("kulsif.aux_margin", "must be >= 0");
  if (c.kulsif.sigma_subsample < 2) fail("kulsif.sigma_subsample", "must be >= 2");
  if (c.rounds < 0) fail("rounds", "must be >= 0");
  if (c.proxy_batch < 1) fail("proxy_batch", "must be >= 1");
  const auto& l = c.learner;
  if (l.hidden.empty()) fail("learner.hidden", "needs at least one plan");
  if (l.hidden.size() != 1 && l.hidden.size() != static_cast<std::size_t>(c.num_clients)) {
    fail("learner.hidden", "needs 1 plan or one per client (" + std::to_string(c.num_clients) + ")");
  }
  for (const auto& plan : l.hidden) {
    for (int h : plan) {
      if (h < 1) fail("learner.hidden", "layer widths must be >= 1");
    }
  }
  if (!(l.lr_supervised > 0.0)) fail("learner.lr_supervised", "must be positive");
  if (!(l.lr_distill > 0.0)) fail("learner.lr_distill", "must be positive");
  if (l.epochs_supervised < 0) fail("learner.epochs_supervised", "must be >= 0");
  if (l.epochs_distill < 0) fail("learner.epochs_distill", "must be >= 0");
  if (l.batch_size < 1) fail("learner.batch_size", "must be >= 1");
  if (!(l.temperature > 0.0)) fail("learner.temperature", "must be positive");
  if (c.threads < 1) fail("threads", "must be >= 1");
  if (c.bench.sizes.size() < 2) fail("bench.sizes", "need at least two sizes");
  for (std::size_t i = 0; i < c.bench.sizes.size(); ++i) {
    if (c.bench.sizes[i] < 2) fail("bench.sizes", "sizes must be >= 2");
    if (i && c.bench.sizes[i] <= c.bench.sizes[i - 1]) fail("bench.sizes", "must be ascending");
  }
  if (c.bench.dim < 1) fail("bench.dim", "must be >= 1");
  if (c.bench.clusters.empty()) fail("bench.clusters", "must be non-empty");
  if (c.bench.repeats < 3) fail("bench.repeats", "must be >= 3");
  if (c.sweep.thresholds.empty()) fail("sweep.thresholds", "must be non-empty");
  if (c.sweep.alphas.empty()) fail("sweep.alphas", "must be non-empty");
  if (c.sweep.seeds.empty()) fail("sweep.seeds", "must be non-empty");
  for (double a : c.sweep.alphas) {
    if (!(a > 0.0 && a <= 1.0)) fail("sweep.alphas", "entries must be in (0, 1]");
  }

  // Partition feasibility is known from the class count alone.
  const int L = d.num_classes;
  if (c.scheme == Scheme::kStrongNonIid && c.num_clients > L) {
    throw InfeasibleError("config: strong non-IID needs num_clients <= num_classes (" +
                          std::to_string(c.num_clients) + " > " + std::to_string(L) + ")");
  }
  if (c.scheme == Scheme::kWeakNonIid) {
    if (c.labels_per_client < 1 || c.labels_per_client > L) {
      fail("labels_per_client", "must be in [1, num_classes]");
    }
    if (static_cast<long>(c.num_clients) * c.labels_per_client < L) {
      throw InfeasibleError("config: weak non-IID cannot cover every label");
    }
  }
}

std::string to_json_text(const RunConfig& config) { return to_json(config).dump(2); }

std::uint64_t config_hash(const RunConfig& config) {
  return hash_tag(to_json(config).dump());
}

const std::vector<int>& hidden_plan(const RunConfig& config, int client_id) {
  const auto& plans = config.learner.hidden;
  return plans.size() == 1 ? plans.front() : plans.at(static_cast<std::size_t>(client_id));
}

}  // namespace fediskit
