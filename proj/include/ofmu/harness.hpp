// Copyright 2026 The ofmu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Experiment orchestration: JSON config -> data, split, base model, methods,
// metrics and artifacts; plus the lemma suite and the UDI coupling study.
//
// Every random stream is derived from the single run seed with derive_seed,
// so a config echo plus its seed reproduces a run bit for bit.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "ofmu/baselines.hpp"
#include "ofmu/data.hpp"
#include "ofmu/metrics.hpp"
#include "ofmu/optimizer.hpp"
#include "ofmu/verify.hpp"

namespace ofmu {

inline constexpr const char* kVersion = "0.1.0";

/// Malformed or inconsistent configuration.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Seed streams. Method runs share one stream so duplicate entries agree.
namespace stream {
inline constexpr std::uint64_t dataset = 10;
inline constexpr std::uint64_t test_set = 11;
inline constexpr std::uint64_t split = 12;
inline constexpr std::uint64_t base_init = 13;
inline constexpr std::uint64_t base_batches = 14;
inline constexpr std::uint64_t mia = 15;
inline constexpr std::uint64_t udi_samples = 16;
inline constexpr std::uint64_t method = 20;
}  // namespace stream

// ============================================================================
// Config
// ============================================================================

struct DatasetSpec {
  // Generator parameters (used when path is empty).
  int class_count = 10;
  int samples_per_class = 200;
  int feature_dim = 10;
  double separation = 10.0;
  int test_samples_per_class = 100;
  /// z-score every feature with train-set statistics (applied to both sets).
  bool standardize = true;
  // File-backed data.
  std::string path;
  std::string test_path;
};

struct ModelSpec {
  ModelFamily family = ModelFamily::mlp;
  std::vector<int> hidden = {16};
  LossKind loss = LossKind::cross_entropy;
};

struct SplitSpec {
  SplitMode mode = SplitMode::class_wise;
  std::set<int> targets = {0};
  double fraction = 0.1;
};

struct BaseTrainingSpec {
  double eta = 0.5;
  int max_steps = 3000;
  int batch_size = 64;
  double target_accuracy = 0.95;
  int check_every = 50;
};

struct MethodSpec {
  std::string label;
  std::variant<OfmuConfig, BaselineConfig> config;

  std::string kind() const {
    return std::holds_alternative<OfmuConfig>(config) ? "ofmu" : to_string(std::get<BaselineConfig>(config).method);
  }
};

struct UdiStudySpec {
  /// Labels from `methods`; empty means every method.
  std::vector<std::string> methods;
  int samples = 50;
  /// Outer iterations per single-sample OFMU run. Baselines get
  /// budget * (T + 1) steps, T being the OFMU inner step count, so every
  /// method makes the same number of parameter updates.
  int budget = 5;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  DatasetSpec dataset;
  ModelSpec model;
  SplitSpec split;
  BaseTrainingSpec base_training;
  std::vector<MethodSpec> methods;
  UdiConfig udi;
  UdiStudySpec udi_study;
};

namespace detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw config_error(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error(where_ + "." + key + ": wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const nlohmann::json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw config_error(where_ + ": unknown key '" + k + "'");
    }
  }

  const std::string& where() const { return where_; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline GradMethod parse_grad_method(const std::string& s) {
  if (s == "fd-exact") return GradMethod::fd_exact;
  if (s == "first-order-surrogate") return GradMethod::first_order_surrogate;
  throw config_error("unknown grad_method '" + s + "'");
}

inline MethodSpec parse_method(const nlohmann::json& j, std::size_t index) {
  ObjectReader r(j, "methods[" + std::to_string(index) + "]");
  std::string name;
  r.get("name", name);
  MethodSpec m;
  m.label = name;
  r.get("label", m.label);
  if (name == "ofmu") {
    OfmuConfig c;
    std::string gm = to_string(c.grad_method);
    r.get("beta", c.beta);
    r.get("eta_in", c.eta_in);
    r.get("eta_out", c.eta_out);
    r.get("inner_steps", c.inner_steps);
    r.get("outer_iterations", c.outer_iterations);
    r.get("batch_size", c.batch_size);
    r.get("rho0", c.rho0);
    r.get("rho_growth", c.rho_growth);
    r.get("rho_max", c.rho_max);
    r.get("stationarity_tol", c.stationarity_tol);
    r.get("grad_method", gm);
    c.grad_method = parse_grad_method(gm);
    m.config = c;
  } else {
    BaselineConfig c;
    if (name == "retrain") {
      c.method = BaselineMethod::retrain;
    } else if (name == "finetune") {
      c.method = BaselineMethod::finetune;
    } else if (name == "grad-ascent") {
      c.method = BaselineMethod::grad_ascent;
    } else if (name == "grad-diff") {
      c.method = BaselineMethod::grad_diff;
    } else {
      throw config_error(r.where() + ": unknown method '" + name + "'");
    }
    r.get("eta", c.eta);
    r.get("steps", c.steps);
    r.get("batch_size", c.batch_size);
    r.get("gd_lambda", c.gd_lambda);
    m.config = c;
  }
  r.finish();
  try {
    std::visit([](const auto& c) { c.validate(); }, m.config);
  } catch (const std::invalid_argument& e) {
    throw config_error(r.where() + ": " + e.what());
  }
  return m;
}

}  // namespace detail

/// Parses and validates a config. Throws config_error on unknown keys, wrong
/// types, unknown methods or out-of-range values.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader top(j, "config");
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);

  if (top.has("dataset")) {
    ObjectReader r(top.sub("dataset"), "dataset");
    std::string generator = "blobs";
    r.get("generator", generator);
    r.get("class_count", c.dataset.class_count);
    r.get("samples_per_class", c.dataset.samples_per_class);
    r.get("feature_dim", c.dataset.feature_dim);
    r.get("separation", c.dataset.separation);
    r.get("test_samples_per_class", c.dataset.test_samples_per_class);
    r.get("path", c.dataset.path);
    r.get("test_path", c.dataset.test_path);
    r.get("standardize", c.dataset.standardize);
    r.finish();
    if (c.dataset.path.empty()) {
      if (generator != "blobs") throw config_error("dataset.generator: only 'blobs' is available");
      if (c.dataset.class_count < 2 || c.dataset.samples_per_class < 1 || c.dataset.feature_dim < 1 ||
          c.dataset.test_samples_per_class < 1 || !(c.dataset.separation > 0.0)) {
        throw config_error("dataset: generator parameters out of range");
      }
    } else if (c.dataset.test_path.empty()) {
      throw config_error("dataset.test_path is required with dataset.path");
    }
  }

  if (top.has("model")) {
    ObjectReader r(top.sub("model"), "model");
    std::string family = "mlp", loss;
    r.get("family", family);
    if (family != "mlp") c.model.hidden.clear();
    r.get("hidden", c.model.hidden);
    r.get("loss", loss);
    r.finish();
    if (family == "logistic-regression") {
      c.model.family = ModelFamily::logistic_regression;
    } else if (family == "linear-regression") {
      c.model.family = ModelFamily::linear_regression;
      c.model.loss = LossKind::mean_squared_error;
    } else if (family == "mlp") {
      c.model.family = ModelFamily::mlp;
      if (c.model.hidden.empty()) throw config_error("model.hidden: mlp needs at least one hidden layer");
    } else {
      throw config_error("model.family: unknown family '" + family + "'");
    }
    if (c.model.family != ModelFamily::mlp && !c.model.hidden.empty()) {
      throw config_error("model.hidden: only the mlp family has hidden layers");
    }
    if (!loss.empty()) {
      if (loss == "cross-entropy") {
        c.model.loss = LossKind::cross_entropy;
      } else if (loss == "mean-squared-error") {
        c.model.loss = LossKind::mean_squared_error;
      } else {
        throw config_error("model.loss: unknown loss '" + loss + "'");
      }
      if (c.model.family != ModelFamily::mlp &&
          (c.model.loss == LossKind::cross_entropy) != (c.model.family == ModelFamily::logistic_regression)) {
        throw config_error("model.loss does not match model.family");
      }
    }
  }

  if (top.has("split")) {
    ObjectReader r(top.sub("split"), "split");
    std::string mode = "class-wise";
    std::vector<int> targets(c.split.targets.begin(), c.split.targets.end());
    r.get("mode", mode);
    r.get("targets", targets);
    r.get("fraction", c.split.fraction);
    r.finish();
    if (mode == "class-wise") {
      c.split.mode = SplitMode::class_wise;
    } else if (mode == "random") {
      c.split.mode = SplitMode::random;
    } else {
      throw config_error("split.mode: unknown mode '" + mode + "'");
    }
    c.split.targets = std::set<int>(targets.begin(), targets.end());
  }

  if (top.has("base_training")) {
    ObjectReader r(top.sub("base_training"), "base_training");
    r.get("eta", c.base_training.eta);
    r.get("max_steps", c.base_training.max_steps);
    r.get("batch_size", c.base_training.batch_size);
    r.get("target_accuracy", c.base_training.target_accuracy);
    r.get("check_every", c.base_training.check_every);
    r.finish();
    const auto& b = c.base_training;
    if (!(b.eta > 0.0) || b.max_steps < 0 || b.batch_size < 1 || b.check_every < 1) {
      throw config_error("base_training: values out of range");
    }
  }

  if (top.has("methods")) {
    const auto& ms = top.sub("methods");
    if (!ms.is_array()) throw config_error("methods: expected an array");
    for (std::size_t i = 0; i < ms.size(); ++i) c.methods.push_back(detail::parse_method(ms[i], i));
  }

  if (top.has("udi")) {
    ObjectReader r(top.sub("udi"), "udi");
    r.get("alpha", c.udi.alpha);
    r.get("lambda", c.udi.lambda_w);
    r.get("gamma", c.udi.gamma);
    // null or absent: ln(class_count).
    nlohmann::json target;
    r.get("ell_target", target);
    if (!target.is_null()) {
      if (!target.is_number()) throw config_error("udi.ell_target: wrong type");
      c.udi.ell_target = target.get<double>();
    }
    r.finish();
    try {
      c.udi.validate();
    } catch (const std::invalid_argument& e) {
      throw config_error(std::string("udi: ") + e.what());
    }
  }

  if (top.has("udi_study")) {
    ObjectReader r(top.sub("udi_study"), "udi_study");
    r.get("methods", c.udi_study.methods);
    r.get("samples", c.udi_study.samples);
    r.get("budget", c.udi_study.budget);
    r.finish();
    if (c.udi_study.samples < 2 || c.udi_study.budget < 1) throw config_error("udi_study: values out of range");
    for (const auto& label : c.udi_study.methods) {
      bool found = false;
      for (const auto& m : c.methods) found = found || m.label == label;
      if (!found) throw config_error("udi_study.methods: no method labelled '" + label + "'");
    }
  }
  top.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(path + ": " + e.what());
  }
  return parse_config(j);
}

/// Fully expanded config; parse_config(config_to_json(c)) == c.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json ds;
  if (c.dataset.path.empty()) {
    ds = {{"generator", "blobs"},
          {"class_count", c.dataset.class_count},
          {"samples_per_class", c.dataset.samples_per_class},
          {"feature_dim", c.dataset.feature_dim},
          {"separation", c.dataset.separation},
          {"test_samples_per_class", c.dataset.test_samples_per_class}};
  } else {
    ds = {{"path", c.dataset.path}, {"test_path", c.dataset.test_path}};
  }
  ds["standardize"] = c.dataset.standardize;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : c.methods) {
    nlohmann::json mj = {{"name", m.kind()}, {"label", m.label}};
    if (const auto* o = std::get_if<OfmuConfig>(&m.config)) {
      mj.update({{"beta", o->beta},
                 {"eta_in", o->eta_in},
                 {"eta_out", o->eta_out},
                 {"inner_steps", o->inner_steps},
                 {"outer_iterations", o->outer_iterations},
                 {"batch_size", o->batch_size},
                 {"rho0", o->rho0},
                 {"rho_growth", o->rho_growth},
                 {"rho_max", o->rho_max},
                 {"stationarity_tol", o->stationarity_tol},
                 {"grad_method", to_string(o->grad_method)}});
    } else {
      const auto& b = std::get<BaselineConfig>(m.config);
      mj.update({{"eta", b.eta}, {"steps", b.steps}, {"batch_size", b.batch_size}, {"gd_lambda", b.gd_lambda}});
    }
    methods.push_back(mj);
  }
  nlohmann::json udi = {{"alpha", c.udi.alpha}, {"lambda", c.udi.lambda_w}, {"gamma", c.udi.gamma}};
  udi["ell_target"] = c.udi.ell_target ? nlohmann::json(*c.udi.ell_target) : nlohmann::json();
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"dataset", ds},
          {"model",
           {{"family", to_string(c.model.family)}, {"hidden", c.model.hidden}, {"loss", to_string(c.model.loss)}}},
          {"split",
           {{"mode", to_string(c.split.mode)},
            {"targets", std::vector<int>(c.split.targets.begin(), c.split.targets.end())},
            {"fraction", c.split.fraction}}},
          {"base_training",
           {{"eta", c.base_training.eta},
            {"max_steps", c.base_training.max_steps},
            {"batch_size", c.base_training.batch_size},
            {"target_accuracy", c.base_training.target_accuracy},
            {"check_every", c.base_training.check_every}}},
          {"methods", methods},
          {"udi", udi},
          {"udi_study",
           {{"methods", c.udi_study.methods}, {"samples", c.udi_study.samples}, {"budget", c.udi_study.budget}}}};
}

/// Version, platform and compiler; nothing time-dependent.
inline nlohmann::json environment_fingerprint() {
#if defined(__linux__)
  const char* platform = "linux";
#elif defined(__APPLE__)
  const char* platform = "darwin";
#elif defined(_WIN32)
  const char* platform = "windows";
#else
  const char* platform = "unknown";
#endif
#if defined(__clang__)
  const std::string compiler = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = std::string("gcc ") + __VERSION__;
#else
  const std::string compiler = "unknown";
#endif
  return {{"version", kVersion}, {"platform", platform}, {"compiler", compiler}};
}

// ============================================================================
// Experiment pieces
// ============================================================================

/// Training data, test data, split and model, all derived from the config.
struct Workbench {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
  UnlearnSplit split;
  DifferentiableProblem problem = DifferentiableProblem::logistic_regression(1, 2);
  /// Test samples from retain classes only in class-wise mode.
  LabeledBatch test_eval;
};

inline DifferentiableProblem make_problem(const ModelSpec& m, int feature_dim, int class_count) {
  switch (m.family) {
    case ModelFamily::logistic_regression: return DifferentiableProblem::logistic_regression(feature_dim, class_count);
    case ModelFamily::linear_regression: return DifferentiableProblem::linear_regression(feature_dim, class_count);
    case ModelFamily::mlp: {
      std::vector<int> widths{feature_dim};
      widths.insert(widths.end(), m.hidden.begin(), m.hidden.end());
      widths.push_back(class_count);
      return DifferentiableProblem::mlp(std::move(widths), m.loss);
    }
  }
  throw config_error("unknown model family");
}

inline Workbench build_workbench(const ExperimentConfig& c) {
  Workbench w;
  const auto& ds = c.dataset;
  if (ds.path.empty()) {
    w.train = std::make_shared<const Dataset>(gen_blobs(derive_seed(c.seed, stream::dataset), ds.class_count,
                                                        ds.samples_per_class, ds.feature_dim, ds.separation));
    w.test = std::make_shared<const Dataset>(gen_blobs(derive_seed(c.seed, stream::test_set), ds.class_count,
                                                       ds.test_samples_per_class, ds.feature_dim, ds.separation));
  } else {
    w.train = std::make_shared<const Dataset>(load_dataset(ds.path));
    w.test = std::make_shared<const Dataset>(load_dataset(ds.test_path));
    if (w.test->feature_dim() != w.train->feature_dim()) throw config_error("test set feature_dim differs");
  }
  if (ds.standardize) {
    auto train = std::make_shared<Dataset>(*w.train);
    auto test = std::make_shared<Dataset>(*w.test);
    standardize_features(*train, *test);
    w.train = std::move(train);
    w.test = std::move(test);
  }
  const int classes = std::max(w.train->class_count, w.test->class_count);
  try {
    if (c.split.mode == SplitMode::class_wise) {
      w.split = split_classwise(w.train, c.split.targets);
    } else {
      w.split = split_random(w.train, c.split.fraction, derive_seed(c.seed, stream::split));
    }
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("split: ") + e.what());
  }
  w.problem = make_problem(c.model, w.train->feature_dim(), classes);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < w.test->labels.size(); ++i) {
    if (c.split.mode == SplitMode::random || !c.split.targets.contains(w.test->labels[i])) keep.push_back(i);
  }
  if (keep.size() < 2) throw config_error("test set has fewer than two usable samples");
  w.test_eval = DatasetView(w.test, std::move(keep)).all();
  return w;
}

struct BaseModel {
  ParameterVector theta;
  int steps = 0;
  double train_accuracy = 0.0;
};

/// SGD on the full training set until train accuracy reaches the target
/// (checked every check_every steps) or max_steps is spent.
inline BaseModel train_base(const Workbench& w, const BaseTrainingSpec& spec, std::uint64_t seed) {
  std::vector<std::size_t> all(static_cast<std::size_t>(w.train->size()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const DatasetView full(w.train, std::move(all));
  const LabeledBatch full_batch = full.all();
  MinibatchSampler sampler(full, full, spec.batch_size, derive_seed(seed, stream::base_batches));
  BaseModel b;
  b.theta = init_parameters(w.problem, derive_seed(seed, stream::base_init));
  b.train_accuracy = accuracy(w.problem, b.theta, full_batch);
  while (b.steps < spec.max_steps && b.train_accuracy < spec.target_accuracy) {
    for (int s = 0; s < spec.check_every && b.steps < spec.max_steps; ++s, ++b.steps) {
      const ParameterVector g = grad(w.problem, b.theta, sampler.next_retain());
      b.theta = detail::guarded_step(b.theta, -spec.eta, g, static_cast<std::size_t>(b.steps), "base training");
    }
    b.train_accuracy = accuracy(w.problem, b.theta, full_batch);
  }
  return b;
}

struct MethodOutcome {
  std::string label;
  std::string kind;
  Trajectory trajectory;
  /// Set when the run diverged; trajectory then holds the partial run.
  std::optional<std::string> error;
};

inline MethodOutcome run_method(const MethodSpec& m, const DifferentiableProblem& problem, const UnlearnSplit& split,
                                const ParameterVector& theta0, std::uint64_t seed) {
  MethodOutcome out{m.label, m.kind(), {}, std::nullopt};
  try {
    if (const auto* o = std::get_if<OfmuConfig>(&m.config)) {
      OfmuConfig c = *o;
      c.seed = seed;
      out.trajectory = run_ofmu(problem, split, theta0, c);
    } else {
      BaselineConfig c = std::get<BaselineConfig>(m.config);
      c.seed = seed;
      out.trajectory = run_baseline(problem, split, theta0, c);
    }
  } catch (const run_diverged& e) {
    out.trajectory = e.partial();
    out.error = e.what();
  }
  return out;
}

inline MethodMetrics evaluate_method(const Workbench& w, const std::string& label, const ParameterVector& theta,
                                     std::uint64_t seed) {
  const LabeledBatch retain = w.split.retain.all();
  const LabeledBatch forget = w.split.forget.all();
  MethodMetrics m;
  m.method = label;
  m.ua = unlearning_accuracy(w.problem, theta, forget);
  m.ra = accuracy(w.problem, theta, retain);
  m.ta = accuracy(w.problem, theta, w.test_eval);
  m.mia = mia_efficacy(w.problem, theta, retain, w.test_eval, forget, derive_seed(seed, stream::mia));
  return m;
}

// ============================================================================
// run_experiment
// ============================================================================

struct RunReport {
  nlohmann::json config;
  nlohmann::json environment;
  BaseModel base;
  std::vector<MethodOutcome> outcomes;
  MetricsReport metrics;
  std::optional<std::string> overall_error;
};

inline nlohmann::json trajectory_summary(const MethodOutcome& o) {
  const auto& t = o.trajectory;
  nlohmann::json j = {{"label", o.label},
                      {"method", o.kind},
                      {"status", o.error ? "diverged" : "ok"},
                      {"records", t.records.size()},
                      {"termination", to_string(t.termination)},
                      {"final_grad_norm", t.records.empty() ? nlohmann::json() : nlohmann::json(t.records.back().grad_norm)}};
  if (o.error) j["error"] = *o.error;
  return j;
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& o : r.outcomes) methods.push_back(trajectory_summary(o));
  return {{"config", r.config},
          {"environment", r.environment},
          {"base_model", {{"steps", r.base.steps}, {"train_accuracy", r.base.train_accuracy}}},
          {"methods", methods},
          {"metrics", to_json(r.metrics)},
          {"overall_error", r.overall_error ? nlohmann::json(*r.overall_error) : nlohmann::json()}};
}

namespace detail {

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  return out.empty() ? "method" : out;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace detail

/// Writes report.json, metrics.csv, trajectories/<label>.jsonl and
/// checkpoints/<label>.theta under dir.
inline void write_artifacts(const RunReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "trajectories");
  std::filesystem::create_directories(dir / "checkpoints");
  std::map<std::string, int> used;
  for (const auto& o : r.outcomes) {
    std::string name = detail::safe_name(o.label);
    if (const int n = used[name]++; n > 0) name += "-" + std::to_string(n);
    const auto ckpt = std::filesystem::path("checkpoints") / (name + ".theta");
    {
      std::ofstream out(dir / ckpt);
      write_text(out, o.trajectory.final_theta);
      if (!out) throw std::runtime_error("cannot write " + (dir / ckpt).string());
    }
    std::ofstream traj(dir / "trajectories" / (name + ".jsonl"));
    write_trajectory_jsonl(traj, o.trajectory, ckpt.generic_string());
    if (!traj) throw std::runtime_error("cannot write trajectory for " + o.label);
  }
  std::ostringstream csv;
  write_metrics_csv(csv, r.metrics);
  detail::write_file(dir / "metrics.csv", csv.str());
  detail::write_file(dir / "report.json", to_json(r).dump(2) + "\n");
}

inline RunReport run_experiment(const ExperimentConfig& c) {
  if (c.methods.empty()) throw config_error("methods: at least one method is required");
  const Workbench w = build_workbench(c);
  RunReport r;
  r.config = config_to_json(c);
  r.environment = environment_fingerprint();
  r.base = train_base(w, c.base_training, c.seed);

  const std::uint64_t method_seed = derive_seed(c.seed, stream::method);
  for (const auto& m : c.methods) {
    r.outcomes.push_back(run_method(m, w.problem, w.split, r.base.theta, method_seed));
    r.metrics.methods.push_back(evaluate_method(w, m.label, r.outcomes.back().trajectory.final_theta, c.seed));
  }

  const LabeledBatch retain = w.split.retain.all();
  const LabeledBatch forget = w.split.forget.all();
  for (Eigen::Index i = 0; i < forget.size(); ++i) {
    const std::size_t row = static_cast<std::size_t>(i);
    r.metrics.udi_values.push_back(udi(w.problem, r.base.theta, forget.select(std::span(&row, 1)), retain, c.udi));
  }
  r.overall_error = r.metrics.compute_overall();
  if (!c.output_dir.empty()) write_artifacts(r, c.output_dir);
  return r;
}

// ============================================================================
// UDI coupling study
// ============================================================================

struct CouplingRow {
  std::string method;
  std::vector<double> drops;
  std::optional<double> tau;
  std::optional<std::string> error;
};

struct CouplingReport {
  nlohmann::json config;
  nlohmann::json environment;
  std::vector<std::size_t> forget_positions;
  std::vector<double> udi_values;
  double ra_before = 0.0;
  std::vector<CouplingRow> rows;
};

/// Retain-set accuracy drop after a short run of the method that targets
/// forget position `pos` alone: `budget` outer iterations for OFMU,
/// `baseline_steps` steps otherwise.
inline double utility_drop(const Workbench& w, const MethodSpec& m, const ParameterVector& theta_base,
                           double ra_before, std::size_t pos, int budget, int baseline_steps, std::uint64_t seed) {
  UnlearnSplit single = w.split;
  single.forget = DatasetView(w.train, {w.split.forget.indices().at(pos)});
  MethodSpec run = m;
  if (auto* o = std::get_if<OfmuConfig>(&run.config)) {
    o->outer_iterations = budget;
    o->stationarity_tol = 0.0;
  } else {
    std::get<BaselineConfig>(run.config).steps = baseline_steps;
  }
  const MethodOutcome out = run_method(run, w.problem, single, theta_base, seed);
  return ra_before - accuracy(w.problem, out.trajectory.final_theta, w.split.retain.all());
}

/// UDI per sampled forget point at the base parameters, then
/// spearman(UDI, utility drop) per method.
inline CouplingReport udi_coupling_study(const ExperimentConfig& c) {
  if (c.methods.empty()) throw config_error("methods: at least one method is required");
  const Workbench w = build_workbench(c);
  const std::size_t n_forget = w.split.forget.size();
  if (n_forget < 20) throw config_error("udi study needs at least 20 forget samples");

  CouplingReport rep;
  rep.config = config_to_json(c);
  rep.environment = environment_fingerprint();
  const BaseModel base = train_base(w, c.base_training, c.seed);
  const LabeledBatch retain = w.split.retain.all();
  const LabeledBatch forget = w.split.forget.all();
  rep.ra_before = accuracy(w.problem, base.theta, retain);

  std::vector<std::size_t> order(n_forget);
  for (std::size_t i = 0; i < n_forget; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(c.seed, stream::udi_samples));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n_forget, static_cast<std::size_t>(c.udi_study.samples)));
  std::sort(order.begin(), order.end());
  rep.forget_positions = order;
  for (std::size_t pos : order) {
    rep.udi_values.push_back(udi(w.problem, base.theta, forget.select(std::span(&pos, 1)), retain, c.udi));
  }

  int inner_steps = OfmuConfig{}.inner_steps;
  for (const auto& m : c.methods) {
    if (const auto* o = std::get_if<OfmuConfig>(&m.config)) {
      inner_steps = o->inner_steps;
      break;
    }
  }
  const int baseline_steps = c.udi_study.budget * (inner_steps + 1);

  const std::uint64_t method_seed = derive_seed(c.seed, stream::method);
  for (const auto& m : c.methods) {
    if (!c.udi_study.methods.empty() &&
        std::find(c.udi_study.methods.begin(), c.udi_study.methods.end(), m.label) == c.udi_study.methods.end()) {
      continue;
    }
    CouplingRow row{m.label, {}, std::nullopt, std::nullopt};
    for (std::size_t pos : order) {
      row.drops.push_back(utility_drop(w, m, base.theta, rep.ra_before, pos, c.udi_study.budget, baseline_steps, method_seed));
    }
    try {
      row.tau = spearman(rep.udi_values, row.drops);
    } catch (const undefined_correlation& e) {
      row.error = e.what();
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline nlohmann::json to_json(const CouplingReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"method", row.method},
                    {"tau", row.tau ? nlohmann::json(*row.tau) : nlohmann::json()},
                    {"error", row.error ? nlohmann::json(*row.error) : nlohmann::json()},
                    {"drops", row.drops}});
  }
  return {{"config", r.config},
          {"environment", r.environment},
          {"forget_positions", r.forget_positions},
          {"udi_values", r.udi_values},
          {"ra_before", r.ra_before},
          {"methods", rows}};
}

// ============================================================================
// Lemma suite
// ============================================================================

enum class Lemma { lemma1, lemma2, lemma3 };

inline std::string to_string(Lemma l) {
  switch (l) {
    case Lemma::lemma1: return "lemma1";
    case Lemma::lemma2: return "lemma2";
    case Lemma::lemma3: return "lemma3";
  }
  return "?";
}

inline Lemma parse_lemma(const std::string& s) {
  if (s == "lemma1") return Lemma::lemma1;
  if (s == "lemma2") return Lemma::lemma2;
  if (s == "lemma3") return Lemma::lemma3;
  throw config_error("unknown check '" + s + "'");
}

/// One check in the bank. `run` returns the check's JSON report; `expect_pass`
/// false marks a negative control, which succeeds when the check fails.
struct VerifyCase {
  Lemma lemma;
  std::string name;
  bool expect_pass = true;
  std::function<std::pair<bool, nlohmann::json>()> run;
};

enum class CaseStatus { pass, fail, skipped };

inline std::string to_string(CaseStatus s) {
  return s == CaseStatus::pass ? "pass" : s == CaseStatus::fail ? "fail" : "skipped";
}

struct CaseResult {
  Lemma lemma;
  std::string name;
  CaseStatus status;
  bool expect_pass;
  nlohmann::json detail;
};

struct VerifyReport {
  std::vector<CaseResult> cases;
  bool pass() const {
    for (const auto& c : cases) {
      if (c.status == CaseStatus::fail) return false;
    }
    return true;
  }
  std::size_t count(CaseStatus s) const {
    return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(), [&](const auto& c) { return c.status == s; }));
  }
};

inline nlohmann::json to_json(const VerifyReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    cases.push_back({{"lemma", to_string(c.lemma)},
                     {"name", c.name},
                     {"status", to_string(c.status)},
                     {"expect_pass", c.expect_pass},
                     {"detail", c.detail}});
  }
  return {{"pass", r.pass()},
          {"counts",
           {{"pass", r.count(CaseStatus::pass)},
            {"fail", r.count(CaseStatus::fail)},
            {"skipped", r.count(CaseStatus::skipped)}}},
          {"environment", environment_fingerprint()},
          {"cases", cases}};
}

/// Number of random instances per T in the inner-rate sweep.
inline constexpr int kLemma2RandomInstances = 100;

/// The shipped instance bank.
inline std::vector<VerifyCase> canonical_bank() {
  std::vector<VerifyCase> bank;

  // Inner ascent rate: the one-step identity case, the already-optimal case,
  // then random SPD instances with d in [1, 20] and eta in (0, 1/L].
  bank.push_back({Lemma::lemma2, "identity-one-step", true, [] {
                    auto q = canonical::identity_pair();
                    Eigen::VectorXd t0(2);
                    t0 << 3.0, -4.0;
                    const auto r = check_lemma2(q, t0, 1, 1.0);
                    return std::pair{r.pass, to_json(r)};
                  }});
  bank.push_back({Lemma::lemma2, "start-at-optimum", true, [] {
                    auto q = canonical::convergence_pair();
                    const auto r = check_lemma2(q, q.b_phi, 5, 1.0 / q.L());
                    return std::pair{r.pass, to_json(r)};
                  }});
  for (int i = 0; i < kLemma2RandomInstances; ++i) {
    for (int T : {1, 5, 25}) {
      bank.push_back({Lemma::lemma2, "random-" + std::to_string(i) + "-T" + std::to_string(T), true, [i, T] {
                        std::mt19937_64 rng(derive_seed(static_cast<std::uint64_t>(i), 200));
                        const auto d = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(1, 20)(rng));
                        const auto q = random_instance(d, derive_seed(static_cast<std::uint64_t>(i), 201));
                        std::normal_distribution<double> n01;
                        Eigen::VectorXd t0(d);
                        for (Eigen::Index k = 0; k < d; ++k) t0[k] = 3.0 * n01(rng);
                        // Every fifth instance runs at exactly 1/L.
                        const double u = i % 5 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.05, 1.0)(rng);
                        const auto r = check_lemma2(q, t0, T, u / q.L());
                        auto j = to_json(r);
                        j["dim"] = d;
                        return std::pair{r.pass, j};
                      }});
    }
  }

  // Penalty stationarity.
  bank.push_back({Lemma::lemma1, "identity-closed-form", true, [] {
                    const auto r = check_lemma1(canonical::identity_pair(), {1.0, 10.0, 100.0, 1e4});
                    bool match = true;
                    for (std::size_t k = 0; k < r.rhos.size(); ++k) {
                      match = match && std::abs(r.residuals[k] - 1.0 / (1.0 + 2.0 * r.rhos[k])) <= 1e-8;
                    }
                    auto j = to_json(r);
                    j["matches_closed_form"] = match;
                    return std::pair{r.pass && match, j};
                  }});
  bank.push_back({Lemma::lemma1, "general-pair", true, [] {
                    const auto r = check_lemma1(canonical::stationarity_pair(), canonical::rho_sweep());
                    return std::pair{r.pass, to_json(r)};
                  }});
  bank.push_back({Lemma::lemma1, "shared-optimum", true, [] {
                    const auto r = check_lemma1(canonical::shared_optimum_pair(), canonical::rho_sweep());
                    return std::pair{r.pass, to_json(r)};
                  }});

  // Outer convergence shape.
  bank.push_back({Lemma::lemma3, "convex-canonical", true, [] {
                    const auto q = canonical::convergence_pair();
                    const auto r = check_lemma3_convex(q, q.b_phi, canonical::convergence_config());
                    return std::pair{r.pass, to_json(r)};
                  }});
  bank.push_back({Lemma::lemma3, "convex-no-outer-step", false, [] {
                    const auto q = canonical::convergence_pair();
                    OfmuConfig c = canonical::convergence_config();
                    c.eta_out = 0.0;
                    const auto r = check_lemma3_convex(q, q.b_phi, c);
                    return std::pair{r.pass, to_json(r)};
                  }});
  bank.push_back({Lemma::lemma3, "convex-doubling-T", true, [] {
                    const auto q = canonical::shared_optimum_pair();
                    Eigen::VectorXd t0(2);
                    t0 << 3.0, 2.0;
                    OfmuConfig c = canonical::convergence_config();
                    const auto base = check_lemma3_convex(q, t0, c);
                    c.inner_steps *= 2;
                    const auto doubled = check_lemma3_convex(q, t0, c);
                    const double g1 = base.F_gap_per_k.back();
                    const double g2 = doubled.F_gap_per_k.back();
                    return std::pair{g2 <= g1, nlohmann::json{{"final_gap_T", g1}, {"final_gap_2T", g2}}};
                  }});
  bank.push_back({Lemma::lemma3, "nonconvex-rippled", true, [] {
                    const auto q = canonical::convergence_pair();
                    Eigen::VectorXd t0(2);
                    t0 << 3.0, 2.0;
                    OfmuConfig c = canonical::convergence_config();
                    c.eta_in = 0.2;
                    c.eta_out = 0.05;
                    const auto r = check_lemma3_nonconvex(q, 0.3, 2.0, t0, c);
                    return std::pair{r.pass, to_json(r)};
                  }});
  return bank;
}

/// Runs the bank entries whose lemma is selected. A precondition_error marks
/// the case skipped rather than failed.
inline VerifyReport run_verify_suite(const std::set<Lemma>& selection,
                                     const std::vector<VerifyCase>& bank = canonical_bank()) {
  VerifyReport rep;
  for (const auto& c : bank) {
    if (!selection.contains(c.lemma)) continue;
    CaseResult res{c.lemma, c.name, CaseStatus::fail, c.expect_pass, {}};
    try {
      auto [ok, detail] = c.run();
      res.status = ok == c.expect_pass ? CaseStatus::pass : CaseStatus::fail;
      res.detail = std::move(detail);
    } catch (const precondition_error& e) {
      res.status = CaseStatus::skipped;
      res.detail = {{"reason", e.what()}};
    }
    rep.cases.push_back(std::move(res));
  }
  return rep;
}

}  // namespace ofmu
