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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ofmu/diffcore.hpp"

namespace ofmu {

/// Enough information to regenerate a synthetic dataset bit for bit.
struct Provenance {
  std::string generator;  // "blobs", or "file" for loaded data
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> parameters;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Dataset {
  Eigen::MatrixXd inputs;  // rows = samples
  std::vector<int> labels;
  int class_count = 0;
  Provenance provenance;

  Eigen::Index size() const noexcept { return inputs.rows(); }
  int feature_dim() const noexcept { return static_cast<int>(inputs.cols()); }

  LabeledBatch as_batch() const { return LabeledBatch(inputs, labels); }

  void validate() const {
    if (inputs.rows() != static_cast<Eigen::Index>(labels.size())) {
      throw contract_violation("dataset row count and label count differ");
    }
    if (class_count < 1) throw contract_violation("dataset class_count must be positive");
    for (int y : labels) {
      if (y < 0 || y >= class_count) throw contract_violation("dataset label outside class range");
    }
  }
};

/// Index subset of a shared dataset. Copies share the storage and the read
/// counter, which counts every sample handed out through gather()/all().
class DatasetView {
 public:
  DatasetView() = default;
  DatasetView(std::shared_ptr<const Dataset> source, std::vector<std::size_t> indices)
      : source_(std::move(source)), indices_(std::move(indices)),
        reads_(std::make_shared<std::atomic<std::size_t>>(0)) {}

  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  const Dataset& source() const { return *source_; }
  const std::shared_ptr<const Dataset>& source_ptr() const noexcept { return source_; }

  /// Samples at view positions `positions`.
  LabeledBatch gather(std::span<const std::size_t> positions) const {
    std::vector<std::size_t> rows;
    rows.reserve(positions.size());
    for (std::size_t p : positions) rows.push_back(indices_.at(p));
    if (reads_) *reads_ += rows.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), source_->inputs.cols());
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = source_->inputs.row(static_cast<Eigen::Index>(rows[r]));
      y.push_back(source_->labels[rows[r]]);
    }
    return LabeledBatch(std::move(x), std::move(y));
  }

  LabeledBatch all() const {
    std::vector<std::size_t> pos(indices_.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    return gather(pos);
  }

  std::size_t reads() const noexcept { return reads_ ? reads_->load() : 0; }

 private:
  std::shared_ptr<const Dataset> source_;
  std::vector<std::size_t> indices_;
  std::shared_ptr<std::atomic<std::size_t>> reads_;
};

enum class SplitMode { class_wise, random };

inline std::string to_string(SplitMode m) { return m == SplitMode::class_wise ? "class-wise" : "random"; }

/// Disjoint retain/forget views whose union is the source dataset.
struct UnlearnSplit {
  DatasetView retain;
  DatasetView forget;
  SplitMode mode = SplitMode::class_wise;
  std::set<int> target_classes;  // class-wise
  double fraction = 0.0;         // random
  std::uint64_t seed = 0;        // random
};

/// Class means spaced exactly `separation` apart: scaled basis vectors when
/// class_count <= feature_dim, a line in 1-d, otherwise a regular polygon in
/// the first two coordinates.
inline Eigen::MatrixXd blob_means(int class_count, int feature_dim, double separation) {
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(class_count, feature_dim);
  if (class_count <= feature_dim) {
    for (int c = 0; c < class_count; ++c) means(c, c) = separation / std::numbers::sqrt2;
  } else if (feature_dim == 1) {
    for (int c = 0; c < class_count; ++c) means(c, 0) = c * separation;
  } else {
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / class_count));
    for (int c = 0; c < class_count; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / class_count;
      means(c, 0) = radius * std::cos(angle);
      means(c, 1) = radius * std::sin(angle);
    }
  }
  return means;
}

/// Isotropic unit-variance Gaussian clusters, class-major sample order.
inline Dataset gen_blobs(std::uint64_t seed, int class_count, int samples_per_class, int feature_dim,
                         double separation) {
  if (class_count < 1 || samples_per_class < 1 || feature_dim < 1) {
    throw std::invalid_argument("gen_blobs: counts must be >= 1");
  }
  if (!(separation > 0.0)) throw std::invalid_argument("gen_blobs: separation must be positive");
  const Eigen::MatrixXd means = blob_means(class_count, feature_dim, separation);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.class_count = class_count;
  d.inputs.resize(static_cast<Eigen::Index>(class_count) * samples_per_class, feature_dim);
  d.labels.reserve(static_cast<std::size_t>(d.inputs.rows()));
  Eigen::Index row = 0;
  for (int c = 0; c < class_count; ++c) {
    for (int s = 0; s < samples_per_class; ++s, ++row) {
      for (int j = 0; j < feature_dim; ++j) d.inputs(row, j) = means(c, j) + normal(rng);
      d.labels.push_back(c);
    }
  }
  d.provenance = {"blobs",
                  seed,
                  {{"class_count", class_count},
                   {"samples_per_class", samples_per_class},
                   {"feature_dim", feature_dim},
                   {"separation", separation}}};
  return d;
}

/// Rescales each feature to zero mean and unit variance using the statistics
/// of `train`; `test` gets the same affine map. Constant features are only
/// centered.
inline void standardize_features(Dataset& train, Dataset& test) {
  if (train.size() == 0) throw std::invalid_argument("standardize_features: empty train set");
  if (test.feature_dim() != train.feature_dim()) throw contract_violation("standardize_features: dim mismatch");
  const Eigen::RowVectorXd mean = train.inputs.colwise().mean();
  Eigen::RowVectorXd scale =
      ((train.inputs.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(train.size())).sqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale(j) > 1e-12)) scale(j) = 1.0;
  }
  train.inputs = ((train.inputs.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  test.inputs = ((test.inputs.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

inline Dataset regenerate(const Provenance& p) {
  if (p.generator != "blobs") throw std::invalid_argument("cannot regenerate dataset from '" + p.generator + "'");
  auto param = [&](const std::string& key) {
    for (const auto& [k, v] : p.parameters) {
      if (k == key) return v;
    }
    throw std::invalid_argument("provenance lacks parameter " + key);
  };
  return gen_blobs(p.seed, static_cast<int>(param("class_count")), static_cast<int>(param("samples_per_class")),
                   static_cast<int>(param("feature_dim")), param("separation"));
}

inline UnlearnSplit split_classwise(std::shared_ptr<const Dataset> data, const std::set<int>& target_classes) {
  if (target_classes.empty()) throw std::invalid_argument("split_classwise: empty target set");
  for (int c : target_classes) {
    if (c < 0 || c >= data->class_count) throw std::invalid_argument("split_classwise: unknown class");
  }
  if (static_cast<int>(target_classes.size()) >= data->class_count) {
    throw std::invalid_argument("split_classwise: target set covers every class");
  }
  std::vector<std::size_t> retain, forget;
  for (std::size_t i = 0; i < data->labels.size(); ++i) {
    (target_classes.contains(data->labels[i]) ? forget : retain).push_back(i);
  }
  UnlearnSplit s;
  s.retain = DatasetView(data, std::move(retain));
  s.forget = DatasetView(std::move(data), std::move(forget));
  s.mode = SplitMode::class_wise;
  s.target_classes = target_classes;
  return s;
}

/// Uniform sample of round(fraction * |D|) forget indices; both sides keep
/// source order.
inline UnlearnSplit split_random(std::shared_ptr<const Dataset> data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_random: fraction must be in (0,1)");
  const auto n = static_cast<std::size_t>(data->size());
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (k == 0 || k >= n) throw std::invalid_argument("split_random: fraction selects no or all samples");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<bool> in_forget(n, false);
  for (std::size_t i = 0; i < k; ++i) in_forget[perm[i]] = true;
  std::vector<std::size_t> retain, forget;
  for (std::size_t i = 0; i < n; ++i) (in_forget[i] ? forget : retain).push_back(i);
  UnlearnSplit s;
  s.retain = DatasetView(data, std::move(retain));
  s.forget = DatasetView(std::move(data), std::move(forget));
  s.mode = SplitMode::random;
  s.fraction = fraction;
  s.seed = seed;
  return s;
}

// ============================================================================
// File formats
// ============================================================================
//
// Binary: "OFMD", u32 version (1), u32 class_count, u32 feature_dim, u32 count,
// then count*feature_dim f32 inputs (row-major), then count u32 labels. All
// integers and floats little-endian. Inputs are narrowed to 32-bit floats.
//
// CSV: header "label,x0,x1,...", then one row per sample, label first.

inline constexpr char kDatasetMagic[4] = {'O', 'F', 'M', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset_binary(std::ostream& out, const Dataset& d) {
  d.validate();
  out.write(kDatasetMagic, 4);
  detail::put_le(out, kDatasetVersion, 4);
  detail::put_le(out, static_cast<std::uint32_t>(d.class_count), 4);
  detail::put_le(out, static_cast<std::uint32_t>(d.feature_dim()), 4);
  detail::put_le(out, static_cast<std::uint32_t>(d.size()), 4);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < d.inputs.cols(); ++j) {
      detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(d.inputs(i, j))), 4);
    }
  }
  for (int y : d.labels) detail::put_le(out, static_cast<std::uint32_t>(y), 4);
}

inline Dataset read_dataset_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kDatasetMagic)) {
    throw std::runtime_error("not an OFMD dataset file");
  }
  const auto version = detail::get_le(in, 4);
  if (version != kDatasetVersion) throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  Dataset d;
  d.class_count = static_cast<int>(detail::get_le(in, 4));
  const auto features = static_cast<Eigen::Index>(detail::get_le(in, 4));
  const auto count = static_cast<Eigen::Index>(detail::get_le(in, 4));
  d.inputs.resize(count, features);
  for (Eigen::Index i = 0; i < count; ++i) {
    for (Eigen::Index j = 0; j < features; ++j) {
      d.inputs(i, j) = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(in, 4)));
    }
  }
  d.labels.resize(static_cast<std::size_t>(count));
  for (auto& y : d.labels) y = static_cast<int>(detail::get_le(in, 4));
  d.provenance = {"file", 0, {}};
  d.validate();
  return d;
}

inline void write_dataset_csv(std::ostream& out, const Dataset& d) {
  out << "label";
  for (int j = 0; j < d.feature_dim(); ++j) out << ",x" << j;
  out << '\n';
  std::ostringstream row;
  row.precision(17);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    row.str({});
    row << d.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d.inputs.cols(); ++j) row << ',' << d.inputs(i, j);
    out << row.str() << '\n';
  }
}

/// class_count <= 0 means "max label + 1".
inline Dataset read_dataset_csv(std::istream& in, int class_count = 0) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("label", 0) == 0) continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    std::vector<double> feats;
    while (std::getline(ss, cell, ',')) feats.push_back(std::stod(cell));
    if (!rows.empty() && feats.size() != rows.front().size()) throw std::runtime_error("ragged CSV dataset");
    rows.push_back(std::move(feats));
  }
  Dataset d;
  const auto cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) d.inputs(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  }
  d.labels = std::move(labels);
  d.class_count = class_count > 0 ? class_count
                                  : (d.labels.empty() ? 1 : *std::max_element(d.labels.begin(), d.labels.end()) + 1);
  d.provenance = {"file", 0, {}};
  d.validate();
  return d;
}

/// Loads by extension: ".csv" as CSV, anything else as the binary format.
inline Dataset load_dataset(const std::string& path) {
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  std::ifstream in(path, csv ? std::ios::in : std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return csv ? read_dataset_csv(in) : read_dataset_binary(in);
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  std::ofstream out(path, csv ? std::ios::out : std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path);
  if (csv) {
    write_dataset_csv(out, d);
  } else {
    write_dataset_binary(out, d);
  }
}

}  // namespace ofmu
