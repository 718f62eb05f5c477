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

// Parameter vectors, labeled batches, the small analytic model families and
// the finite-difference operators (gradient, Hessian-vector product) every
// objective in the library is built from.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ofmu/errors.hpp"

namespace ofmu {

// ============================================================================
// ParameterVector
// ============================================================================

/// Flat real parameter vector. Every instance holds only finite entries;
/// constructing one from a vector with NaN/Inf throws numerical_failure.
class ParameterVector {
 public:
  ParameterVector() = default;

  explicit ParameterVector(Eigen::VectorXd values) : values_(std::move(values)) {
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw numerical_failure("non-finite parameter entry", static_cast<std::size_t>(i));
      }
    }
  }

  ParameterVector(std::initializer_list<double> values)
      : ParameterVector(Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                          static_cast<Eigen::Index>(values.size()))) {}

  static ParameterVector zeros(Eigen::Index dim) { return ParameterVector(Eigen::VectorXd::Zero(dim)); }

  Eigen::Index dim() const noexcept { return values_.size(); }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  double operator[](Eigen::Index i) const { return values_[i]; }

  double norm() const { return values_.norm(); }
  double squared_norm() const { return values_.squaredNorm(); }
  double max_abs() const { return values_.size() == 0 ? 0.0 : values_.cwiseAbs().maxCoeff(); }

  double dot(const ParameterVector& other) const {
    require_same_dim(other);
    return values_.dot(other.values_);
  }

  /// Copy with coordinate i shifted by delta.
  ParameterVector shifted(Eigen::Index i, double delta) const {
    Eigen::VectorXd v = values_;
    v[i] += delta;
    return ParameterVector(std::move(v));
  }

  friend ParameterVector operator+(const ParameterVector& a, const ParameterVector& b) {
    a.require_same_dim(b);
    return ParameterVector(a.values_ + b.values_);
  }
  friend ParameterVector operator-(const ParameterVector& a, const ParameterVector& b) {
    a.require_same_dim(b);
    return ParameterVector(a.values_ - b.values_);
  }
  friend ParameterVector operator-(const ParameterVector& a) { return ParameterVector(-a.values_); }
  friend ParameterVector operator*(double s, const ParameterVector& a) { return ParameterVector(s * a.values_); }
  friend ParameterVector operator*(const ParameterVector& a, double s) { return s * a; }

  /// Bitwise equality.
  friend bool operator==(const ParameterVector& a, const ParameterVector& b) {
    if (a.dim() != b.dim()) return false;
    for (Eigen::Index i = 0; i < a.dim(); ++i) {
      if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i])) return false;
    }
    return true;
  }

 private:
  void require_same_dim(const ParameterVector& other) const {
    if (other.dim() != dim()) {
      throw contract_violation("parameter dimension mismatch: " + std::to_string(dim()) + " vs " +
                               std::to_string(other.dim()));
    }
  }

  Eigen::VectorXd values_;
};

// ============================================================================
// LabeledBatch
// ============================================================================

/// Rows of `inputs` are samples; `labels[i]` is the class index of row i.
class LabeledBatch {
 public:
  LabeledBatch() = default;

  LabeledBatch(Eigen::MatrixXd inputs, std::vector<int> labels)
      : inputs_(std::move(inputs)), labels_(std::move(labels)) {
    if (inputs_.rows() != static_cast<Eigen::Index>(labels_.size())) {
      throw contract_violation("batch has " + std::to_string(inputs_.rows()) + " rows but " +
                               std::to_string(labels_.size()) + " labels");
    }
    for (int y : labels_) {
      if (y < 0) throw contract_violation("negative class label");
    }
  }

  Eigen::Index size() const noexcept { return inputs_.rows(); }
  bool empty() const noexcept { return size() == 0; }
  Eigen::Index feature_dim() const noexcept { return inputs_.cols(); }
  const Eigen::MatrixXd& inputs() const noexcept { return inputs_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  /// Single-sample batch holding row i.
  LabeledBatch sample(Eigen::Index i) const {
    return LabeledBatch(inputs_.row(i), {labels_[static_cast<std::size_t>(i)]});
  }

  /// Batch of the given rows, in the given order.
  LabeledBatch select(std::span<const std::size_t> rows) const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), feature_dim());
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = inputs_.row(static_cast<Eigen::Index>(rows[r]));
      y.push_back(labels_[rows[r]]);
    }
    return LabeledBatch(std::move(x), std::move(y));
  }

 private:
  Eigen::MatrixXd inputs_;
  std::vector<int> labels_;
};

// ============================================================================
// DifferentiableProblem
// ============================================================================

enum class ModelFamily { linear_regression, logistic_regression, mlp };
enum class LossKind { mean_squared_error, cross_entropy };

inline std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::linear_regression: return "linear-regression";
    case ModelFamily::logistic_regression: return "logistic-regression";
    case ModelFamily::mlp: return "mlp";
  }
  return "?";
}

inline std::string to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross-entropy" : "mean-squared-error";
}

/// A model family plus loss. All families are stacks of affine layers
/// (tanh between layers for mlp); linear and logistic regression are the
/// single-layer case.
///
/// Parameter layout is layer-major, weights before biases, weight matrices
/// row-major as (out x in). Cross-entropy applies a max-shifted softmax to the
/// outputs; mean-squared-error is 0.5 * ||f(x) - onehot(y)||^2 per sample.
/// The loss of a batch is the mean over its samples.
class DifferentiableProblem {
 public:
  static DifferentiableProblem linear_regression(int feature_dim, int output_count) {
    return DifferentiableProblem(ModelFamily::linear_regression, {feature_dim, output_count},
                                 LossKind::mean_squared_error);
  }

  static DifferentiableProblem logistic_regression(int feature_dim, int class_count) {
    return DifferentiableProblem(ModelFamily::logistic_regression, {feature_dim, class_count},
                                 LossKind::cross_entropy);
  }

  /// `widths` = {input, hidden..., classes}.
  static DifferentiableProblem mlp(std::vector<int> widths, LossKind loss = LossKind::cross_entropy) {
    if (widths.size() < 3) throw std::invalid_argument("mlp needs at least one hidden layer");
    return DifferentiableProblem(ModelFamily::mlp, std::move(widths), loss);
  }

  ModelFamily family() const noexcept { return family_; }
  LossKind loss_kind() const noexcept { return loss_; }
  const std::vector<int>& layer_widths() const noexcept { return widths_; }
  int feature_dim() const noexcept { return widths_.front(); }
  int class_count() const noexcept { return widths_.back(); }
  std::size_t layer_count() const noexcept { return widths_.size() - 1; }

  Eigen::Index parameter_dim() const noexcept {
    Eigen::Index d = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) d += (widths_[l] + 1) * widths_[l + 1];
    return d;
  }

  /// Offset of layer l's weight block in the flat vector.
  Eigen::Index layer_offset(std::size_t l) const noexcept {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < l; ++i) off += (widths_[i] + 1) * widths_[i + 1];
    return off;
  }

  friend bool operator==(const DifferentiableProblem&, const DifferentiableProblem&) = default;

 private:
  DifferentiableProblem(ModelFamily family, std::vector<int> widths, LossKind loss)
      : family_(family), widths_(std::move(widths)), loss_(loss) {
    for (int w : widths_) {
      if (w <= 0) throw std::invalid_argument("layer widths must be positive");
    }
    if (loss_ == LossKind::cross_entropy && class_count() < 2) {
      throw std::invalid_argument("cross-entropy needs at least two classes");
    }
  }

  ModelFamily family_;
  std::vector<int> widths_;
  LossKind loss_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check_inputs(const DifferentiableProblem& problem, const ParameterVector& theta,
                         const LabeledBatch& batch) {
  if (theta.dim() != problem.parameter_dim()) {
    throw contract_violation("theta has dim " + std::to_string(theta.dim()) + ", problem expects " +
                             std::to_string(problem.parameter_dim()));
  }
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (batch.feature_dim() != problem.feature_dim()) {
    throw contract_violation("batch feature dim " + std::to_string(batch.feature_dim()) +
                             " does not match problem input width " + std::to_string(problem.feature_dim()));
  }
  for (int y : batch.labels()) {
    if (y >= problem.class_count()) throw contract_violation("label outside class range");
  }
}

inline Eigen::Map<const RowMatrix> weights(const DifferentiableProblem& p, const ParameterVector& theta,
                                           std::size_t l) {
  const auto& w = p.layer_widths();
  return {theta.values().data() + p.layer_offset(l), w[l + 1], w[l]};
}

inline Eigen::Map<const Eigen::VectorXd> bias(const DifferentiableProblem& p, const ParameterVector& theta,
                                              std::size_t l) {
  const auto& w = p.layer_widths();
  return {theta.values().data() + p.layer_offset(l) + static_cast<Eigen::Index>(w[l]) * w[l + 1], w[l + 1]};
}

/// Activations per layer: acts[0] = inputs, acts.back() = output logits.
inline std::vector<Eigen::MatrixXd> forward(const DifferentiableProblem& p, const ParameterVector& theta,
                                            const Eigen::MatrixXd& inputs) {
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(p.layer_count() + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    Eigen::MatrixXd z = acts.back() * weights(p, theta, l).transpose();
    z.rowwise() += bias(p, theta, l).transpose();
    if (l + 1 < p.layer_count()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

/// Row-wise max-shifted softmax.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Mean loss and dLoss/dlogits (already divided by the batch size).
inline std::pair<double, Eigen::MatrixXd> loss_head(const DifferentiableProblem& p, const Eigen::MatrixXd& logits,
                                                    const std::vector<int>& labels) {
  const auto n = logits.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  Eigen::MatrixXd delta(n, logits.cols());
  if (p.loss_kind() == LossKind::cross_entropy) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      const double m = logits.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
      const double s = e.sum();
      total += std::log(s) + m - logits(i, y);
      delta.row(i) = e / s;
      delta(i, y) -= 1.0;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd r = logits.row(i);
      r[labels[static_cast<std::size_t>(i)]] -= 1.0;
      total += 0.5 * r.squaredNorm();
      delta.row(i) = r;
    }
  }
  delta *= inv_n;
  return {total * inv_n, std::move(delta)};
}

}  // namespace detail

/// Output logits (one row per sample).
inline Eigen::MatrixXd predict_logits(const DifferentiableProblem& problem, const ParameterVector& theta,
                                      const LabeledBatch& batch) {
  detail::check_inputs(problem, theta, batch);
  return detail::forward(problem, theta, batch.inputs()).back();
}

/// Softmax of the outputs, for every family (regression outputs included).
inline Eigen::MatrixXd predict_proba(const DifferentiableProblem& problem, const ParameterVector& theta,
                                     const LabeledBatch& batch) {
  return detail::softmax_rows(predict_logits(problem, theta, batch));
}

/// Mean loss over the batch.
inline double eval_loss(const DifferentiableProblem& problem, const ParameterVector& theta,
                        const LabeledBatch& batch) {
  detail::check_inputs(problem, theta, batch);
  const auto acts = detail::forward(problem, theta, batch.inputs());
  return detail::loss_head(problem, acts.back(), batch.labels()).first;
}

/// Mean loss and its analytic gradient, one forward and one backward pass.
inline std::pair<double, ParameterVector> loss_and_grad(const DifferentiableProblem& problem,
                                                        const ParameterVector& theta, const LabeledBatch& batch) {
  detail::check_inputs(problem, theta, batch);
  const auto acts = detail::forward(problem, theta, batch.inputs());
  auto [loss, delta] = detail::loss_head(problem, acts.back(), batch.labels());

  Eigen::VectorXd g(problem.parameter_dim());
  const auto& widths = problem.layer_widths();
  for (std::size_t l = problem.layer_count(); l-- > 0;) {
    const Eigen::Index off = problem.layer_offset(l);
    Eigen::Map<detail::RowMatrix> gw(g.data() + off, widths[l + 1], widths[l]);
    gw.noalias() = delta.transpose() * acts[l];
    g.segment(off + static_cast<Eigen::Index>(widths[l]) * widths[l + 1], widths[l + 1]) =
        delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * detail::weights(problem, theta, l);
      delta = (back.array() * (1.0 - acts[l].array().square())).matrix();
    }
  }
  if (!std::isfinite(loss)) throw numerical_failure("non-finite loss");
  return {loss, ParameterVector(std::move(g))};
}

/// Analytic gradient of eval_loss with respect to theta.
inline ParameterVector grad(const DifferentiableProblem& problem, const ParameterVector& theta,
                            const LabeledBatch& batch) {
  return loss_and_grad(problem, theta, batch).second;
}

/// Deterministic initialization: zero biases, Gaussian weights with standard
/// deviation 1/sqrt(fan_in) for mlp layers and 0.01 for single-layer models.
inline ParameterVector init_parameters(const DifferentiableProblem& problem, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(problem.parameter_dim());
  const auto& widths = problem.layer_widths();
  for (std::size_t l = 0; l < problem.layer_count(); ++l) {
    const double sd = problem.family() == ModelFamily::mlp ? 1.0 / std::sqrt(static_cast<double>(widths[l])) : 0.01;
    std::normal_distribution<double> normal(0.0, sd);
    const Eigen::Index off = problem.layer_offset(l);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(widths[l]) * widths[l + 1]; ++i) v[off + i] = normal(rng);
  }
  return ParameterVector(std::move(v));
}

// ============================================================================
// Finite-difference operators
// ============================================================================

/// Cube root of machine epsilon, the usual central-difference step.
inline const double kFdStep = std::cbrt(std::numeric_limits<double>::epsilon());

template <class F>
concept scalar_function = std::invocable<const F&, const ParameterVector&> &&
                          std::convertible_to<std::invoke_result_t<const F&, const ParameterVector&>, double>;

template <class G>
concept vector_function = std::invocable<const G&, const ParameterVector&> &&
                          std::convertible_to<std::invoke_result_t<const G&, const ParameterVector&>, ParameterVector>;

/// Central-difference gradient with absolute step `step` on every coordinate.
template <scalar_function F>
ParameterVector fd_grad(const F& fn, const ParameterVector& theta, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("fd step must be positive");
  Eigen::VectorXd g(theta.dim());
  for (Eigen::Index i = 0; i < theta.dim(); ++i) {
    const double up = fn(theta.shifted(i, step));
    const double down = fn(theta.shifted(i, -step));
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw numerical_failure("non-finite function value while probing coordinate " + std::to_string(i),
                              static_cast<std::size_t>(i));
    }
    g[i] = (up - down) / (2.0 * step);
  }
  return ParameterVector(std::move(g));
}

/// Central-difference gradient with step kFdStep * (1 + max|theta_i|).
template <scalar_function F>
ParameterVector fd_grad(const F& fn, const ParameterVector& theta) {
  return fd_grad(fn, theta, kFdStep * (1.0 + theta.max_abs()));
}

/// Hessian-vector product as the central directional derivative of
/// `grad_fn` along v, with eps = step * (1 + ||theta||) / ||v||. Costs two
/// gradient evaluations.
template <vector_function G>
ParameterVector hvp(const G& grad_fn, const ParameterVector& theta, const ParameterVector& v,
                    double step = kFdStep) {
  if (v.dim() != theta.dim()) throw contract_violation("hvp direction dimension mismatch");
  if (!(step > 0.0)) throw std::invalid_argument("hvp step must be positive");
  const double vn = v.norm();
  if (vn == 0.0) throw std::invalid_argument("hvp direction is the zero vector");
  const double eps = step * (1.0 + theta.norm()) / vn;
  Eigen::VectorXd plus, minus;
  try {
    plus = ParameterVector(grad_fn(ParameterVector(theta.values() + eps * v.values()))).values();
    minus = ParameterVector(grad_fn(ParameterVector(theta.values() - eps * v.values()))).values();
  } catch (const numerical_failure& e) {
    throw numerical_failure(std::string("hvp probe failed: ") + e.what(), e.coordinate());
  }
  return ParameterVector((plus - minus) / (2.0 * eps));
}

// ============================================================================
// Serialization
// ============================================================================

namespace detail {

inline void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(buf, bytes);
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char buf[8] = {};
  if (!in.read(reinterpret_cast<char*>(buf), bytes)) throw std::runtime_error("truncated binary stream");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// u32 little-endian dim, then dim little-endian f64 values.
inline void write_binary(std::ostream& out, const ParameterVector& theta) {
  detail::put_le(out, static_cast<std::uint32_t>(theta.dim()), 4);
  for (Eigen::Index i = 0; i < theta.dim(); ++i) detail::put_le(out, std::bit_cast<std::uint64_t>(theta[i]), 8);
}

inline ParameterVector read_binary(std::istream& in) {
  const auto dim = static_cast<Eigen::Index>(detail::get_le(in, 4));
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = std::bit_cast<double>(detail::get_le(in, 8));
  return ParameterVector(std::move(v));
}

/// Debug format: one value per line, 17 significant digits.
inline void write_text(std::ostream& out, const ParameterVector& theta) {
  std::ostringstream line;
  line.precision(17);
  for (Eigen::Index i = 0; i < theta.dim(); ++i) {
    line.str({});
    line << theta[i] << '\n';
    out << line.str();
  }
}

inline ParameterVector read_text(std::istream& in) {
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    vals.push_back(std::stod(line));
  }
  return ParameterVector(Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
}

}  // namespace ofmu
