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

// Convergence checks on closed-form quadratic instances
//
//   L_r(theta) =  1/2 (theta - b_r)^T   A_r   (theta - b_r)
//   Phi(theta) = -1/2 (theta - b_phi)^T A_phi (theta - b_phi)
//
// so argmax Phi = b_phi, grad Phi = -A_phi (theta - b_phi) and the penalty
// objective F = L_r + rho |grad Phi|^2 is itself quadratic with Hessian
// A_r + 2 rho A_phi^2.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofmu/optimizer.hpp"

namespace ofmu {

struct QuadraticInstance {
  Eigen::MatrixXd A_r;
  Eigen::MatrixXd A_phi;
  Eigen::VectorXd b_r;
  Eigen::VectorXd b_phi;

  Eigen::Index dim() const { return b_phi.size(); }

  /// Throws contract_violation unless both matrices are symmetric within
  /// 1e-12 and positive-definite and all shapes agree.
  void validate() const {
    const Eigen::Index d = b_phi.size();
    if (d == 0 || b_r.size() != d || A_r.rows() != d || A_r.cols() != d || A_phi.rows() != d || A_phi.cols() != d) {
      throw contract_violation("quadratic instance shape mismatch");
    }
    for (const auto* A : {&A_r, &A_phi}) {
      if ((*A - A->transpose()).cwiseAbs().maxCoeff() > 1e-12) throw contract_violation("matrix not symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*A, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0)) throw contract_violation("matrix not positive-definite");
    }
  }

  /// Lipschitz constant of grad Phi: largest eigenvalue of A_phi.
  double L() const { return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A_phi, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff(); }

  /// Lipschitz constant of grad F at rho.
  double L_F(double rho) const {
    const Eigen::MatrixXd H = A_r + 2.0 * rho * A_phi * A_phi;
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  }

  const Eigen::VectorXd& theta_star_in() const { return b_phi; }

  double phi(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd e = theta - b_phi;
    return -0.5 * e.dot(A_phi * e);
  }
  Eigen::VectorXd grad_phi(const Eigen::VectorXd& theta) const { return -(A_phi * (theta - b_phi)); }
  double retain_loss(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd e = theta - b_r;
    return 0.5 * e.dot(A_r * e);
  }
  double penalty(const Eigen::VectorXd& theta, double rho) const {
    return retain_loss(theta) + rho * grad_phi(theta).squaredNorm();
  }

  /// Objective context whose Phi is the instance's Phi (no decorrelation term).
  ObjectiveContext<QuadraticObjective, QuadraticObjective> context() const {
    return make_context(QuadraticObjective{A_phi, b_phi, -1.0}, QuadraticObjective{A_r, b_r, 1.0}, 0.0);
  }
};

/// Q diag(lambda) Q^T with Q from the QR factorization of a Gaussian matrix
/// and lambda uniform in [lo, hi].
inline Eigen::MatrixXd random_spd(Eigen::Index d, std::mt19937_64& rng, double lo = 0.1, double hi = 2.0) {
  if (d < 1 || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("random_spd: bad arguments");
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> eig(lo, hi);
  Eigen::MatrixXd G(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) G(i, j) = n01(rng);
  }
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
  Eigen::VectorXd lambda(d);
  for (Eigen::Index i = 0; i < d; ++i) lambda[i] = eig(rng);
  const Eigen::MatrixXd A = Q * lambda.asDiagonal() * Q.transpose();
  return 0.5 * (A + A.transpose());
}

/// Random instance with independent SPD matrices and Gaussian centers.
inline QuadraticInstance random_instance(Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  QuadraticInstance q;
  q.A_r = random_spd(d, rng);
  q.A_phi = random_spd(d, rng);
  q.b_r.resize(d);
  q.b_phi.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) q.b_r[i] = n01(rng);
  for (Eigen::Index i = 0; i < d; ++i) q.b_phi[i] = n01(rng);
  return q;
}

/// Exact minimizer of F(.; rho): (A_r + 2 rho A_phi^2) theta = A_r b_r + 2 rho A_phi^2 b_phi.
/// Solved by Cholesky with an LDL^T fallback.
inline Eigen::VectorXd penalty_minimizer(const QuadraticInstance& q, double rho) {
  if (!(rho >= 0.0)) throw std::invalid_argument("rho must be non-negative");
  const Eigen::MatrixXd A2 = q.A_phi * q.A_phi;
  const Eigen::MatrixXd M = q.A_r + 2.0 * rho * A2;
  const Eigen::VectorXd rhs = q.A_r * q.b_r + 2.0 * rho * (A2 * q.b_phi);
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  Eigen::VectorXd theta;
  if (llt.info() == Eigen::Success) {
    theta = llt.solve(rhs);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw numerical_failure("penalty system is singular");
    theta = ldlt.solve(rhs);
  }
  if (!theta.allFinite()) throw numerical_failure("penalty system is singular");
  return theta;
}

inline nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return rows;
}

inline nlohmann::json to_json(const QuadraticInstance& q) {
  return {{"A_r", to_json(q.A_r)}, {"A_phi", to_json(q.A_phi)}, {"b_r", to_json(q.b_r)}, {"b_phi", to_json(q.b_phi)}};
}

// ---------------------------------------------------------------------------
// Inner ascent rate
// ---------------------------------------------------------------------------

struct Lemma2Report {
  int T = 0;
  double eta_in = 0.0;
  double lhs = 0.0;
  double bound = 0.0;
  bool pass = false;
};

inline constexpr double kLemma2Slack = 1e-10;

/// T exact ascent steps on Phi from theta0. lhs = Phi(b_phi) - Phi(theta_T),
/// bound = |b_phi - theta0|^2 / (2 T eta_in).
inline Lemma2Report check_lemma2(const QuadraticInstance& q, const Eigen::VectorXd& theta0, int T, double eta_in) {
  q.validate();
  if (theta0.size() != q.dim()) throw contract_violation("theta0 dimension mismatch");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (!(eta_in > 0.0) || eta_in > 1.0 / q.L()) throw precondition_error("eta_in must lie in (0, 1/L]");
  Eigen::VectorXd theta = theta0;
  for (int t = 0; t < T; ++t) theta += eta_in * q.grad_phi(theta);
  Lemma2Report r;
  r.T = T;
  r.eta_in = eta_in;
  r.lhs = q.phi(q.b_phi) - q.phi(theta);
  r.bound = (q.b_phi - theta0).squaredNorm() / (2.0 * T * eta_in);
  r.pass = r.lhs <= r.bound + kLemma2Slack;
  return r;
}

inline nlohmann::json to_json(const Lemma2Report& r) {
  return {{"T", r.T}, {"eta_in", r.eta_in}, {"lhs", r.lhs}, {"bound", r.bound}, {"pass", r.pass}};
}

// ---------------------------------------------------------------------------
// Penalty stationarity
// ---------------------------------------------------------------------------

struct Lemma1Report {
  std::vector<double> rhos;
  std::vector<double> residuals;
  bool pass = false;
};

inline constexpr double kLemma1Tolerance = 1e-4;
inline constexpr double kLemma1LargeRho = 1e4;

/// Residual |grad Phi(theta*_rho)| for each rho. Passes when the residuals
/// strictly decrease (or all vanish, as when b_r = b_phi) and, if the largest
/// rho is at least 1e4, the last residual is at most 1e-4.
inline Lemma1Report check_lemma1(const QuadraticInstance& q, const std::vector<double>& rhos) {
  q.validate();
  if (rhos.empty()) throw std::invalid_argument("rho sequence is empty");
  for (std::size_t i = 0; i < rhos.size(); ++i) {
    if (!(rhos[i] > 0.0) || (i > 0 && !(rhos[i] > rhos[i - 1]))) {
      throw std::invalid_argument("rho sequence must be positive and strictly increasing");
    }
  }
  Lemma1Report r;
  r.rhos = rhos;
  for (double rho : rhos) r.residuals.push_back(q.grad_phi(penalty_minimizer(q, rho)).norm());

  bool all_zero = true;
  for (double v : r.residuals) all_zero = all_zero && v == 0.0;
  bool decreasing = true;
  for (std::size_t i = 1; i < r.residuals.size(); ++i) decreasing = decreasing && r.residuals[i] < r.residuals[i - 1];
  const bool small_at_end = rhos.back() < kLemma1LargeRho || r.residuals.back() <= kLemma1Tolerance;
  r.pass = (all_zero || decreasing) && small_at_end;
  return r;
}

inline nlohmann::json to_json(const Lemma1Report& r) {
  return {{"rhos", r.rhos}, {"residuals", r.residuals}, {"pass", r.pass}};
}

// ---------------------------------------------------------------------------
// Outer convergence shape
// ---------------------------------------------------------------------------

struct Lemma3Report {
  /// Penalty weight at which F is evaluated (cfg.rho0).
  double rho_eval = 0.0;
  double F_star = 0.0;
  /// F(theta^(k)) - F* for k = 0..K, theta^(0) = theta0.
  std::vector<double> F_gap_per_k;
  /// Largest increase of the gap over the second half of the run.
  double max_late_increase = 0.0;
  bool pass = false;
};

/// Relative slack for "non-increasing" on the gap sequence (round-off only).
inline constexpr double kLemma3Slack = 1e-12;

/// Gap sequence of a finished run: non-increasing from K/2 on and final gap
/// at most 0.9 of the gap at K/2.
inline void judge_lemma3(Lemma3Report& r) {
  const auto& g = r.F_gap_per_k;
  const std::size_t K = g.size() - 1;
  const std::size_t mid = K / 2;
  r.max_late_increase = 0.0;
  bool monotone = true;
  for (std::size_t k = mid; k < K; ++k) {
    const double inc = g[k + 1] - g[k];
    r.max_late_increase = std::max(r.max_late_increase, inc);
    if (inc > kLemma3Slack * std::max(1.0, std::abs(g[k]))) monotone = false;
  }
  r.pass = K >= 2 && monotone && g[K] <= 0.9 * g[mid];
}

/// Full-batch OFMU on the instance with cfg; F is evaluated at rho = cfg.rho0.
/// Step sizes must satisfy eta_in <= 1/L and eta_out <= 1/L_F(rho_max).
inline Lemma3Report check_lemma3_convex(const QuadraticInstance& q, const Eigen::VectorXd& theta0,
                                        const OfmuConfig& cfg) {
  q.validate();
  cfg.validate();
  if (theta0.size() != q.dim()) throw contract_violation("theta0 dimension mismatch");
  if (cfg.eta_in > 1.0 / q.L()) throw precondition_error("eta_in exceeds 1/L");
  if (cfg.eta_out > 1.0 / q.L_F(cfg.rho_max)) throw precondition_error("eta_out exceeds 1/L_F");

  Lemma3Report r;
  r.rho_eval = cfg.rho0;
  r.F_star = q.penalty(penalty_minimizer(q, r.rho_eval), r.rho_eval);
  r.F_gap_per_k.push_back(q.penalty(theta0, r.rho_eval) - r.F_star);

  // The check wants all K iterates, so early stopping is off.
  OfmuConfig run_cfg = cfg;
  run_cfg.stationarity_tol = 0.0;
  FixedContextBuilder builder(q.context());
  run_ofmu(builder, ParameterVector(theta0), run_cfg,
           [&](std::size_t, const ParameterVector&, const ParameterVector& next) {
             r.F_gap_per_k.push_back(q.penalty(next.values(), r.rho_eval) - r.F_star);
           });
  judge_lemma3(r);
  return r;
}

inline nlohmann::json to_json(const Lemma3Report& r) {
  return {{"rho_eval", r.rho_eval},
          {"F_star", r.F_star},
          {"F_gap_per_k", r.F_gap_per_k},
          {"max_late_increase", r.max_late_increase},
          {"pass", r.pass}};
}

// ---------------------------------------------------------------------------
// Non-convex sibling
// ---------------------------------------------------------------------------

/// sign * (1/2 (theta - c)^T A (theta - c) + amp * sum_i cos(omega * theta_i)).
/// Non-convex once amp * omega^2 exceeds the smallest eigenvalue of A.
struct RippledQuadraticObjective {
  Eigen::MatrixXd A;
  Eigen::VectorXd center;
  double amp = 0.0;
  double omega = 1.0;
  double sign = 1.0;

  double value(const ParameterVector& theta) const {
    const Eigen::VectorXd e = theta.values() - center;
    return sign * (0.5 * e.dot(A * e) + amp * (omega * theta.values().array()).cos().sum());
  }
  ParameterVector gradient(const ParameterVector& theta) const {
    const Eigen::VectorXd e = theta.values() - center;
    const Eigen::VectorXd ripple = -amp * omega * (omega * theta.values().array()).sin().matrix();
    return ParameterVector(sign * (A * e + ripple));
  }
};

struct NonconvexReport {
  /// |grad Phi(theta_in^(k))| per outer iteration.
  std::vector<double> grad_norms;
  /// Running minimum of grad_norms.
  std::vector<double> running_min;
  bool pass = false;
};

/// Qualitative stationarity decrease: the best |grad Phi| over the run is at
/// most half its first value.
inline NonconvexReport check_lemma3_nonconvex(const QuadraticInstance& q, double amp, double omega,
                                              const Eigen::VectorXd& theta0, const OfmuConfig& cfg) {
  q.validate();
  cfg.validate();
  if (theta0.size() != q.dim()) throw contract_violation("theta0 dimension mismatch");
  auto ctx = make_context(RippledQuadraticObjective{q.A_phi, q.b_phi, amp, omega, -1.0},
                          RippledQuadraticObjective{q.A_r, q.b_r, amp, omega, 1.0}, 0.0);
  OfmuConfig run_cfg = cfg;
  run_cfg.stationarity_tol = 0.0;
  FixedContextBuilder builder(std::move(ctx));
  const Trajectory t = run_ofmu(builder, ParameterVector(theta0), run_cfg);
  NonconvexReport r;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : t.records) {
    r.grad_norms.push_back(rec.grad_norm);
    best = std::min(best, rec.grad_norm);
    r.running_min.push_back(best);
  }
  r.pass = !r.grad_norms.empty() && r.running_min.back() <= 0.5 * r.grad_norms.front();
  return r;
}

inline nlohmann::json to_json(const NonconvexReport& r) {
  return {{"grad_norms", r.grad_norms}, {"running_min", r.running_min}, {"pass", r.pass}};
}

// ---------------------------------------------------------------------------
// Canonical instances
// ---------------------------------------------------------------------------

namespace canonical {

inline Eigen::MatrixXd mat2(double a, double b, double c) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, b, c;
  return m;
}

inline Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

/// A_r = A_phi = I, b_r = (1, 0), b_phi = 0: theta*_rho = b_r / (1 + 2 rho).
inline QuadraticInstance identity_pair() {
  return {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2), vec2(1.0, 0.0), vec2(0.0, 0.0)};
}

/// Well-conditioned pair with distinct optima for the stationarity sweep.
inline QuadraticInstance stationarity_pair() {
  return {mat2(1.5, 0.2, 1.0), mat2(2.0, 0.5, 1.5), vec2(1.0, -0.5), vec2(0.2, 0.3)};
}

/// Pair with distinct optima used for the outer convergence shape.
inline QuadraticInstance convergence_pair() {
  return {mat2(2.0, 0.3, 1.0), mat2(1.0, 0.2, 0.5), vec2(1.0, -1.0), vec2(0.0, 0.0)};
}

/// Same matrices as convergence_pair with a shared optimum at b_phi.
inline QuadraticInstance shared_optimum_pair() {
  QuadraticInstance q = convergence_pair();
  q.b_r = q.b_phi;
  return q;
}

/// Fixed penalty, small steps, K = 200, T = 10.
inline OfmuConfig convergence_config() {
  OfmuConfig c;
  c.beta = 0.0;
  c.eta_in = 0.001;
  c.eta_out = 0.01;
  c.inner_steps = 10;
  c.outer_iterations = 200;
  c.rho0 = 1.0;
  c.rho_growth = 1.0;
  c.rho_max = 1.0;
  c.grad_method = GradMethod::first_order_surrogate;
  return c;
}

inline std::vector<double> rho_sweep() { return {1.0, 10.0, 100.0, 1e3, 1e4}; }

}  // namespace canonical

}  // namespace ofmu
