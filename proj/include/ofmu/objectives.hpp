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

// The unlearning objective stack:
//
//   Sim(g_f, g_r) = <g_f, g_r> / (|g_f| |g_r|)
//   Phi(theta)    = L_f(theta) - beta * Sim(grad L_f, grad L_r)
//   F(theta)      = L_r(theta) + rho * |grad Phi(theta)|^2
//   grad F        = grad L_r + 2 rho * Hess(Phi) grad(Phi)
//
// Phi contains first derivatives, so grad Phi is obtained by finite
// differences (GradMethod) and the Hessian product in grad F by a directional
// difference of whichever grad Phi is selected.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <utility>

#include "ofmu/diffcore.hpp"

namespace ofmu {

/// Anything exposing a scalar value and its gradient over parameter vectors.
template <class O>
concept objective = requires(const O& o, const ParameterVector& theta) {
  { o.value(theta) } -> std::convertible_to<double>;
  { o.gradient(theta) } -> std::convertible_to<ParameterVector>;
};

/// Mean loss of a problem on one frozen batch.
struct BatchObjective {
  DifferentiableProblem problem;
  LabeledBatch batch;

  double value(const ParameterVector& theta) const { return eval_loss(problem, theta, batch); }
  ParameterVector gradient(const ParameterVector& theta) const { return grad(problem, theta, batch); }
};

/// sign * 0.5 * (theta - center)^T A (theta - center). A is assumed symmetric.
struct QuadraticObjective {
  Eigen::MatrixXd A;
  Eigen::VectorXd center;
  double sign = 1.0;

  double value(const ParameterVector& theta) const {
    const Eigen::VectorXd e = theta.values() - center;
    return sign * 0.5 * e.dot(A * e);
  }
  ParameterVector gradient(const ParameterVector& theta) const {
    return ParameterVector(sign * (A * (theta.values() - center)));
  }
};

enum class GradMethod {
  /// Central differences of the whole Phi scalar.
  fd_exact,
  /// Analytic grad L_f minus beta times central differences of Sim only.
  first_order_surrogate,
};

inline std::string to_string(GradMethod m) {
  return m == GradMethod::fd_exact ? "fd-exact" : "first-order-surrogate";
}

inline constexpr double kDefaultSimFloor = 1e-10;

/// Forget and retain objectives on frozen data, plus the decorrelation weight.
template <objective Forget, objective Retain>
struct ObjectiveContext {
  Forget forget;
  Retain retain;
  double beta = 0.0;
  double sim_floor = kDefaultSimFloor;
};

template <objective Forget, objective Retain>
ObjectiveContext<Forget, Retain> make_context(Forget forget, Retain retain, double beta,
                                              double sim_floor = kDefaultSimFloor) {
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  if (!(sim_floor > 0.0)) throw std::invalid_argument("sim_floor must be positive");
  return {std::move(forget), std::move(retain), beta, sim_floor};
}

using BatchContext = ObjectiveContext<BatchObjective, BatchObjective>;

inline BatchContext make_batch_context(const DifferentiableProblem& problem, LabeledBatch batch_f,
                                       LabeledBatch batch_r, double beta, double sim_floor = kDefaultSimFloor) {
  return make_context(BatchObjective{problem, std::move(batch_f)}, BatchObjective{problem, std::move(batch_r)},
                      beta, sim_floor);
}

/// Cosine similarity clamped to [-1, 1]; 0 when either norm is below floor.
inline double cosine_sim(const ParameterVector& g1, const ParameterVector& g2, double floor = kDefaultSimFloor) {
  if (g1.dim() != g2.dim()) throw contract_violation("cosine_sim dimension mismatch");
  const double n1 = g1.values().stableNorm();
  const double n2 = g2.values().stableNorm();
  if (n1 < floor || n2 < floor) return 0.0;
  // Normalize first so huge gradients cannot overflow the product of norms.
  return std::clamp((g1.values() / n1).dot(g2.values() / n2), -1.0, 1.0);
}

/// Sim(grad L_f, grad L_r) on the context's batches.
template <class Ctx>
double similarity(const Ctx& ctx, const ParameterVector& theta) {
  return cosine_sim(ctx.forget.gradient(theta), ctx.retain.gradient(theta), ctx.sim_floor);
}

/// Phi(theta) = L_f - beta * Sim.
template <class Ctx>
double phi(const Ctx& ctx, const ParameterVector& theta) {
  const double lf = ctx.forget.value(theta);
  if (ctx.beta == 0.0) return lf;
  return lf - ctx.beta * similarity(ctx, theta);
}

template <class Ctx>
ParameterVector grad_phi(const Ctx& ctx, const ParameterVector& theta, GradMethod method = GradMethod::fd_exact) {
  try {
    if (method == GradMethod::fd_exact) {
      return fd_grad([&](const ParameterVector& t) { return phi(ctx, t); }, theta);
    }
    ParameterVector g = ctx.forget.gradient(theta);
    if (ctx.beta == 0.0) return g;
    return g - ctx.beta * fd_grad([&](const ParameterVector& t) { return similarity(ctx, t); }, theta);
  } catch (const divergence_error&) {
    throw;
  } catch (const numerical_failure& e) {
    throw numerical_failure("grad_phi[" + to_string(method) + "]: " + e.what(), e.coordinate());
  }
}

/// F(theta; rho) = L_r + rho * |grad Phi|^2.
template <class Ctx>
double penalty_objective(const Ctx& ctx, const ParameterVector& theta, double rho,
                         GradMethod method = GradMethod::fd_exact) {
  if (!(rho >= 0.0)) throw std::invalid_argument("rho must be non-negative");
  const double lr = ctx.retain.value(theta);
  if (rho == 0.0) return lr;
  return lr + rho * grad_phi(ctx, theta, method).squared_norm();
}

/// grad L_r + 2 rho * H_Phi grad Phi. The Hessian term is dropped when
/// |grad Phi| < sim_floor.
template <class Ctx>
ParameterVector grad_penalty_objective(const Ctx& ctx, const ParameterVector& theta, double rho,
                                       GradMethod method = GradMethod::fd_exact) {
  if (!(rho >= 0.0)) throw std::invalid_argument("rho must be non-negative");
  ParameterVector g = ctx.retain.gradient(theta);
  if (rho == 0.0) return g;
  const ParameterVector gphi = grad_phi(ctx, theta, method);
  if (gphi.norm() < ctx.sim_floor) return g;
  const auto grad_fn = [&](const ParameterVector& t) { return grad_phi(ctx, t, method); };
  return g + (2.0 * rho) * hvp(grad_fn, theta, gphi);
}

}  // namespace ofmu
