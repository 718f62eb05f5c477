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

// Two-loop penalty-based unlearning:
//
//   for k in [0, K):
//     theta' <- theta
//     repeat T times: sample (B_f, B_r); theta' += eta_in * grad Phi(theta')
//     sample B_r'; theta <- theta' - eta_out * grad F(theta'; rho_k)
//     rho_{k+1} = min(rho0 * growth^(k+1), rho_max)
//
// Objectives come from a context builder, so the same loops drive both
// mini-batched model problems and closed-form quadratic instances.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ofmu/data.hpp"
#include "ofmu/objectives.hpp"
#include "ofmu/trajectory.hpp"

namespace ofmu {

/// Step sizes and K are tuned for the class-wise blobs fixture (10-d
/// standardized features, tanh MLP with 16 hidden units). Cross-entropy
/// ascent has no maximizer, so K acts as the forgetting budget.
struct OfmuConfig {
  double beta = 0.1;
  double eta_in = 0.08;
  double eta_out = 0.048;
  int inner_steps = 5;  // T
  int outer_iterations = 8;  // K
  int batch_size = 64;  // B
  double rho0 = 0.1;
  double rho_growth = 1.5;
  double rho_max = 10.0;
  /// Stop once |grad Phi(theta_in)| <= tol; 0 disables the early stop.
  double stationarity_tol = 1e-4;
  GradMethod grad_method = GradMethod::fd_exact;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    // Zero step sizes are accepted: they turn a loop into a no-op, which the
    // negative controls rely on.
    if (!(eta_in >= 0.0) || !(eta_out >= 0.0)) throw std::invalid_argument("step sizes must be >= 0");
    if (inner_steps < 1 || outer_iterations < 1 || batch_size < 1) {
      throw std::invalid_argument("T, K and B must be >= 1");
    }
    if (!(rho0 > 0.0)) throw std::invalid_argument("rho0 must be > 0");
    if (!(rho_growth >= 1.0)) throw std::invalid_argument("rho_growth must be >= 1");
    if (!(rho_max >= rho0)) throw std::invalid_argument("rho_max must be >= rho0");
    if (!(stationarity_tol >= 0.0)) throw std::invalid_argument("stationarity_tol must be >= 0");
  }
};

/// Iterates beyond this magnitude count as divergence.
inline constexpr double kDivergenceBound = 1e8;

/// min(rho0 * rho_growth^k, rho_max).
inline double penalty_schedule(const OfmuConfig& cfg, std::size_t k) {
  return std::min(cfg.rho0 * std::pow(cfg.rho_growth, static_cast<double>(k)), cfg.rho_max);
}

/// SplitMix64 finalizer applied to (seed, stream): independent streams from
/// one run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Independent mini-batch streams over the forget and retain sets. Each
/// stream walks a shuffled permutation without replacement and reshuffles when
/// fewer than B unused samples remain. A set with at most B samples is always
/// returned whole.
class MinibatchSampler {
 public:
  MinibatchSampler(DatasetView retain, DatasetView forget, int batch_size, std::uint64_t seed)
      : retain_(std::move(retain), derive_seed(seed, 1)), forget_(std::move(forget), derive_seed(seed, 2)),
        batch_size_(static_cast<std::size_t>(batch_size)) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  }

  LabeledBatch next_forget() { return forget_.next(batch_size_); }
  LabeledBatch next_retain() { return retain_.next(batch_size_); }

 private:
  struct Stream {
    Stream(DatasetView v, std::uint64_t seed) : view(std::move(v)), rng(seed) {}

    LabeledBatch next(std::size_t b) {
      if (view.empty()) throw std::invalid_argument("cannot sample from an empty dataset");
      if (view.size() <= b) return view.all();
      if (order.empty() || cursor + b > order.size()) {
        order.resize(view.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      std::span<const std::size_t> pick(order.data() + cursor, b);
      cursor += b;
      return view.gather(pick);
    }

    DatasetView view;
    std::mt19937_64 rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };

  Stream retain_;
  Stream forget_;
  std::size_t batch_size_;
};

/// Builds contexts from fresh mini-batches: inner() draws (B_f, B_r); outer()
/// keeps the last inner forget batch and draws a fresh retain batch B_r'.
class BatchContextBuilder {
 public:
  using context_type = BatchContext;

  BatchContextBuilder(DifferentiableProblem problem, MinibatchSampler sampler, double beta,
                      double sim_floor = kDefaultSimFloor)
      : problem_(std::move(problem)), sampler_(std::move(sampler)), beta_(beta), sim_floor_(sim_floor) {}

  BatchContext inner() {
    LabeledBatch f = sampler_.next_forget();
    LabeledBatch r = sampler_.next_retain();
    return make_batch_context(problem_, std::move(f), std::move(r), beta_, sim_floor_);
  }

  BatchContext outer(const BatchContext& last_inner) {
    return make_batch_context(problem_, last_inner.forget.batch, sampler_.next_retain(), beta_, sim_floor_);
  }

 private:
  DifferentiableProblem problem_;
  MinibatchSampler sampler_;
  double beta_;
  double sim_floor_;
};

/// Full-batch mode: every step sees the same context.
template <class Ctx>
class FixedContextBuilder {
 public:
  using context_type = Ctx;

  explicit FixedContextBuilder(Ctx ctx) : ctx_(std::move(ctx)) {}

  const Ctx& inner() const { return ctx_; }
  const Ctx& outer(const Ctx&) const { return ctx_; }

 private:
  Ctx ctx_;
};

template <class B>
concept context_builder = requires(B& b, const typename B::context_type& c) {
  { b.inner() } -> std::convertible_to<typename B::context_type>;
  { b.outer(c) } -> std::convertible_to<typename B::context_type>;
};

namespace detail {

inline ParameterVector guarded_step(const ParameterVector& theta, double scale, const ParameterVector& direction,
                                    std::size_t step, const char* where) {
  Eigen::VectorXd next = theta.values() + scale * direction.values();
  if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kDivergenceBound) {
    throw divergence_error(std::string(where) + " step " + std::to_string(step) + " left the bounded region",
                           step);
  }
  return ParameterVector(std::move(next));
}

}  // namespace detail

template <class Ctx>
struct InnerResult {
  ParameterVector theta;
  Ctx last_context;
  std::vector<double> grad_norms;
};

/// T gradient-ascent steps on Phi, each on freshly built context.
template <context_builder Builder>
InnerResult<typename Builder::context_type> inner_loop(Builder& builder, const ParameterVector& theta,
                                                       const OfmuConfig& cfg) {
  using Ctx = typename Builder::context_type;
  ParameterVector current = theta;
  std::vector<double> norms;
  norms.reserve(static_cast<std::size_t>(cfg.inner_steps));
  std::optional<Ctx> ctx;
  for (int t = 0; t < cfg.inner_steps; ++t) {
    ctx.emplace(builder.inner());
    ParameterVector g;
    try {
      g = grad_phi(*ctx, current, cfg.grad_method);
    } catch (const numerical_failure& e) {
      throw divergence_error(std::string("inner step ") + std::to_string(t) + ": " + e.what(),
                             static_cast<std::size_t>(t));
    }
    norms.push_back(g.norm());
    current = detail::guarded_step(current, cfg.eta_in, g, static_cast<std::size_t>(t), "inner");
  }
  return {std::move(current), std::move(*ctx), std::move(norms)};
}

/// One descent step on F(.; rho_k) from theta_in using builder.outer().
template <context_builder Builder>
ParameterVector outer_step(Builder& builder, const ParameterVector& theta_in, double rho_k, const OfmuConfig& cfg,
                           const typename Builder::context_type& last_inner, std::size_t k = 0) {
  const auto ctx = builder.outer(last_inner);
  ParameterVector g;
  try {
    g = grad_penalty_objective(ctx, theta_in, rho_k, cfg.grad_method);
  } catch (const numerical_failure& e) {
    throw divergence_error(std::string("outer step ") + std::to_string(k) + ": " + e.what(), k);
  }
  return detail::guarded_step(theta_in, -cfg.eta_out, g, k, "outer");
}

/// Default iterate observer.
struct NoObserver {
  void operator()(std::size_t, const ParameterVector&, const ParameterVector&) const noexcept {}
};

/// Runs up to K outer iterations. An iteration whose |grad Phi(theta_in)| is
/// at most stationarity_tol still takes its outer step, then the run stops.
/// `observe(k, theta_in, theta_next)` is called after every outer step.
template <context_builder Builder, class Observer = NoObserver>
Trajectory run_ofmu(Builder& builder, const ParameterVector& theta0, const OfmuConfig& cfg,
                    Observer&& observe = {}) {
  cfg.validate();
  Trajectory traj;
  traj.method = "ofmu";
  traj.final_theta = theta0;
  ParameterVector theta = theta0;
  const auto start = std::chrono::steady_clock::now();
  try {
    for (int k = 0; k < cfg.outer_iterations; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double rho = penalty_schedule(cfg, ku);
      auto inner = inner_loop(builder, theta, cfg);

      TrajectoryRecord rec;
      rec.k = ku;
      rec.rho = rho;
      try {
        const auto& ctx = inner.last_context;
        rec.grad_norm = grad_phi(ctx, inner.theta, cfg.grad_method).norm();
        rec.retain_loss = ctx.retain.value(inner.theta);
        rec.forget_loss = ctx.forget.value(inner.theta);
        rec.similarity = similarity(ctx, inner.theta);
      } catch (const numerical_failure& e) {
        throw divergence_error(std::string("stationarity check: ") + e.what(), ku);
      }
      rec.inner_grad_norms = std::move(inner.grad_norms);

      theta = outer_step(builder, inner.theta, rho, cfg, inner.last_context, ku);
      observe(ku, inner.theta, theta);
      rec.wall_ms = elapsed_ms(start);
      const bool stationary = cfg.stationarity_tol > 0.0 && rec.grad_norm <= cfg.stationarity_tol;
      traj.records.push_back(std::move(rec));
      traj.final_theta = theta;
      if (stationary) {
        traj.termination = Termination::stationarity;
        break;
      }
    }
  } catch (const divergence_error& e) {
    throw run_diverged(e, std::move(traj));
  }
  return traj;
}

/// Mini-batched run on a retain/forget split.
inline Trajectory run_ofmu(const DifferentiableProblem& problem, const UnlearnSplit& split,
                           const ParameterVector& theta0, const OfmuConfig& cfg) {
  cfg.validate();
  if (split.retain.empty() || split.forget.empty()) throw std::invalid_argument("split has an empty side");
  if (theta0.dim() != problem.parameter_dim()) throw contract_violation("theta0 dimension mismatch");
  BatchContextBuilder builder(problem, MinibatchSampler(split.retain, split.forget, cfg.batch_size, cfg.seed),
                              cfg.beta);
  return run_ofmu(builder, theta0, cfg);
}

}  // namespace ofmu
