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

#include <chrono>
#include <cstdint>
#include <string>

#include "ofmu/optimizer.hpp"

namespace ofmu {

enum class BaselineMethod { retrain, finetune, grad_ascent, grad_diff };

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::retrain: return "retrain";
    case BaselineMethod::finetune: return "finetune";
    case BaselineMethod::grad_ascent: return "grad-ascent";
    case BaselineMethod::grad_diff: return "grad-diff";
  }
  return "?";
}

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::finetune;
  double eta = 0.1;
  int steps = 100;
  int batch_size = 64;
  /// Weight of the forget term in grad-diff: minimize L_r - gd_lambda * L_f.
  double gd_lambda = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta >= 0.0)) throw std::invalid_argument("eta must be >= 0");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(gd_lambda >= 0.0)) throw std::invalid_argument("gd_lambda must be >= 0");
  }
};

/// Stream id for the retrain initializer seed.
inline constexpr std::uint64_t kRetrainInitStream = 7;

/// Plain SGD baselines. One record per step; a method records only the
/// losses of the sets it reads (retrain never touches the forget set).
inline Trajectory run_baseline(const DifferentiableProblem& problem, const UnlearnSplit& split,
                               const ParameterVector& theta0, const BaselineConfig& cfg) {
  cfg.validate();
  if (theta0.dim() != problem.parameter_dim()) throw contract_violation("theta0 dimension mismatch");
  const bool uses_retain = cfg.method != BaselineMethod::grad_ascent;
  const bool uses_forget = cfg.method == BaselineMethod::grad_ascent || cfg.method == BaselineMethod::grad_diff;
  if ((uses_retain && split.retain.empty()) || (uses_forget && split.forget.empty())) {
    throw std::invalid_argument("split has an empty side");
  }

  MinibatchSampler sampler(split.retain, split.forget, cfg.batch_size, cfg.seed);
  Trajectory traj;
  traj.method = to_string(cfg.method);
  ParameterVector theta = cfg.method == BaselineMethod::retrain
                              ? init_parameters(problem, derive_seed(cfg.seed, kRetrainInitStream))
                              : theta0;
  traj.final_theta = theta;
  const auto start = std::chrono::steady_clock::now();
  try {
    for (int s = 0; s < cfg.steps; ++s) {
      const auto su = static_cast<std::size_t>(s);
      TrajectoryRecord rec;
      rec.k = su;
      // Descent direction; the update is theta - eta * direction.
      ParameterVector direction;
      try {
        std::optional<std::pair<double, ParameterVector>> retain, forget;
        if (uses_retain) retain = loss_and_grad(problem, theta, sampler.next_retain());
        if (uses_forget) forget = loss_and_grad(problem, theta, sampler.next_forget());
        switch (cfg.method) {
          case BaselineMethod::retrain:
          case BaselineMethod::finetune:
            direction = retain->second;
            break;
          case BaselineMethod::grad_ascent:
            direction = -forget->second;
            break;
          case BaselineMethod::grad_diff:
            direction = retain->second - cfg.gd_lambda * forget->second;
            break;
        }
        if (retain) rec.retain_loss = retain->first;
        if (forget) rec.forget_loss = forget->first;
        if (retain && forget) rec.similarity = cosine_sim(forget->second, retain->second);
      } catch (const numerical_failure& e) {
        throw divergence_error(traj.method + " step " + std::to_string(s) + ": " + e.what(), su);
      }
      rec.grad_norm = direction.norm();
      theta = detail::guarded_step(theta, -cfg.eta, direction, su, traj.method.c_str());
      rec.wall_ms = elapsed_ms(start);
      traj.records.push_back(std::move(rec));
      traj.final_theta = theta;
    }
  } catch (const divergence_error& e) {
    throw run_diverged(e, std::move(traj));
  }
  return traj;
}

}  // namespace ofmu
