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
#include <cmath>
#include <bit>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofmu/diffcore.hpp"

namespace ofmu {

/// One outer iteration (OFMU) or one update step (baselines).
struct TrajectoryRecord {
  std::size_t k = 0;
  double rho = 0.0;
  /// |grad Phi(theta_in)| for OFMU; norm of the update direction for baselines.
  double grad_norm = 0.0;
  std::optional<double> retain_loss;
  std::optional<double> forget_loss;
  std::optional<double> similarity;
  /// |grad Phi| at every inner step, on that step's mini-batches.
  std::vector<double> inner_grad_norms;
  double wall_ms = 0.0;
};

enum class Termination { max_iterations, stationarity };

inline std::string to_string(Termination t) {
  return t == Termination::stationarity ? "stationarity" : "max-iterations";
}

struct Trajectory {
  std::string method;
  std::vector<TrajectoryRecord> records;
  ParameterVector final_theta;
  Termination termination = Termination::max_iterations;
};

/// Equality of everything except wall-clock timings.
inline bool same_numerics(const Trajectory& a, const Trajectory& b) {
  if (a.method != b.method || a.termination != b.termination || !(a.final_theta == b.final_theta)) return false;
  if (a.records.size() != b.records.size()) return false;
  const auto eq = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
  const auto eq_opt = [&](const std::optional<double>& x, const std::optional<double>& y) {
    return x.has_value() == y.has_value() && (!x || eq(*x, *y));
  };
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& r = a.records[i];
    const auto& s = b.records[i];
    if (r.k != s.k || !eq(r.rho, s.rho) || !eq(r.grad_norm, s.grad_norm) || !eq_opt(r.retain_loss, s.retain_loss) ||
        !eq_opt(r.forget_loss, s.forget_loss) || !eq_opt(r.similarity, s.similarity) ||
        r.inner_grad_norms.size() != s.inner_grad_norms.size()) {
      return false;
    }
    for (std::size_t j = 0; j < r.inner_grad_norms.size(); ++j) {
      if (!eq(r.inner_grad_norms[j], s.inner_grad_norms[j])) return false;
    }
  }
  return true;
}

/// A run stopped by the divergence guard; carries everything recorded so far.
class run_diverged : public divergence_error {
 public:
  run_diverged(const divergence_error& cause, Trajectory partial)
      : divergence_error(cause.what(), cause.step()), partial_(std::move(partial)) {}

  const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

/// Milliseconds since `start`.
inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// ============================================================================
// JSON-lines serialization
// ============================================================================
//
// One object per record, then a final line {"final": {...}} holding the
// method, termination reason, parameter dimension and checkpoint path.

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline std::optional<double> json_opt(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline nlohmann::json record_to_json(const TrajectoryRecord& r, bool with_timing = true) {
  nlohmann::json j = {{"k", r.k},
                      {"rho", r.rho},
                      {"grad_norm", r.grad_norm},
                      {"retain_loss", detail::opt_json(r.retain_loss)},
                      {"forget_loss", detail::opt_json(r.forget_loss)},
                      {"similarity", detail::opt_json(r.similarity)},
                      {"inner_grad_norms", r.inner_grad_norms}};
  if (with_timing) j["wall_ms"] = r.wall_ms;
  return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::json& j) {
  TrajectoryRecord r;
  r.k = j.at("k").get<std::size_t>();
  r.rho = j.at("rho").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.retain_loss = detail::json_opt(j.at("retain_loss"));
  r.forget_loss = detail::json_opt(j.at("forget_loss"));
  r.similarity = detail::json_opt(j.at("similarity"));
  r.inner_grad_norms = j.at("inner_grad_norms").get<std::vector<double>>();
  r.wall_ms = j.value("wall_ms", 0.0);
  return r;
}

inline void write_trajectory_jsonl(std::ostream& out, const Trajectory& t, const std::string& checkpoint_path = {}) {
  for (const auto& r : t.records) out << record_to_json(r).dump() << '\n';
  nlohmann::json fin = {{"method", t.method},
                        {"termination", to_string(t.termination)},
                        {"dim", t.final_theta.dim()},
                        {"theta_checkpoint", checkpoint_path.empty() ? nlohmann::json() : nlohmann::json(checkpoint_path)}};
  out << nlohmann::json{{"final", fin}}.dump() << '\n';
}

/// Reads records and the final block; final_theta is left empty (it lives in
/// the checkpoint named by the final block).
inline Trajectory read_trajectory_jsonl(std::istream& in, std::string* checkpoint_path = nullptr) {
  Trajectory t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.contains("final")) {
      const auto& f = j["final"];
      t.method = f.at("method").get<std::string>();
      t.termination = f.at("termination").get<std::string>() == "stationarity" ? Termination::stationarity
                                                                               : Termination::max_iterations;
      if (checkpoint_path && !f.at("theta_checkpoint").is_null()) {
        *checkpoint_path = f["theta_checkpoint"].get<std::string>();
      }
    } else {
      t.records.push_back(record_from_json(j));
    }
  }
  return t;
}

}  // namespace ofmu
