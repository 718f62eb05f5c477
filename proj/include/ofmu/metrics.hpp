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

// Evaluation suite: accuracies, confidence-threshold membership inference,
// the unlearning difficulty index, Spearman rank correlation and the
// max-normalized overall score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ofmu/objectives.hpp"

namespace ofmu {

/// argmax of each row; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// Fraction of samples whose argmax prediction equals the label.
inline double accuracy(const DifferentiableProblem& problem, const ParameterVector& theta, const LabeledBatch& data) {
  if (data.empty()) throw std::invalid_argument("accuracy of an empty dataset");
  const auto pred = argmax_rows(predict_logits(problem, theta, data));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels()[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// UA is reported as 1 - forget-set accuracy.
inline double unlearning_accuracy(const DifferentiableProblem& problem, const ParameterVector& theta,
                                  const LabeledBatch& forget) {
  return 1.0 - accuracy(problem, theta, forget);
}

/// Max softmax probability per sample.
inline std::vector<double> max_confidence(const DifferentiableProblem& problem, const ParameterVector& theta,
                                          const LabeledBatch& data) {
  const Eigen::MatrixXd p = predict_proba(problem, theta, data);
  std::vector<double> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = p.row(i).maxCoeff();
  return out;
}

// ============================================================================
// Membership inference
// ============================================================================

/// Predicts "member" iff confidence >= threshold.
struct ThresholdAttack {
  double threshold = 0.0;
  /// Balanced accuracy on the training data.
  double balanced_accuracy = 0.5;
  /// Every training confidence was identical.
  bool degenerate = false;

  bool is_member(double confidence) const { return confidence >= threshold; }
};

/// Picks the threshold maximizing balanced accuracy over candidates = every
/// training confidence plus +inf; ties go to the lower threshold.
inline ThresholdAttack fit_threshold_attack(std::span<const double> members, std::span<const double> nonmembers) {
  if (members.empty() || nonmembers.empty()) throw std::invalid_argument("attack needs both classes");
  struct Point {
    double value;
    bool member;
  };
  std::vector<Point> pts;
  pts.reserve(members.size() + nonmembers.size());
  for (double v : members) pts.push_back({v, true});
  for (double v : nonmembers) pts.push_back({v, false});
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.value < b.value; });

  const double nm = static_cast<double>(members.size());
  const double nn = static_cast<double>(nonmembers.size());
  // Sweep ascending; before position i all points have value < pts[i].value.
  std::size_t members_below = 0, nonmembers_below = 0;
  ThresholdAttack best{std::numeric_limits<double>::infinity(), 0.5, pts.front().value == pts.back().value};
  double best_score = -1.0;
  for (std::size_t i = 0; i <= pts.size(); ++i) {
    if (i == pts.size() || i == 0 || pts[i].value != pts[i - 1].value) {
      const double t = i == pts.size() ? std::numeric_limits<double>::infinity() : pts[i].value;
      const double tpr = (nm - static_cast<double>(members_below)) / nm;
      const double tnr = static_cast<double>(nonmembers_below) / nn;
      const double ba = 0.5 * (tpr + tnr);
      if (ba > best_score) {
        best_score = ba;
        best.threshold = t;
        best.balanced_accuracy = ba;
      }
    }
    if (i < pts.size()) (pts[i].member ? members_below : nonmembers_below) += 1;
  }
  return best;
}

/// TN / |D_f| for an attack trained on member/non-member confidences. With a
/// degenerate training set (all confidences equal to c) the attack carries no
/// information and the result is 0.5 * (fraction of forget confidences < c).
inline double mia_efficacy_from_confidences(std::span<const double> members, std::span<const double> nonmembers,
                                            std::span<const double> forget) {
  if (forget.empty()) throw std::invalid_argument("mia_efficacy: empty forget set");
  const ThresholdAttack attack = fit_threshold_attack(members, nonmembers);
  std::size_t tn = 0;
  for (double c : forget) tn += attack.is_member(c) ? 0 : 1;
  const double frac = static_cast<double>(tn) / static_cast<double>(forget.size());
  return attack.degenerate ? 0.5 * frac : frac;
}

/// Confidence-based membership inference efficacy. Retain samples are
/// members and held-out samples non-members; the larger of the two is
/// downsampled (seeded) so the attack trains on a balanced set.
inline double mia_efficacy(const DifferentiableProblem& problem, const ParameterVector& theta_u,
                           const LabeledBatch& retain, const LabeledBatch& heldout, const LabeledBatch& forget,
                           std::uint64_t seed) {
  if (retain.size() < 2 || heldout.size() < 2) throw std::invalid_argument("mia_efficacy needs >= 2 samples per side");
  if (forget.empty()) throw std::invalid_argument("mia_efficacy: empty forget set");
  auto members = max_confidence(problem, theta_u, retain);
  auto nonmembers = max_confidence(problem, theta_u, heldout);
  auto downsample = [&](std::vector<double>& v, std::size_t m) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    std::vector<double> out;
    out.reserve(m);
    for (std::size_t i : idx) out.push_back(v[i]);
    v = std::move(out);
  };
  if (members.size() > nonmembers.size()) downsample(members, nonmembers.size());
  if (nonmembers.size() > members.size()) downsample(nonmembers, members.size());
  const auto forget_conf = max_confidence(problem, theta_u, forget);
  return mia_efficacy_from_confidences(members, nonmembers, forget_conf);
}

// ============================================================================
// Unlearning difficulty
// ============================================================================

struct UdiConfig {
  double alpha = 1.0;
  double lambda_w = 1.0;
  double gamma = 1.0;
  /// Loss target; defaults to ln(class_count), the uniform-prediction loss.
  std::optional<double> ell_target;

  void validate() const {
    if (!(alpha >= 0.0) || !(lambda_w >= 0.0) || !(gamma >= 0.0)) throw std::invalid_argument("UDI weights must be >= 0");
  }
};

struct UdiComponents {
  double grad_norm = 0.0;   // |grad L_f(x)|
  double similarity = 0.0;  // Sim(grad L_f(x), grad L_r)
  double margin = 0.0;      // max(0, ell_target - loss(x))
};

inline double udi_from_components(const UdiComponents& c, const UdiConfig& cfg) {
  return cfg.alpha * c.grad_norm + cfg.lambda_w * (1.0 - c.similarity) + cfg.gamma * c.margin;
}

inline UdiComponents udi_components(const DifferentiableProblem& problem, const ParameterVector& theta,
                                    const LabeledBatch& x, const LabeledBatch& batch_r, const UdiConfig& cfg) {
  if (x.size() != 1) throw std::invalid_argument("udi expects a single-sample batch");
  const auto [loss_x, g_f] = loss_and_grad(problem, theta, x);
  const ParameterVector g_r = grad(problem, theta, batch_r);
  const double target = cfg.ell_target.value_or(std::log(static_cast<double>(problem.class_count())));
  return {g_f.norm(), cosine_sim(g_f, g_r), std::max(0.0, target - loss_x)};
}

/// alpha |grad L_f(x)| + lambda (1 - Sim) + gamma * margin(x).
inline double udi(const DifferentiableProblem& problem, const ParameterVector& theta, const LabeledBatch& x,
                  const LabeledBatch& batch_r, const UdiConfig& cfg = {}) {
  cfg.validate();
  return udi_from_components(udi_components(problem, theta, x, batch_r, cfg), cfg);
}

// ============================================================================
// Rank correlation
// ============================================================================

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation of average ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least two samples");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw undefined_correlation("spearman: constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ============================================================================
// Overall score
// ============================================================================

/// rows = methods, columns = metrics. Each column is divided by its maximum,
/// then each row is averaged.
inline std::vector<double> overall_score(const std::vector<std::vector<double>>& table) {
  if (table.empty()) throw std::invalid_argument("overall_score: no methods");
  const std::size_t cols = table.front().size();
  if (cols == 0) throw std::invalid_argument("overall_score: no metrics");
  std::vector<double> col_max(cols, 0.0);
  for (const auto& row : table) {
    if (row.size() != cols) throw std::invalid_argument("overall_score: ragged table");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!(row[c] >= 0.0)) throw std::invalid_argument("overall_score: metrics must be non-negative");
      col_max[c] = std::max(col_max[c], row[c]);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (col_max[c] == 0.0) throw std::invalid_argument("overall_score: metric column " + std::to_string(c) + " is all zero");
  }
  std::vector<double> out;
  out.reserve(table.size());
  for (const auto& row : table) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] / col_max[c];
    out.push_back(s / static_cast<double>(cols));
  }
  return out;
}

// ============================================================================
// Report
// ============================================================================

struct MethodMetrics {
  std::string method;
  double ua = 0.0;
  double ra = 0.0;
  double ta = 0.0;
  double mia = 0.0;
  std::optional<double> overall;
};

struct MetricsReport {
  std::vector<MethodMetrics> methods;
  std::vector<double> udi_values;
  std::optional<double> udi_tau;

  /// Fills `overall` from the UA/RA/TA/MIA table. Returns the error message
  /// when the score is undefined (an all-zero column), leaving it unset.
  std::optional<std::string> compute_overall() {
    std::vector<std::vector<double>> table;
    for (const auto& m : methods) table.push_back({m.ua, m.ra, m.ta, m.mia});
    try {
      const auto scores = overall_score(table);
      for (std::size_t i = 0; i < methods.size(); ++i) methods[i].overall = scores[i];
    } catch (const std::invalid_argument& e) {
      for (auto& m : methods) m.overall.reset();
      return std::string(e.what());
    }
    return std::nullopt;
  }
};

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods) {
    methods.push_back({{"method", m.method},
                       {"UA", m.ua},
                       {"RA", m.ra},
                       {"TA", m.ta},
                       {"MIA", m.mia},
                       {"overall", m.overall ? nlohmann::json(*m.overall) : nlohmann::json()}});
  }
  return {{"methods", methods},
          {"udi_values", r.udi_values},
          {"udi_tau", r.udi_tau ? nlohmann::json(*r.udi_tau) : nlohmann::json()}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  for (const auto& m : j.at("methods")) {
    MethodMetrics mm{m.at("method").get<std::string>(), m.at("UA").get<double>(), m.at("RA").get<double>(),
                     m.at("TA").get<double>(), m.at("MIA").get<double>(), std::nullopt};
    if (!m.at("overall").is_null()) mm.overall = m["overall"].get<double>();
    r.methods.push_back(std::move(mm));
  }
  r.udi_values = j.value("udi_values", std::vector<double>{});
  if (j.contains("udi_tau") && !j["udi_tau"].is_null()) r.udi_tau = j["udi_tau"].get<double>();
  return r;
}

/// Columns: method,UA,RA,TA,MIA,overall (empty overall when undefined).
inline void write_metrics_csv(std::ostream& out, const MetricsReport& r) {
  out << "method,UA,RA,TA,MIA,overall\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& m : r.methods) {
    out << m.method << ',' << num(m.ua) << ',' << num(m.ra) << ',' << num(m.ta) << ',' << num(m.mia) << ','
        << (m.overall ? num(*m.overall) : std::string()) << '\n';
  }
}

}  // namespace ofmu
