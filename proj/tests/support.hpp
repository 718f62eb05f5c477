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

// Shared fixtures for the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "ofmu/metrics.hpp"
#include "ofmu/objectives.hpp"

namespace ofmu::testing {

/// ||a - b|| / max(||b||, floor).
inline double rel_error(const ParameterVector& a, const ParameterVector& b, double floor = 1e-8) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

inline ParameterVector random_vector(Eigen::Index d, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return ParameterVector(std::move(v));
}

inline LabeledBatch random_batch(int rows, int features, int classes, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, classes - 1);
  Eigen::MatrixXd x(rows, features);
  std::vector<int> y;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < features; ++j) x(i, j) = n(rng);
    y.push_back(label(rng));
  }
  return LabeledBatch(std::move(x), std::move(y));
}

/// Random problem from `family` with parameter dimension at most `max_dim`.
inline DifferentiableProblem random_problem(ModelFamily family, std::mt19937_64& rng, Eigen::Index max_dim) {
  std::uniform_int_distribution<int> small(1, 6), classes(2, 5);
  for (;;) {
    DifferentiableProblem p = [&] {
      switch (family) {
        case ModelFamily::linear_regression: return DifferentiableProblem::linear_regression(small(rng), small(rng));
        case ModelFamily::logistic_regression:
          return DifferentiableProblem::logistic_regression(small(rng), classes(rng));
        case ModelFamily::mlp: {
          std::vector<int> w{small(rng)};
          const int hidden = std::uniform_int_distribution<int>(1, 2)(rng);
          for (int h = 0; h < hidden; ++h) w.push_back(small(rng) + 1);
          w.push_back(classes(rng));
          const auto loss =
              std::uniform_int_distribution<int>(0, 1)(rng) ? LossKind::cross_entropy : LossKind::mean_squared_error;
          return DifferentiableProblem::mlp(std::move(w), loss);
        }
      }
      throw std::logic_error("unknown family");
    }();
    if (p.parameter_dim() <= max_dim) return p;
  }
}

/// Max relative error of analytic grad against fd_grad over `draws` random
/// (problem, theta, batch) triples of one family.
inline double worst_grad_error(ModelFamily family, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto p = random_problem(family, rng, 200);
    const auto theta = random_vector(p.parameter_dim(), rng, 0.5);
    const auto batch = random_batch(std::uniform_int_distribution<int>(1, 12)(rng), p.feature_dim(),
                                    p.class_count(), rng);
    const auto analytic = grad(p, theta, batch);
    const auto numeric = fd_grad([&](const ParameterVector& t) { return eval_loss(p, t, batch); }, theta);
    worst = std::max(worst, rel_error(analytic, numeric, 1e-6));
  }
  return worst;
}

/// Max relative error of grad_penalty_objective against fd of
/// penalty_objective over `draws` random contexts with d <= 30.
inline double worst_penalty_grad_error(int draws, std::uint64_t seed, GradMethod method) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto family = std::uniform_int_distribution<int>(0, 1)(rng) ? ModelFamily::logistic_regression
                                                                      : ModelFamily::linear_regression;
    const auto p = random_problem(family, rng, 30);
    const auto theta = random_vector(p.parameter_dim(), rng, 0.5);
    const auto bf = random_batch(6, p.feature_dim(), p.class_count(), rng);
    const auto br = random_batch(6, p.feature_dim(), p.class_count(), rng);
    const double beta = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
    const double rho = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
    const auto ctx = make_batch_context(p, bf, br, beta);
    const auto analytic = grad_penalty_objective(ctx, theta, rho, method);
    const auto numeric =
        fd_grad([&](const ParameterVector& t) { return penalty_objective(ctx, t, rho, method); }, theta, 1e-4);
    worst = std::max(worst, rel_error(analytic, numeric, 1e-6));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles. Deliberately naive: no sorting, no sweeps.

/// Counts rows whose first maximal probability sits at the label.
inline double accuracy_oracle(const DifferentiableProblem& p, const ParameterVector& theta, const LabeledBatch& data) {
  const Eigen::MatrixXd prob = predict_proba(p, theta, data);
  int hits = 0;
  for (Eigen::Index i = 0; i < prob.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index c = 0; c < prob.cols(); ++c) {
      bool first_max = true;
      for (Eigen::Index o = 0; o < prob.cols(); ++o) {
        if (prob(i, o) > prob(i, c) || (prob(i, o) == prob(i, c) && o < c)) first_max = false;
      }
      if (first_max) arg = c;
    }
    if (arg == data.labels()[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(prob.rows());
}

/// Tries every training confidence and +inf as a threshold, keeps the lowest
/// one with maximal balanced accuracy, then counts forget samples below it.
inline double mia_oracle(const std::vector<double>& members, const std::vector<double>& nonmembers,
                         const std::vector<double>& forget) {
  std::vector<double> candidates(members);
  candidates.insert(candidates.end(), nonmembers.begin(), nonmembers.end());
  bool degenerate = true;
  for (double c : candidates) degenerate = degenerate && c == candidates.front();
  candidates.push_back(std::numeric_limits<double>::infinity());
  double best_t = std::numeric_limits<double>::infinity(), best_ba = -1.0;
  for (double t : candidates) {
    double tp = 0, tn = 0;
    for (double m : members) tp += m >= t ? 1 : 0;
    for (double n : nonmembers) tn += n < t ? 1 : 0;
    const double ba = 0.5 * (tp / static_cast<double>(members.size()) + tn / static_cast<double>(nonmembers.size()));
    if (ba > best_ba || (ba == best_ba && t < best_t)) {
      best_ba = ba;
      best_t = t;
    }
  }
  double below = 0;
  for (double f : forget) below += f < best_t ? 1 : 0;
  const double frac = below / static_cast<double>(forget.size());
  return degenerate ? 0.5 * frac : frac;
}

/// Rank of x_i = #{x_j < x_i} + (#{x_j == x_i} + 1) / 2, then Pearson.
inline double spearman_oracle(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r;
    for (double a : v) {
      double less = 0, equal = 0;
      for (double b : v) {
        less += b < a ? 1 : 0;
        equal += b == a ? 1 : 0;
      }
      r.push_back(less + (equal + 1.0) / 2.0);
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Max absolute deviation of each metric from its oracle over `instances`
/// random instances with at most 20 samples each.
struct MetricOracleGaps {
  double accuracy = 0.0;
  double mia = 0.0;
  double spearman = 0.0;
  double overall = 0.0;
};

/// Row mean of each entry divided by its column maximum, column by column.
inline std::vector<double> overall_oracle(const std::vector<std::vector<double>>& table) {
  std::vector<double> out(table.size(), 0.0);
  const std::size_t cols = table.front().size();
  for (std::size_t c = 0; c < cols; ++c) {
    double mx = 0.0;
    for (const auto& row : table) mx = std::max(mx, row[c]);
    for (std::size_t r = 0; r < table.size(); ++r) out[r] += table[r][c] / mx;
  }
  for (auto& v : out) v /= static_cast<double>(cols);
  return out;
}

inline MetricOracleGaps metric_oracle_gaps(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MetricOracleGaps gaps;
  std::uniform_int_distribution<int> size(2, 20);
  // Coarse grid so that ties are frequent.
  std::uniform_int_distribution<int> level(0, 6);
  auto draw = [&](int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(0.4 + 0.1 * level(rng));
    return v;
  };
  for (int i = 0; i < instances; ++i) {
    const auto p = DifferentiableProblem::logistic_regression(3, 4);
    const auto theta = random_vector(p.parameter_dim(), rng, 2.0);
    const auto batch = random_batch(size(rng), 3, 4, rng);
    gaps.accuracy = std::max(gaps.accuracy, std::abs(accuracy(p, theta, batch) - accuracy_oracle(p, theta, batch)));

    const auto m = draw(size(rng)), nm = draw(size(rng)), f = draw(size(rng));
    gaps.mia = std::max(gaps.mia, std::abs(mia_efficacy_from_confidences(m, nm, f) - mia_oracle(m, nm, f)));

    const int n = size(rng);
    auto xs = draw(n), ys = draw(n);
    xs[0] = 0.0;  // never constant
    ys[1] = 0.0;
    gaps.spearman = std::max(gaps.spearman, std::abs(spearman(xs, ys) - spearman_oracle(xs, ys)));

    std::vector<std::vector<double>> table(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 20)(rng)));
    for (auto& row : table) row = draw(4);
    const auto got = overall_score(table), want = overall_oracle(table);
    for (std::size_t r = 0; r < table.size(); ++r) gaps.overall = std::max(gaps.overall, std::abs(got[r] - want[r]));
  }
  return gaps;
}

}  // namespace ofmu::testing
