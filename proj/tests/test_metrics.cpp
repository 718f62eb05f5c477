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

#include <gtest/gtest.h>

#include <sstream>

#include "ofmu/data.hpp"
#include "ofmu/metrics.hpp"
#include "support.hpp"

namespace ofmu {
namespace {

using testing::random_batch;
using testing::random_vector;

LabeledBatch column(std::vector<double> xs, std::vector<int> labels) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = xs[i];
  return LabeledBatch(std::move(x), std::move(labels));
}

// ---------------------------------------------------------------- accuracy

TEST(Accuracy, CountingExamples) {
  // theta = 0 gives uniform probabilities, so the tie rule predicts class 0.
  const auto p = DifferentiableProblem::logistic_regression(1, 2);
  const ParameterVector zero(Eigen::VectorXd::Zero(p.parameter_dim()));
  EXPECT_EQ(accuracy(p, zero, column({1, 2, 3, 4}, {0, 0, 0, 0})), 1.0);
  EXPECT_EQ(accuracy(p, zero, column({1, 2, 3, 4}, {0, 1, 1, 1})), 0.25);
  EXPECT_EQ(unlearning_accuracy(p, zero, column({1, 2, 3, 4}, {0, 1, 1, 1})), 0.75);
  EXPECT_THROW(accuracy(p, zero, LabeledBatch()), std::invalid_argument);
}

TEST(Accuracy, MatchesRecountOnBlobs) {
  const auto data = gen_blobs(3, 4, 25, 3, 3.0);
  const auto batch = LabeledBatch(data.inputs, data.labels);
  const auto p = DifferentiableProblem::logistic_regression(3, 4);
  const auto theta = init_parameters(p, 5);
  EXPECT_EQ(accuracy(p, theta, batch), testing::accuracy_oracle(p, theta, batch));
}

TEST(Accuracy, UaIsExactComplement) {
  std::mt19937_64 rng(1);
  const auto p = DifferentiableProblem::logistic_regression(2, 3);
  for (int i = 0; i < 20; ++i) {
    const auto b = random_batch(7, 2, 3, rng);
    const auto theta = random_vector(p.parameter_dim(), rng);
    EXPECT_EQ(unlearning_accuracy(p, theta, b) + accuracy(p, theta, b), 1.0);
  }
}

// --------------------------------------------------------------------- MIA

TEST(Mia, SeparableConfidences) {
  const std::vector<double> members{0.99, 0.99, 0.99}, nonmembers{0.51, 0.51}, forget{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(mia_efficacy_from_confidences(members, nonmembers, forget), 1.0);
  EXPECT_EQ(testing::mia_oracle(members, nonmembers, forget), 1.0);
}

TEST(Mia, AllForgetLookLikeMembers) {
  const std::vector<double> members{0.9, 0.95}, nonmembers{0.4, 0.5}, forget{0.97, 0.99};
  EXPECT_EQ(mia_efficacy_from_confidences(members, nonmembers, forget), 0.0);
}

TEST(Mia, DegenerateTrainingSet) {
  const std::vector<double> same{0.7, 0.7, 0.7}, forget{0.2, 0.7, 0.9, 0.1};
  // Threshold 0.7; half of the forget set lies below it.
  EXPECT_EQ(mia_efficacy_from_confidences(same, same, forget), 0.25);
}

TEST(Mia, LowestThresholdAmongTies) {
  // Thresholds 0.2 and 0.9 both reach balanced accuracy 0.75; 0.2 wins.
  const auto attack = fit_threshold_attack(std::vector<double>{0.9, 0.2}, std::vector<double>{0.5, 0.1});
  EXPECT_EQ(attack.threshold, 0.2);
  EXPECT_EQ(attack.balanced_accuracy, 0.75);
  EXPECT_FALSE(attack.degenerate);
}

TEST(Mia, MatchesBruteForceSweep) {
  EXPECT_EQ(testing::metric_oracle_gaps(300, 11).mia, 0.0);
}

TEST(Mia, ModelLevelMatchesConfidenceOracleAndOrderInvariance) {
  std::mt19937_64 rng(2);
  const auto p = DifferentiableProblem::logistic_regression(2, 3);
  const auto theta = random_vector(p.parameter_dim(), rng, 2.0);
  const auto retain = random_batch(10, 2, 3, rng), heldout = random_batch(10, 2, 3, rng),
             forget = random_batch(6, 2, 3, rng);
  const double v = mia_efficacy(p, theta, retain, heldout, forget, 4);
  EXPECT_EQ(v, testing::mia_oracle(max_confidence(p, theta, retain), max_confidence(p, theta, heldout),
                                   max_confidence(p, theta, forget)));
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
  // Reverse the forget set.
  Eigen::MatrixXd rev = forget.inputs().colwise().reverse();
  std::vector<int> labels(forget.labels().rbegin(), forget.labels().rend());
  EXPECT_EQ(mia_efficacy(p, theta, retain, heldout, LabeledBatch(rev, labels), 4), v);
}

TEST(Mia, DownsamplingIsSeeded) {
  std::mt19937_64 rng(3);
  const auto p = DifferentiableProblem::logistic_regression(2, 3);
  const auto theta = random_vector(p.parameter_dim(), rng, 2.0);
  const auto retain = random_batch(20, 2, 3, rng), heldout = random_batch(5, 2, 3, rng),
             forget = random_batch(8, 2, 3, rng);
  EXPECT_EQ(mia_efficacy(p, theta, retain, heldout, forget, 9), mia_efficacy(p, theta, retain, heldout, forget, 9));
}

TEST(Mia, SizeErrors) {
  std::mt19937_64 rng(4);
  const auto p = DifferentiableProblem::logistic_regression(2, 3);
  const auto theta = random_vector(p.parameter_dim(), rng);
  const auto ok = random_batch(4, 2, 3, rng), one = random_batch(1, 2, 3, rng);
  EXPECT_THROW(mia_efficacy(p, theta, one, ok, ok, 0), std::invalid_argument);
  EXPECT_THROW(mia_efficacy(p, theta, ok, one, ok, 0), std::invalid_argument);
  EXPECT_THROW(mia_efficacy(p, theta, ok, ok, LabeledBatch(), 0), std::invalid_argument);
}

// --------------------------------------------------------------------- UDI

TEST(Udi, ComponentArithmetic) {
  EXPECT_EQ(udi_from_components({1.0, 1.0, 0.0}, UdiConfig{}), 1.0);
  EXPECT_EQ(udi_from_components({2.0, 0.0, 0.5}, UdiConfig{}), 3.5);
  EXPECT_EQ(udi_from_components({2.0, 0.3, 0.5}, UdiConfig{0.0, 0.0, 0.0, std::nullopt}), 0.0);
}

TEST(Udi, MonotoneInEachComponent) {
  const UdiConfig cfg{0.5, 2.0, 1.5, std::nullopt};
  const UdiComponents base{1.0, 0.2, 0.3};
  auto bump = base;
  bump.grad_norm += 0.1;
  EXPECT_GT(udi_from_components(bump, cfg), udi_from_components(base, cfg));
  bump = base;
  bump.similarity -= 0.1;
  EXPECT_GT(udi_from_components(bump, cfg), udi_from_components(base, cfg));
  bump = base;
  bump.margin += 0.1;
  EXPECT_GT(udi_from_components(bump, cfg), udi_from_components(base, cfg));
}

TEST(Udi, AgreesWithDirectEvaluation) {
  std::mt19937_64 rng(5);
  const auto p = DifferentiableProblem::logistic_regression(3, 4);
  const auto theta = random_vector(p.parameter_dim(), rng);
  const auto x = random_batch(1, 3, 4, rng), br = random_batch(8, 3, 4, rng);
  const auto gf = grad(p, theta, x);
  const double expected = gf.norm() + (1.0 - cosine_sim(gf, grad(p, theta, br))) +
                          std::max(0.0, std::log(4.0) - eval_loss(p, theta, x));
  EXPECT_NEAR(udi(p, theta, x, br), expected, 1e-14);
  EXPECT_EQ(udi(p, theta, x, br, UdiConfig{0.0, 0.0, 0.0, std::nullopt}), 0.0);
}

TEST(Udi, Errors) {
  std::mt19937_64 rng(6);
  const auto p = DifferentiableProblem::logistic_regression(2, 2);
  const auto theta = random_vector(p.parameter_dim(), rng);
  const auto two = random_batch(2, 2, 2, rng);
  EXPECT_THROW(udi(p, theta, two, two), std::invalid_argument);
  EXPECT_THROW(udi(p, theta, random_batch(1, 2, 2, rng), two, UdiConfig{-1.0, 1.0, 1.0, std::nullopt}),
               std::invalid_argument);
}

// ---------------------------------------------------------------- spearman

TEST(Spearman, Examples) {
  const std::vector<double> up{1, 2, 3, 4}, down{9, 7, 5, 1};
  EXPECT_EQ(spearman(up, up), 1.0);
  EXPECT_EQ(spearman(up, down), -1.0);
  // Ranks (1, 2.5, 2.5, 4) and (1, 3, 2, 4): sxy = 4.5, sxx = 4.5, syy = 5.
  const std::vector<double> xs{1, 2, 2, 3}, ys{1, 3, 2, 4};
  EXPECT_NEAR(spearman(xs, ys), 4.5 / std::sqrt(4.5 * 5.0), 1e-15);
  EXPECT_EQ(spearman(xs, ys), testing::spearman_oracle(xs, ys));
}

TEST(Spearman, MatchesRankOracle) {
  EXPECT_EQ(testing::metric_oracle_gaps(300, 12).spearman, 0.0);
}

TEST(Spearman, MonotoneTransformInvariance) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> xs, ys, ex;
    for (int j = 0; j < 12; ++j) {
      xs.push_back(std::normal_distribution<double>()(rng));
      ys.push_back(std::normal_distribution<double>()(rng));
      ex.push_back(std::exp(xs.back()));
    }
    EXPECT_EQ(spearman(xs, ys), spearman(ex, ys));
    EXPECT_EQ(spearman(xs, xs), 1.0);
  }
}

TEST(Spearman, Errors) {
  const std::vector<double> flat{2, 2, 2}, up{1, 2, 3};
  EXPECT_THROW(spearman(flat, up), undefined_correlation);
  EXPECT_THROW(spearman(up, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

// ----------------------------------------------------------- overall score

TEST(Overall, HandNormalizedTables) {
  EXPECT_EQ(overall_score({{0.3, 0.7, 0.2}}), std::vector<double>{1.0});
  EXPECT_EQ(overall_score({{0.5, 1.0}, {1.0, 0.5}}), (std::vector<double>{0.75, 0.75}));
  // Column maxima (0.8, 0.4, 1.0).
  const auto s = overall_score({{0.8, 0.1, 0.5}, {0.4, 0.4, 1.0}, {0.2, 0.2, 0.25}});
  EXPECT_EQ(s[0], (0.8 / 0.8 + 0.1 / 0.4 + 0.5 / 1.0) / 3.0);
  EXPECT_EQ(s[1], (0.4 / 0.8 + 0.4 / 0.4 + 1.0 / 1.0) / 3.0);
  EXPECT_EQ(s[2], (0.2 / 0.8 + 0.2 / 0.4 + 0.25 / 1.0) / 3.0);
}

TEST(Overall, MatchesOracleOnRandomTables) { EXPECT_EQ(testing::metric_oracle_gaps(300, 13).overall, 0.0); }

TEST(Overall, ColumnScalingInvariance) {
  const std::vector<std::vector<double>> t{{0.8, 0.1, 0.5}, {0.4, 0.4, 1.0}};
  auto scaled = t;
  for (auto& row : scaled) row[1] *= 8.0;  // power of two keeps the quotients exact
  EXPECT_EQ(overall_score(t), overall_score(scaled));
}

TEST(Overall, Errors) {
  EXPECT_THROW(overall_score({}), std::invalid_argument);
  EXPECT_THROW(overall_score({{0.0, 1.0}, {0.0, 0.5}}), std::invalid_argument);
  EXPECT_THROW(overall_score({{0.1, 1.0}, {0.5}}), std::invalid_argument);
  EXPECT_THROW(overall_score({{-0.1, 1.0}}), std::invalid_argument);
}

// ------------------------------------------------------------------ report

TEST(Report, JsonRoundTripAndCsv) {
  MetricsReport r;
  r.methods = {{"ofmu", 0.9, 0.95, 0.93, 0.8, std::nullopt}, {"grad-ascent", 1.0, 0.4, 0.35, 0.9, std::nullopt}};
  r.udi_values = {1.5, 2.25};
  r.udi_tau = 0.5;
  EXPECT_FALSE(r.compute_overall().has_value());
  const auto back = metrics_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  std::ostringstream csv;
  write_metrics_csv(csv, r);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "method,UA,RA,TA,MIA,overall");
  EXPECT_NE(csv.str().find("ofmu,0.900000,0.950000,0.930000,0.800000,"), std::string::npos);
}

TEST(Report, AllZeroColumnLeavesOverallUnset) {
  MetricsReport r;
  r.methods = {{"a", 0.0, 0.5, 0.5, 0.5, std::nullopt}, {"b", 0.0, 0.6, 0.4, 0.2, std::nullopt}};
  EXPECT_TRUE(r.compute_overall().has_value());
  EXPECT_FALSE(r.methods[0].overall.has_value());
  EXPECT_TRUE(to_json(r)["methods"][0]["overall"].is_null());
}

}  // namespace
}  // namespace ofmu
