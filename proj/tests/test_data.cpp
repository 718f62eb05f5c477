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

#include <cmath>
#include <sstream>

#include "ofmu/data.hpp"
#include "ofmu/metrics.hpp"

namespace ofmu {
namespace {

std::shared_ptr<const Dataset> shared(Dataset d) { return std::make_shared<const Dataset>(std::move(d)); }

// Index-level scan: disjoint, and together exactly 0..n-1.
void expect_partition(const UnlearnSplit& s, std::size_t n) {
  std::vector<int> hits(n, 0);
  for (auto i : s.retain.indices()) ++hits.at(i);
  for (auto i : s.forget.indices()) ++hits.at(i);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(hits[i], 1) << "index " << i;
  EXPECT_TRUE(std::is_sorted(s.retain.indices().begin(), s.retain.indices().end()));
  EXPECT_TRUE(std::is_sorted(s.forget.indices().begin(), s.forget.indices().end()));
}

// ------------------------------------------------------------------- blobs

TEST(Blobs, SizeAndShape) {
  const auto d = gen_blobs(1, 7, 13, 3, 2.0);
  EXPECT_EQ(d.size(), 91);
  EXPECT_EQ(d.feature_dim(), 3);
  EXPECT_EQ(d.class_count, 7);
  EXPECT_NO_THROW(d.validate());
}

TEST(Blobs, DeterministicInSeed) {
  const auto a = gen_blobs(5, 3, 20, 4, 3.0), b = gen_blobs(5, 3, 20, 4, 3.0), c = gen_blobs(6, 3, 20, 4, 3.0);
  EXPECT_TRUE(a.inputs == b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.inputs == c.inputs);
}

TEST(Blobs, MeansAtLeastSeparationApart) {
  for (auto [k, dim] : {std::pair{10, 2}, {10, 10}, {3, 5}, {4, 1}, {2, 1}}) {
    const auto m = blob_means(k, dim, 10.0);
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) EXPECT_GE((m.row(i) - m.row(j)).norm(), 10.0 - 1e-9) << k << "x" << dim;
    }
  }
}

TEST(Blobs, ArgumentValidation) {
  EXPECT_THROW(gen_blobs(0, 0, 10, 2, 1.0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(0, 2, 0, 2, 1.0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(0, 2, 10, 0, 1.0), std::invalid_argument);
  EXPECT_THROW(gen_blobs(0, 2, 10, 2, 0.0), std::invalid_argument);
}

TEST(Blobs, RegenerateFromProvenanceIsBitExact) {
  const auto d = gen_blobs(42, 4, 15, 3, 6.5);
  const auto r = regenerate(d.provenance);
  EXPECT_TRUE(r.inputs == d.inputs);
  EXPECT_EQ(r.labels, d.labels);
  EXPECT_EQ(r.provenance, d.provenance);
  EXPECT_THROW(regenerate(Provenance{"file", 0, {}}), std::invalid_argument);
}

TEST(Blobs, SeparatedClustersAreLearnable) {
  // Logistic model trained by full-batch gradient descent on one draw, scored
  // on another draw of the same clusters.
  const auto train = gen_blobs(1, 10, 200, 2, 10.0).as_batch();
  const auto test = gen_blobs(2, 10, 200, 2, 10.0).as_batch();
  const auto p = DifferentiableProblem::logistic_regression(2, 10);
  ParameterVector theta = init_parameters(p, 3);
  for (int s = 0; s < 300; ++s) theta = theta - 0.05 * grad(p, theta, train);
  EXPECT_GE(accuracy(p, theta, test), 0.99);
}

TEST(Standardize, TrainStatisticsAppliedToBoth) {
  auto train = gen_blobs(3, 3, 50, 4, 8.0), test = gen_blobs(4, 3, 50, 4, 8.0);
  train.inputs.col(2).setConstant(5.0);
  const Eigen::MatrixXd test_before = test.inputs;
  const Eigen::RowVectorXd mean = train.inputs.colwise().mean();
  const double sd0 = std::sqrt((train.inputs.col(0).array() - mean(0)).square().mean());
  standardize_features(train, test);
  const Eigen::RowVectorXd m = train.inputs.colwise().mean();
  const Eigen::RowVectorXd var = (train.inputs.rowwise() - m).array().square().colwise().mean();
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(m(j), 0.0, 1e-12);
  EXPECT_NEAR(var(0), 1.0, 1e-12);
  EXPECT_NEAR(var(2), 0.0, 1e-24);  // constant column: centered only
  EXPECT_NEAR(test.inputs(0, 0), (test_before(0, 0) - mean(0)) / sd0, 1e-12);
}

// --------------------------------------------------------------- class-wise

TEST(SplitClasswise, SizesAndMembership) {
  const auto data = shared(gen_blobs(0, 10, 20, 2, 3.0));
  const auto one = split_classwise(data, {3});
  EXPECT_EQ(one.forget.size(), 20u);
  EXPECT_EQ(one.retain.size(), 180u);
  const auto two = split_classwise(data, {0, 1});
  EXPECT_EQ(two.forget.size(), 40u);
  for (const auto& s : {one, two}) {
    expect_partition(s, 200);
    for (auto i : s.forget.indices()) EXPECT_TRUE(s.target_classes.contains(data->labels[i]));
    for (auto i : s.retain.indices()) EXPECT_FALSE(s.target_classes.contains(data->labels[i]));
    EXPECT_EQ(s.mode, SplitMode::class_wise);
  }
}

TEST(SplitClasswise, Errors) {
  const auto data = shared(gen_blobs(0, 3, 5, 2, 3.0));
  EXPECT_THROW(split_classwise(data, {}), std::invalid_argument);
  EXPECT_THROW(split_classwise(data, {0, 1, 2}), std::invalid_argument);
  EXPECT_THROW(split_classwise(data, {7}), std::invalid_argument);
}

// ------------------------------------------------------------------- random

TEST(SplitRandom, SizeDeterminismPartition) {
  const auto data = shared(gen_blobs(0, 10, 100, 2, 3.0));
  const auto a = split_random(data, 0.1, 17), b = split_random(data, 0.1, 17), c = split_random(data, 0.1, 18);
  EXPECT_EQ(a.forget.size(), 100u);
  EXPECT_EQ(a.forget.indices(), b.forget.indices());
  EXPECT_NE(a.forget.indices(), c.forget.indices());
  expect_partition(a, 1000);
  EXPECT_EQ(a.mode, SplitMode::random);
}

TEST(SplitRandom, Errors) {
  const auto data = shared(gen_blobs(0, 2, 5, 2, 3.0));
  EXPECT_THROW(split_random(data, 0.0, 0), std::invalid_argument);
  EXPECT_THROW(split_random(data, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(split_random(data, 0.01, 0), std::invalid_argument);  // rounds to 0
  EXPECT_THROW(split_random(data, 0.97, 0), std::invalid_argument);  // rounds to |D|
}

TEST(SplitRandom, InclusionFrequencyIsUniform) {
  const auto data = shared(gen_blobs(0, 4, 25, 2, 3.0));
  const double fraction = 0.3;
  const int seeds = 1000;
  std::vector<int> count(100, 0);
  for (int s = 0; s < seeds; ++s) {
    const auto split = split_random(data, fraction, static_cast<std::uint64_t>(s));
    for (auto i : split.forget.indices()) ++count[i];
  }
  const double sd = std::sqrt(fraction * (1.0 - fraction) / seeds);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(count[i] / double(seeds), fraction, 3.0 * sd + 1e-12) << "index " << i;
}

// ----------------------------------------------------------------- views

TEST(View, GatherAndReadCounter) {
  const auto data = shared(gen_blobs(0, 3, 4, 2, 3.0));
  const auto s = split_classwise(data, {1});
  const auto copy = s.forget;  // shares the counter
  const auto all = s.forget.all();
  EXPECT_EQ(all.size(), 4);
  EXPECT_TRUE(all.inputs().row(0) == data->inputs.row(4));
  EXPECT_EQ(copy.reads(), 4u);
  EXPECT_EQ(s.retain.reads(), 0u);
  const std::vector<std::size_t> pos{2};
  EXPECT_EQ(s.forget.gather(pos).labels()[0], 1);
  EXPECT_EQ(copy.reads(), 5u);
}

// -------------------------------------------------------------------- I/O

TEST(Io, BinaryRoundTripAndLayout) {
  Dataset d;
  d.class_count = 3;
  d.inputs.resize(2, 2);
  d.inputs << 0.5, -1.25, 3.0, 1e-3;
  d.labels = {2, 0};
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  write_dataset_binary(buf, d);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 4 * 4 + 4 * 4 + 2 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "OFMD");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);   // class_count, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);  // feature_dim
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2);  // count
  const auto back = read_dataset_binary(buf);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.class_count, 3);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_EQ(back.inputs(i, j), static_cast<double>(static_cast<float>(d.inputs(i, j))));
  }
}

TEST(Io, BinaryRejectsGarbage) {
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_dataset_binary(bad), std::runtime_error);
  auto d = gen_blobs(0, 2, 3, 2, 1.0);
  std::stringstream buf;
  write_dataset_binary(buf, d);
  std::stringstream truncated(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_ANY_THROW(read_dataset_binary(truncated));
}

TEST(Io, CsvRoundTripIsExact) {
  const auto d = gen_blobs(9, 3, 6, 4, 2.5);
  std::stringstream buf;
  write_dataset_csv(buf, d);
  EXPECT_EQ(buf.str().substr(0, buf.str().find('\n')), "label,x0,x1,x2,x3");
  const auto back = read_dataset_csv(buf, 3);
  EXPECT_TRUE(back.inputs == d.inputs);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Io, CsvInfersClassCountAndRejectsRagged) {
  std::stringstream ok("label,x0\n0,1.5\n4,2.5\n");
  EXPECT_EQ(read_dataset_csv(ok).class_count, 5);
  std::stringstream ragged("1,2,3\n0,1\n");
  EXPECT_THROW(read_dataset_csv(ragged), std::runtime_error);
}

}  // namespace
}  // namespace ofmu
