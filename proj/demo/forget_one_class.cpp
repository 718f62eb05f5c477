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

// Forget class 0 of a 10-class blobs dataset with OFMU and the four
// baselines, then print the metric table.
//
//   ofmu_demo [seed]

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "ofmu/harness.hpp"

int main(int argc, char** argv) {
  using namespace ofmu;
  ExperimentConfig c;
  c.seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;

  const OfmuConfig ofmu_cfg;
  const int matched = ofmu_cfg.outer_iterations * (ofmu_cfg.inner_steps + 1);
  auto baseline = [&](BaselineMethod m, int steps) {
    BaselineConfig b;
    b.method = m;
    b.eta = ofmu_cfg.eta_in;
    b.steps = steps;
    return b;
  };
  BaselineConfig retrain;
  retrain.method = BaselineMethod::retrain;
  c.methods = {{"retrain", retrain},
               {"ofmu", ofmu_cfg},
               {"grad-ascent", baseline(BaselineMethod::grad_ascent, matched)},
               {"grad-diff", baseline(BaselineMethod::grad_diff, matched)},
               {"finetune", baseline(BaselineMethod::finetune, matched)}};

  const RunReport r = run_experiment(c);
  std::printf("base model: %d SGD steps, train accuracy %.3f\n", r.base.steps, r.base.train_accuracy);
  std::printf("%-12s %7s %7s %7s %7s %8s\n", "method", "UA", "RA", "TA", "MIA", "overall");
  for (const auto& m : r.metrics.methods) {
    std::printf("%-12s %7.3f %7.3f %7.3f %7.3f %8s\n", m.method.c_str(), m.ua, m.ra, m.ta, m.mia,
                m.overall ? std::to_string(*m.overall).substr(0, 5).c_str() : "-");
  }
  for (const auto& o : r.outcomes) {
    if (o.error) std::printf("%s diverged: %s\n", o.label.c_str(), o.error->c_str());
  }
  if (r.overall_error) std::printf("overall score undefined: %s\n", r.overall_error->c_str());
  return 0;
}
