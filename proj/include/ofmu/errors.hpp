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

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ofmu {

/// Caller broke an API contract (shape or dimension mismatch).
class contract_violation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A computation produced a non-finite value. `coordinate` is set when the
/// failure happened while probing one parameter coordinate.
class numerical_failure : public std::runtime_error {
 public:
  explicit numerical_failure(const std::string& what,
                             std::optional<std::size_t> coordinate = std::nullopt)
      : std::runtime_error(what), coordinate_(coordinate) {}

  std::optional<std::size_t> coordinate() const noexcept { return coordinate_; }

 private:
  std::optional<std::size_t> coordinate_;
};

/// An iterate left the finite/bounded region. `step` is the index of the
/// offending update inside the loop that raised it.
class divergence_error : public numerical_failure {
 public:
  divergence_error(const std::string& what, std::size_t step)
      : numerical_failure(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Rank correlation requested on a sequence with zero rank variance.
class undefined_correlation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A lemma check was asked to run outside the lemma's hypotheses.
class precondition_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace ofmu
