//
// Copyright 2026 The dpcate Authors
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
//

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dpcate {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. The CLI maps these onto exit codes, so keep the classes
// distinct even where the payload is just a message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class BudgetRefusal : public Error {
 public:
  using Error::Error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// (epsilon, delta) pair. epsilon == +inf denotes the non-private path.
struct PrivacyBudget {
  double epsilon = 1.0;
  double delta = 0.05;

  bool is_infinite() const { return std::isinf(epsilon); }

  void validate() const {
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
    if (!(delta > 0.0 && delta < 1.0))
      throw ArgumentError("delta must lie in (0, 1)");
  }

  PrivacyBudget halved() const { return {epsilon / 2.0, delta / 2.0}; }
};

inline bool operator==(const PrivacyBudget& a, const PrivacyBudget& b) {
  return a.epsilon == b.epsilon && a.delta == b.delta;
}

// Budget split across the two stages. Stage 1 fits mu and pi on D~, each at
// (eps/2, delta/2), composing sequentially to (eps, delta) on D~. Stage 2 runs
// on the disjoint set D at the full (eps, delta); parallel composition across
// D~ and D gives (eps, delta) overall.
struct BudgetPlan {
  PrivacyBudget total;
  PrivacyBudget stage1_mu;
  PrivacyBudget stage1_pi;
  PrivacyBudget stage2;

  static BudgetPlan from_total(const PrivacyBudget& total) {
    total.validate();
    return {total, total.halved(), total.halved(), total};
  }
};

}  // namespace dpcate
