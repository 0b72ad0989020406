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

// Neyman-orthogonal weights and pseudo-outcomes for the R- and DR-learners.
//
// For a weight function lambda(pi) the orthogonal risk is
//   (1/n) sum rho(A, pi(X)) (phi(Z, eta, lambda(pi(X))) - g(X))^2
// with
//   rho(a, pi)  = (a - pi) lambda'(pi) + lambda(pi)
//   phi(z, eta) = lambda(pi) / rho(a, pi) * (a - pi) / (pi (1 - pi))
//                 * (y - mu(x, a)) + mu(x, 1) - mu(x, 0).
// R:  lambda = pi (1 - pi), lambda' = 1 - 2 pi, rho = (a - pi)^2.
// DR: lambda = 1, lambda' = 0, rho = 1.

#pragma once

#include <string>
#include <vector>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"
#include "dpcate/nuisance.hpp"

namespace dpcate {

enum class LearnerKind { kR, kDR };

inline std::string to_string(LearnerKind k) { return k == LearnerKind::kR ? "R" : "DR"; }

inline LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "R" || s == "r") return LearnerKind::kR;
  if (s == "DR" || s == "dr") return LearnerKind::kDR;
  throw ArgumentError("unknown learner kind '" + s + "'");
}

struct WeightedTarget {
  Vector x;
  double rho = 1.0;
  double phi = 0.0;
};

inline double weight_lambda(LearnerKind k, double pi) {
  return k == LearnerKind::kR ? pi * (1.0 - pi) : 1.0;
}

inline double weight_lambda_derivative(LearnerKind k, double pi) {
  return k == LearnerKind::kR ? 1.0 - 2.0 * pi : 0.0;
}

namespace pseudo_detail {

inline void check_propensity(double pi, double kappa) {
  // Small slack so that values clipped exactly to kappa pass after rounding.
  constexpr double kSlack = 1e-12;
  if (!(pi >= kappa - kSlack && pi <= 1.0 - kappa + kSlack))
    throw ArgumentError("propensity " + std::to_string(pi) + " outside [kappa, 1 - kappa]");
}

inline void check_treatment(int a) {
  if (a != 0 && a != 1) throw DomainError("treatment must be 0 or 1");
}

}  // namespace pseudo_detail

inline double rho_weight(LearnerKind kind, int a, double pi, double kappa) {
  pseudo_detail::check_treatment(a);
  pseudo_detail::check_propensity(pi, kappa);
  return (a - pi) * weight_lambda_derivative(kind, pi) + weight_lambda(kind, pi);
}

// Generic quotient form, valid for any weight function with rho != 0.
inline double pseudo_outcome_generic(LearnerKind kind, int a, double pi, double residual,
                                     double mu_diff) {
  const double lam = weight_lambda(kind, pi);
  const double rho = (a - pi) * weight_lambda_derivative(kind, pi) + lam;
  return lam / rho * (a - pi) / (pi * (1.0 - pi)) * residual + mu_diff;
}

// phi from its scalar ingredients: residual = y - mu(x, a),
// mu_diff = mu(x, 1) - mu(x, 0). The R form uses the reduced expression
// residual / (a - pi) + mu_diff.
inline double pseudo_outcome_from_parts(LearnerKind kind, int a, double pi, double residual,
                                        double mu_diff) {
  if (kind == LearnerKind::kR) return residual / (a - pi) + mu_diff;
  return (a - pi) / (pi * (1.0 - pi)) * residual + mu_diff;
}

inline double pseudo_outcome(LearnerKind kind, const Sample& z, const NuisancePair& eta) {
  pseudo_detail::check_treatment(z.a);
  const double pi = eta.pi(z.x);
  pseudo_detail::check_propensity(pi, eta.kappa);
  const double mu0 = eta.mu(z.x, 0);
  const double mu1 = eta.mu(z.x, 1);
  const double residual = z.y - (z.a == 1 ? mu1 : mu0);
  return pseudo_outcome_from_parts(kind, z.a, pi, residual, mu1 - mu0);
}

inline WeightedTarget make_target(LearnerKind kind, const Sample& z, const NuisancePair& eta) {
  const double pi = eta.pi(z.x);
  return {z.x, rho_weight(kind, z.a, pi, eta.kappa), pseudo_outcome(kind, z, eta)};
}

// One target per sample, order preserved.
inline std::vector<WeightedTarget> build_targets(const Dataset& d, const NuisancePair& eta,
                                                 LearnerKind kind) {
  if (d.empty()) throw EmptyDatasetError("build_targets on an empty dataset");
  std::vector<WeightedTarget> out;
  out.reserve(d.size());
  for (const auto& s : d.samples()) out.push_back(make_target(kind, s, eta));
  return out;
}

// Largest rho over {0,1} x [kappa, 1 - kappa]: (1 - kappa)^2 for R, 1 for DR.
inline double sup_rho(LearnerKind kind, double kappa) {
  return kind == LearnerKind::kR ? (1.0 - kappa) * (1.0 - kappa) : 1.0;
}

}  // namespace dpcate
