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

// Finite-query release: influence functions of the second stage, the sample
// gross-error sensitivity over the bounded data domain, and Gaussian noise
// scaled by gamma * c(eps, delta, n).

#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"
#include "dpcate/nuisance.hpp"
#include "dpcate/optimize.hpp"
#include "dpcate/pseudo.hpp"
#include "dpcate/rng.hpp"
#include "dpcate/secondstage.hpp"

namespace dpcate {

// c(eps, delta, n) = 5 sqrt(2 ln(n) ln(2 / delta)) / (eps n).
inline double calibration_c(double eps, double delta, std::size_t n) {
  if (n < 2) throw ArgumentError("calibration_c requires n >= 2");
  if (!(eps > 0.0)) throw ArgumentError("epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("delta must lie in (0, 1)");
  const double nd = static_cast<double>(n);
  return 5.0 * std::sqrt(2.0 * std::log(nd) * std::log(2.0 / delta)) / (eps * nd);
}

// The query-side factor h(g, queries, x) of the influence function together
// with the fitted second stage it belongs to.
class InfluenceMap {
 public:
  virtual ~InfluenceMap() = default;
  virtual Vector h(const Vector& x) const = 0;
  virtual double fitted(const Vector& x) const = 0;
  virtual Eigen::Index num_queries() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual std::size_t n() const = 0;
};

// h(queries, x) = (1/lambda) (K(queries, x) - (1/n) K(queries, X) W u) with
// ((1/n) K W + lambda I) u = K(X, x). Through the symmetric system
// M = S K S + n lambda I, S = W^{1/2}, the second term is Q K(X, x) with
// Q = K(queries, X) S M^{-1} S, precomputed once.
class KrrInfluence : public InfluenceMap {
 public:
  KrrInfluence(const KrrModel& model, const Matrix& queries)
      : model_(&model), queries_(queries) {
    model.check_dim(queries.cols());
    if (queries.rows() < 1) throw ArgumentError("at least one query is required");
    Vector s = model.rho().cwiseSqrt();
    Matrix kxq = model.kernel().matrix(model.train_x(), queries);  // n x d
    Matrix y = model.factor().solve(s.asDiagonal() * kxq);
    q_ = (s.asDiagonal() * y).transpose();
  }

  Vector h(const Vector& x) const override {
    model_->check_dim(x.size());
    const auto& k = model_->kernel();
    Vector kx = k.column(model_->train_x(), x);
    return (k.column(queries_, x) - q_ * kx) / model_->lambda_reg();
  }
  double fitted(const Vector& x) const override { return model_->predict(x); }
  Eigen::Index num_queries() const override { return queries_.rows(); }
  Eigen::Index dim() const override { return model_->q(); }
  std::size_t n() const override { return static_cast<std::size_t>(model_->n()); }

 private:
  const KrrModel* model_;
  Matrix queries_;
  Matrix q_;
};

// h(queries, x) = 2 Psi(queries) H^{-1} psi(x).
class ParametricInfluence : public InfluenceMap {
 public:
  ParametricInfluence(const LinearBasisModel& model, const Matrix& queries) : model_(&model) {
    if (queries.cols() != model.basis.dim())
      throw ArgumentError("query dimension does not match the model");
    if (queries.rows() < 1) throw ArgumentError("at least one query is required");
    Eigen::LLT<Matrix> llt(model.hessian);
    if (llt.info() != Eigen::Success)
      throw NumericError("second-stage Hessian is not positive definite; increase damping");
    Matrix psi_q = model.basis.design(queries);  // d x p
    p_ = 2.0 * llt.solve(psi_q.transpose()).transpose();
  }

  Vector h(const Vector& x) const override {
    if (x.size() != model_->basis.dim()) throw ArgumentError("query dimension mismatch");
    return p_ * model_->basis(x);
  }
  double fitted(const Vector& x) const override { return model_->predict(x); }
  Eigen::Index num_queries() const override { return p_.rows(); }
  Eigen::Index dim() const override { return model_->basis.dim(); }
  std::size_t n() const override { return model_->n; }

 private:
  const LinearBasisModel* model_;
  Matrix p_;
};

// IF(z) = h(queries, x) rho(a, pi(x)) (phi(z) - g(x)).
inline Vector influence_vector(const InfluenceMap& map, const Sample& z,
                               const NuisancePair& eta, LearnerKind kind) {
  if (z.x.size() != map.dim()) throw ArgumentError("sample dimension does not match the model");
  const WeightedTarget t = make_target(kind, z, eta);
  return map.h(z.x) * (t.rho * (t.phi - map.fitted(z.x)));
}

inline Vector influence_vector_krr(const KrrModel& model, const Matrix& queries,
                                   const Sample& z, const NuisancePair& eta, LearnerKind kind) {
  return influence_vector(KrrInfluence(model, queries), z, eta, kind);
}

inline Vector influence_vector_parametric(const LinearBasisModel& model, const Matrix& queries,
                                          const Sample& z, const NuisancePair& eta,
                                          LearnerKind kind) {
  return influence_vector(ParametricInfluence(model, queries), z, eta, kind);
}

struct SensitivityOptions {
  MultistartOptions search;
  double inflation = 1.1;  // applied when the best point of any branch did not converge
};

struct BranchTrace {
  int a = 0;
  double y = 0.0;
  double value = 0.0;
  Vector x;
  bool converged = false;
  int evaluations = 0;
};

struct SensitivityResult {
  double gamma = 0.0;
  double raw_gamma = 0.0;
  bool inflated = false;
  Sample argmax;
  std::vector<BranchTrace> branches;
};

// sup over z = (a, x, y) in {0,1} x X x Y of |IF(z)|_2. The influence is
// affine in y, so each arm only needs the two outcome endpoints.
inline SensitivityResult gross_error_sensitivity(const InfluenceMap& map,
                                                 const std::vector<Interval>& covariate_bounds,
                                                 const Interval& outcome_bounds,
                                                 const NuisancePair& eta, LearnerKind kind,
                                                 const SensitivityOptions& opts = {}) {
  const auto q = static_cast<Eigen::Index>(covariate_bounds.size());
  if (q != map.dim()) throw ArgumentError("domain dimension does not match the model");
  Vector lo(q), hi(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    lo[j] = covariate_bounds[static_cast<std::size_t>(j)].lo;
    hi[j] = covariate_bounds[static_cast<std::size_t>(j)].hi;
  }
  SensitivityResult res;
  bool any_unconverged = false;
  for (int a : {0, 1}) {
    for (double y : {outcome_bounds.lo, outcome_bounds.hi}) {
      Objective f = [&](const Vector& x) {
        return influence_vector(map, Sample{x, a, y}, eta, kind).norm();
      };
      MultistartResult m = maximize_multistart(f, lo, hi, opts.search);
      res.branches.push_back({a, y, m.value, m.x, m.converged, m.evaluations});
      if (!m.converged) any_unconverged = true;
      if (m.value > res.raw_gamma || res.branches.size() == 1) {
        res.raw_gamma = m.value;
        res.argmax = Sample{m.x, a, y};
      }
    }
  }
  res.inflated = any_unconverged;
  res.gamma = any_unconverged ? opts.inflation * res.raw_gamma : res.raw_gamma;
  return res;
}

struct FiniteReleaseReport {
  Matrix queries;
  Vector raw_estimates;
  double gamma = 0.0;
  double c_const = 0.0;
  double noise_scale = 0.0;
  Vector noise;  // the standard-normal draw U
  Vector private_estimates;
  PrivacyBudget budget;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  SensitivityResult sensitivity;
};

// g_DP(queries) = g(queries) + gamma c(eps, delta, n) U. With an infinite
// budget the sensitivity search is skipped and the noise scale is zero. Every
// call draws fresh noise; releasing the same queries again must be charged
// separately by the caller.
inline FiniteReleaseReport release_finite(const InfluenceMap& map, const Matrix& queries,
                                          const NuisancePair& eta, const PrivacyBudget& budget,
                                          const std::vector<Interval>& covariate_bounds,
                                          const Interval& outcome_bounds, LearnerKind kind,
                                          std::uint64_t seed,
                                          const SensitivityOptions& opts = {}) {
  budget.validate();
  if (queries.rows() != map.num_queries()) throw ArgumentError("query count mismatch");
  if (map.n() < 2) throw ArgumentError("release requires n >= 2");
  FiniteReleaseReport r;
  r.queries = queries;
  r.budget = budget;
  r.seed = seed;
  r.n = map.n();
  r.raw_estimates.resize(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i)
    r.raw_estimates[i] = map.fitted(queries.row(i).transpose());
  Rng rng(derive_seed(seed, Stream::kRelease));
  r.noise = rng.normal_vector(queries.rows());
  if (budget.is_infinite()) {
    r.c_const = 0.0;
  } else {
    r.sensitivity =
        gross_error_sensitivity(map, covariate_bounds, outcome_bounds, eta, kind, opts);
    r.gamma = r.sensitivity.gamma;
    r.c_const = calibration_c(budget.epsilon, budget.delta, r.n);
  }
  r.noise_scale = r.gamma * r.c_const;
  r.private_estimates = r.raw_estimates + r.noise_scale * r.noise;
  return r;
}

inline FiniteReleaseReport release_finite(const KrrModel& model, const Matrix& queries,
                                          const NuisancePair& eta, const PrivacyBudget& budget,
                                          const std::vector<Interval>& covariate_bounds,
                                          const Interval& outcome_bounds, LearnerKind kind,
                                          std::uint64_t seed,
                                          const SensitivityOptions& opts = {}) {
  return release_finite(KrrInfluence(model, queries), queries, eta, budget, covariate_bounds,
                        outcome_bounds, kind, seed, opts);
}

inline FiniteReleaseReport release_finite(const LinearBasisModel& model, const Matrix& queries,
                                          const NuisancePair& eta, const PrivacyBudget& budget,
                                          const std::vector<Interval>& covariate_bounds,
                                          const Interval& outcome_bounds, LearnerKind kind,
                                          std::uint64_t seed,
                                          const SensitivityOptions& opts = {}) {
  return release_finite(ParametricInfluence(model, queries), queries, eta, budget,
                        covariate_bounds, outcome_bounds, kind, seed, opts);
}

// Raw estimates are written only in audit mode; publishing them voids the
// privacy guarantee.
inline nlohmann::json finite_report_to_json(const FiniteReleaseReport& r, bool audit) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<std::vector<double>> qs;
  for (Eigen::Index i = 0; i < r.queries.rows(); ++i) qs.push_back(vec(r.queries.row(i)));
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& b : r.sensitivity.branches)
    branches.push_back({{"a", b.a}, {"y", b.y}, {"value", b.value}, {"x", vec(b.x)},
                        {"converged", b.converged}, {"evaluations", b.evaluations}});
  nlohmann::json j = {
      {"format", "dpcate.finite_release.v1"},
      {"queries", qs},
      {"private_estimates", vec(r.private_estimates)},
      {"gamma", r.gamma},
      {"c_const", r.c_const},
      {"noise_scale", r.noise_scale},
      {"budget", r.budget},
      {"seed", r.seed},
      {"n", r.n},
      {"optimizer_trace",
       {{"raw_gamma", r.sensitivity.raw_gamma},
        {"inflated", r.sensitivity.inflated},
        {"branches", branches}}}};
  if (!r.sensitivity.branches.empty())
    j["argmax_z"] = {{"x", vec(r.sensitivity.argmax.x)},
                     {"a", r.sensitivity.argmax.a},
                     {"y", r.sensitivity.argmax.y}};
  if (audit) {
    j["audit"] = true;
    j["raw_estimates"] = vec(r.raw_estimates);
    j["noise"] = vec(r.noise);
  }
  return j;
}

}  // namespace dpcate
