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

// Functional release: RKHS sensitivity of the weighted kernel ridge second
// stage, the calibration factor r, and Gaussian-process noise drawn either
// for a batch of queries or one query at a time.

#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"
#include "dpcate/kernel.hpp"
#include "dpcate/nuisance.hpp"
#include "dpcate/optimize.hpp"
#include "dpcate/pseudo.hpp"
#include "dpcate/rng.hpp"
#include "dpcate/secondstage.hpp"

namespace dpcate {

// sup_w * L / (lambda n) * (sqrt(2 pi) h)^{-q}.
inline double rkhs_sensitivity_bound(double sup_w, double lipschitz, double lambda_reg,
                                     std::size_t n, const KernelSpec& kernel) {
  kernel.validate();
  if (!(sup_w > 0.0) || !(lipschitz > 0.0) || !(lambda_reg > 0.0) || n < 1)
    throw ArgumentError("rkhs_sensitivity_bound arguments must be positive");
  return sup_w * lipschitz / (lambda_reg * static_cast<double>(n)) * kernel.self_value();
}

struct FunctionalCalibration {
  double sup_rho = 1.0;
  double lipschitz_L = 1.0;
  double lambda_reg = 1.0;
  std::size_t n = 0;
  KernelSpec kernel;
  PrivacyBudget budget;
  double r_factor = 0.0;
};

// r = sup_rho * 4 L sqrt(2 ln(2/delta)) / ((sqrt(2 pi) h)^q lambda n eps); zero
// for an infinite budget.
inline FunctionalCalibration calibration_r(LearnerKind kind, double kappa, double lipschitz,
                                           double lambda_reg, std::size_t n,
                                           const KernelSpec& kernel,
                                           const PrivacyBudget& budget) {
  kernel.validate();
  budget.validate();
  if (!(lipschitz > 0.0) || !(lambda_reg > 0.0) || n < 1)
    throw ArgumentError("calibration_r arguments must be positive");
  FunctionalCalibration c;
  c.sup_rho = sup_rho(kind, kappa);
  c.lipschitz_L = lipschitz;
  c.lambda_reg = lambda_reg;
  c.n = n;
  c.kernel = kernel;
  c.budget = budget;
  c.r_factor = budget.is_infinite()
                   ? 0.0
                   : c.sup_rho * 4.0 * lipschitz * std::sqrt(2.0 * std::log(2.0 / budget.delta)) *
                         kernel.self_value() /
                         (lambda_reg * static_cast<double>(n) * budget.epsilon);
  return c;
}

inline void to_json(nlohmann::json& j, const FunctionalCalibration& c) {
  j = {{"sup_rho", c.sup_rho}, {"lipschitz_L", c.lipschitz_L}, {"lambda_reg", c.lambda_reg},
       {"n", c.n},         {"kernel", c.kernel},           {"budget", c.budget},
       {"r_factor", c.r_factor}};
}
inline void from_json(const nlohmann::json& j, FunctionalCalibration& c) {
  c.sup_rho = j.at("sup_rho").get<double>();
  c.lipschitz_L = j.at("lipschitz_L").get<double>();
  c.lambda_reg = j.at("lambda_reg").get<double>();
  c.n = j.at("n").get<std::size_t>();
  c.kernel = j.at("kernel").get<KernelSpec>();
  c.budget = j.at("budget").get<PrivacyBudget>();
  c.r_factor = j.at("r_factor").get<double>();
}

struct LipschitzBound {
  double lipschitz = 0.0;
  double sup_abs_phi = 0.0;   // sup |phi| over the domain
  double sup_rho_phi2 = 0.0;  // sup rho phi^2 over the domain
  double sup_abs_g = 0.0;     // bound on |g| for any minimizer
  bool inflated = false;
};

// Lipschitz constant of the squared loss in g over the region the data and
// every minimizer can reach: 2 (sup |phi| + sup |g|). Comparing the objective
// at the minimizer with g = 0 gives lambda |g|_H^2 <= sup rho phi^2, hence
// |g(x)| <= sqrt(K(x,x) sup rho phi^2 / lambda). Both suprema depend only on
// the nuisances and the declared bounds.
inline LipschitzBound squared_loss_lipschitz(const NuisancePair& eta, LearnerKind kind,
                                             const KernelSpec& kernel, double lambda_reg,
                                             const std::vector<Interval>& covariate_bounds,
                                             const Interval& outcome_bounds,
                                             const MultistartOptions& opts = {}) {
  if (!(lambda_reg > 0.0)) throw ArgumentError("lambda_reg must be positive");
  const auto q = static_cast<Eigen::Index>(covariate_bounds.size());
  Vector lo(q), hi(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    lo[j] = covariate_bounds[static_cast<std::size_t>(j)].lo;
    hi[j] = covariate_bounds[static_cast<std::size_t>(j)].hi;
  }
  LipschitzBound b;
  bool unconverged = false;
  // phi is affine in y, so |phi| and rho phi^2 peak at an outcome endpoint.
  for (int a : {0, 1}) {
    for (double y : {outcome_bounds.lo, outcome_bounds.hi}) {
      auto abs_phi = maximize_multistart(
          [&](const Vector& x) { return std::abs(pseudo_outcome(kind, Sample{x, a, y}, eta)); },
          lo, hi, opts);
      auto rho_phi2 = maximize_multistart(
          [&](const Vector& x) {
            const WeightedTarget t = make_target(kind, Sample{x, a, y}, eta);
            return t.rho * t.phi * t.phi;
          },
          lo, hi, opts);
      b.sup_abs_phi = std::max(b.sup_abs_phi, abs_phi.value);
      b.sup_rho_phi2 = std::max(b.sup_rho_phi2, rho_phi2.value);
      unconverged = unconverged || !abs_phi.converged || !rho_phi2.converged;
    }
  }
  if (unconverged) {
    b.sup_abs_phi *= 1.1;
    b.sup_rho_phi2 *= 1.1;
    b.inflated = true;
  }
  b.sup_abs_g = std::sqrt(kernel.self_value() * b.sup_rho_phi2 / lambda_reg);
  b.lipschitz = 2.0 * (b.sup_abs_phi + b.sup_abs_g);
  return b;
}

inline double default_jitter(const KernelSpec& kernel) { return 1e-9 * kernel.self_value(); }

struct GpFactor {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

// Cholesky of K + jitter I, escalating the jitter x10 up to three times.
inline GpFactor gp_factor(const KernelSpec& kernel, const Matrix& points, double jitter) {
  if (points.rows() < 1) throw ArgumentError("at least one point is required");
  Matrix k = kernel.matrix(points, points);
  const double cap = 1e-6 * k.trace() / static_cast<double>(k.rows());
  GpFactor f;
  f.jitter = jitter;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Matrix kj = k;
    kj.diagonal().array() += f.jitter;
    f.llt.compute(kj);
    if (f.llt.info() == Eigen::Success) return f;
    f.jitter = std::min(10.0 * f.jitter, cap);
  }
  throw NumericError("kernel matrix factorization failed after jitter escalation");
}

// U ~ N(0, K(queries) + jitter I). A negative jitter selects the default.
inline Vector sample_gp_batch(const KernelSpec& kernel, const Matrix& queries,
                              std::uint64_t seed, double jitter = -1.0) {
  kernel.validate();
  if (queries.cols() != kernel.dim) throw ArgumentError("query dimension mismatch");
  GpFactor f = gp_factor(kernel, queries, jitter < 0.0 ? default_jitter(kernel) : jitter);
  Rng rng(derive_seed(seed, Stream::kRelease));
  Vector xi = rng.normal_vector(queries.rows());
  return f.llt.matrixL() * xi;
}

inline void check_calibration(const KrrModel& model, const FunctionalCalibration& cal) {
  if (cal.lambda_reg != model.lambda_reg() || cal.n != static_cast<std::size_t>(model.n()) ||
      cal.kernel.bandwidth != model.kernel().bandwidth || cal.kernel.dim != model.kernel().dim)
    throw ArgumentError("calibration does not match the second-stage model");
}

struct FunctionalRelease {
  Matrix queries;
  Vector raw_estimates;
  Vector noise;  // the GP draw U at the queries
  Vector private_estimates;
  double r_factor = 0.0;
  std::uint64_t seed = 0;
};

// g_DP(queries) = g(queries) + r U(queries).
inline FunctionalRelease release_function_batch(const KrrModel& model, const Matrix& queries,
                                                const FunctionalCalibration& cal,
                                                std::uint64_t seed, double jitter = -1.0) {
  check_calibration(model, cal);
  FunctionalRelease r;
  r.queries = queries;
  r.raw_estimates = model.predict(queries);
  r.noise = sample_gp_batch(model.kernel(), queries, seed, jitter);
  r.r_factor = cal.r_factor;
  r.private_estimates = r.raw_estimates + cal.r_factor * r.noise;
  r.seed = seed;
  return r;
}

// How the iterative sampler conditions on history. kNoisePath conditions on
// the realized noise values U(x_i) and returns g(x) + r U(x), matching the
// batch mechanism in distribution. kLiteral conditions on the past private
// outputs and returns the posterior draw itself.
enum class IterativeMode { kNoisePath, kLiteral };

inline std::string to_string(IterativeMode m) {
  return m == IterativeMode::kNoisePath ? "noise_path" : "literal";
}

inline IterativeMode iterative_mode_from_string(const std::string& s) {
  if (s == "noise_path") return IterativeMode::kNoisePath;
  if (s == "literal") return IterativeMode::kLiteral;
  throw ArgumentError("unknown iterative mode '" + s + "'");
}

// Query history for the iterative mechanism. Not thread-safe: one query at a
// time.
class GpNoiseState {
 public:
  static constexpr std::size_t kRefactorEvery = 64;

  struct Conditional {
    Vector weights;  // C^{-1} V over the past queries
    double mean = 0.0;
    double variance = 0.0;  // K(x,x) + jitter - V' C^{-1} V
  };

  GpNoiseState(std::shared_ptr<const KrrModel> model, FunctionalCalibration cal,
               IterativeMode mode = IterativeMode::kNoisePath, double jitter = -1.0)
      : model_(std::move(model)), cal_(std::move(cal)), mode_(mode) {
    if (!model_) throw ArgumentError("model is required");
    check_calibration(*model_, cal_);
    jitter_ = jitter < 0.0 ? default_jitter(model_->kernel()) : jitter;
    chol_.resize(0, 0);
  }

  std::size_t size() const { return queries_.size(); }
  const std::vector<Vector>& past_queries() const { return queries_; }
  // Values the sampler conditions on: noise for kNoisePath, outputs for kLiteral.
  const std::vector<double>& past_values() const { return values_; }
  const std::vector<double>& past_outputs() const { return outputs_; }
  const FunctionalCalibration& calibration() const { return cal_; }
  const KrrModel& model() const { return *model_; }
  IterativeMode mode() const { return mode_; }
  double jitter() const { return jitter_; }
  const Matrix& cholesky() const { return chol_; }

  Conditional conditional(const Vector& x) const {
    model_->check_dim(x.size());
    const auto& k = model_->kernel();
    Conditional c;
    const auto m = static_cast<Eigen::Index>(size());
    Vector w = whiten(x);
    c.variance = k.self_value() + jitter_ - w.squaredNorm();
    c.mean = m == 0 ? 0.0 : w.dot(z_);
    c.weights = m == 0 ? Vector() : Vector(chol_.triangularView<Eigen::Lower>().transpose().solve(w));
    return c;
  }

  // Answers one query with randomness derived from (seed, query index).
  double query(const Vector& x, std::uint64_t seed) {
    model_->check_dim(x.size());
    const auto& k = model_->kernel();
    Vector w = whiten(x);
    const double mean = size() == 0 ? 0.0 : w.dot(z_);
    double var = k.self_value() + jitter_ - w.squaredNorm();
    if (var < -1e-8 * k.self_value()) throw NumericError("negative posterior variance");
    // The Schur complement of K + jitter I is at least the jitter.
    var = std::max(var, jitter_);
    const double sd = std::sqrt(var);
    Rng rng(mix_seed(derive_seed(seed, Stream::kRelease), size()));
    const double xi = rng.normal();
    const double g = model_->predict(x);
    double value = 0.0, out = 0.0;
    if (mode_ == IterativeMode::kNoisePath) {
      value = mean + sd * xi;
      out = g + cal_.r_factor * value;
    } else if (size() == 0) {
      out = g + cal_.r_factor * sd * xi;
      value = out;
    } else {
      out = mean + sd * xi;
      value = out;
    }
    append(x, w, sd, value, out);
    return out;
  }

  nlohmann::json to_json() const {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    std::vector<std::vector<double>> qs;
    for (const auto& x : queries_) qs.push_back(vec(x));
    std::vector<double> chol;
    for (Eigen::Index i = 0; i < chol_.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) chol.push_back(chol_(i, j));
    return {{"format", "dpcate.gp_state.v1"},
            {"mode", to_string(mode_)},
            {"jitter", jitter_},
            {"calibration", cal_},
            {"queries", qs},
            {"values", values_},
            {"outputs", outputs_},
            {"whitened", vec(z_)},
            {"cholesky_lower", chol}};
  }

  static GpNoiseState from_json(const nlohmann::json& j, std::shared_ptr<const KrrModel> model) {
    if (j.value("format", "") != "dpcate.gp_state.v1")
      throw ArgumentError("not a GP state document");
    GpNoiseState s(std::move(model), j.at("calibration").get<FunctionalCalibration>(),
                   iterative_mode_from_string(j.at("mode").get<std::string>()),
                   j.at("jitter").get<double>());
    for (const auto& q : j.at("queries")) {
      auto v = q.get<std::vector<double>>();
      s.queries_.emplace_back(Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    s.values_ = j.at("values").get<std::vector<double>>();
    s.outputs_ = j.at("outputs").get<std::vector<double>>();
    auto z = j.at("whitened").get<std::vector<double>>();
    s.z_ = Eigen::Map<Vector>(z.data(), static_cast<Eigen::Index>(z.size()));
    auto chol = j.at("cholesky_lower").get<std::vector<double>>();
    const auto m = static_cast<Eigen::Index>(s.queries_.size());
    if (s.values_.size() != s.queries_.size() || s.outputs_.size() != s.queries_.size() ||
        s.z_.size() != m || chol.size() != static_cast<std::size_t>(m * (m + 1) / 2))
      throw ArgumentError("inconsistent GP state document");
    s.chol_ = Matrix::Zero(m, m);
    std::size_t p = 0;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index jj = 0; jj <= i; ++jj) s.chol_(i, jj) = chol[p++];
    return s;
  }

 private:
  Vector whiten(const Vector& x) const {
    if (size() == 0) return Vector();
    Vector v(static_cast<Eigen::Index>(size()));
    const auto& k = model_->kernel();
    for (std::size_t i = 0; i < size(); ++i) v[static_cast<Eigen::Index>(i)] = k(queries_[i], x);
    return chol_.triangularView<Eigen::Lower>().solve(v);
  }

  void append(const Vector& x, const Vector& w, double sd, double value, double out) {
    const auto m = static_cast<Eigen::Index>(size());
    const double mean = m == 0 ? 0.0 : w.dot(z_);
    chol_.conservativeResize(m + 1, m + 1);
    chol_.row(m).setZero();
    chol_.col(m).setZero();
    if (m > 0) chol_.row(m).head(m) = w.transpose();
    chol_(m, m) = sd;
    z_.conservativeResize(m + 1);
    z_[m] = (value - mean) / sd;
    queries_.push_back(x);
    values_.push_back(value);
    outputs_.push_back(out);
    if (size() % kRefactorEvery == 0) refactor();
  }

  // Rebuilds the factorization from scratch to stop rounding drift.
  void refactor() {
    const auto m = static_cast<Eigen::Index>(size());
    Matrix pts(m, model_->q());
    for (Eigen::Index i = 0; i < m; ++i) pts.row(i) = queries_[static_cast<std::size_t>(i)];
    GpFactor f = gp_factor(model_->kernel(), pts, jitter_);
    jitter_ = f.jitter;
    chol_ = f.llt.matrixL();
    Vector v = Eigen::Map<const Vector>(values_.data(), m);
    z_ = chol_.triangularView<Eigen::Lower>().solve(v);
  }

  std::shared_ptr<const KrrModel> model_;
  FunctionalCalibration cal_;
  IterativeMode mode_;
  double jitter_ = 0.0;
  std::vector<Vector> queries_;
  std::vector<double> values_;
  std::vector<double> outputs_;
  Vector z_;     // L^{-1} values
  Matrix chol_;  // lower Cholesky factor of K(past) + jitter I
};

inline GpNoiseState iterative_init(const KrrModel& model, const FunctionalCalibration& cal,
                                   IterativeMode mode = IterativeMode::kNoisePath,
                                   double jitter = -1.0) {
  return GpNoiseState(std::make_shared<const KrrModel>(model), cal, mode, jitter);
}

inline double iterative_query(GpNoiseState& state, const Vector& x, std::uint64_t seed) {
  return state.query(x, seed);
}

}  // namespace dpcate
