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

// Stage-1 nuisance estimation: outcome regression mu(x, a) and propensity
// pi(x), either non-private or differentially private.
//
// Two privatization routes are provided:
//
//  * kParamOutputPerturbation: L2-regularized convex ERM (ridge for mu,
//    logistic for pi) over a bounded polynomial feature map, followed by
//    Gaussian noise on the parameter vector. The L2 sensitivity of the
//    minimizer under single-record replacement is 2 L / (n lambda') for a loss
//    that is L-Lipschitz in the parameters and objective
//    (1/n) sum loss + (lambda'/2) |theta|^2.
//
//  * kDpGradientDescent: a one-hidden-layer network trained by full-batch
//    gradient descent with per-sample gradient clipping and Gaussian noise on
//    the clipped sum. The per-step budget is chosen so that advanced
//    composition over all steps meets the requested budget.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"
#include "dpcate/rng.hpp"

namespace dpcate {

enum class NuisanceMethod { kNonprivate, kParamOutputPerturbation, kDpGradientDescent };

inline std::string to_string(NuisanceMethod m) {
  switch (m) {
    case NuisanceMethod::kNonprivate: return "nonprivate";
    case NuisanceMethod::kParamOutputPerturbation: return "param_output_perturbation";
    case NuisanceMethod::kDpGradientDescent: return "dp_gradient_descent";
  }
  return "?";
}

inline NuisanceMethod nuisance_method_from_string(const std::string& s) {
  if (s == "nonprivate") return NuisanceMethod::kNonprivate;
  if (s == "param_output_perturbation") return NuisanceMethod::kParamOutputPerturbation;
  if (s == "dp_gradient_descent") return NuisanceMethod::kDpGradientDescent;
  throw ArgumentError("unknown nuisance method '" + s + "'");
}

// Model family used by a fit. The non-private baseline picks the family that
// its private counterpart would use.
enum class NuisanceFamily { kLinear, kMlp };

// ---------------------------------------------------------------------------
// Privacy accounting

enum class CompositionMode { kBasic, kAdvanced };

// Total budget of `steps` adaptive runs of a (per_step.eps, per_step.delta)
// mechanism. Advanced composition:
//   eps_total = sqrt(2 k ln(1/delta')) eps + k eps (e^eps - 1)
//   delta_total = k delta + delta'.
// A single step, or delta' <= 0, falls back to basic composition.
inline PrivacyBudget dp_composition_budget(const PrivacyBudget& per_step, int steps,
                                           double delta_slack,
                                           CompositionMode mode = CompositionMode::kAdvanced) {
  per_step.validate();
  if (steps < 1) throw ArgumentError("steps must be >= 1");
  const double k = steps;
  if (mode == CompositionMode::kBasic || steps == 1 || delta_slack <= 0.0)
    return {k * per_step.epsilon, k * per_step.delta};
  if (delta_slack >= 1.0) throw ArgumentError("delta slack must be < 1");
  const double e = per_step.epsilon;
  return {std::sqrt(2.0 * k * std::log(1.0 / delta_slack)) * e + k * e * std::expm1(e),
          k * per_step.delta + delta_slack};
}

// Largest per-step epsilon whose advanced composition over `steps` stays within
// `total`, with half of total.delta reserved as slack.
inline PrivacyBudget per_step_budget(const PrivacyBudget& total, int steps) {
  total.validate();
  if (steps == 1) return total;
  const double slack = total.delta / 2.0;
  const double step_delta = total.delta / (2.0 * steps);
  double lo = 0.0, hi = total.epsilon;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid <= 0.0) break;
    (dp_composition_budget({mid, step_delta}, steps, slack).epsilon <= total.epsilon ? lo : hi) = mid;
  }
  return {lo, step_delta};
}

// Standard deviation of the Gaussian mechanism for the given L2 sensitivity.
inline double gaussian_sigma(const PrivacyBudget& b, double l2_sensitivity) {
  if (b.is_infinite()) return 0.0;
  b.validate();
  return std::sqrt(2.0 * std::log(1.25 / b.delta)) * l2_sensitivity / b.epsilon;
}

// ---------------------------------------------------------------------------
// Features

// Monomials of total degree <= degree in the box-normalized covariates,
// scaled by 1/sqrt(#features) so that |psi(x)| <= 1 on the domain.
class PolyFeatures {
 public:
  PolyFeatures() = default;
  PolyFeatures(std::vector<Interval> bounds, int degree)
      : bounds_(std::move(bounds)), degree_(degree) {
    if (degree_ < 0) throw ArgumentError("feature degree must be >= 0");
    std::vector<int> cur(bounds_.size(), 0);
    enumerate(0, degree_, cur);
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(exponents_.size()); }
  int degree() const { return degree_; }
  const std::vector<Interval>& bounds() const { return bounds_; }

  Vector operator()(const Eigen::Ref<const Vector>& x) const {
    if (x.size() != static_cast<Eigen::Index>(bounds_.size()))
      throw ArgumentError("feature input has wrong dimension");
    Vector u(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const auto& iv = bounds_[static_cast<std::size_t>(j)];
      u[j] = std::clamp((x[j] - iv.lo) / iv.width(), 0.0, 1.0);
    }
    Vector f(size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(size()));
    for (Eigen::Index k = 0; k < size(); ++k) {
      double v = 1.0;
      const auto& e = exponents_[static_cast<std::size_t>(k)];
      for (std::size_t j = 0; j < e.size(); ++j)
        for (int r = 0; r < e[j]; ++r) v *= u[static_cast<Eigen::Index>(j)];
      f[k] = v * scale;
    }
    return f;
  }

 private:
  void enumerate(std::size_t j, int left, std::vector<int>& cur) {
    if (j == cur.size()) {
      exponents_.push_back(cur);
      return;
    }
    for (int e = 0; e <= left; ++e) {
      cur[j] = e;
      enumerate(j + 1, left - e, cur);
    }
    cur[j] = 0;
  }

  std::vector<Interval> bounds_;
  int degree_ = 0;
  std::vector<std::vector<int>> exponents_;
};

// ---------------------------------------------------------------------------
// One-hidden-layer ReLU network with a scalar output.

struct Mlp {
  Matrix w1;  // width x in
  Vector b1;
  Vector w2;
  double b2 = 0.0;

  Eigen::Index num_params() const { return w1.size() + b1.size() + w2.size() + 1; }

  static Mlp init(Eigen::Index in, Eigen::Index width, Rng& rng) {
    Mlp m;
    m.w1.resize(width, in);
    const double s1 = std::sqrt(2.0 / static_cast<double>(in));
    for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = s1 * rng.normal();
    m.b1 = Vector::Zero(width);
    m.w2.resize(width);
    const double s2 = std::sqrt(1.0 / static_cast<double>(width));
    for (Eigen::Index i = 0; i < width; ++i) m.w2[i] = s2 * rng.normal();
    return m;
  }

  double forward(const Vector& in) const {
    Vector hid = (w1 * in + b1).cwiseMax(0.0);
    return w2.dot(hid) + b2;
  }

  // Gradient of the output w.r.t. all parameters, flattened as
  // [w1 (column-major), b1, w2, b2], scaled by `upstream`.
  Vector gradient(const Vector& in, double upstream) const {
    Vector pre = w1 * in + b1;
    Vector hid = pre.cwiseMax(0.0);
    Vector g(num_params());
    Eigen::Index off = 0;
    Vector dh(w2.size());
    for (Eigen::Index k = 0; k < w2.size(); ++k) dh[k] = pre[k] > 0.0 ? upstream * w2[k] : 0.0;
    Eigen::Map<Matrix>(g.data(), w1.rows(), w1.cols()) = dh * in.transpose();
    off += w1.size();
    g.segment(off, b1.size()) = dh;
    off += b1.size();
    g.segment(off, w2.size()) = upstream * hid;
    off += w2.size();
    g[off] = upstream;
    return g;
  }

  void apply(const Vector& delta) {
    Eigen::Index off = 0;
    w1 += Eigen::Map<const Matrix>(delta.data(), w1.rows(), w1.cols());
    off += w1.size();
    b1 += delta.segment(off, b1.size());
    off += b1.size();
    w2 += delta.segment(off, w2.size());
    off += w2.size();
    b2 += delta[off];
  }

  Vector flat() const {
    Vector v(num_params());
    Eigen::Index off = 0;
    v.segment(off, w1.size()) = Eigen::Map<const Vector>(w1.data(), w1.size());
    off += w1.size();
    v.segment(off, b1.size()) = b1;
    off += b1.size();
    v.segment(off, w2.size()) = w2;
    off += w2.size();
    v[off] = b2;
    return v;
  }
};

inline void to_json(nlohmann::json& j, const Mlp& m) {
  j = {{"rows", m.w1.rows()},
       {"cols", m.w1.cols()},
       {"w1", std::vector<double>(m.w1.data(), m.w1.data() + m.w1.size())},
       {"b1", std::vector<double>(m.b1.data(), m.b1.data() + m.b1.size())},
       {"w2", std::vector<double>(m.w2.data(), m.w2.data() + m.w2.size())},
       {"b2", m.b2}};
}

inline void from_json(const nlohmann::json& j, Mlp& m) {
  auto rows = j.at("rows").get<Eigen::Index>();
  auto cols = j.at("cols").get<Eigen::Index>();
  auto w1 = j.at("w1").get<std::vector<double>>();
  auto b1 = j.at("b1").get<std::vector<double>>();
  auto w2 = j.at("w2").get<std::vector<double>>();
  m.w1 = Eigen::Map<Matrix>(w1.data(), rows, cols);
  m.b1 = Eigen::Map<Vector>(b1.data(), static_cast<Eigen::Index>(b1.size()));
  m.w2 = Eigen::Map<Vector>(w2.data(), static_cast<Eigen::Index>(w2.size()));
  m.b2 = j.at("b2").get<double>();
}

// ---------------------------------------------------------------------------
// Hyperparameters and fit metadata

struct NuisanceHyper {
  NuisanceFamily family = NuisanceFamily::kLinear;
  // Polynomial degree of the linear family; < 0 picks 3 for q <= 3, 2 for
  // q <= 6 and 1 otherwise.
  int degree = -1;
  double ridge_mu = 1.0;   // lambda' for the outcome ridge
  double ridge_pi = 0.01;  // lambda' for the logistic propensity
  // Network training.
  int width = 32;
  int steps = 200;
  double learning_rate = 0.5;
  double clip_norm = 1.0;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  int resolved_degree(Eigen::Index q) const {
    if (degree >= 0) return degree;
    return q <= 3 ? 3 : (q <= 6 ? 2 : 1);
  }
};

struct FitMeta {
  NuisanceMethod method = NuisanceMethod::kNonprivate;
  PrivacyBudget budget{kInf, 0.5};
  double regularization = 0.0;
  double lipschitz = 0.0;
  double sensitivity = 0.0;
  // Std of the Gaussian noise: per parameter for output perturbation, per
  // coordinate of the clipped-gradient sum for gradient descent.
  double noise_scale = 0.0;
  double clip_norm = 0.0;
  int steps = 0;
  PrivacyBudget per_step{kInf, 0.5};
  double max_clipped_norm = 0.0;
};

inline void to_json(nlohmann::json& j, const PrivacyBudget& b) {
  j = {{"epsilon", b.is_infinite() ? nlohmann::json("inf") : nlohmann::json(b.epsilon)},
       {"delta", b.delta}};
}
inline void from_json(const nlohmann::json& j, PrivacyBudget& b) {
  const auto& e = j.at("epsilon");
  b.epsilon = e.is_string() ? kInf : e.get<double>();
  b.delta = j.at("delta").get<double>();
}

inline void to_json(nlohmann::json& j, const FitMeta& m) {
  j = {{"method", to_string(m.method)},  {"budget", m.budget},
       {"regularization", m.regularization}, {"lipschitz", m.lipschitz},
       {"sensitivity", m.sensitivity}, {"noise_scale", m.noise_scale},
       {"clip_norm", m.clip_norm},     {"steps", m.steps},
       {"per_step", m.per_step},       {"max_clipped_norm", m.max_clipped_norm}};
}
inline void from_json(const nlohmann::json& j, FitMeta& m) {
  m.method = nuisance_method_from_string(j.at("method").get<std::string>());
  m.budget = j.at("budget").get<PrivacyBudget>();
  m.regularization = j.at("regularization").get<double>();
  m.lipschitz = j.at("lipschitz").get<double>();
  m.sensitivity = j.at("sensitivity").get<double>();
  m.noise_scale = j.at("noise_scale").get<double>();
  m.clip_norm = j.at("clip_norm").get<double>();
  m.steps = j.at("steps").get<int>();
  m.per_step = j.at("per_step").get<PrivacyBudget>();
  m.max_clipped_norm = j.at("max_clipped_norm").get<double>();
}

// ---------------------------------------------------------------------------
// Fitted models

class OutcomeModel {
 public:
  OutcomeModel() = default;

  static OutcomeModel linear(PolyFeatures f, Vector theta, double offset) {
    OutcomeModel m;
    m.family_ = NuisanceFamily::kLinear;
    m.features_ = std::move(f);
    m.theta_ = std::move(theta);
    m.offset_ = offset;
    return m;
  }

  static OutcomeModel network(std::vector<Interval> bounds, Mlp net, double offset,
                              double scale) {
    OutcomeModel m;
    m.family_ = NuisanceFamily::kMlp;
    m.features_ = PolyFeatures(std::move(bounds), 1);
    m.net_ = std::move(net);
    m.offset_ = offset;
    m.scale_ = scale;
    return m;
  }

  double operator()(const Eigen::Ref<const Vector>& x, int a) const {
    if (family_ == NuisanceFamily::kLinear) {
      Vector psi = features_(x);
      const Eigen::Index f = psi.size();
      return offset_ + theta_.segment(a == 1 ? f : 0, f).dot(psi);
    }
    return offset_ + scale_ * net_.forward(network_input(features_.bounds(), x, a));
  }

  static Vector network_input(const std::vector<Interval>& bounds,
                              const Eigen::Ref<const Vector>& x, int a) {
    Vector in(x.size() + 1);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const auto& iv = bounds[static_cast<std::size_t>(j)];
      in[j] = std::clamp((x[j] - iv.lo) / iv.width(), 0.0, 1.0);
    }
    in[x.size()] = a;
    return in;
  }

  NuisanceFamily family() const { return family_; }
  const Vector& theta() const { return theta_; }
  const Mlp& net() const { return net_; }
  const PolyFeatures& features() const { return features_; }
  double offset() const { return offset_; }
  double scale() const { return scale_; }

 private:
  NuisanceFamily family_ = NuisanceFamily::kLinear;
  PolyFeatures features_;
  Vector theta_;
  Mlp net_;
  double offset_ = 0.0;
  double scale_ = 1.0;
};

class PropensityModel {
 public:
  PropensityModel() = default;

  static PropensityModel linear(PolyFeatures f, Vector theta, double kappa) {
    PropensityModel m;
    m.family_ = NuisanceFamily::kLinear;
    m.features_ = std::move(f);
    m.theta_ = std::move(theta);
    m.kappa_ = kappa;
    return m;
  }

  static PropensityModel network(std::vector<Interval> bounds, Mlp net, double kappa) {
    PropensityModel m;
    m.family_ = NuisanceFamily::kMlp;
    m.features_ = PolyFeatures(std::move(bounds), 1);
    m.net_ = std::move(net);
    m.kappa_ = kappa;
    return m;
  }

  // Unclipped logit.
  double logit(const Eigen::Ref<const Vector>& x) const {
    if (family_ == NuisanceFamily::kLinear) return theta_.dot(features_(x));
    return net_.forward(network_input(features_.bounds(), x));
  }

  // Clipped to [kappa, 1 - kappa]; clipping is post-processing.
  double operator()(const Eigen::Ref<const Vector>& x) const {
    const double p = 1.0 / (1.0 + std::exp(-logit(x)));
    return std::clamp(p, kappa_, 1.0 - kappa_);
  }

  static Vector network_input(const std::vector<Interval>& bounds,
                              const Eigen::Ref<const Vector>& x) {
    Vector in(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const auto& iv = bounds[static_cast<std::size_t>(j)];
      in[j] = std::clamp((x[j] - iv.lo) / iv.width(), 0.0, 1.0);
    }
    return in;
  }

  NuisanceFamily family() const { return family_; }
  const Vector& theta() const { return theta_; }
  const Mlp& net() const { return net_; }
  const PolyFeatures& features() const { return features_; }
  double kappa() const { return kappa_; }

 private:
  NuisanceFamily family_ = NuisanceFamily::kLinear;
  PolyFeatures features_;
  Vector theta_;
  Mlp net_;
  double kappa_ = 0.05;
};

struct FittedOutcome {
  OutcomeModel model;
  FitMeta meta;
};

struct FittedPropensity {
  PropensityModel model;
  FitMeta meta;
};

struct NuisancePair {
  OutcomeModel mu;
  PropensityModel pi;
  double kappa = 0.05;
  FitMeta mu_meta;
  FitMeta pi_meta;
};

// ---------------------------------------------------------------------------
// Convex ERM building blocks (exposed for the sensitivity audits)

namespace nuisance_detail {

inline void require_both_arms(const Dataset& d) {
  if (d.empty()) throw EmptyDatasetError("nuisance fit on an empty dataset");
  const auto t = d.count_treated();
  if (t == 0 || t == d.size()) throw FitError("nuisance fit needs both treatment arms");
}

inline void check_kappa(double kappa) {
  if (!(kappa > 0.0 && kappa < 0.5)) throw ArgumentError("kappa must lie in (0, 0.5)");
}

}  // namespace nuisance_detail

// Arm-blocked design: row i is [(1 - a_i) psi(x_i), a_i psi(x_i)], so the two
// per-arm ridge models share one objective and one normalization.
inline Matrix arm_blocked_design(const Dataset& d, const PolyFeatures& f) {
  const Eigen::Index nf = f.size();
  Matrix phi = Matrix::Zero(static_cast<Eigen::Index>(d.size()), 2 * nf);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d[i];
    phi.row(static_cast<Eigen::Index>(i)).segment(s.a == 1 ? nf : 0, nf) = f(s.x).transpose();
  }
  return phi;
}

// argmin (1/n) sum (y_c - theta' phi)^2 + (lambda'/2) |theta|^2 with
// y_c = y - offset.
inline Vector ridge_minimizer(const Matrix& phi, const Vector& y_centered, double ridge) {
  const double n = static_cast<double>(phi.rows());
  Matrix a = (2.0 / n) * phi.transpose() * phi;
  a.diagonal().array() += ridge;
  Vector b = (2.0 / n) * phi.transpose() * y_centered;
  return a.llt().solve(b);
}

// Lipschitz constant (in theta) of the squared loss over the ball that
// contains every minimizer: |theta| <= Y sqrt(2 / lambda'), |phi| <= 1,
// |y_c| <= Y gives |grad| <= 2 (R + Y).
inline double ridge_lipschitz(double half_range, double ridge) {
  const double radius = half_range * std::sqrt(2.0 / ridge);
  return 2.0 * (radius + half_range);
}

// Replacement sensitivity of a (lambda')-strongly convex ERM minimizer.
inline double output_perturbation_sensitivity(double lipschitz, std::size_t n, double ridge) {
  return 2.0 * lipschitz / (static_cast<double>(n) * ridge);
}

// argmin (1/n) sum log(1 + exp(-s_i theta' psi_i)) + (lambda'/2) |theta|^2,
// s_i = 2 a_i - 1, via Newton iterations.
inline Vector logistic_minimizer(const Matrix& psi, const std::vector<int>& a, double ridge) {
  const Eigen::Index p = psi.cols();
  const double n = static_cast<double>(psi.rows());
  Vector theta = Vector::Zero(p);
  for (int it = 0; it < 100; ++it) {
    Vector grad = ridge * theta;
    Matrix hess = ridge * Matrix::Identity(p, p);
    for (Eigen::Index i = 0; i < psi.rows(); ++i) {
      const double z = psi.row(i).dot(theta);
      const double pr = 1.0 / (1.0 + std::exp(-z));
      grad += (pr - a[static_cast<std::size_t>(i)]) / n * psi.row(i).transpose();
      hess += (pr * (1.0 - pr) / n) * psi.row(i).transpose() * psi.row(i);
    }
    Vector step = hess.llt().solve(grad);
    theta -= step;
    if (grad.norm() < 1e-12 || step.norm() < 1e-14) break;
  }
  return theta;
}

// ---------------------------------------------------------------------------
// Network training (shared by the private and non-private paths)

namespace nuisance_detail {

struct NetTrace {
  double max_clipped_norm = 0.0;
};

// Full-batch gradient descent. `sigma_sum` is the std of the noise added to
// the clipped gradient sum; clip <= 0 disables clipping.
template <typename InputFn, typename LossGradFn>
inline Mlp train_network(std::size_t n, Eigen::Index in_dim, const NuisanceHyper& hyper,
                         InputFn input, LossGradFn loss_grad, double clip, double sigma_sum,
                         Rng& init_rng, Rng& noise_rng, NetTrace& trace) {
  Mlp net = Mlp::init(in_dim, hyper.width, init_rng);
  std::vector<Vector> inputs;
  inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(input(i));
  for (int step = 0; step < hyper.steps; ++step) {
    Vector sum = Vector::Zero(net.num_params());
    for (std::size_t i = 0; i < n; ++i) {
      const double out = net.forward(inputs[i]);
      Vector g = net.gradient(inputs[i], loss_grad(i, out));
      if (clip > 0.0) {
        const double norm = g.norm();
        if (norm > clip) g *= clip / norm;
        trace.max_clipped_norm = std::max(trace.max_clipped_norm, g.norm());
      }
      sum += g;
    }
    if (sigma_sum > 0.0)
      for (Eigen::Index k = 0; k < sum.size(); ++k) sum[k] += sigma_sum * noise_rng.normal();
    Vector update = sum / static_cast<double>(n) + hyper.weight_decay * net.flat();
    net.apply(-hyper.learning_rate * update);
  }
  return net;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace nuisance_detail

// ---------------------------------------------------------------------------
// Outcome model

namespace nuisance_detail {

inline FittedOutcome fit_outcome(const Dataset& d, const PrivacyBudget& budget,
                                 NuisanceMethod method, NuisanceFamily family,
                                 const NuisanceHyper& hyper, std::uint64_t seed) {
  require_both_arms(d);
  const double offset = d.outcome_bounds().mid();
  const double half = 0.5 * d.outcome_bounds().width();
  const bool noisy = method != NuisanceMethod::kNonprivate && !budget.is_infinite();
  FitMeta meta;
  meta.method = method;
  meta.budget = method == NuisanceMethod::kNonprivate ? PrivacyBudget{kInf, 0.5} : budget;

  if (family == NuisanceFamily::kLinear) {
    if (!(hyper.ridge_mu > 0.0))
      throw ArgumentError("output perturbation needs a positive ridge penalty");
    PolyFeatures f(d.covariate_bounds(), hyper.resolved_degree(d.q()));
    Matrix phi = arm_blocked_design(d, f);
    Vector yc(phi.rows());
    for (std::size_t i = 0; i < d.size(); ++i) yc[static_cast<Eigen::Index>(i)] = d[i].y - offset;
    Vector theta = ridge_minimizer(phi, yc, hyper.ridge_mu);
    meta.regularization = hyper.ridge_mu;
    meta.lipschitz = ridge_lipschitz(half, hyper.ridge_mu);
    meta.sensitivity = output_perturbation_sensitivity(meta.lipschitz, d.size(), hyper.ridge_mu);
    if (noisy) {
      meta.noise_scale = gaussian_sigma(budget, meta.sensitivity);
      Rng rng(derive_seed(seed, Stream::kNuisanceMu));
      for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] += meta.noise_scale * rng.normal();
    }
    return {OutcomeModel::linear(std::move(f), std::move(theta), offset), meta};
  }

  // Network on (x, a); targets scaled to [-1, 1].
  const double clip = method == NuisanceMethod::kDpGradientDescent ? hyper.clip_norm : 0.0;
  double sigma_sum = 0.0;
  if (noisy) {
    meta.per_step = per_step_budget(budget, hyper.steps);
    meta.sensitivity = 2.0 * hyper.clip_norm;  // replacement changes one clipped term
    sigma_sum = gaussian_sigma(meta.per_step, meta.sensitivity);
  }
  meta.noise_scale = sigma_sum;
  meta.clip_norm = clip;
  meta.steps = hyper.steps;
  meta.regularization = hyper.weight_decay;
  Rng init_rng(derive_seed(hyper.seed, Stream::kNuisanceMu));
  Rng noise_rng(derive_seed(seed, Stream::kNuisanceMu));
  NetTrace trace;
  const auto& bounds = d.covariate_bounds();
  Mlp net = train_network(
      d.size(), d.q() + 1, hyper,
      [&](std::size_t i) { return OutcomeModel::network_input(bounds, d[i].x, d[i].a); },
      [&](std::size_t i, double out) { return 2.0 * (out - (d[i].y - offset) / half); },
      clip, sigma_sum, init_rng, noise_rng, trace);
  meta.max_clipped_norm = trace.max_clipped_norm;
  return {OutcomeModel::network(bounds, std::move(net), offset, half), meta};
}

inline FittedPropensity fit_propensity(const Dataset& d, const PrivacyBudget& budget,
                                       double kappa, NuisanceMethod method,
                                       NuisanceFamily family, const NuisanceHyper& hyper,
                                       std::uint64_t seed) {
  check_kappa(kappa);
  require_both_arms(d);
  const bool noisy = method != NuisanceMethod::kNonprivate && !budget.is_infinite();
  FitMeta meta;
  meta.method = method;
  meta.budget = method == NuisanceMethod::kNonprivate ? PrivacyBudget{kInf, 0.5} : budget;
  std::vector<int> a(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) a[i] = d[i].a;

  if (family == NuisanceFamily::kLinear) {
    if (!(hyper.ridge_pi > 0.0))
      throw ArgumentError("output perturbation needs a positive ridge penalty");
    PolyFeatures f(d.covariate_bounds(), hyper.resolved_degree(d.q()));
    Matrix psi(static_cast<Eigen::Index>(d.size()), f.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      psi.row(static_cast<Eigen::Index>(i)) = f(d[i].x).transpose();
    Vector theta = logistic_minimizer(psi, a, hyper.ridge_pi);
    meta.regularization = hyper.ridge_pi;
    meta.lipschitz = 1.0;  // |(sigma(z) - a) psi| <= |psi| <= 1
    meta.sensitivity = output_perturbation_sensitivity(1.0, d.size(), hyper.ridge_pi);
    if (noisy) {
      meta.noise_scale = gaussian_sigma(budget, meta.sensitivity);
      Rng rng(derive_seed(seed, Stream::kNuisancePi));
      for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] += meta.noise_scale * rng.normal();
    }
    return {PropensityModel::linear(std::move(f), std::move(theta), kappa), meta};
  }

  const double clip = method == NuisanceMethod::kDpGradientDescent ? hyper.clip_norm : 0.0;
  double sigma_sum = 0.0;
  if (noisy) {
    meta.per_step = per_step_budget(budget, hyper.steps);
    meta.sensitivity = 2.0 * hyper.clip_norm;
    sigma_sum = gaussian_sigma(meta.per_step, meta.sensitivity);
  }
  meta.noise_scale = sigma_sum;
  meta.clip_norm = clip;
  meta.steps = hyper.steps;
  meta.regularization = hyper.weight_decay;
  Rng init_rng(derive_seed(hyper.seed, Stream::kNuisancePi));
  Rng noise_rng(derive_seed(seed, Stream::kNuisancePi));
  NetTrace trace;
  const auto& bounds = d.covariate_bounds();
  Mlp net = train_network(
      d.size(), d.q(), hyper,
      [&](std::size_t i) { return PropensityModel::network_input(bounds, d[i].x); },
      [&](std::size_t i, double out) { return sigmoid(out) - a[i]; }, clip, sigma_sum,
      init_rng, noise_rng, trace);
  meta.max_clipped_norm = trace.max_clipped_norm;
  return {PropensityModel::network(bounds, std::move(net), kappa), meta};
}

inline NuisanceFamily family_for(NuisanceMethod method, const NuisanceHyper& hyper) {
  switch (method) {
    case NuisanceMethod::kParamOutputPerturbation: return NuisanceFamily::kLinear;
    case NuisanceMethod::kDpGradientDescent: return NuisanceFamily::kMlp;
    case NuisanceMethod::kNonprivate: return hyper.family;
  }
  return NuisanceFamily::kLinear;
}

}  // namespace nuisance_detail

// Private outcome model at (budget.eps, budget.delta). epsilon = inf runs the
// same path with zero noise.
inline FittedOutcome fit_outcome_private(const Dataset& d_tilde, const PrivacyBudget& budget,
                                         NuisanceMethod method, const NuisanceHyper& hyper,
                                         std::uint64_t seed) {
  if (method == NuisanceMethod::kNonprivate)
    throw ArgumentError("use fit_nuisances_nonprivate for the non-private path");
  if (!budget.is_infinite()) budget.validate();
  return nuisance_detail::fit_outcome(d_tilde, budget, method,
                                      nuisance_detail::family_for(method, hyper), hyper, seed);
}

inline FittedPropensity fit_propensity_private(const Dataset& d_tilde,
                                               const PrivacyBudget& budget, double kappa,
                                               NuisanceMethod method,
                                               const NuisanceHyper& hyper, std::uint64_t seed) {
  if (method == NuisanceMethod::kNonprivate)
    throw ArgumentError("use fit_nuisances_nonprivate for the non-private path");
  if (!budget.is_infinite()) budget.validate();
  return nuisance_detail::fit_propensity(d_tilde, budget, kappa, method,
                                         nuisance_detail::family_for(method, hyper), hyper,
                                         seed);
}

inline NuisancePair fit_nuisances_nonprivate(const Dataset& d_tilde, double kappa,
                                             const NuisanceHyper& hyper) {
  auto mu = nuisance_detail::fit_outcome(d_tilde, {kInf, 0.5}, NuisanceMethod::kNonprivate,
                                         hyper.family, hyper, 0);
  auto pi = nuisance_detail::fit_propensity(d_tilde, {kInf, 0.5}, kappa,
                                            NuisanceMethod::kNonprivate, hyper.family, hyper, 0);
  return {std::move(mu.model), std::move(pi.model), kappa, mu.meta, pi.meta};
}

// Both nuisances under the stage-1 budget plan: each at (eps/2, delta/2).
inline NuisancePair fit_nuisances_private(const Dataset& d_tilde, const PrivacyBudget& total,
                                          double kappa, NuisanceMethod method,
                                          const NuisanceHyper& hyper, std::uint64_t seed) {
  PrivacyBudget half = total.is_infinite() ? total : BudgetPlan::from_total(total).stage1_mu;
  auto mu = fit_outcome_private(d_tilde, half, method, hyper, seed);
  auto pi = fit_propensity_private(d_tilde, half, kappa, method, hyper, seed);
  return {std::move(mu.model), std::move(pi.model), kappa, mu.meta, pi.meta};
}

// ---------------------------------------------------------------------------
// Serialization

namespace nuisance_detail {

inline nlohmann::json bounds_json(const std::vector<Interval>& b) {
  auto j = nlohmann::json::array();
  for (const auto& iv : b) j.push_back({iv.lo, iv.hi});
  return j;
}

inline std::vector<Interval> bounds_from_json(const nlohmann::json& j) {
  std::vector<Interval> b;
  for (const auto& e : j) b.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return b;
}

inline std::vector<double> to_vec(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace nuisance_detail

inline nlohmann::json nuisance_to_json(const NuisancePair& eta) {
  using namespace nuisance_detail;
  nlohmann::json mu = {{"family", eta.mu.family() == NuisanceFamily::kLinear ? "linear" : "mlp"},
                       {"bounds", bounds_json(eta.mu.features().bounds())},
                       {"degree", eta.mu.features().degree()},
                       {"offset", eta.mu.offset()},
                       {"scale", eta.mu.scale()},
                       {"meta", eta.mu_meta}};
  if (eta.mu.family() == NuisanceFamily::kLinear) mu["theta"] = to_vec(eta.mu.theta());
  else mu["net"] = eta.mu.net();
  nlohmann::json pi = {{"family", eta.pi.family() == NuisanceFamily::kLinear ? "linear" : "mlp"},
                       {"bounds", bounds_json(eta.pi.features().bounds())},
                       {"degree", eta.pi.features().degree()},
                       {"meta", eta.pi_meta}};
  if (eta.pi.family() == NuisanceFamily::kLinear) pi["theta"] = to_vec(eta.pi.theta());
  else pi["net"] = eta.pi.net();
  return {{"format", "dpcate.nuisance.v1"}, {"kappa", eta.kappa}, {"mu", mu}, {"pi", pi}};
}

inline NuisancePair nuisance_from_json(const nlohmann::json& j) {
  using namespace nuisance_detail;
  if (j.value("format", "") != "dpcate.nuisance.v1")
    throw ArgumentError("not a nuisance document");
  NuisancePair eta;
  eta.kappa = j.at("kappa").get<double>();
  const auto& mu = j.at("mu");
  auto mb = bounds_from_json(mu.at("bounds"));
  if (mu.at("family") == "linear")
    eta.mu = OutcomeModel::linear(PolyFeatures(mb, mu.at("degree").get<int>()),
                                  from_vec(mu.at("theta").get<std::vector<double>>()),
                                  mu.at("offset").get<double>());
  else
    eta.mu = OutcomeModel::network(mb, mu.at("net").get<Mlp>(), mu.at("offset").get<double>(),
                                   mu.at("scale").get<double>());
  eta.mu_meta = mu.at("meta").get<FitMeta>();
  const auto& pi = j.at("pi");
  auto pb = bounds_from_json(pi.at("bounds"));
  if (pi.at("family") == "linear")
    eta.pi = PropensityModel::linear(PolyFeatures(pb, pi.at("degree").get<int>()),
                                     from_vec(pi.at("theta").get<std::vector<double>>()),
                                     eta.kappa);
  else
    eta.pi = PropensityModel::network(pb, pi.at("net").get<Mlp>(), eta.kappa);
  eta.pi_meta = pi.at("meta").get<FitMeta>();
  return eta;
}

}  // namespace dpcate
