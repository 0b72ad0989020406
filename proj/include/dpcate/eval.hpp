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

// Experiment harness: PEHE, privacy-budget sweeps on synthetic data, the
// orthogonality probe and the empirical RKHS sensitivity audit.

#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"
#include "dpcate/finite_mech.hpp"
#include "dpcate/functional_mech.hpp"
#include "dpcate/kernel.hpp"
#include "dpcate/nuisance.hpp"
#include "dpcate/pseudo.hpp"
#include "dpcate/rng.hpp"
#include "dpcate/secondstage.hpp"

namespace dpcate {

inline double pehe(const Vector& predictions, const Vector& truth) {
  if (predictions.size() != truth.size()) throw ArgumentError("pehe: length mismatch");
  if (predictions.size() == 0) throw ArgumentError("pehe: empty input");
  return std::sqrt((predictions - truth).squaredNorm() / static_cast<double>(truth.size()));
}

enum class Mechanism { kNone, kFinite, kFunctional };

inline std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::kNone: return "none";
    case Mechanism::kFinite: return "finite";
    case Mechanism::kFunctional: return "functional";
  }
  return "none";
}

inline Mechanism mechanism_from_string(const std::string& s) {
  if (s == "none") return Mechanism::kNone;
  if (s == "finite") return Mechanism::kFinite;
  if (s == "functional") return Mechanism::kFunctional;
  throw ArgumentError("unknown mechanism '" + s + "'");
}

struct SecondStageSpec {
  double lambda_reg = 0.1;
  double bandwidth = 0.0;  // <= 0: domain_bandwidth of the covariate bounds

  KernelSpec kernel_for(const std::vector<Interval>& bounds) const {
    return {bandwidth > 0.0 ? bandwidth : domain_bandwidth(bounds),
            static_cast<Eigen::Index>(bounds.size())};
  }
};

struct NuisanceSpec {
  NuisanceMethod method = NuisanceMethod::kParamOutputPerturbation;
  NuisanceHyper hyper;
  double kappa = 0.05;
};

struct SweepConfig {
  SyntheticConfig data;  // the seed field is overwritten per sweep seed
  LearnerKind kind = LearnerKind::kR;
  Mechanism mechanism = Mechanism::kFinite;
  std::vector<double> epsilons{0.1, 1.0, 10.0, kInf};
  double delta = 0.05;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  SecondStageSpec stage2;
  NuisanceSpec nuisance;
  std::size_t queries = 300;
  double train_fraction = 0.9;
  double nuisance_fraction = 0.5;  // share of the training split used as D~
  SensitivityOptions sensitivity;

  void validate() const {
    data.validate();
    if (epsilons.empty() || seeds.empty()) throw ArgumentError("sweep grid is empty");
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
      if (!(epsilons[i] > 0.0)) throw ArgumentError("epsilons must be positive");
      if (i > 0 && !(epsilons[i] > epsilons[i - 1]))
        throw ArgumentError("epsilons must be strictly ascending");
    }
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) throw ArgumentError("seeds must be distinct");
    if (queries < 1) throw ArgumentError("query count must be >= 1");
    PrivacyBudget{1.0, delta}.validate();
  }
};

struct SweepRow {
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double pehe = 0.0;
  double baseline_pehe = 0.0;
  double noise_scale = 0.0;  // gamma c for finite, r for functional
};

struct SweepSummary {
  double epsilon = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double mean_noise_scale = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;  // one per epsilon, ascending
  double baseline_mean = 0.0;
  double baseline_sd = 0.0;
};

// One seed's data: D~ for the nuisances, D for stage 2, and held-out queries
// with their true effects.
struct PipelineSplit {
  Dataset nuisance_data;
  Dataset stage2_data;
  Matrix queries;
  Vector truth;
};

inline PipelineSplit make_pipeline_split(const SweepConfig& cfg, std::uint64_t seed) {
  SyntheticConfig dc = cfg.data;
  dc.seed = seed;
  SyntheticData s = generate_synthetic(dc);
  auto [train, test] = split_disjoint(s.data, cfg.train_fraction, seed);
  auto [d_tilde, d] = split_disjoint(train, cfg.nuisance_fraction, mix_seed(seed, 1));
  const std::size_t m = std::min(cfg.queries, test.size());
  PipelineSplit out{std::move(d_tilde), std::move(d), Matrix(static_cast<Eigen::Index>(m), dc.p),
                    Vector(static_cast<Eigen::Index>(m))};
  for (std::size_t i = 0; i < m; ++i) {
    out.queries.row(static_cast<Eigen::Index>(i)) = test[i].x.transpose();
    out.truth[static_cast<Eigen::Index>(i)] = s.true_cate(test[i].x);
  }
  return out;
}

struct StageTwoRelease {
  Vector estimates;
  double noise_scale = 0.0;
};

// Stage 2 plus the chosen release mechanism on fitted nuisances.
inline StageTwoRelease release_stage_two(const SweepConfig& cfg, const PipelineSplit& sp,
                                         const NuisancePair& eta, const PrivacyBudget& budget,
                                         std::uint64_t release_seed) {
  const Dataset& d = sp.stage2_data;
  auto targets = build_targets(d, eta, cfg.kind);
  const KernelSpec kernel = cfg.stage2.kernel_for(d.covariate_bounds());
  KrrModel model = fit_krr(targets, kernel, cfg.stage2.lambda_reg);
  StageTwoRelease out;
  switch (cfg.mechanism) {
    case Mechanism::kNone:
      out.estimates = model.predict(sp.queries);
      break;
    case Mechanism::kFinite: {
      auto r = release_finite(model, sp.queries, eta, budget, d.covariate_bounds(),
                              d.outcome_bounds(), cfg.kind, release_seed, cfg.sensitivity);
      out.estimates = r.private_estimates;
      out.noise_scale = r.noise_scale;
      break;
    }
    case Mechanism::kFunctional: {
      double lipschitz = 1.0;
      if (!budget.is_infinite())
        lipschitz = squared_loss_lipschitz(eta, cfg.kind, kernel, cfg.stage2.lambda_reg,
                                           d.covariate_bounds(), d.outcome_bounds(),
                                           cfg.sensitivity.search)
                        .lipschitz;
      auto cal = calibration_r(cfg.kind, eta.kappa, lipschitz, cfg.stage2.lambda_reg, d.size(),
                               kernel, budget);
      auto r = release_function_batch(model, sp.queries, cal, release_seed);
      out.estimates = r.private_estimates;
      out.noise_scale = r.r_factor;
      break;
    }
  }
  return out;
}

// Per seed: generate and split, fit a non-private baseline, then for every
// epsilon fit private nuisances, fit stage 2 and release. Nuisance and release
// noise seeds depend on the sweep seed only, so all epsilons share the same
// standard-normal draws.
inline SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  SweepResult res;
  std::vector<double> baselines;
  for (std::uint64_t seed : cfg.seeds) {
    PipelineSplit sp = make_pipeline_split(cfg, seed);
    NuisancePair base_eta =
        fit_nuisances_nonprivate(sp.nuisance_data, cfg.nuisance.kappa, cfg.nuisance.hyper);
    auto base_targets = build_targets(sp.stage2_data, base_eta, cfg.kind);
    KrrModel base_model =
        fit_krr(base_targets, cfg.stage2.kernel_for(sp.stage2_data.covariate_bounds()),
                cfg.stage2.lambda_reg);
    const double baseline = pehe(base_model.predict(sp.queries), sp.truth);
    baselines.push_back(baseline);
    for (double eps : cfg.epsilons) {
      const PrivacyBudget budget{eps, cfg.delta};
      NuisancePair eta = fit_nuisances_private(sp.nuisance_data, budget, cfg.nuisance.kappa,
                                               cfg.nuisance.method, cfg.nuisance.hyper,
                                               mix_seed(seed, 2));
      auto rel = release_stage_two(cfg, sp, eta, budget, mix_seed(seed, 3));
      res.rows.push_back({eps, seed, pehe(rel.estimates, sp.truth), baseline, rel.noise_scale});
    }
  }
  auto mean_sd = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{m, sd};
  };
  for (double eps : cfg.epsilons) {
    std::vector<double> p, ns;
    for (const auto& r : res.rows)
      if (r.epsilon == eps) {
        p.push_back(r.pehe);
        ns.push_back(r.noise_scale);
      }
    auto [m, sd] = mean_sd(p);
    res.summary.push_back({eps, m, sd, mean_sd(ns).first});
  }
  std::tie(res.baseline_mean, res.baseline_sd) = mean_sd(baselines);
  return res;
}

inline std::string format_epsilon(double eps) {
  return std::isinf(eps) ? "inf" : detail::format_double(eps);
}

inline void write_sweep_csv(const SweepResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "epsilon,seed,pehe,baseline_pehe\n";
  for (const auto& row : r.rows)
    out << format_epsilon(row.epsilon) << ',' << row.seed << ',' << detail::format_double(row.pehe)
        << ',' << detail::format_double(row.baseline_pehe) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

inline nlohmann::json sweep_summary_json(const SweepConfig& cfg, const SweepResult& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : r.summary)
    per.push_back({{"epsilon", format_epsilon(s.epsilon)},
                   {"mean_pehe", s.mean},
                   {"sd_pehe", s.sd},
                   {"mean_noise_scale", s.mean_noise_scale}});
  return {{"format", "dpcate.sweep.v1"},
          {"data", cfg.data},
          {"learner", to_string(cfg.kind)},
          {"mechanism", to_string(cfg.mechanism)},
          {"delta", cfg.delta},
          {"seeds", cfg.seeds},
          {"lambda_reg", cfg.stage2.lambda_reg},
          {"bandwidth", cfg.stage2.bandwidth},
          {"queries", cfg.queries},
          {"baseline_mean_pehe", r.baseline_mean},
          {"baseline_sd_pehe", r.baseline_sd},
          {"per_epsilon", per}};
}

// ---------------------------------------------------------------------------
// Orthogonality probe

struct OrthogonalityConfig {
  std::uint64_t seed = 1;
  std::vector<double> magnitudes{0.02, 0.04, 0.08, 0.16};
  LearnerKind kind = LearnerKind::kR;
  bool plugin = false;  // regress mu1 - mu0 directly (not orthogonal)
  std::size_t n = 2000;
  std::size_t queries = 300;
  SecondStageSpec stage2;
  double kappa = 0.05;
};

struct OrthogonalityResult {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> magnitudes;
  std::vector<double> errors;  // L2 distance to the oracle-nuisance fit
};

// Least-squares slope of log(error) on log(t).
inline std::pair<double, double> loglog_fit(const std::vector<double>& t,
                                            const std::vector<double>& e) {
  if (t.size() != e.size() || t.size() < 2) throw NumericError("loglog_fit needs >= 2 points");
  double mx = 0.0, my = 0.0;
  const auto k = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] > 0.0) || !(e[i] > 0.0)) throw NumericError("loglog_fit needs positive values");
    mx += std::log(t[i]) / k;
    my += std::log(e[i]) / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (std::log(t[i]) - mx) * (std::log(e[i]) - my);
    sxx += (std::log(t[i]) - mx) * (std::log(t[i]) - mx);
  }
  if (!(sxx > 0.0)) throw NumericError("degenerate log-log regression");
  return {sxy / sxx, my - sxy / sxx * mx};
}

// Perturbs the true nuisances of dataset1 along a fixed smooth direction,
// mu + t (1 + a) sin(pi x0) and pi + t sin(pi x0) / 2, and refits stage 2 on
// the conditional expectation of the weighted risk given each covariate.
// Integrating (A, Y) out exactly removes the first-order sampling term, so the
// distance to the oracle fit isolates the nuisance bias.
inline OrthogonalityResult orthogonality_probe(const OrthogonalityConfig& cfg) {
  if (cfg.magnitudes.size() < 3) throw ArgumentError("need at least three magnitudes");
  SyntheticConfig dc;
  dc.n = cfg.n + cfg.queries;
  dc.seed = cfg.seed;
  SyntheticData s = generate_synthetic(dc);
  const auto& bounds = s.data.covariate_bounds();
  const KernelSpec kernel = cfg.stage2.kernel_for(bounds);
  const double pi_c = std::acos(-1.0);

  auto mu0 = [&](const Vector& x, int a) { return s.true_cate(x) * a + x.dot(s.gamma); };
  auto pi0 = [&](const Vector& x) { return std::clamp(0.5 * (x.dot(s.beta) + 1.0), 0.0, 1.0); };
  auto fit_at = [&](double t) {
    std::vector<WeightedTarget> targets;
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const Vector& x = s.data[i].x;
      const double dir = std::sin(pi_c * x[0]);
      auto mut = [&](int a) { return mu0(x, a) + t * (1.0 + a) * dir; };
      const double p0 = pi0(x);
      const double pt = std::clamp(p0 + 0.5 * t * dir, cfg.kappa, 1.0 - cfg.kappa);
      if (cfg.plugin) {
        targets.push_back({x, 1.0, mut(1) - mut(0)});
        continue;
      }
      double w = 0.0, wphi = 0.0;
      for (int a : {0, 1}) {
        const double pa = a == 1 ? p0 : 1.0 - p0;
        const double rho = rho_weight(cfg.kind, a, pt, cfg.kappa);
        // phi is affine in y, so its mean uses the true outcome regression.
        const double phi =
            pseudo_outcome_from_parts(cfg.kind, a, pt, mu0(x, a) - mut(a), mut(1) - mut(0));
        w += pa * rho;
        wphi += pa * rho * phi;
      }
      targets.push_back({x, w, wphi / w});
    }
    KrrModel m = fit_krr(targets, kernel, cfg.stage2.lambda_reg);
    Matrix q(static_cast<Eigen::Index>(cfg.queries), dc.p);
    for (std::size_t i = 0; i < cfg.queries; ++i)
      q.row(static_cast<Eigen::Index>(i)) = s.data[cfg.n + i].x.transpose();
    return Vector(m.predict(q));
  };

  OrthogonalityResult res;
  const Vector oracle = fit_at(0.0);
  for (double t : cfg.magnitudes) {
    res.magnitudes.push_back(t);
    res.errors.push_back(pehe(fit_at(t), oracle));
  }
  std::tie(res.slope, res.intercept) = loglog_fit(res.magnitudes, res.errors);
  return res;
}

// ---------------------------------------------------------------------------
// Empirical RKHS sensitivity audit

struct AuditConfig {
  std::size_t n = 50;
  std::size_t trials = 200;
  double lambda_reg = 0.1;
  double bandwidth = 0.0;  // <= 0: domain bandwidth
  LearnerKind kind = LearnerKind::kR;
  std::uint64_t seed = 1;
  double kappa = 0.05;
  std::size_t nuisance_n = 500;
};

struct AuditReport {
  double bound = 0.0;
  double lipschitz = 0.0;
  double max_distance = 0.0;
  double max_ratio = 0.0;
  std::vector<double> distances;
  bool passed = false;
};

// |f - f'|_H for two dual expansions over different centres.
inline double rkhs_distance(const KernelSpec& k, const Matrix& xa, const Vector& aa,
                            const Matrix& xb, const Vector& ab) {
  Matrix u(xa.rows() + xb.rows(), xa.cols());
  u << xa, xb;
  Vector c(aa.size() + ab.size());
  c << aa, -ab;
  const double sq = c.dot(k.matrix(u, u) * c);
  return std::sqrt(std::max(sq, 0.0));
}

// Replaces one random training sample at a time by a draw from the declared
// domain (outcome at an endpoint half of the time) and compares the RKHS
// distance of the two fits with the sensitivity bound.
inline AuditReport sensitivity_audit(const AuditConfig& cfg) {
  if (cfg.trials < 1) throw ArgumentError("audit needs at least one trial");
  if (cfg.n < 2) throw ArgumentError("audit needs n >= 2");
  SyntheticConfig dc;
  dc.n = cfg.n + cfg.nuisance_n;
  dc.seed = cfg.seed;
  SyntheticData s = generate_synthetic(dc);
  std::vector<std::size_t> first(cfg.nuisance_n), second(cfg.n);
  for (std::size_t i = 0; i < cfg.nuisance_n; ++i) first[i] = i;
  for (std::size_t i = 0; i < cfg.n; ++i) second[i] = cfg.nuisance_n + i;
  Dataset d_tilde = s.data.subset(first), d = s.data.subset(second);
  NuisancePair eta = fit_nuisances_nonprivate(d_tilde, cfg.kappa, NuisanceHyper{});
  const auto& bounds = d.covariate_bounds();
  const Interval yb = d.outcome_bounds();
  const KernelSpec kernel{cfg.bandwidth > 0.0 ? cfg.bandwidth : domain_bandwidth(bounds),
                          static_cast<Eigen::Index>(bounds.size())};

  AuditReport rep;
  rep.lipschitz =
      squared_loss_lipschitz(eta, cfg.kind, kernel, cfg.lambda_reg, bounds, yb).lipschitz;
  rep.bound = rkhs_sensitivity_bound(sup_rho(cfg.kind, cfg.kappa), rep.lipschitz,
                                     cfg.lambda_reg, cfg.n, kernel);
  auto targets = build_targets(d, eta, cfg.kind);
  KrrModel base = fit_krr(targets, kernel, cfg.lambda_reg);
  Rng rng(derive_seed(cfg.seed, Stream::kAudit));
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const std::size_t i = rng.index(cfg.n);
    Sample z;
    z.x.resize(kernel.dim);
    for (Eigen::Index j = 0; j < kernel.dim; ++j)
      z.x[j] = rng.uniform(bounds[static_cast<std::size_t>(j)].lo,
                           bounds[static_cast<std::size_t>(j)].hi);
    z.a = static_cast<int>(rng.index(2));
    z.y = t % 2 == 0 ? (rng.index(2) == 0 ? yb.lo : yb.hi) : rng.uniform(yb.lo, yb.hi);
    auto alt = targets;
    alt[i] = make_target(cfg.kind, z, eta);
    KrrModel other = fit_krr(alt, kernel, cfg.lambda_reg);
    const double dist =
        rkhs_distance(kernel, base.train_x(), base.alpha(), other.train_x(), other.alpha());
    rep.distances.push_back(dist);
    rep.max_distance = std::max(rep.max_distance, dist);
  }
  rep.max_ratio = rep.max_distance / rep.bound;
  rep.passed = rep.max_ratio <= 1.0;
  return rep;
}

}  // namespace dpcate
