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

// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dpcate/dpcate.hpp"
#include "oracles.hpp"

namespace {

using namespace dpcate;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Sample random_sample(Rng& rng, const Dataset& d) {
  Vector x(d.q());
  for (Eigen::Index j = 0; j < d.q(); ++j) {
    const auto& iv = d.covariate_bounds()[static_cast<std::size_t>(j)];
    x[j] = rng.uniform(iv.lo, iv.hi);
  }
  const int a = rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1;
  return {x, a, rng.uniform(d.outcome_bounds().lo, d.outcome_bounds().hi)};
}

Outcome identities() {
  const double kappa = 0.05;
  double rho_err = 0.0, phi_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double pi = kappa + (1.0 - 2.0 * kappa) * i / 999.0;
    const double res = 3.0 * std::sin(0.37 * i), dmu = std::cos(0.11 * i);
    for (int a : {0, 1}) {
      rho_err = std::max(rho_err, std::abs(rho_weight(LearnerKind::kR, a, pi, kappa) -
                                           (a - pi) * (a - pi)));
      rho_err = std::max(rho_err, std::abs(rho_weight(LearnerKind::kDR, a, pi, kappa) - 1.0));
      for (auto k : {LearnerKind::kR, LearnerKind::kDR}) {
        const double g = pseudo_outcome_generic(k, a, pi, res, dmu);
        phi_err = std::max(phi_err, std::abs(pseudo_outcome_from_parts(k, a, pi, res, dmu) - g) /
                                        std::max(1.0, std::abs(g)));
      }
    }
  }
  return {rho_err <= 1e-12 && phi_err <= 1e-10,
          fmt("rho_err=%.2e", rho_err) + fmt(" phi_err=%.2e", phi_err)};
}

Outcome calibration() {
  const double c = calibration_c(1.0, 0.05, 1000);
  const double c_hand = 5.0 * std::sqrt(2.0 * std::log(1000.0) * std::log(40.0)) / 1000.0;
  const KernelSpec unit{1.0, 1};
  const double r =
      calibration_r(LearnerKind::kDR, 0.05, 1.0, 1.0, 100, unit, {1.0, 0.05}).r_factor;
  const double r_hand = 4.0 * std::sqrt(2.0 * std::log(40.0)) / (std::sqrt(2.0 * M_PI) * 100.0);
  bool ok = std::abs(c / c_hand - 1.0) <= 1e-4 && std::abs(r / 0.04334 - 1.0) <= 1e-4 &&
            std::abs(r / r_hand - 1.0) <= 1e-12;
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double eps = rng.uniform(0.05, 20.0), delta = rng.uniform(1e-6, 0.5);
    const auto n = static_cast<std::size_t>(rng.uniform(2.0, 1e5));
    const double nd = static_cast<double>(n);
    const double want = 5.0 * std::sqrt(2.0 * std::log(nd) * std::log(2.0 / delta)) / (eps * nd);
    worst = std::max(worst, std::abs(calibration_c(eps, delta, n) / want - 1.0));
    const double lip = rng.uniform(0.1, 50.0), lam = rng.uniform(1e-3, 2.0);
    const double h = rng.uniform(0.05, 3.0);
    const double rw = 4.0 * lip * std::sqrt(2.0 * std::log(2.0 / delta)) /
                      (std::sqrt(2.0 * M_PI) * h * lam * nd * eps);
    worst = std::max(worst, std::abs(calibration_r(LearnerKind::kDR, 0.05, lip, lam, n,
                                                   KernelSpec{h, 1}, {eps, delta})
                                             .r_factor /
                                         rw -
                                     1.0));
  }
  ok = ok && worst <= 1e-12;
  return {ok, fmt("c=%.10f", c) + fmt(" (hand %.10f,", c_hand) +
                  fmt(" rounded 0.03570 rel %.2e)", std::abs(c / 0.03570 - 1.0)) +
                  fmt(" r=%.10f", r) + fmt(" random_rel=%.1e", worst)};
}

Outcome influence() {
  double worst = 0.0;
  for (auto kind : {LearnerKind::kR, LearnerKind::kDR}) {
    auto inst = oracle::make_instance(1, 50, kind);
    const KernelSpec k{domain_bandwidth(inst.d.covariate_bounds()), 2};
    KrrModel m = fit_krr(inst.targets, k, 0.1);
    Basis basis = Basis::polynomial(2, 2);
    LinearBasisModel lm = fit_linear_basis(inst.targets, basis, 0.01, 0.0);
    Matrix queries = oracle::rows_of(inst.targets).topRows(5);
    Rng rng(101);
    for (int t = 0; t < 20; ++t) {
      Sample z = random_sample(rng, inst.d);
      const WeightedTarget wz = make_target(kind, z, inst.eta);
      worst = std::max(worst, rel_err(influence_vector_krr(m, queries, z, inst.eta, kind),
                                      oracle::tilt_derivative_krr(inst.targets, wz, k, 0.1,
                                                                  queries)));
      worst = std::max(
          worst, rel_err(influence_vector_parametric(lm, queries, z, inst.eta, kind),
                         oracle::tilt_derivative_linear(inst.targets, wz, basis, 0.01, queries)));
    }
  }
  return {worst < 0.01, fmt("max_rel_err=%.2e", worst)};
}

Outcome gamma_oracle() {
  double worst = 0.0;
  bool dominates = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto inst = oracle::make_instance(seed, 200, LearnerKind::kDR, 1);
    const KernelSpec k{domain_bandwidth(inst.d.covariate_bounds()), 1};
    KrrModel m = fit_krr(inst.targets, k, 0.1);
    KrrInfluence map(m, oracle::rows_of(inst.targets).topRows(10));
    auto res = gross_error_sensitivity(map, inst.d.covariate_bounds(), inst.d.outcome_bounds(),
                                       inst.eta, LearnerKind::kDR);
    const double grid = oracle::grid_gamma_q1(map, inst.d.covariate_bounds()[0],
                                              inst.d.outcome_bounds(), inst.eta,
                                              LearnerKind::kDR);
    worst = std::max(worst, std::abs(res.gamma / grid - 1.0));
    dominates = dominates && res.raw_gamma >= grid * (1.0 - 1e-6);
  }
  return {worst <= 0.05, fmt("max_rel_gap=%.2e", worst) +
                             (dominates ? " raw>=grid" : " raw<grid on some seed")};
}

Outcome lemma_audit() {
  std::string detail;
  bool ok = true;
  for (auto kind : {LearnerKind::kR, LearnerKind::kDR}) {
    AuditConfig c;
    c.kind = kind;
    c.n = 50;
    c.trials = 200;
    auto rep = sensitivity_audit(c);
    ok = ok && rep.passed && rep.distances.size() == 200;
    detail += to_string(kind) + fmt(" max_ratio=%.4f ", rep.max_ratio);
  }
  return {ok, detail};
}

Outcome gp() {
  const KernelSpec unit{1.0, 1};
  Matrix q(5, 1);
  q << 0.0, 0.5, 1.0, 2.0, 3.5;
  const int draws = 20000;
  Vector mean = Vector::Zero(5);
  Matrix second = Matrix::Zero(5, 5);
  for (int s = 0; s < draws; ++s) {
    Vector u = sample_gp_batch(unit, q, static_cast<std::uint64_t>(s));
    mean += u;
    second += u * u.transpose();
  }
  mean /= draws;
  Matrix cov = (second - draws * mean * mean.transpose()) / (draws - 1);
  const double batch_err = (cov - unit.matrix(q, q)).cwiseAbs().maxCoeff();

  auto inst = oracle::make_instance(2, 60, LearnerKind::kDR, 1);
  auto model = std::make_shared<const KrrModel>(fit_krr(inst.targets, unit, 0.1));
  auto cal = calibration_r(LearnerKind::kDR, 0.05, 1.0, 0.1, 60, unit, {1.0, 0.05});
  Rng rng(9);
  double iter_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = 2 + rng.index(7);
    std::vector<Vector> xs;
    Matrix pts(static_cast<Eigen::Index>(m), 1);
    for (std::size_t i = 0; i < m; ++i) {
      xs.push_back(Vector::Constant(1, rng.uniform(0.0, 4.0)));
      pts(static_cast<Eigen::Index>(i), 0) = xs.back()[0];
    }
    GpNoiseState s(model, cal);
    Matrix joint = oracle::iterative_joint_covariance(s, xs, 11);
    Matrix k = unit.matrix(pts, pts);
    k.diagonal().array() += s.jitter();
    iter_err = std::max(iter_err, (joint - k).cwiseAbs().maxCoeff());
  }
  return {batch_err <= 0.01 && iter_err <= 1e-8,
          fmt("batch_cov_err=%.2e", batch_err) + fmt(" iterative_err=%.2e", iter_err)};
}

Outcome pehe_trend() {
  std::string detail;
  bool ok = true;
  for (auto mech : {Mechanism::kFinite, Mechanism::kFunctional}) {
    for (auto kind : {LearnerKind::kR, LearnerKind::kDR}) {
      SweepConfig cfg;
      cfg.data = SyntheticConfig::paper_default(EffectKind::kDataset1, 3000, 0);
      cfg.kind = kind;
      cfg.mechanism = mech;
      SweepResult r = run_sweep(cfg);
      bool mono = true;
      for (std::size_t i = 1; i < r.summary.size(); ++i)
        mono = mono && r.summary[i].mean <= r.summary[i - 1].mean;
      const double ratio = r.summary[2].mean / r.summary[3].mean;
      ok = ok && mono && ratio <= 1.5;
      detail += "\n    " + to_string(mech) + "/" + to_string(kind) + " mean PEHE";
      for (const auto& s : r.summary)
        detail += " " + format_epsilon(s.epsilon) + fmt(":%.4f", s.mean);
      detail += fmt(" ratio10/inf=%.3f", ratio) + (mono ? "" : " NOT-MONOTONE");
    }
  }
  return {ok, detail};
}

Outcome orthogonality() {
  std::string detail;
  bool ok = true;
  for (auto kind : {LearnerKind::kR, LearnerKind::kDR}) {
    OrthogonalityConfig c;
    c.kind = kind;
    auto r = orthogonality_probe(c);
    ok = ok && r.slope >= 1.6 && r.slope <= 2.4;
    detail += to_string(kind) + fmt(" slope=%.3f ", r.slope);
  }
  OrthogonalityConfig p;
  p.plugin = true;
  auto r = orthogonality_probe(p);
  ok = ok && r.slope >= 0.8 && r.slope <= 1.2;
  return {ok, detail + fmt("plugin slope=%.3f", r.slope)};
}

Outcome scaling() {
  double worst = 0.0;
  for (std::size_t n : {100, 200, 400})
    worst = std::max(worst, calibration_c(1.0, 0.05, 2 * n) / calibration_c(1.0, 0.05, n));
  bool halves = true;
  const KernelSpec k{0.5, 2};
  for (std::size_t n : {100, 200, 400}) {
    const double a = calibration_r(LearnerKind::kR, 0.05, 1.3, 0.1, n, k, {1.0, 0.05}).r_factor;
    const double b =
        calibration_r(LearnerKind::kR, 0.05, 1.3, 0.1, 2 * n, k, {1.0, 0.05}).r_factor;
    halves = halves && b == 0.5 * a;
  }
  return {worst <= 0.6 && halves,
          fmt("max noise ratio=%.4f", worst) + (halves ? " r halves exactly" : " r not halved")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && env -u DPCATE_LEDGER '" +
                          std::string(DPCATE_CLI_PATH) + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path root =
      fs::temp_directory_path() / ("dpcate_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  bool ok = true;
  std::string detail;
  const std::vector<std::string> steps{
      "gen --n 3000 --seed 17 --queries 300 --out data.csv --queries-out q.csv "
      "--bounds-out bounds.json",
      "fit --data data.csv --bounds bounds.json --epsilon 1 --delta 0.05 --seed 18 "
      "--budget-id run --ledger ledger.jsonl",
      "release --queries q.csv --mechanism finite --seed 19 --out finite.json "
      "--ledger ledger.jsonl"};
  for (const char* run : {"a", "b"}) {
    fs::create_directories(root / run);
    for (const auto& s : steps) ok = ok && run_cli(root / run, s) == 0;
  }
  for (const char* f : {"data.csv", "q.csv", "nuisance.json", "model.json", "finite.json"}) {
    const bool same = !slurp(root / "a" / f).empty() && slurp(root / "a" / f) == slurp(root / "b" / f);
    if (!same) detail += std::string(f) + " differs; ";
    ok = ok && same;
  }
  const int refused = run_cli(root / "a",
                              "release --queries q.csv --mechanism functional --seed 20 "
                              "--out again.csv --ledger ledger.jsonl");
  ok = ok && refused == 3 && !fs::exists(root / "a" / "again.csv");

  SweepConfig cfg;
  cfg.data = SyntheticConfig::paper_default(EffectKind::kDataset1, 3000, 0);
  cfg.seeds = {3};
  cfg.epsilons = {1.0};
  cfg.mechanism = Mechanism::kFunctional;
  const bool lib_same = run_sweep(cfg).rows[0].pehe == run_sweep(cfg).rows[0].pehe;
  ok = ok && lib_same;
  fs::remove_all(root);
  return {ok, detail + "second release exit=" + std::to_string(refused) +
                  (lib_same ? " library pipeline bit-identical" : " library pipeline differs")};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> fn;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"1 algebraic identities", 1.0, identities},
      {"2 calibration formulas", 1.0, calibration},
      {"3 influence-function oracle", 60.0, influence},
      {"4 gross-error sensitivity oracle", 120.0, gamma_oracle},
      {"5 RKHS sensitivity audit", 120.0, lemma_audit},
      {"6 GP correctness", 60.0, gp},
      {"7 PEHE trend", 900.0, pehe_trend},
      {"8 orthogonality slope", 300.0, orthogonality},
      {"9 excess-risk scaling", 1.0, scaling},
      {"10 determinism and ledger", 120.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s criterion %s [%.2fs / %.0fs%s] %s\n", pass ? "PASS" : "FAIL", c.name, secs,
                c.budget_s, in_time ? "" : " OVER TIME", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
