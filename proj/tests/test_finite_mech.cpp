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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dpcate/dpcate.hpp"
#include "oracles.hpp"

namespace dpcate {
namespace {

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

TEST(CalibrationC, HandEvaluation) {
  EXPECT_NEAR(calibration_c(1.0, 0.05, 1000), 0.03569445091515227, 1e-15);
  const double hand = 5.0 * std::sqrt(2.0 * std::log(1000.0) * std::log(40.0)) / 1000.0;
  EXPECT_NEAR(calibration_c(1.0, 0.05, 1000) / hand, 1.0, 1e-12);
}

TEST(CalibrationC, RandomTuples) {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    const double eps = rng.uniform(0.05, 20.0);
    const double delta = rng.uniform(1e-6, 0.5);
    const auto n = static_cast<std::size_t>(rng.uniform(2.0, 1e5));
    const double nd = static_cast<double>(n);
    const double want = 5.0 * std::sqrt(2.0 * std::log(nd) * std::log(2.0 / delta)) / (eps * nd);
    EXPECT_NEAR(calibration_c(eps, delta, n), want, 1e-12 * want);
  }
}

TEST(CalibrationC, Rejects) {
  EXPECT_THROW(calibration_c(0.0, 0.05, 10), ArgumentError);
  EXPECT_THROW(calibration_c(1.0, 1.0, 10), ArgumentError);
  EXPECT_THROW(calibration_c(1.0, 0.05, 1), ArgumentError);
}

TEST(CalibrationC, NoiseScaleShrinksWithN) {
  for (std::size_t n : {100, 200, 400})
    EXPECT_LE(calibration_c(1.0, 0.05, 2 * n) / calibration_c(1.0, 0.05, n), 0.6);
}

TEST(KrrInfluence, MatchesTiltAndRefit) {
  for (LearnerKind kind : {LearnerKind::kR, LearnerKind::kDR}) {
    for (std::uint64_t seed : {1, 2}) {
      auto inst = oracle::make_instance(seed, 50, kind);
      const KernelSpec k{domain_bandwidth(inst.d.covariate_bounds()), 2};
      KrrModel m = fit_krr(inst.targets, k, 0.1);
      Matrix queries = oracle::rows_of(inst.targets).topRows(5);
      Rng rng(seed + 100);
      for (int trial = 0; trial < 20; ++trial) {
        Sample z = random_sample(rng, inst.d);
        Vector got = influence_vector_krr(m, queries, z, inst.eta, kind);
        Vector want = oracle::tilt_derivative_krr(inst.targets, make_target(kind, z, inst.eta), k,
                                                  0.1, queries);
        EXPECT_LT(rel_err(got, want), 0.01) << "seed " << seed << " trial " << trial;
      }
    }
  }
}

TEST(ParametricInfluence, MatchesTiltAndRefit) {
  for (LearnerKind kind : {LearnerKind::kR, LearnerKind::kDR}) {
    auto inst = oracle::make_instance(3, 50, kind);
    Basis basis = Basis::polynomial(2, 2);
    LinearBasisModel m = fit_linear_basis(inst.targets, basis, 0.01, 0.0);
    Matrix queries = oracle::rows_of(inst.targets).topRows(4);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Sample z = random_sample(rng, inst.d);
      Vector got = influence_vector_parametric(m, queries, z, inst.eta, kind);
      Vector want = oracle::tilt_derivative_linear(inst.targets, make_target(kind, z, inst.eta),
                                                   basis, 0.01, queries);
      EXPECT_LT(rel_err(got, want), 0.01);
    }
  }
}

// Five points, basis {1, x}; values from an independent hand solve.
TEST(ParametricInfluence, FrozenSmallInstance) {
  const std::vector<double> xs{0.0, 0.25, 0.5, 0.75, 1.0};
  const std::vector<double> rho{1.0, 0.5, 2.0, 1.0, 0.25};
  const std::vector<double> phi{1.0, 3.0, 2.0, 5.0, 4.0};
  std::vector<WeightedTarget> t;
  for (std::size_t i = 0; i < xs.size(); ++i) t.push_back({Vector::Constant(1, xs[i]), rho[i], phi[i]});
  LinearBasisModel m = fit_linear_basis(t, Basis::polynomial(1, 1), 0.1, 0.0);
  EXPECT_NEAR(m.theta[0], 1.5310136157337366, 1e-12);
  EXPECT_NEAR(m.theta[1], 2.099848714069591, 1e-12);
  Matrix q(2, 1);
  q << 0.2, 0.8;
  ParametricInfluence map(m, q);
  Vector x = Vector::Constant(1, 0.6);
  Vector inf = map.h(x) * (0.7 * (6.0 - map.fitted(x)));
  EXPECT_NEAR(inf[0], 1.6828963771482714, 1e-10);
  EXPECT_NEAR(inf[1], 3.0205135299058634, 1e-10);
}

TEST(KrrInfluence, RejectsWrongDimension) {
  auto inst = oracle::make_instance(1, 30, LearnerKind::kDR);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.5, 2}, 0.1);
  Matrix q = Matrix::Constant(1, 2, 0.5);
  Sample z{Vector::Constant(3, 0.5), 1, 1.0};
  EXPECT_THROW(influence_vector_krr(m, q, z, inst.eta, LearnerKind::kDR), ArgumentError);
}

class GammaOracle : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GammaOracle, MultistartMatchesDenseGrid) {
  const std::uint64_t seed = GetParam();
  auto inst = oracle::make_instance(seed, 200, LearnerKind::kDR, 1);
  const KernelSpec k{domain_bandwidth(inst.d.covariate_bounds()), 1};
  KrrModel m = fit_krr(inst.targets, k, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(10);
  KrrInfluence map(m, q);
  auto res = gross_error_sensitivity(map, inst.d.covariate_bounds(), inst.d.outcome_bounds(),
                                     inst.eta, LearnerKind::kDR);
  const double grid = oracle::grid_gamma_q1(map, inst.d.covariate_bounds()[0],
                                            inst.d.outcome_bounds(), inst.eta, LearnerKind::kDR);
  EXPECT_NEAR(res.gamma / grid, 1.0, 0.05);
  EXPECT_GE(res.raw_gamma, grid * (1.0 - 1e-6));
}

INSTANTIATE_TEST_SUITE_P(Seeds, GammaOracle, ::testing::Values(1, 2, 3, 4, 5));

TEST(Gamma, MonotoneInOutcomeBounds) {
  auto inst = oracle::make_instance(4, 100, LearnerKind::kR, 1);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.3, 1}, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(5);
  KrrInfluence map(m, q);
  Interval y = inst.d.outcome_bounds();
  Interval wider{y.lo - 2.0, y.hi + 2.0};
  auto a = gross_error_sensitivity(map, inst.d.covariate_bounds(), y, inst.eta, LearnerKind::kR);
  auto b = gross_error_sensitivity(map, inst.d.covariate_bounds(), wider, inst.eta, LearnerKind::kR);
  EXPECT_GT(b.raw_gamma, a.raw_gamma);
}

TEST(Gamma, DominatesEverySampledInfluence) {
  auto inst = oracle::make_instance(5, 80, LearnerKind::kDR);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.5, 2}, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(3);
  KrrInfluence map(m, q);
  auto res = gross_error_sensitivity(map, inst.d.covariate_bounds(), inst.d.outcome_bounds(),
                                     inst.eta, LearnerKind::kDR);
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    Sample z = random_sample(rng, inst.d);
    EXPECT_LE(influence_vector(map, z, inst.eta, LearnerKind::kDR).norm(), res.gamma * (1 + 1e-9));
  }
}

TEST(ReleaseFinite, InfiniteBudgetIsExact) {
  auto inst = oracle::make_instance(6, 60, LearnerKind::kR);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.5, 2}, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(4);
  auto r = release_finite(m, q, inst.eta, {kInf, 0.05}, inst.d.covariate_bounds(),
                          inst.d.outcome_bounds(), LearnerKind::kR, 1);
  EXPECT_EQ(r.noise_scale, 0.0);
  EXPECT_EQ(r.private_estimates, r.raw_estimates);
  EXPECT_LT((r.raw_estimates - m.predict(q)).norm(), 1e-12);
}

TEST(ReleaseFinite, NoiseScaleIsCTimesGammaAndDeterministic) {
  auto inst = oracle::make_instance(7, 60, LearnerKind::kDR);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.5, 2}, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(4);
  auto run = [&](std::uint64_t seed) {
    return release_finite(m, q, inst.eta, {1.0, 0.05}, inst.d.covariate_bounds(),
                          inst.d.outcome_bounds(), LearnerKind::kDR, seed);
  };
  auto a = run(9), b = run(9), c = run(10);
  EXPECT_DOUBLE_EQ(a.noise_scale, a.gamma * calibration_c(1.0, 0.05, 60));
  EXPECT_EQ(a.private_estimates, b.private_estimates);
  EXPECT_NE(a.private_estimates, c.private_estimates);
  EXPECT_LT((a.private_estimates - (a.raw_estimates + a.noise_scale * a.noise)).norm(), 1e-12);
}

TEST(ReleaseFinite, ReportHidesRawOutsideAudit) {
  auto inst = oracle::make_instance(8, 40, LearnerKind::kDR);
  KrrModel m = fit_krr(inst.targets, KernelSpec{0.5, 2}, 0.1);
  Matrix q = oracle::rows_of(inst.targets).topRows(2);
  auto r = release_finite(m, q, inst.eta, {1.0, 0.05}, inst.d.covariate_bounds(),
                          inst.d.outcome_bounds(), LearnerKind::kDR, 1);
  auto plain = finite_report_to_json(r, false);
  auto audit = finite_report_to_json(r, true);
  EXPECT_FALSE(plain.contains("raw_estimates"));
  EXPECT_TRUE(audit.contains("raw_estimates"));
  EXPECT_EQ(plain.at("private_estimates").size(), 2u);
  EXPECT_DOUBLE_EQ(plain.at("gamma").get<double>(), r.gamma);
}

}  // namespace
}  // namespace dpcate
