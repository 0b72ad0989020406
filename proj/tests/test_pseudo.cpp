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

constexpr double kKappa = 0.05;

TEST(RhoWeight, HandValues) {
  EXPECT_DOUBLE_EQ(rho_weight(LearnerKind::kR, 1, 0.5, kKappa), 0.25);
  EXPECT_NEAR(rho_weight(LearnerKind::kR, 0, 0.3, kKappa), 0.09, 1e-15);
  EXPECT_EQ(rho_weight(LearnerKind::kDR, 0, 0.3, kKappa), 1.0);
  EXPECT_EQ(rho_weight(LearnerKind::kDR, 1, 0.9, kKappa), 1.0);
}

TEST(RhoWeight, IdentitiesOnGrid) {
  for (int i = 0; i < 1000; ++i) {
    const double pi = kKappa + (1.0 - 2.0 * kKappa) * i / 999.0;
    for (int a : {0, 1}) {
      const double r = rho_weight(LearnerKind::kR, a, pi, kKappa);
      EXPECT_NEAR(r, (a - pi) * (a - pi), 1e-12);
      EXPECT_LE(r, sup_rho(LearnerKind::kR, kKappa) + 1e-15);
      EXPECT_LE(r, 1.0);
      EXPECT_GT(r, 0.0);
      EXPECT_EQ(rho_weight(LearnerKind::kDR, a, pi, kKappa), 1.0);
    }
  }
  EXPECT_DOUBLE_EQ(sup_rho(LearnerKind::kR, kKappa), 0.9025);
  EXPECT_EQ(sup_rho(LearnerKind::kDR, kKappa), 1.0);
}

TEST(RhoWeight, Rejects) {
  EXPECT_THROW(rho_weight(LearnerKind::kR, 1, 0.01, kKappa), ArgumentError);
  EXPECT_THROW(rho_weight(LearnerKind::kR, 1, 0.99, kKappa), ArgumentError);
  EXPECT_THROW(rho_weight(LearnerKind::kDR, 2, 0.5, kKappa), DomainError);
}

TEST(PseudoOutcome, HandValues) {
  EXPECT_NEAR(pseudo_outcome_from_parts(LearnerKind::kR, 1, 0.5, 0.2, 1.0), 1.4, 1e-15);
  EXPECT_NEAR(pseudo_outcome_from_parts(LearnerKind::kDR, 0, 0.25, 0.3, 0.0), -0.4, 1e-15);
  for (LearnerKind k : {LearnerKind::kR, LearnerKind::kDR})
    for (int a : {0, 1}) EXPECT_EQ(pseudo_outcome_from_parts(k, a, 0.37, 0.0, 2.5), 2.5);
}

TEST(PseudoOutcome, ReducedFormMatchesGenericOnGrid) {
  for (int i = 0; i < 1000; ++i) {
    const double pi = kKappa + (1.0 - 2.0 * kKappa) * i / 999.0;
    const double res = std::sin(0.37 * i) * 3.0, dmu = std::cos(0.11 * i);
    for (int a : {0, 1}) {
      for (LearnerKind k : {LearnerKind::kR, LearnerKind::kDR}) {
        const double reduced = pseudo_outcome_from_parts(k, a, pi, res, dmu);
        const double generic = pseudo_outcome_generic(k, a, pi, res, dmu);
        EXPECT_NEAR(reduced, generic, 1e-10 * std::max(1.0, std::abs(generic)));
      }
    }
  }
}

TEST(PseudoOutcome, RAndDRAgreeAtOneHalf) {
  for (double res : {-1.3, 0.0, 0.7})
    for (int a : {0, 1}) {
      const double want = 2.0 * (2 * a - 1) * res + 0.4;
      EXPECT_NEAR(pseudo_outcome_from_parts(LearnerKind::kR, a, 0.5, res, 0.4), want, 1e-14);
      EXPECT_NEAR(pseudo_outcome_from_parts(LearnerKind::kDR, a, 0.5, res, 0.4), want, 1e-14);
    }
}

TEST(PseudoOutcome, AffineInOutcome) {
  auto inst = oracle::make_instance(1, 20, LearnerKind::kDR);
  for (LearnerKind k : {LearnerKind::kR, LearnerKind::kDR}) {
    for (const auto& s : inst.d.samples()) {
      Sample z0 = s, z1 = s, z2 = s;
      z0.y = -1.0;
      z1.y = 0.5;
      z2.y = 2.0;
      const double f0 = pseudo_outcome(k, z0, inst.eta), f1 = pseudo_outcome(k, z1, inst.eta);
      const double f2 = pseudo_outcome(k, z2, inst.eta);
      EXPECT_NEAR((f1 - f0) / 1.5, (f2 - f1) / 1.5, 1e-9 * std::max(1.0, std::abs(f2)));
    }
  }
}

// Oracle nuisances mu(x,a) = theta(x) a + x'gamma and pi(x) = (x'beta + 1) / 2;
// A and Y drawn directly from the generating process at a fixed x.
TEST(PseudoOutcome, UnbiasedUnderOracleNuisances) {
  auto s = generate_synthetic(SyntheticConfig::paper_default(EffectKind::kDataset1, 1, 21));
  Rng rng(5);
  for (double x0 : {0.15, 0.5, 0.85}) {
    Vector x(2);
    x << x0, 0.4;
    const double theta = s.true_cate(x), lin = x.dot(s.gamma);
    const double pi = (x.dot(s.beta) + 1.0) / 2.0;
    for (LearnerKind k : {LearnerKind::kR, LearnerKind::kDR}) {
      const int m = 10000;
      double sum = 0.0, sum2 = 0.0, wsum = 0.0;
      for (int i = 0; i < m; ++i) {
        const int a = x.dot(s.beta) >= rng.uniform(-1.0, 1.0) ? 1 : 0;
        const double y = theta * a + lin + rng.uniform(-1.0, 1.0);
        const double phi = pseudo_outcome_from_parts(k, a, pi, y - (theta * a + lin), theta);
        // The R-learner target is rho-weighted: E[rho phi] / E[rho] = tau.
        const double w = k == LearnerKind::kR ? (a - pi) * (a - pi) : 1.0;
        sum += w * phi;
        sum2 += w * phi * w * phi;
        wsum += w;
      }
      const double mean = sum / wsum;
      const double se = std::sqrt(sum2 / m - (sum / m) * (sum / m)) / std::sqrt(m) / (wsum / m);
      EXPECT_NEAR(mean, theta, 3.0 * se + 1e-12) << to_string(k) << " x0=" << x0;
    }
  }
}

TEST(BuildTargets, OrderAndConsistency) {
  auto inst = oracle::make_instance(2, 30, LearnerKind::kR);
  auto t = build_targets(inst.d, inst.eta, LearnerKind::kR);
  ASSERT_EQ(t.size(), inst.d.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t[i].x, inst.d[i].x);
    EXPECT_GT(t[i].rho, 0.0);
    EXPECT_TRUE(std::isfinite(t[i].phi));
    EXPECT_DOUBLE_EQ(t[i].phi, pseudo_outcome(LearnerKind::kR, inst.d[i], inst.eta));
  }
  Dataset one = inst.d.subset({0});
  EXPECT_EQ(build_targets(one, inst.eta, LearnerKind::kDR).size(), 1u);
  EXPECT_THROW(build_targets(inst.d.subset({}), inst.eta, LearnerKind::kDR), EmptyDatasetError);
}

TEST(LearnerKind, StringRoundTrip) {
  EXPECT_EQ(learner_kind_from_string(to_string(LearnerKind::kR)), LearnerKind::kR);
  EXPECT_EQ(learner_kind_from_string("DR"), LearnerKind::kDR);
  EXPECT_THROW(learner_kind_from_string("X"), ArgumentError);
}

}  // namespace
}  // namespace dpcate
