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

#include <algorithm>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/data.hpp"

namespace dpcate {

// Normalized Gaussian kernel (sqrt(2 pi) h)^{-q} exp(-|x - x'|^2 / (2 h^2)).
struct KernelSpec {
  double bandwidth = 1.0;
  Eigen::Index dim = 1;

  void validate() const {
    if (!(bandwidth > 0.0)) throw ArgumentError("kernel bandwidth must be > 0");
    if (dim < 1) throw ArgumentError("kernel dimension must be >= 1");
  }

  // K(x, x), identical for every x.
  double self_value() const {
    return std::pow(std::sqrt(2.0 * std::acos(-1.0)) * bandwidth,
                    -static_cast<double>(dim));
  }

  double operator()(const Eigen::Ref<const Vector>& x,
                    const Eigen::Ref<const Vector>& xp) const {
    return self_value() *
           std::exp(-(x - xp).squaredNorm() / (2.0 * bandwidth * bandwidth));
  }

  // Rows of `a` against rows of `b`.
  Matrix matrix(const Matrix& a, const Matrix& b) const {
    const double scale = self_value();
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        k(i, j) = scale * std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
    return k;
  }

  Vector column(const Matrix& a, const Eigen::Ref<const Vector>& x) const {
    const double scale = self_value();
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Vector k(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      k[i] = scale * std::exp(-(a.row(i).transpose() - x).squaredNorm() * inv);
    return k;
  }
};

inline void to_json(nlohmann::json& j, const KernelSpec& k) {
  j = {{"bandwidth", k.bandwidth}, {"dim", k.dim}};
}
inline void from_json(const nlohmann::json& j, KernelSpec& k) {
  k.bandwidth = j.at("bandwidth").get<double>();
  k.dim = j.at("dim").get<Eigen::Index>();
}

// Root-mean pairwise distance of a uniform law on the declared box,
// sqrt(sum_j w_j^2 / 6). Depends only on public bounds, so it costs no budget.
inline double domain_bandwidth(const std::vector<Interval>& bounds) {
  double s = 0.0;
  for (const auto& iv : bounds) s += iv.width() * iv.width();
  return std::sqrt(s / 6.0);
}

// Median pairwise distance of the sample. Data-dependent: audit use only, the
// released mechanisms do not account for it.
inline double median_heuristic_bandwidth(const Matrix& x,
                                         std::size_t max_points = 1000) {
  const auto n = std::min<Eigen::Index>(x.rows(), static_cast<Eigen::Index>(max_points));
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((x.row(i) - x.row(j)).norm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

}  // namespace dpcate
