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

// Box-constrained limited-memory quasi-Newton minimization with projected
// backtracking line search and finite-difference gradients, plus a
// quasi-random multistart driver.

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "dpcate/common.hpp"

namespace dpcate {

struct BoxOptions {
  int max_iter = 100;
  int memory = 7;
  double pg_tol = 1e-7;     // sup-norm of the projected gradient, relative to box width
  double f_rel_tol = 1e-12;
  double fd_step = 1e-6;    // relative to box width
};

struct BoxResult {
  Vector x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

using Objective = std::function<double(const Vector&)>;

namespace optimize_detail {

inline Vector project(const Vector& x, const Vector& lo, const Vector& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Central differences, one-sided where a bound is active.
inline Vector fd_gradient(const Objective& f, const Vector& x, double fx, const Vector& lo,
                          const Vector& hi, double rel_step, int& evals) {
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * (hi[j] - lo[j]);
    Vector xp = x, xm = x;
    const bool up = x[j] + h <= hi[j];
    const bool down = x[j] - h >= lo[j];
    if (up && down) {
      xp[j] += h;
      xm[j] -= h;
      g[j] = (f(xp) - f(xm)) / (2.0 * h);
      evals += 2;
    } else if (up) {
      xp[j] += h;
      g[j] = (f(xp) - fx) / h;
      ++evals;
    } else {
      xm[j] -= h;
      g[j] = (fx - f(xm)) / h;
      ++evals;
    }
  }
  return g;
}

}  // namespace optimize_detail

inline BoxResult minimize_box(const Objective& f, const Vector& x0, const Vector& lo,
                              const Vector& hi, const BoxOptions& opt = {}) {
  using namespace optimize_detail;
  const Eigen::Index n = x0.size();
  Vector width = (hi - lo).cwiseMax(1e-300);
  BoxResult res;
  Vector x = project(x0, lo, hi);
  double fx = f(x);
  res.evaluations = 1;
  Vector g = fd_gradient(f, x, fx, lo, hi, opt.fd_step, res.evaluations);
  std::deque<std::pair<Vector, Vector>> mem;  // (s, y)

  for (int it = 0; it < opt.max_iter; ++it) {
    res.iterations = it + 1;
    Vector pg = project(x - g, lo, hi) - x;
    const double pg_rel = pg.cwiseQuotient(width).cwiseAbs().maxCoeff();
    if (pg_rel < opt.pg_tol) {
      res.converged = true;
      break;
    }
    // Variables pinned at a bound with the gradient pointing outward stay fixed.
    std::vector<bool> fixed(static_cast<std::size_t>(n), false);
    for (Eigen::Index j = 0; j < n; ++j)
      fixed[static_cast<std::size_t>(j)] =
          (x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0);
    auto mask = [&](Vector v) {
      for (Eigen::Index j = 0; j < n; ++j)
        if (fixed[static_cast<std::size_t>(j)]) v[j] = 0.0;
      return v;
    };

    // Two-loop recursion on the free subspace.
    Vector q = mask(g);
    std::vector<double> alphas(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      const auto& [s, y] = mem[k];
      const double a = s.dot(q) / y.dot(s);
      alphas[k] = a;
      q -= a * y;
    }
    if (!mem.empty()) {
      const auto& [s, y] = mem.back();
      q *= s.dot(y) / y.dot(y);
    } else {
      const double gn = mask(g).cwiseProduct(width).norm();
      if (gn > 0.0) q = q.cwiseProduct(width).cwiseProduct(width) * (0.1 / gn);
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const auto& [s, y] = mem[k];
      const double b = y.dot(q) / y.dot(s);
      q += s * (alphas[k] - b);
    }
    Vector d = -mask(q);
    if (d.dot(g) >= 0.0) {
      d = -mask(g).cwiseProduct(width).cwiseProduct(width);
      mem.clear();
    }

    // Projected backtracking (Armijo on the projected step).
    double step = 1.0;
    Vector xn = x;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = project(x + step * d, lo, hi);
      fn = f(xn);
      ++res.evaluations;
      if (fn <= fx + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Line search stalls only near a stationary point, up to
      // finite-difference noise.
      res.converged = pg_rel < 1e-4;
      break;
    }
    Vector gn = fd_gradient(f, xn, fn, lo, hi, opt.fd_step, res.evaluations);
    Vector s = xn - x, y = gn - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      mem.emplace_back(s, y);
      if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
    }
    const double df = fx - fn;
    x = xn;
    g = gn;
    const double fprev = fx;
    fx = fn;
    if (df <= opt.f_rel_tol * std::max({std::abs(fprev), std::abs(fn), 1.0})) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  return res;
}

// Halton sequence point `index` (1-based skip) scaled into the box.
inline Vector halton_point(std::size_t index, const Vector& lo, const Vector& hi) {
  static constexpr int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                    43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101,
                                    103, 107, 109, 113, 127, 131, 137, 139, 149, 151};
  constexpr std::size_t kNumPrimes = sizeof(kPrimes) / sizeof(kPrimes[0]);
  Vector x(lo.size());
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    const int base = kPrimes[static_cast<std::size_t>(j) % kNumPrimes];
    // Dimensions beyond the prime table reuse bases with a shifted index.
    std::size_t i = index + 1 + 97 * (static_cast<std::size_t>(j) / kNumPrimes);
    double fr = 1.0, r = 0.0;
    while (i > 0) {
      fr /= base;
      r += fr * static_cast<double>(i % static_cast<std::size_t>(base));
      i /= static_cast<std::size_t>(base);
    }
    x[j] = lo[j] + r * (hi[j] - lo[j]);
  }
  return x;
}

struct MultistartOptions {
  int scan_points = 256;
  int starts = 8;
  BoxOptions box;
};

struct MultistartResult {
  Vector x;
  double value = 0.0;
  bool converged = false;  // of the local run that produced the best point
  int evaluations = 0;
  int local_runs = 0;
};

// Maximizes f over the box: a Halton scan, then bounded local refinement from
// the best scan points.
inline MultistartResult maximize_multistart(const Objective& f, const Vector& lo,
                                            const Vector& hi, const MultistartOptions& opt = {}) {
  if (lo.size() != hi.size() || lo.size() == 0) throw ArgumentError("invalid box");
  if (opt.scan_points < 1 || opt.starts < 0) throw ArgumentError("invalid multistart options");
  std::vector<std::pair<double, Vector>> scan;
  scan.reserve(static_cast<std::size_t>(opt.scan_points));
  MultistartResult res;
  for (int i = 0; i < opt.scan_points; ++i) {
    Vector x = halton_point(static_cast<std::size_t>(i), lo, hi);
    scan.emplace_back(f(x), std::move(x));
  }
  res.evaluations = opt.scan_points;
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(opt.starts), scan.size());
  std::partial_sort(scan.begin(), scan.begin() + static_cast<std::ptrdiff_t>(k), scan.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto best = std::max_element(scan.begin(), scan.end(), [](const auto& a, const auto& b) {
    return a.first < b.first;
  });
  res.x = best->second;
  res.value = best->first;
  res.converged = k == 0;
  Objective neg = [&f](const Vector& x) { return -f(x); };
  for (std::size_t i = 0; i < k; ++i) {
    BoxResult r = minimize_box(neg, scan[i].second, lo, hi, opt.box);
    res.evaluations += r.evaluations;
    ++res.local_runs;
    // Local runs never end below their start, so the first one always lands here.
    if (-r.f >= res.value) {
      res.value = -r.f;
      res.x = r.x;
      res.converged = r.converged;
    }
  }
  return res;
}

}  // namespace dpcate
