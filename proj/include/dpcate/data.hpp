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
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/rng.hpp"

namespace dpcate {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

struct Sample {
  Vector x;
  int a = 0;
  double y = 0.0;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

// Immutable collection of (x, a, y) triples on a bounded domain.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Sample> samples, std::vector<Interval> covariate_bounds,
          Interval outcome_bounds)
      : samples_(std::move(samples)),
        covariate_bounds_(std::move(covariate_bounds)),
        outcome_bounds_(outcome_bounds) {
    validate();
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  Eigen::Index q() const {
    return static_cast<Eigen::Index>(covariate_bounds_.size());
  }

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<Interval>& covariate_bounds() const {
    return covariate_bounds_;
  }
  const Interval& outcome_bounds() const { return outcome_bounds_; }

  // n x q design matrix.
  Matrix covariates() const {
    Matrix x(static_cast<Eigen::Index>(size()), q());
    for (std::size_t i = 0; i < size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = samples_[i].x.transpose();
    return x;
  }

  std::size_t count_treated() const {
    return static_cast<std::size_t>(
        std::count_if(samples_.begin(), samples_.end(),
                      [](const Sample& s) { return s.a == 1; }));
  }

  // Same bounds metadata, subset of samples (in the given index order).
  Dataset subset(const std::vector<std::size_t>& idx) const {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(samples_.at(i));
    return Dataset(std::move(out), covariate_bounds_, outcome_bounds_);
  }

  bool in_domain(const Sample& s) const {
    if (s.x.size() != q()) return false;
    if (s.a != 0 && s.a != 1) return false;
    for (Eigen::Index j = 0; j < q(); ++j)
      if (!covariate_bounds_[static_cast<std::size_t>(j)].contains(s.x[j]))
        return false;
    return outcome_bounds_.contains(s.y);
  }

 private:
  void validate() const {
    if (covariate_bounds_.empty())
      throw ArgumentError("dataset needs at least one covariate");
    auto check = [](const Interval& iv) {
      if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || !(iv.lo < iv.hi))
        throw ArgumentError("bounds must be finite with lo < hi");
    };
    for (const auto& iv : covariate_bounds_) check(iv);
    check(outcome_bounds_);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      if (s.x.size() != q())
        throw ArgumentError("sample " + std::to_string(i) +
                            " has wrong covariate dimension");
      if (s.a != 0 && s.a != 1)
        throw DomainError("sample " + std::to_string(i) +
                          " has treatment outside {0,1}");
      if (!in_domain(s))
        throw DomainError("sample " + std::to_string(i) +
                          " lies outside the declared bounds");
    }
  }

  std::vector<Sample> samples_;
  std::vector<Interval> covariate_bounds_;
  Interval outcome_bounds_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct Bounds {
  std::vector<Interval> covariates;
  Interval outcome;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t line) {
  if (s.empty()) throw ParseError("empty field", line);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", line);
  }
  if (pos != s.size()) throw ParseError("not a number: '" + s + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite value", line);
  return v;
}

inline Interval widened(double lo, double hi) {
  double margin = 0.01 * (hi - lo);
  if (margin <= 0.0) margin = 0.01 * std::max(1.0, std::abs(lo));
  return {lo - margin, hi + margin};
}

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

// Header must be x1,...,xq,a,y. Without explicit bounds, each column's range is
// the observed min/max widened by 1% on both sides.
inline Dataset load_csv(const std::string& path,
                        const std::optional<Bounds>& bounds = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw EmptyDatasetError(path + ": empty file");
  if (header.size() < 3) throw ParseError("header needs x1..xq,a,y", lineno);
  const std::size_t q = header.size() - 2;
  for (std::size_t j = 0; j < q; ++j)
    if (header[j] != "x" + std::to_string(j + 1))
      throw ParseError("expected column x" + std::to_string(j + 1) +
                           ", got '" + header[j] + "'",
                       lineno);
  if (header[q] != "a" || header[q + 1] != "y")
    throw ParseError("last two columns must be a,y", lineno);

  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != q + 2)
      throw ParseError("expected " + std::to_string(q + 2) + " fields, got " +
                           std::to_string(cells.size()),
                       lineno);
    Sample s;
    s.x.resize(static_cast<Eigen::Index>(q));
    for (std::size_t j = 0; j < q; ++j)
      s.x[static_cast<Eigen::Index>(j)] = detail::parse_number(cells[j], lineno);
    double a = detail::parse_number(cells[q], lineno);
    if (a != 0.0 && a != 1.0)
      throw DomainError("line " + std::to_string(lineno) +
                        ": treatment must be 0 or 1");
    s.a = static_cast<int>(a);
    s.y = detail::parse_number(cells[q + 1], lineno);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw EmptyDatasetError(path + ": no data rows");

  if (bounds) {
    if (bounds->covariates.size() != q)
      throw ArgumentError("explicit bounds have wrong dimension");
    return Dataset(std::move(samples), bounds->covariates, bounds->outcome);
  }
  std::vector<Interval> cov(q);
  for (std::size_t j = 0; j < q; ++j) {
    double lo = kInf, hi = -kInf;
    for (const auto& s : samples) {
      lo = std::min(lo, s.x[static_cast<Eigen::Index>(j)]);
      hi = std::max(hi, s.x[static_cast<Eigen::Index>(j)]);
    }
    cov[j] = detail::widened(lo, hi);
  }
  double ylo = kInf, yhi = -kInf;
  for (const auto& s : samples) {
    ylo = std::min(ylo, s.y);
    yhi = std::max(yhi, s.y);
  }
  return Dataset(std::move(samples), std::move(cov), detail::widened(ylo, yhi));
}

inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (Eigen::Index j = 0; j < d.q(); ++j) out << "x" << (j + 1) << ",";
  out << "a,y\n";
  for (const auto& s : d.samples()) {
    for (Eigen::Index j = 0; j < d.q(); ++j)
      out << detail::format_double(s.x[j]) << ",";
    out << s.a << "," << detail::format_double(s.y) << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

// Reads the x1..xq columns (by header name) of a CSV; other columns are
// ignored. Used for query files.
inline std::vector<Vector> load_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      header = detail::split_csv_line(line);
  }
  if (header.empty()) throw EmptyDatasetError(path + ": empty file");
  std::vector<std::size_t> cols;
  for (std::size_t j = 1;; ++j) {
    auto it = std::find(header.begin(), header.end(), "x" + std::to_string(j));
    if (it == header.end()) break;
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  if (cols.empty()) throw ParseError("no x1.. columns in header", lineno);
  std::vector<Vector> pts;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("field count does not match header", lineno);
    Vector x(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      x[static_cast<Eigen::Index>(j)] = detail::parse_number(cells[cols[j]], lineno);
    pts.push_back(std::move(x));
  }
  if (pts.empty()) throw EmptyDatasetError(path + ": no data rows");
  return pts;
}

// ---------------------------------------------------------------------------
// Splitting

// Random disjoint partition into sizes floor(ratio * N) and the remainder.
// Each part keeps the original relative row order.
inline std::pair<Dataset, Dataset> split_disjoint(const Dataset& d, double ratio,
                                                  std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ArgumentError("split ratio must lie in (0, 1)");
  if (d.empty()) throw EmptyDatasetError("cannot split an empty dataset");
  const std::size_t n = d.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, Stream::kSplit));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  const auto n_first =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_first));
  std::vector<std::size_t> second(perm.begin() + static_cast<std::ptrdiff_t>(n_first), perm.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {d.subset(first), d.subset(second)};
}

// ---------------------------------------------------------------------------
// Synthetic data-generating processes

enum class EffectKind { kDataset1, kDataset2, kConstant };

inline std::string to_string(EffectKind k) {
  switch (k) {
    case EffectKind::kDataset1: return "dataset1";
    case EffectKind::kDataset2: return "dataset2";
    case EffectKind::kConstant: return "constant";
  }
  return "?";
}

inline EffectKind effect_kind_from_string(const std::string& s) {
  if (s == "dataset1") return EffectKind::kDataset1;
  if (s == "dataset2") return EffectKind::kDataset2;
  if (s == "constant") return EffectKind::kConstant;
  throw ArgumentError("unknown effect kind '" + s + "'");
}

inline constexpr int kDataset2Support = 5;

struct SyntheticConfig {
  int p = 2;
  EffectKind effect_kind = EffectKind::kDataset1;
  Interval beta_support{0.0, 0.3};
  Interval gamma_support{0.0, 1.0};
  // Number of leading coordinates of beta and gamma that are nonzero; <= 0
  // means all p.
  int support_size = 0;
  double constant_effect = 1.0;
  std::size_t n = 3000;
  std::uint64_t seed = 0;

  void validate() const {
    if (p < 1) throw ArgumentError("p must be >= 1");
    if (n < 1) throw ArgumentError("n must be >= 1");
    if (effect_kind == EffectKind::kDataset2 && p < 2)
      throw ArgumentError("dataset2 needs p >= 2");
    if (!(beta_support.lo <= beta_support.hi) ||
        !(gamma_support.lo <= gamma_support.hi))
      throw ArgumentError("support intervals must have lo <= hi");
    if (support_size > p) throw ArgumentError("support_size exceeds p");
  }

  static SyntheticConfig paper_default(EffectKind kind, std::size_t n,
                                       std::uint64_t seed) {
    SyntheticConfig c;
    c.effect_kind = kind;
    c.p = kind == EffectKind::kDataset2 ? 30 : 2;
    // With all 30 coefficients active, X'beta exceeds every eta and no unit
    // stays untreated.
    if (kind == EffectKind::kDataset2) c.support_size = kDataset2Support;
    c.n = n;
    c.seed = seed;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"p", c.p},
       {"effect_kind", to_string(c.effect_kind)},
       {"beta_support", {c.beta_support.lo, c.beta_support.hi}},
       {"gamma_support", {c.gamma_support.lo, c.gamma_support.hi}},
       {"support_size", c.support_size},
       {"constant_effect", c.constant_effect},
       {"n", c.n},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  c = SyntheticConfig{};
  if (j.contains("effect_kind"))
    c.effect_kind = effect_kind_from_string(j.at("effect_kind").get<std::string>());
  if (c.effect_kind == EffectKind::kDataset2) {
    c.p = 30;
    c.support_size = kDataset2Support;
  }
  if (j.contains("p")) c.p = j.at("p").get<int>();
  if (j.contains("beta_support"))
    c.beta_support = {j["beta_support"].at(0).get<double>(), j["beta_support"].at(1).get<double>()};
  if (j.contains("gamma_support"))
    c.gamma_support = {j["gamma_support"].at(0).get<double>(), j["gamma_support"].at(1).get<double>()};
  if (j.contains("support_size")) c.support_size = j.at("support_size").get<int>();
  if (j.contains("constant_effect")) c.constant_effect = j.at("constant_effect").get<double>();
  if (j.contains("n")) c.n = j.at("n").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

using CateFunction = std::function<double(const Vector&)>;

struct SyntheticData {
  Dataset data;
  CateFunction true_cate;
  Vector beta;
  Vector gamma;
};

namespace detail {

inline double dataset1_effect(double x0) {
  return std::exp(2.0 * x0) + 3.0 * std::sin(4.0 * x0);
}

// Range of exp(2t) + 3 sin(4t) on [0, 1]. The derivative 2e^{2t} + 12cos(4t)
// is positive at pi/8 and negative at pi/4, so the interior maximum lies in
// between and is located by bisection. The later local minimum stays above
// the value at t = 0.
inline Interval dataset1_effect_range() {
  auto deriv = [](double t) { return 2.0 * std::exp(2.0 * t) + 12.0 * std::cos(4.0 * t); };
  const double pi = std::acos(-1.0);
  double lo = pi / 8.0, hi = pi / 4.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (deriv(mid) > 0.0 ? lo : hi) = mid;
  }
  double tmax = 0.5 * (lo + hi);
  double vmax = std::max(dataset1_effect(tmax), dataset1_effect(1.0));
  double vmin = std::min(dataset1_effect(0.0), dataset1_effect(1.0));
  return {vmin, vmax};
}

}  // namespace detail

// X ~ U[0,1]^p, A = 1{X'beta >= eta}, Y = theta(X) A + X'gamma + eps with
// eta, eps ~ U[-1,1]. Outcome bounds are the analytic range of Y.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, Stream::kSynthetic));
  const Eigen::Index p = cfg.p;
  const Eigen::Index support = cfg.support_size > 0 ? cfg.support_size : p;
  Vector beta = Vector::Zero(p), gamma = Vector::Zero(p);
  for (Eigen::Index j = 0; j < support; ++j)
    beta[j] = rng.uniform(cfg.beta_support.lo, cfg.beta_support.hi);
  for (Eigen::Index j = 0; j < support; ++j)
    gamma[j] = rng.uniform(cfg.gamma_support.lo, cfg.gamma_support.hi);

  CateFunction theta;
  Interval theta_range;
  switch (cfg.effect_kind) {
    case EffectKind::kDataset1:
      theta = [](const Vector& x) { return detail::dataset1_effect(x[0]); };
      theta_range = detail::dataset1_effect_range();
      break;
    case EffectKind::kDataset2:
      theta = [](const Vector& x) {
        return std::exp(2.0 * x[0]) + 3.0 * std::sin(4.0 * x[1]);
      };
      // exp(2 x0) spans [1, e^2]; sin(4 x1) over 4 x1 in [0, 4] spans
      // [sin 4, 1].
      theta_range = {1.0 + 3.0 * std::sin(4.0), std::exp(2.0) + 3.0};
      break;
    case EffectKind::kConstant: {
      const double c = cfg.constant_effect;
      theta = [c](const Vector&) { return c; };
      theta_range = {c, c};
      break;
    }
  }

  std::vector<Sample> samples;
  samples.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Sample s;
    s.x.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) s.x[j] = rng.uniform(0.0, 1.0);
    const double eta = rng.uniform(-1.0, 1.0);
    const double noise = rng.uniform(-1.0, 1.0);
    s.a = s.x.dot(beta) >= eta ? 1 : 0;
    s.y = theta(s.x) * s.a + s.x.dot(gamma) + noise;
    samples.push_back(std::move(s));
  }

  std::vector<Interval> cov(static_cast<std::size_t>(p), Interval{0.0, 1.0});
  // gamma >= 0 on the default support, but allow negative draws too.
  const double lin_lo = gamma.cwiseMin(0.0).sum();
  const double lin_hi = gamma.cwiseMax(0.0).sum();
  Interval y{std::min(0.0, theta_range.lo) + lin_lo - 1.0,
             std::max(0.0, theta_range.hi) + lin_hi + 1.0};
  return {Dataset(std::move(samples), std::move(cov), y), std::move(theta),
          std::move(beta), std::move(gamma)};
}

}  // namespace dpcate
