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

// Stage-2 CATE regressors minimizing the weighted orthogonal risk
//   (1/n) sum rho_i (phi_i - g(X_i))^2 + penalty(g).

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "dpcate/common.hpp"
#include "dpcate/kernel.hpp"
#include "dpcate/pseudo.hpp"

namespace dpcate {

namespace stage2_detail {

inline Matrix stack_x(const std::vector<WeightedTarget>& t) {
  if (t.empty()) throw ArgumentError("second stage needs at least one target");
  const Eigen::Index q = t.front().x.size();
  Matrix x(static_cast<Eigen::Index>(t.size()), q);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].x.size() != q) throw ArgumentError("inconsistent covariate dimension");
    x.row(static_cast<Eigen::Index>(i)) = t[i].x.transpose();
  }
  return x;
}

inline void check_weights(const std::vector<WeightedTarget>& t) {
  for (const auto& w : t) {
    if (!(w.rho > 0.0)) throw ArgumentError("target weights must be positive");
    if (!std::isfinite(w.phi)) throw ArgumentError("pseudo-outcomes must be finite");
  }
}

}  // namespace stage2_detail

// ---------------------------------------------------------------------------
// Weighted kernel ridge regression
//
// g = sum_i alpha_i K(., X_i) with (W K + n lambda I) alpha = W phi, the
// stationarity condition of (1/n) sum rho_i (phi_i - g(X_i))^2 + lambda |g|_H^2.
// The system is solved through the symmetric form
//   M beta = W^{1/2} phi,  M = W^{1/2} K W^{1/2} + n lambda I,
//   alpha = W^{1/2} beta,
// and M's Cholesky factor is kept for influence-function solves.

class KrrModel;
inline KrrModel fit_krr(const std::vector<WeightedTarget>& targets, const KernelSpec& kernel,
                        double lambda_reg);
inline KrrModel krr_from_json(const nlohmann::json& j);

class KrrModel {
 public:
  KrrModel() = default;

  const Matrix& train_x() const { return train_x_; }
  const Vector& alpha() const { return alpha_; }
  const Vector& rho() const { return rho_; }
  const Vector& phi() const { return phi_; }
  double lambda_reg() const { return lambda_; }
  const KernelSpec& kernel() const { return kernel_; }
  Eigen::Index n() const { return train_x_.rows(); }
  Eigen::Index q() const { return train_x_.cols(); }
  const Matrix& gram() const { return gram_; }
  const Eigen::LLT<Matrix>& factor() const { return *factor_; }
  double relative_residual() const { return residual_; }

  double predict(const Vector& x) const {
    check_dim(x.size());
    return kernel_.column(train_x_, x).dot(alpha_);
  }

  Vector predict(const Matrix& xs) const {
    check_dim(xs.cols());
    return kernel_.matrix(xs, train_x_) * alpha_;
  }

  // |g|_H^2 = alpha' K alpha.
  double rkhs_norm_squared() const { return alpha_.dot(gram_ * alpha_); }

  void check_dim(Eigen::Index q) const {
    if (q != train_x_.cols()) throw ArgumentError("query dimension does not match the model");
  }

  friend KrrModel fit_krr(const std::vector<WeightedTarget>&, const KernelSpec&, double);
  friend KrrModel krr_from_json(const nlohmann::json&);

 private:
  void solve();

  Matrix train_x_;
  Vector alpha_;
  Vector rho_;
  Vector phi_;
  double lambda_ = 1.0;
  KernelSpec kernel_;
  Matrix gram_;
  std::shared_ptr<const Eigen::LLT<Matrix>> factor_;
  double residual_ = 0.0;
};

inline void KrrModel::solve() {
  const Eigen::Index n = train_x_.rows();
  const double nl = static_cast<double>(n) * lambda_;
  gram_ = kernel_.matrix(train_x_, train_x_);
  Vector s = rho_.cwiseSqrt();
  Matrix m = s.asDiagonal() * gram_ * s.asDiagonal();
  m.diagonal().array() += nl;
  auto llt = std::make_shared<Eigen::LLT<Matrix>>(m);
  if (llt->info() != Eigen::Success) throw NumericError("KRR system is not positive definite");
  Vector rhs = s.cwiseProduct(phi_);
  Vector beta = llt->solve(rhs);
  beta += llt->solve(rhs - m * beta);  // one refinement pass
  alpha_ = s.cwiseProduct(beta);
  factor_ = std::move(llt);

  Vector wphi = rho_.cwiseProduct(phi_);
  Vector r = rho_.cwiseProduct(gram_ * alpha_) + nl * alpha_ - wphi;
  const double denom = wphi.norm();
  residual_ = denom > 0.0 ? r.norm() / denom : r.norm();
  if (!(residual_ <= 1e-8)) throw NumericError("KRR solve residual too large");
}

inline KrrModel fit_krr(const std::vector<WeightedTarget>& targets, const KernelSpec& kernel,
                        double lambda_reg) {
  if (!(lambda_reg > 0.0)) throw ArgumentError("lambda_reg must be positive");
  kernel.validate();
  stage2_detail::check_weights(targets);
  KrrModel m;
  m.train_x_ = stage2_detail::stack_x(targets);
  if (m.train_x_.cols() != kernel.dim) throw ArgumentError("kernel dimension mismatch");
  const auto n = static_cast<Eigen::Index>(targets.size());
  m.rho_.resize(n);
  m.phi_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.rho_[i] = targets[static_cast<std::size_t>(i)].rho;
    m.phi_[i] = targets[static_cast<std::size_t>(i)].phi;
  }
  m.lambda_ = lambda_reg;
  m.kernel_ = kernel;
  m.solve();
  return m;
}

inline nlohmann::json krr_to_json(const KrrModel& m) {
  std::vector<std::vector<double>> xs;
  for (Eigen::Index i = 0; i < m.n(); ++i) {
    Vector r = m.train_x().row(i).transpose();
    xs.emplace_back(r.data(), r.data() + r.size());
  }
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"format", "dpcate.krr.v1"},
          {"kernel", m.kernel()},
          {"lambda_reg", m.lambda_reg()},
          {"train_x", xs},
          {"alpha", vec(m.alpha())},
          {"rho", vec(m.rho())},
          {"phi", vec(m.phi())}};
}

// Rebuilds the factorization from the stored targets; alpha is recomputed and
// must match the stored coefficients.
inline KrrModel krr_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dpcate.krr.v1") throw ArgumentError("not a KRR model document");
  KrrModel m;
  m.kernel_ = j.at("kernel").get<KernelSpec>();
  m.lambda_ = j.at("lambda_reg").get<double>();
  auto xs = j.at("train_x").get<std::vector<std::vector<double>>>();
  m.train_x_.resize(static_cast<Eigen::Index>(xs.size()), m.kernel_.dim);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (Eigen::Index k = 0; k < m.kernel_.dim; ++k)
      m.train_x_(static_cast<Eigen::Index>(i), k) = xs[i].at(static_cast<std::size_t>(k));
  auto rho = j.at("rho").get<std::vector<double>>();
  auto phi = j.at("phi").get<std::vector<double>>();
  m.rho_ = Eigen::Map<Vector>(rho.data(), static_cast<Eigen::Index>(rho.size()));
  m.phi_ = Eigen::Map<Vector>(phi.data(), static_cast<Eigen::Index>(phi.size()));
  m.solve();
  auto alpha = j.at("alpha").get<std::vector<double>>();
  Vector stored = Eigen::Map<Vector>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  if ((stored - m.alpha_).norm() > 1e-8 * (1.0 + stored.norm()))
    throw ArgumentError("stored KRR coefficients do not match the stored targets");
  m.alpha_ = stored;
  return m;
}

// ---------------------------------------------------------------------------
// Linear-basis regression g(x; theta) = theta' psi(x)

// Feature map given as a list of scalar functions. Polynomial bases carry
// their degree so they can be serialized.
class Basis {
 public:
  using Fn = std::function<double(const Vector&)>;

  Basis() = default;
  Basis(std::vector<Fn> fns, Eigen::Index dim, int poly_degree = -1)
      : fns_(std::move(fns)), dim_(dim), degree_(poly_degree) {}

  // Monomials of total degree <= degree in the raw covariates; the first entry
  // is the constant 1.
  static Basis polynomial(Eigen::Index q, int degree) {
    if (degree < 0 || degree > 2) throw ArgumentError("polynomial basis degree must be 0..2");
    std::vector<Fn> fns;
    fns.emplace_back([](const Vector&) { return 1.0; });
    if (degree >= 1)
      for (Eigen::Index j = 0; j < q; ++j) fns.emplace_back([j](const Vector& x) { return x[j]; });
    if (degree >= 2)
      for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index k = j; k < q; ++k)
          fns.emplace_back([j, k](const Vector& x) { return x[j] * x[k]; });
    return Basis(std::move(fns), q, degree);
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(fns_.size()); }
  Eigen::Index dim() const { return dim_; }
  int poly_degree() const { return degree_; }

  Vector operator()(const Vector& x) const {
    if (x.size() != dim_) throw ArgumentError("basis input has wrong dimension");
    Vector v(size());
    for (Eigen::Index k = 0; k < size(); ++k) v[k] = fns_[static_cast<std::size_t>(k)](x);
    return v;
  }

  // Rows are psi(x_i)'.
  Matrix design(const Matrix& xs) const {
    Matrix out(xs.rows(), size());
    for (Eigen::Index i = 0; i < xs.rows(); ++i)
      out.row(i) = (*this)(Vector(xs.row(i).transpose())).transpose();
    return out;
  }

 private:
  std::vector<Fn> fns_;
  Eigen::Index dim_ = 0;
  int degree_ = -1;
};

struct LinearBasisModel {
  Basis basis;
  Vector theta;
  // (2/n) sum rho psi psi' + 2 reg I, plus damping * I when the undamped
  // matrix is not positive definite.
  Matrix hessian;
  double reg = 0.0;
  double alpha_damp = 0.0;
  bool damping_applied = false;
  std::size_t n = 0;
  std::vector<std::string> warnings;

  double predict(const Vector& x) const { return theta.dot(basis(x)); }

  Vector predict(const Matrix& xs) const {
    if (xs.cols() != basis.dim()) throw ArgumentError("query dimension does not match the model");
    return basis.design(xs) * theta;
  }
};

inline LinearBasisModel fit_linear_basis(const std::vector<WeightedTarget>& targets,
                                         const Basis& basis, double reg, double alpha_damp) {
  if (reg < 0.0 || alpha_damp < 0.0) throw ArgumentError("reg and damping must be >= 0");
  stage2_detail::check_weights(targets);
  Matrix xs = stage2_detail::stack_x(targets);
  Matrix psi = basis.design(xs);
  const auto n = static_cast<double>(targets.size());
  const Eigen::Index p = basis.size();
  Matrix gram = Matrix::Zero(p, p);
  Vector rhs = Vector::Zero(p);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    gram.noalias() += targets[i].rho / n * psi.row(r).transpose() * psi.row(r);
    rhs.noalias() += targets[i].rho * targets[i].phi / n * psi.row(r).transpose();
  }
  LinearBasisModel m;
  m.basis = basis;
  m.reg = reg;
  m.alpha_damp = alpha_damp;
  m.n = targets.size();
  if (targets.size() < static_cast<std::size_t>(p))
    m.warnings.push_back("fewer samples than basis functions");

  Matrix h = 2.0 * gram + 2.0 * reg * Matrix::Identity(p, p);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() <= 1e-12 * scale) {
    if (alpha_damp <= 0.0)
      throw NumericError("rank-deficient second-stage design; set a positive damping");
    h.diagonal().array() += alpha_damp;
    m.damping_applied = true;
  }
  m.hessian = h;
  // Stationarity: (G + reg I) theta = b; the damped system is used when the
  // undamped one is singular.
  Matrix sys = 0.5 * h;
  Eigen::LDLT<Matrix> ldlt(sys);
  if (ldlt.info() != Eigen::Success) throw NumericError("second-stage solve failed");
  m.theta = ldlt.solve(rhs);
  return m;
}

inline nlohmann::json linear_to_json(const LinearBasisModel& m) {
  if (m.basis.poly_degree() < 0) throw ArgumentError("only polynomial bases are serializable");
  std::vector<double> th(m.theta.data(), m.theta.data() + m.theta.size());
  std::vector<double> h(m.hessian.data(), m.hessian.data() + m.hessian.size());
  return {{"format", "dpcate.linear.v1"}, {"dim", m.basis.dim()},
          {"degree", m.basis.poly_degree()}, {"theta", th},
          {"hessian", h}, {"reg", m.reg},
          {"alpha_damp", m.alpha_damp}, {"damping_applied", m.damping_applied},
          {"n", m.n}};
}

inline LinearBasisModel linear_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dpcate.linear.v1")
    throw ArgumentError("not a linear-basis model document");
  LinearBasisModel m;
  m.basis = Basis::polynomial(j.at("dim").get<Eigen::Index>(), j.at("degree").get<int>());
  auto th = j.at("theta").get<std::vector<double>>();
  m.theta = Eigen::Map<Vector>(th.data(), static_cast<Eigen::Index>(th.size()));
  auto h = j.at("hessian").get<std::vector<double>>();
  m.hessian = Eigen::Map<Matrix>(h.data(), m.theta.size(), m.theta.size());
  m.reg = j.at("reg").get<double>();
  m.alpha_damp = j.at("alpha_damp").get<double>();
  m.damping_applied = j.at("damping_applied").get<bool>();
  m.n = j.at("n").get<std::size_t>();
  return m;
}

}  // namespace dpcate
