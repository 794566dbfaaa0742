// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: random draws and numerical oracles
// written independently of the library code.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>

namespace fllp::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd gaussian(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  return VectorXd::NullaryExpr(n, [&] { return d(rng); });
}

inline MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  return MatrixXd::NullaryExpr(rows, cols, [&] { return d(rng); });
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Haar-ish random orthogonal matrix via QR with sign correction.
inline MatrixXd random_orthogonal(std::mt19937_64& rng, Eigen::Index n) {
  const Eigen::HouseholderQR<MatrixXd> qr(gaussian(rng, n, n));
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, n);
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

/// Central differences of a scalar function of a vector.
inline VectorXd central_diff(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

/// Normwise relative error with a floor on the reference magnitude.
inline double rel_err(const MatrixXd& got, const MatrixXd& want, double floor = 1e-8) {
  return (got - want).norm() / std::max(want.norm(), floor);
}

// Hyperboloid oracles in long double from the textbook formulas, sharing
// no code with the library.
namespace oracle {

inline long double time_of(const VectorXd& s, long double k) {
  long double sq = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) sq += static_cast<long double>(s(i)) * s(i);
  return std::sqrt(1.0L / k + sq);
}

inline long double inner(const VectorXd& xs, const VectorXd& ys, long double k) {
  long double dot = 0;
  for (Eigen::Index i = 0; i < xs.size(); ++i) dot += static_cast<long double>(xs(i)) * ys(i);
  return dot - time_of(xs, k) * time_of(ys, k);
}

inline long double distance(const VectorXd& xs, const VectorXd& ys, long double k) {
  const long double a = std::max(-k * inner(xs, ys, k), 1.0L);
  return std::acosh(a) / std::sqrt(k);
}

/// Space components of the origin exp map, sinh(sqrt(k)|v|)/(sqrt(k)|v|) v.
inline VectorXd exp_space(const VectorXd& v, double k) {
  const long double r = std::sqrt(static_cast<long double>(k)) * v.norm();
  if (r == 0) return v;
  return (static_cast<double>(std::sinh(r) / r)) * v;
}

}  // namespace oracle

}  // namespace fllp::testing
