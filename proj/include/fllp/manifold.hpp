// SPDX-License-Identifier: Apache-2.0
//
// Lorentz-model hyperbolic geometry. Points are stored by their space
// components; the time component is always recomputed from the
// hyperboloid constraint. Exponential and logarithmic maps are taken at
// the origin only.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fllp {

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Curvature magnitude k of the hyperboloid (sectional curvature -k).
///
/// A learnable curvature is stored through a softplus parameter so that
/// gradient steps cannot make it negative; the value is additionally
/// clamped at `kMin`.
template <class Scalar>
class Curvature {
 public:
  static constexpr Scalar kMin = Scalar(1e-6);

  explicit Curvature(Scalar k = Scalar(1), bool learnable = false,
                     Scalar step_size = Scalar(1e-4))
      : learnable_(learnable), step_size_(step_size) {
    if (!(k > Scalar(0)) || !std::isfinite(k)) {
      throw GeometryError("curvature must be a finite positive number, got " +
                          std::to_string(static_cast<double>(k)));
    }
    if (!(step_size > Scalar(0))) {
      throw GeometryError("curvature step size must be positive");
    }
    raw_ = inverse_softplus(k);
    value_ = k;
  }

  Scalar value() const { return value_; }
  Scalar sqrt_value() const { return std::sqrt(value_); }
  bool learnable() const { return learnable_; }
  Scalar step_size() const { return step_size_; }

  /// One gradient step on k given dL/dk. No-op unless learnable.
  void apply_gradient(Scalar dloss_dk) {
    if (!learnable_) return;
    const Scalar sigmoid = Scalar(1) / (Scalar(1) + std::exp(-raw_));
    raw_ -= step_size_ * dloss_dk * sigmoid;
    value_ = std::max(softplus(raw_), kMin);
  }

 private:
  static Scalar softplus(Scalar x) {
    return x > Scalar(30) ? x : std::log1p(std::exp(x));
  }
  static Scalar inverse_softplus(Scalar y) {
    return y > Scalar(30) ? y : std::log(std::expm1(y));
  }

  Scalar raw_{};
  Scalar value_{};
  bool learnable_;
  Scalar step_size_;
};

/// Point on the upper sheet of the hyperboloid <x,x>_L = -1/k.
template <class Scalar>
class HyperbolicPoint {
 public:
  HyperbolicPoint() = default;

  const Vector<Scalar>& space() const { return space_; }
  Scalar time() const { return time_; }
  Eigen::Index dim() const { return space_.size(); }

  /// Ambient (n+1)-vector [space, time].
  Vector<Scalar> ambient() const {
    Vector<Scalar> a(space_.size() + 1);
    a.head(space_.size()) = space_;
    a(space_.size()) = time_;
    return a;
  }

  template <class S>
  friend HyperbolicPoint<S> lift_time(const Vector<S>& space, const Curvature<S>& k);

 private:
  Vector<Scalar> space_;
  Scalar time_{};
};

/// Lorentzian inner product of two ambient vectors laid out as [space, time].
template <class Derived1, class Derived2>
typename Derived1::Scalar lorentz_inner(const Eigen::MatrixBase<Derived1>& x,
                                        const Eigen::MatrixBase<Derived2>& y) {
  if (x.size() != y.size()) {
    throw GeometryError("lorentz_inner: dimension mismatch (" + std::to_string(x.size()) +
                        " vs " + std::to_string(y.size()) + ")");
  }
  if (x.size() < 1) throw GeometryError("lorentz_inner: empty vector");
  const Eigen::Index n = x.size() - 1;
  return x.head(n).dot(y.head(n)) - x(n) * y(n);
}

template <class Scalar>
Scalar lorentz_inner(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y) {
  if (x.dim() != y.dim()) throw GeometryError("lorentz_inner: dimension mismatch");
  return x.space().dot(y.space()) - x.time() * y.time();
}

template <class Scalar>
HyperbolicPoint<Scalar> lift_time(const Vector<Scalar>& space, const Curvature<Scalar>& k) {
  if (!space.allFinite()) throw GeometryError("lift_time: non-finite space components");
  HyperbolicPoint<Scalar> p;
  p.space_ = space;
  p.time_ = std::sqrt(Scalar(1) / k.value() + space.squaredNorm());
  return p;
}

template <class Scalar>
HyperbolicPoint<Scalar> origin(Eigen::Index n, const Curvature<Scalar>& k) {
  if (n < 1) throw GeometryError("origin: dimension must be >= 1");
  return lift_time<Scalar>(Vector<Scalar>::Zero(n), k);
}

namespace detail {

// sinh(r)/r with a Taylor branch near zero.
template <class Scalar>
Scalar sinhc(Scalar r) {
  if (r < Scalar(1e-4)) {
    const Scalar r2 = r * r;
    return Scalar(1) + r2 / Scalar(6) + r2 * r2 / Scalar(120);
  }
  return std::sinh(r) / r;
}

// d/dr [sinh(r)/r].
template <class Scalar>
Scalar sinhc_derivative(Scalar r) {
  if (r < Scalar(1e-4)) {
    return r / Scalar(3) + r * r * r / Scalar(30);
  }
  return (r * std::cosh(r) - std::sinh(r)) / (r * r);
}

}  // namespace detail

/// Exponential map at the origin for a tangent vector given by its space
/// components (the time component of a tangent vector at O is zero).
template <class Scalar>
HyperbolicPoint<Scalar> exp_map_origin(const Vector<Scalar>& v, const Curvature<Scalar>& k) {
  const Scalar r = k.sqrt_value() * v.norm();
  return lift_time<Scalar>(detail::sinhc(r) * v, k);
}

/// Jacobian d(space of exp_map_origin(v)) / dv, an n x n matrix.
template <class Scalar>
Matrix<Scalar> exp_map_origin_jacobian(const Vector<Scalar>& v, const Curvature<Scalar>& k) {
  const Eigen::Index n = v.size();
  const Scalar sk = k.sqrt_value();
  const Scalar norm = v.norm();
  const Scalar r = sk * norm;
  Matrix<Scalar> jac = detail::sinhc(r) * Matrix<Scalar>::Identity(n, n);
  if (norm > Scalar(0)) {
    // d sinhc(r)/dv = sinhc'(r) * sk * v / |v|
    jac.noalias() += (detail::sinhc_derivative(r) * sk / norm) * (v * v.transpose());
  }
  return jac;
}

/// Inverse of exp_map_origin; returns the space components of the
/// tangent vector at the origin.
template <class Scalar>
Vector<Scalar> log_map_origin(const HyperbolicPoint<Scalar>& x, const Curvature<Scalar>& k) {
  const Scalar norm = x.space().norm();
  if (norm == Scalar(0)) return Vector<Scalar>::Zero(x.dim());
  const Scalar sk = k.sqrt_value();
  // |v| = d(O, x) = asinh(sqrt(k) |x_space|) / sqrt(k)
  const Scalar dist = std::asinh(sk * norm) / sk;
  return (dist / norm) * x.space();
}

namespace detail {

/// -k <x,y>_L - 1, unclamped.
///
/// Two evaluations with different rounding behaviour: the direct inner
/// product, and (k/2) <x-y, x-y>_L from coordinate differences with
/// y_t - x_t rewritten as (|y_s|^2 - |x_s|^2) / (x_t + y_t). The first is
/// accurate for well separated points, the second for nearby ones; the
/// one with the smaller rounding bound is used.
template <class Scalar>
Scalar inner_gap(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y, const Curvature<Scalar>& k) {
  const Vector<Scalar> ds = x.space() - y.space();
  const Scalar xn = x.space().norm(), yn = y.space().norm(), dn = ds.norm();
  const Scalar direct_bound = xn * yn + x.time() * y.time();
  const Scalar diff_bound = dn * (dn + Scalar(2) * (xn + yn));
  if (direct_bound < diff_bound) return -k.value() * lorentz_inner(x, y) - Scalar(1);
  const Scalar dt = ds.dot(x.space() + y.space()) / (x.time() + y.time());
  return Scalar(0.5) * k.value() * (ds.squaredNorm() - dt * dt);
}

}  // namespace detail

/// Geodesic distance (1/sqrt k) acosh(-k <x,y>_L).
///
/// Evaluated through -k<x,y>_L - 1 = (k/2) <x-y, x-y>_L so that nearby or
/// far-from-origin points do not lose precision to cancellation.
template <class Scalar>
Scalar geodesic_distance(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y,
                         const Curvature<Scalar>& k) {
  if (x.dim() != y.dim()) throw GeometryError("geodesic_distance: dimension mismatch");
  Scalar u = detail::inner_gap(x, y, k);
  if (!(u > Scalar(0))) u = Scalar(0);  // clamp: argument of acosh >= 1
  return std::log1p(u + std::sqrt(u * (u + Scalar(2)))) / k.sqrt_value();
}

}  // namespace fllp
