// SPDX-License-Identifier: Apache-2.0
//
// Entailment cones on the Lorentz hyperboloid and the hinge loss that
// keeps a child concept inside the cones of its parents.
//
// Convention: every function takes the cone apex (the parent) first and
// the candidate child second.

#pragma once

#include "fllp/manifold.hpp"

#include <algorithm>
#include <numbers>
#include <span>
#include <vector>

namespace fllp {

template <class Scalar>
struct ConeParams {
  Scalar aperture_constant = Scalar(0.1);  // K
  Scalar beta = Scalar(1);                 // fraction of the aperture that counts as "inside"

  void validate() const {
    if (!(aperture_constant > Scalar(0))) throw GeometryError("cone: K must be positive");
    if (!(beta > Scalar(0) && beta <= Scalar(1))) throw GeometryError("cone: beta must lie in (0, 1]");
  }
};

namespace detail {
// Derivatives of acos/asin are taken as zero once the argument saturates.
template <class Scalar>
constexpr Scalar kTrigMargin = Scalar(1e-7);

template <class Scalar>
Scalar clamp_unit(Scalar a) {
  return std::clamp(a, Scalar(-1), Scalar(1));
}
}  // namespace detail

/// Half-angle asin(2 K sqrt(k) / |x_space|) of the cone at x. Points too
/// close to the origin get the maximal half-angle pi/2.
template <class Scalar>
Scalar aperture(const HyperbolicPoint<Scalar>& x, Scalar aperture_constant, const Curvature<Scalar>& k) {
  const Scalar norm = x.space().norm();
  if (norm == Scalar(0)) return std::numbers::pi_v<Scalar> / Scalar(2);
  const Scalar arg = Scalar(2) * aperture_constant * k.sqrt_value() / norm;
  return std::asin(std::min(arg, Scalar(1)));
}

namespace detail {

template <class Scalar>
struct ExteriorTerms {
  Scalar kl;       // k <x,y>_L
  Scalar root;     // sqrt((k<x,y>_L)^2 - 1)
  Scalar numer;    // y_time + x_time k <x,y>_L
  Scalar denom;    // |x_space| * root
  Scalar cosine;   // numer / denom, unclamped
};

template <class Scalar>
ExteriorTerms<Scalar> exterior_terms(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y,
                                     const Curvature<Scalar>& k) {
  if (x.dim() != y.dim()) throw GeometryError("exterior_angle: dimension mismatch");
  const Scalar xnorm = x.space().norm();
  if (xnorm == Scalar(0)) throw GeometryError("exterior_angle: cone apex at the origin");
  ExteriorTerms<Scalar> t{};
  // Both sheets' points satisfy k<x,y>_L <= -1; work with the gap below -1
  // so pairs that are close together keep their precision.
  const Scalar gap = detail::inner_gap(x, y, k);
  if (!(gap > Scalar(0))) throw GeometryError("exterior_angle: degenerate pair");
  t.kl = -(Scalar(1) + gap);
  t.root = std::sqrt(gap * (gap + Scalar(2)));
  if (!(t.root > Scalar(0))) throw GeometryError("exterior_angle: degenerate pair");
  const Scalar dtime = (y.space().squaredNorm() - x.space().squaredNorm()) / (x.time() + y.time());
  t.numer = dtime - x.time() * gap;
  t.denom = xnorm * t.root;
  t.cosine = t.numer / t.denom;
  if (!std::isfinite(t.cosine)) throw GeometryError("exterior_angle: non-finite result");
  return t;
}

}  // namespace detail

/// Angle at the apex x between the cone axis and the geodesic towards y.
/// 0 when y lies on the outward ray through x, pi when it lies inward.
template <class Scalar>
Scalar exterior_angle(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y,
                      const Curvature<Scalar>& k) {
  const auto t = detail::exterior_terms(x, y, k);
  return std::acos(detail::clamp_unit(t.cosine));
}

/// Gradient of exterior_angle(x, y) with respect to y's space components,
/// with y_time treated as a function of y_space.
template <class Scalar>
Vector<Scalar> exterior_angle_grad(const HyperbolicPoint<Scalar>& x, const HyperbolicPoint<Scalar>& y,
                                   const Curvature<Scalar>& k) {
  const auto t = detail::exterior_terms(x, y, k);
  if (std::abs(t.cosine) >= Scalar(1) - detail::kTrigMargin<Scalar>) {
    return Vector<Scalar>::Zero(y.dim());
  }
  const Scalar kv = k.value();
  const Vector<Scalar> dtime = y.space() / y.time();
  const Vector<Scalar> dinner = x.space() - x.time() * dtime;
  const Vector<Scalar> dnumer = dtime + (x.time() * kv) * dinner;
  const Vector<Scalar> droot = (kv * t.kl / t.root) * dinner;
  const Scalar xnorm = x.space().norm();
  const Vector<Scalar> dcos = (dnumer - (t.numer / t.root) * droot) / (xnorm * t.root);
  return (-Scalar(1) / std::sqrt(Scalar(1) - t.cosine * t.cosine)) * dcos;
}

/// max(0, Ext(parent, child) - beta * Aper(parent)).
template <class Scalar>
Scalar entail_loss(const HyperbolicPoint<Scalar>& parent, const HyperbolicPoint<Scalar>& child,
                   const ConeParams<Scalar>& params, const Curvature<Scalar>& k) {
  const Scalar violation = exterior_angle(parent, child, k) -
                           params.beta * aperture(parent, params.aperture_constant, k);
  return std::max(violation, Scalar(0));
}

/// Subgradient of entail_loss with respect to the child's space components.
/// Zero inside the cone and at the hinge itself.
template <class Scalar>
Vector<Scalar> entail_loss_grad(const HyperbolicPoint<Scalar>& parent, const HyperbolicPoint<Scalar>& child,
                                const ConeParams<Scalar>& params, const Curvature<Scalar>& k) {
  const Scalar violation = exterior_angle(parent, child, k) -
                           params.beta * aperture(parent, params.aperture_constant, k);
  if (!(violation > Scalar(0))) return Vector<Scalar>::Zero(child.dim());
  return exterior_angle_grad(parent, child, k);
}

/// Mean entailment loss of `child` over its parent chain; 0 for an empty chain.
template <class Scalar>
Scalar entail_loss_chain(const HyperbolicPoint<Scalar>& child, std::span<const HyperbolicPoint<Scalar>> parents,
                         const ConeParams<Scalar>& params, const Curvature<Scalar>& k) {
  if (parents.empty()) return Scalar(0);
  Scalar sum = Scalar(0);
  for (const auto& p : parents) sum += entail_loss(p, child, params, k);
  return sum / static_cast<Scalar>(parents.size());
}

template <class Scalar>
Vector<Scalar> entail_loss_chain_grad(const HyperbolicPoint<Scalar>& child,
                                      std::span<const HyperbolicPoint<Scalar>> parents,
                                      const ConeParams<Scalar>& params, const Curvature<Scalar>& k) {
  Vector<Scalar> g = Vector<Scalar>::Zero(child.dim());
  if (parents.empty()) return g;
  for (const auto& p : parents) g += entail_loss_grad(p, child, params, k);
  return g / static_cast<Scalar>(parents.size());
}

}  // namespace fllp
