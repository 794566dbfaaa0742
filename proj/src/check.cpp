// SPDX-License-Identifier: Apache-2.0

#include "fllp/check.hpp"

#include "fllp/entailment.hpp"
#include "fllp/manifold.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>

namespace fllp {

namespace {

using Vec = Vector<double>;
using Point = HyperbolicPoint<double>;

// Tracks the largest error seen against a fixed bound.
struct Worst {
  Worst(std::string n, double b) : name(std::move(n)), bound(b) {}

  std::string name;
  double bound;
  double err = 0.0;
  std::string failure;

  void see(double e) {
    if (!(e <= err)) err = e;  // NaN sticks
  }
  CheckResult result() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "max err %.3g (bound %.1g)", err, bound);
    if (!failure.empty()) return {name, false, failure};
    return {name, err <= bound, buf};
  }
};

Vec random_tangent(std::mt19937_64& rng, Eigen::Index dim, double max_norm) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> radius(0.0, max_norm);
  Vec v = Vec::NullaryExpr(dim, [&] { return normal(rng); });
  return v * (radius(rng) / v.norm());
}

Eigen::Index random_dim(std::mt19937_64& rng) { return std::uniform_int_distribution<Eigen::Index>(1, 8)(rng); }

}  // namespace

void CheckOptions::validate() const {
  if (!(curvature > 0.0) || !std::isfinite(curvature)) {
    throw std::invalid_argument("curvature must be a finite positive number");
  }
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
}

std::vector<CheckResult> check_manifold(const CheckOptions& opts) {
  opts.validate();
  const Curvature<double> k(opts.curvature);
  std::mt19937_64 rng(opts.seed);
  // Tangent norms are scaled so that sqrt(k)|v| stays below 3.
  const double max_norm = 3.0 / k.sqrt_value();

  Worst member{"manifold.membership", 1e-9};
  Worst roundtrip{"manifold.exp_log_roundtrip", 1e-8};
  Worst radial{"manifold.radial_isometry", 1e-9};
  Worst symmetry{"manifold.distance_symmetry", 1e-12};
  Worst identity{"manifold.distance_identity", 1e-9};
  Worst triangle{"manifold.triangle_inequality", 1e-9};

  for (int trial = 0; trial < opts.trials; ++trial) {
    const Eigen::Index n = random_dim(rng);
    const Vec u = random_tangent(rng, n, max_norm);
    const Vec v = random_tangent(rng, n, max_norm);
    const Vec w = random_tangent(rng, n, max_norm);
    const Point x = exp_map_origin(u, k), y = exp_map_origin(v, k), z = exp_map_origin(w, k);

    // Scaled to the magnitude of the cancelling terms.
    member.see(std::abs(k.value() * lorentz_inner(x, x) + 1.0) / std::max(1.0, k.value() * x.time() * x.time()));
    roundtrip.see((log_map_origin(x, k) - u).norm() / std::max(1.0, u.norm()));
    radial.see(std::abs(geodesic_distance(origin<double>(n, k), x, k) - u.norm()));
    const double dxy = geodesic_distance(x, y, k), dyx = geodesic_distance(y, x, k);
    symmetry.see(std::abs(dxy - dyx));
    identity.see(geodesic_distance(x, x, k));
    triangle.see(dxy - (geodesic_distance(x, z, k) + geodesic_distance(z, y, k)));
  }
  return {member.result(), roundtrip.result(), radial.result(), symmetry.result(), identity.result(),
          triangle.result()};
}

std::vector<CheckResult> check_entailment(const CheckOptions& opts) {
  opts.validate();
  const Curvature<double> k(opts.curvature);
  std::mt19937_64 rng(opts.seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double rs = 1.0 / k.sqrt_value();  // length unit at this curvature

  Worst aper{"entailment.aperture_value", 1e-9};
  {
    Vec s = Vec::Zero(2);
    s(0) = 0.4 * k.sqrt_value();
    aper.see(std::abs(aperture(lift_time(s, k), 0.1, k) - std::numbers::pi / 6.0));
  }

  Worst outward{"entailment.outward_collinear", 1e-6};
  Worst inward{"entailment.inward_collinear", 1e-6};
  Worst grad{"entailment.gradient_fd", 1e-4};
  const ConeParams<double> cone{0.1, 0.5};

  for (int trial = 0; trial < opts.trials; ++trial) {
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 6)(rng);
    Vec dir = Vec::NullaryExpr(n, [&] { return normal(rng); });
    dir.normalize();
    const double a = (0.2 + 2.0 * unif(rng)) * rs;
    const double b = a + (0.1 + 2.0 * unif(rng)) * rs;
    try {
      outward.see(exterior_angle(lift_time<double>(a * dir, k), lift_time<double>(b * dir, k), k));
      inward.see(std::abs(exterior_angle(lift_time<double>(b * dir, k), lift_time<double>(a * dir, k), k) -
                          std::numbers::pi));
    } catch (const GeometryError& e) {
      outward.failure = e.what();
    }
  }

  int pairs = 0;
  while (pairs < std::min(opts.trials, 500)) {
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 6)(rng);
    const Point x = lift_time<double>(Vec::NullaryExpr(n, [&] { return normal(rng) * rs; }), k);
    const Vec ys = Vec::NullaryExpr(n, [&] { return normal(rng) * rs; });
    const Point y = lift_time(ys, k);
    if (x.space().norm() < 0.2 * rs || geodesic_distance(x, y, k) < 0.2 * rs) continue;
    const double hinge = exterior_angle(x, y, k) - cone.beta * aperture(x, cone.aperture_constant, k);
    const double cosine = std::cos(exterior_angle(x, y, k));
    if (std::abs(hinge) < 1e-3 || std::abs(cosine) > 0.999) continue;
    ++pairs;
    const Vec g = entail_loss_grad(x, y, cone, k);
    Vec fd(n);
    const double h = 1e-6 * rs;
    for (Eigen::Index i = 0; i < n; ++i) {
      Vec up = ys, down = ys;
      up(i) += h;
      down(i) -= h;
      fd(i) = (entail_loss(x, lift_time(up, k), cone, k) - entail_loss(x, lift_time(down, k), cone, k)) / (2 * h);
    }
    grad.see((g - fd).norm() / std::max(fd.norm(), 1e-3));
  }
  return {aper.result(), outward.result(), inward.result(), grad.result()};
}

std::vector<CheckResult> run_checks(const std::string& suite, const CheckOptions& opts) {
  if (suite != "manifold" && suite != "entailment" && suite != "all") {
    throw std::invalid_argument("unknown suite '" + suite + "' (expected manifold, entailment or all)");
  }
  opts.validate();
  std::vector<CheckResult> out;
  if (suite == "manifold" || suite == "all") {
    auto r = check_manifold(opts);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (suite == "entailment" || suite == "all") {
    auto r = check_entailment(opts);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace fllp
