// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fllp/entailment.hpp"
#include "support.hpp"

#include <numbers>
#include <vector>

using namespace fllp;
using namespace fllp::testing;
using K = Curvature<double>;
using Point = HyperbolicPoint<double>;
constexpr double kPi = std::numbers::pi;

namespace {

VectorXd e(Eigen::Index n, Eigen::Index i, double scale = 1.0) {
  VectorXd v = VectorXd::Zero(n);
  v(i) = scale;
  return v;
}

Point from_ambient(const VectorXd& a, const K& k) { return lift_time<double>(a.head(a.size() - 1), k); }

// Point reached from the apex x = (r, 0, ..., 0) by walking a geodesic of
// length t that leaves x at angle theta from the outward axis, built from
// the ambient exp map at x: cosh(sqrt(k) t) x + sinh(sqrt(k) t)/sqrt(k) w.
Point at_angle(double r, double theta, double t, const K& k, Eigen::Index n = 2) {
  const double sk = k.sqrt_value();
  const double xt = std::sqrt(1.0 / k.value() + r * r);
  VectorXd x = VectorXd::Zero(n + 1), axis = VectorXd::Zero(n + 1), side = VectorXd::Zero(n + 1);
  x(0) = r;
  x(n) = xt;
  axis(0) = sk * xt;  // unit tangent at x, Lorentz norm 1
  axis(n) = sk * r;
  side(1) = 1.0;
  const VectorXd w = std::cos(theta) * axis + std::sin(theta) * side;
  return from_ambient(std::cosh(sk * t) * x + std::sinh(sk * t) / sk * w, k);
}

// Angle at x between the outward ray and the geodesic towards y, from
// numerically differentiated curves: the geodesic is the hyperboloid arc in
// the plane spanned by x and y, the axis is the ray through x.
double angle_oracle(const Point& x, const Point& y, const K& k) {
  const VectorXd xa = x.ambient(), ya = y.ambient();
  const double D = std::acosh(-k.value() * lorentz_inner(xa, ya));
  auto geo = [&](double s) -> VectorXd {
    return (std::sinh((1 - s) * D) * xa + std::sinh(s * D) * ya) / std::sinh(D);
  };
  const double r = x.space().norm();
  const VectorXd dir = x.space() / r;
  auto ray = [&](double s) -> VectorXd { return lift_time<double>((r + s) * dir, k).ambient(); };
  const double h = 1e-6;
  const VectorXd u = (geo(h) - geo(-h)) / (2 * h);
  const VectorXd a = (ray(h) - ray(-h)) / (2 * h);
  const double c = lorentz_inner(u, a) / std::sqrt(lorentz_inner(u, u) * lorentz_inner(a, a));
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace

TEST_CASE("aperture examples") {
  const K k(1.0);
  CHECK(aperture(lift_time<double>(e(2, 0, 0.2), k), 0.1, k) == doctest::Approx(kPi / 2));
  CHECK(aperture(lift_time<double>(e(2, 0, 0.4), k), 0.1, k) == doctest::Approx(kPi / 6).epsilon(1e-14));
  CHECK(aperture(lift_time<double>(e(2, 0, 0.1), k), 0.1, k) == kPi / 2);
  CHECK(aperture(origin<double>(2, k), 0.1, k) == kPi / 2);
}

TEST_CASE("cone parameters are validated") {
  CHECK_NOTHROW(ConeParams<double>{0.1, 1.0}.validate());
  CHECK_THROWS_AS((ConeParams<double>{0.0, 0.5}.validate()), GeometryError);
  CHECK_THROWS_AS((ConeParams<double>{0.1, 0.0}.validate()), GeometryError);
  CHECK_THROWS_AS((ConeParams<double>{0.1, 1.5}.validate()), GeometryError);
}

TEST_CASE("exterior angle on a ray") {
  const K k(1.0);
  const auto x = exp_map_origin<double>(e(1, 0, 1.0), k);
  CHECK(std::abs(exterior_angle(x, exp_map_origin<double>(e(1, 0, 2.0), k), k)) < 1e-6);
  CHECK(std::abs(exterior_angle(x, exp_map_origin<double>(e(1, 0, 0.5), k), k) - kPi) < 1e-6);
}

TEST_CASE("exterior angle errors") {
  const K k(1.0);
  const auto x = exp_map_origin<double>(e(2, 0, 1.0), k);
  CHECK_THROWS_AS(exterior_angle(x, x, k), GeometryError);
  CHECK_THROWS_AS(exterior_angle(origin<double>(2, k), x, k), GeometryError);
  CHECK_THROWS_AS(exterior_angle(x, origin<double>(3, k), k), GeometryError);
}

TEST_CASE("exterior angle near a tangential neighbour matches the curve oracle") {
  const K k(1.0);
  const auto x = exp_map_origin<double>(e(2, 0, 1.0), k);
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    VectorXd v(2);
    v << 1.0, eps;
    const auto y = exp_map_origin(v, k);
    const double got = exterior_angle(x, y, k);
    CHECK(got == doctest::Approx(angle_oracle(x, y, k)).epsilon(1e-5));
    CHECK(std::abs(got - kPi / 2) < 0.1);
  }
}

TEST_CASE("exterior angle recovers the departure angle of constructed geodesics") {
  std::mt19937_64 rng(17);
  for (double kv : {0.25, 1.0, 4.0}) {
    const K k(kv);
    for (int i = 0; i < 200; ++i) {
      const double r = uniform(rng, 0.1, 3.0), theta = uniform(rng, 0.05, kPi - 0.05);
      const double t = uniform(rng, 0.1, 2.0);
      const auto x = lift_time<double>(e(2, 0, r), k);
      const auto y = at_angle(r, theta, t, k);
      CHECK(exterior_angle(x, y, k) == doctest::Approx(theta).epsilon(1e-8));
      CHECK(angle_oracle(x, y, k) == doctest::Approx(theta).epsilon(1e-6));
    }
  }
}

TEST_CASE("entail_loss examples") {
  const K k(1.0);
  const ConeParams<double> cone{0.1, 1.0};
  const auto parent = lift_time<double>(e(2, 0, 0.4), k);
  REQUIRE(aperture(parent, 0.1, k) == doctest::Approx(kPi / 6));
  CHECK(entail_loss(parent, at_angle(0.4, 0.0, 1.0, k), cone, k) == 0.0);
  CHECK(entail_loss(parent, at_angle(0.4, kPi / 4, 1.0, k), cone, k) == doctest::Approx(kPi / 12).epsilon(1e-9));
  CHECK(entail_loss(parent, at_angle(0.4, kPi, 0.2, k), cone, k) == doctest::Approx(kPi - kPi / 6).epsilon(1e-6));
}

TEST_CASE("entail_loss_chain averages and handles the empty chain") {
  const K k(1.0);
  const ConeParams<double> cone{0.1, 0.5};
  const auto child = exp_map_origin<double>(VectorXd::Constant(2, 0.7), k);
  CHECK(entail_loss_chain<double>(child, {}, cone, k) == 0.0);
  CHECK(entail_loss_chain_grad<double>(child, {}, cone, k) == VectorXd::Zero(2));

  const auto inside = lift_time<double>(child.space() * 0.5, k);
  CHECK(entail_loss(inside, child, cone, k) == 0.0);
  const std::vector<Point> one{inside};
  CHECK(entail_loss_chain<double>(child, one, cone, k) == 0.0);

  const Point p1 = exp_map_origin<double>(e(2, 0, 1.5), k), p2 = exp_map_origin<double>(e(2, 1, -1.0), k);
  const double a = entail_loss(p1, child, cone, k), b = entail_loss(p2, child, cone, k);
  REQUIRE(a > 0);
  REQUIRE(b > 0);
  const std::vector<Point> two{p1, p2};
  CHECK(entail_loss_chain<double>(child, two, cone, k) == doctest::Approx((a + b) / 2));
  const VectorXd g = entail_loss_chain_grad<double>(child, two, cone, k);
  CHECK(rel_err(g, (entail_loss_grad(p1, child, cone, k) + entail_loss_grad(p2, child, cone, k)) / 2) < 1e-15);
}

TEST_CASE("gradient is zero inside the cone") {
  const K k(1.0);
  const ConeParams<double> cone{0.1, 1.0};
  const auto parent = lift_time<double>(e(2, 0, 0.4), k);
  const auto child = at_angle(0.4, 0.1, 1.0, k);
  CHECK(entail_loss(parent, child, cone, k) == 0.0);
  CHECK(entail_loss_grad(parent, child, cone, k) == VectorXd::Zero(2));
}

TEST_CASE("property: analytic gradient matches central differences on 500 pairs") {
  std::mt19937_64 rng(23);
  int checked = 0;
  double worst = 0;
  while (checked < 500) {
    const K k(uniform(rng, 0.25, 4.0));
    const Eigen::Index n = std::uniform_int_distribution<Eigen::Index>(2, 6)(rng);
    const ConeParams<double> cone{0.1, uniform(rng, 0.1, 1.0)};
    const auto parent = lift_time<double>(gaussian(rng, n), k);
    const VectorXd cs = gaussian(rng, n, 1.5);
    const auto child = lift_time(cs, k);
    if (parent.space().norm() < 0.1) continue;
    const double d = geodesic_distance(parent, child, k);
    const double ext = exterior_angle(parent, child, k);
    const double hinge = ext - cone.beta * aperture(parent, cone.aperture_constant, k);
    // Non-degenerate: away from the kink, from coincident points and from
    // the axis where acos is not differentiable.
    if (d < 0.05 || hinge < 1e-3 || ext < 1e-2 || ext > kPi - 1e-2) continue;
    ++checked;
    auto f = [&](const VectorXd& s) { return entail_loss(parent, lift_time(s, k), cone, k); };
    const VectorXd fd = central_diff(f, cs, 1e-5);
    const VectorXd g = entail_loss_grad(parent, child, cone, k);
    worst = std::max(worst, rel_err(g, fd, 1e-6));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a step against the gradient reduces the loss of an inward child") {
  const K k(1.0);
  const ConeParams<double> cone{0.1, 0.5};
  std::mt19937_64 rng(29);
  for (int i = 0; i < 50; ++i) {
    const double r = uniform(rng, 0.5, 2.0);
    const auto parent = lift_time<double>(e(2, 0, r), k);
    const auto child = at_angle(r, uniform(rng, 2.0, 3.0), uniform(rng, 0.2, 1.0), k);
    const double before = entail_loss(parent, child, cone, k);
    const VectorXd g = entail_loss_grad(parent, child, cone, k);
    const double after = entail_loss(parent, lift_time<double>(child.space() - 1e-3 * g, k), cone, k);
    CHECK(after < before);
  }
}

TEST_CASE("property: aperture decreases with distance from the origin") {
  for (double kv : {0.25, 1.0, 4.0}) {
    const K k(kv);
    const double start = 2 * 0.1 * k.sqrt_value();
    double prev = aperture(lift_time<double>(e(3, 1, start), k), 0.1, k);
    for (double r = start * 1.01; r <= 100.0; r *= 1.01) {
      const double a = aperture(lift_time<double>(e(3, 1, r), k), 0.1, k);
      REQUIRE(a < prev);
      prev = a;
    }
  }
}

TEST_CASE("property: hinge is nonnegative, vanishes near the axis and does not grow with beta") {
  std::mt19937_64 rng(31);
  const K k(1.0);
  for (int i = 0; i < 500; ++i) {
    const auto parent = lift_time<double>(gaussian(rng, 3), k);
    const auto child = lift_time<double>(gaussian(rng, 3, 2.0), k);
    if (parent.space().norm() < 0.1 || geodesic_distance(parent, child, k) < 1e-3) continue;
    double prev = std::numeric_limits<double>::infinity();
    for (double beta : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      const double l = entail_loss(parent, child, ConeParams<double>{0.1, beta}, k);
      REQUIRE(l >= 0.0);
      REQUIRE(l <= prev);
      prev = l;
    }
  }
  // A neighbourhood of the outward axis is entailed.
  const ConeParams<double> cone{0.1, 0.5};
  const auto parent = lift_time<double>(e(2, 0, 0.4), k);
  for (int i = 0; i < 200; ++i) {
    const auto child = at_angle(0.4, uniform(rng, -0.2, 0.2), uniform(rng, 0.1, 2.0), k);
    REQUIRE(entail_loss(parent, child, cone, k) == 0.0);
  }
}
