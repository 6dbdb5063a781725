#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sfl/averaging.hpp"
#include "sfl/kuramoto.hpp"
#include "sfl/slowfast.hpp"

using namespace sfl;
using ode::Vec;
using slowfast::Box;

namespace {

constexpr double kPi = std::numbers::pi;

Vec v1(double a) { return Vec::Constant(1, a); }

Box example_box(double r = 0.5) { return Box::symmetric(1, r, 1, -kPi, kPi, 0.0, 2 * kPi); }

slowfast::SlowFastSystem toy(const slowfast::ScalarField& f3) {
  slowfast::SlowFastSystem s;
  s.name = "toy";
  s.n = 1;
  s.m = 0;
  s.f1 = [](const Vec& x, const Vec&, double) -> Vec { return -x; };
  s.f2 = [](const Vec&, const Vec&, double) -> Vec { return Vec(0); };
  s.f3 = f3;
  s.epsilon = 0.1;
  s.period = 2 * kPi;
  return s;
}

}  // namespace

TEST_CASE("fast rate bound") {
  SUBCASE("example 1 has f3 >= 1") {
    const auto r = slowfast::verify_fast_rate_bound(slowfast::example1(0.01), example_box(kPi), 20000);
    CHECK(r.theta_lower >= 1.0);
    CHECK_FALSE(r.violated);
  }
  SUBCASE("detuned star: zeta rate at least 7") {
    const auto p = kuramoto::KuramotoStarParams::symmetric(1.0, 1.0, 0.9, 10.0);
    const auto sys = kuramoto::mu_zeta_system(p);
    Box box;
    box.x_lo = v1(0.0);
    box.x_hi = v1(1.0);
    box.y_lo = box.y_hi = Vec(0);
    box.z_lo = 0.0;
    box.z_hi = 2 * kPi;
    const auto r = slowfast::verify_fast_rate_bound(sys, box, 20000);
    CHECK(r.theta_lower * p.u >= 7.0);
  }
  SUBCASE("sin z changes sign") {
    const auto r = slowfast::verify_fast_rate_bound(toy([](const Vec&, const Vec&, double z) { return std::sin(z); }),
                                                    Box::symmetric(1, 1.0, 0, 0, 0, 0.0, 2 * kPi), 20000);
    CHECK(r.violated);
    CHECK(r.witness.z == doctest::Approx(1.5 * kPi).epsilon(0.01));
  }
  SUBCASE("non-finite f3") {
    CHECK_THROWS_AS(slowfast::verify_fast_rate_bound(
                        toy([](const Vec&, const Vec&, double) { return std::nan(""); }),
                        Box::symmetric(1, 1.0, 0, 0, 0, 0.0, 2 * kPi), 100),
                    slowfast::DomainError);
  }
}

TEST_CASE("partial equilibrium and periodicity") {
  const auto ex = slowfast::example1(0.01);
  CHECK(slowfast::check_partial_equilibrium(ex, example_box()).pass);
  CHECK(slowfast::check_periodicity(ex, example_box()).pass);

  auto offset = toy([](const Vec&, const Vec&, double) { return 1.0; });
  offset.f1 = [](const Vec& x, const Vec&, double) -> Vec { return x.array() + 0.1; };
  const auto r = slowfast::check_partial_equilibrium(offset, Box::symmetric(1, 1.0, 0, 0, 0, 0.0, 2 * kPi));
  CHECK_FALSE(r.pass);
  CHECK(r.residual_f1 == doctest::Approx(0.1));

  const auto mz = kuramoto::mu_zeta_system(kuramoto::KuramotoStarParams::symmetric(1.0, 1.0, 0.9, 10.0));
  Box b;
  b.x_lo = b.x_hi = v1(0.0);
  b.y_lo = b.y_hi = Vec(0);
  b.z_hi = 2 * kPi;
  CHECK(slowfast::check_partial_equilibrium(mz, b).pass);
}

TEST_CASE("reduction to the fast axis") {
  SUBCASE("constant f3 divides") {
    const auto red = slowfast::reduce_to_fast_axis(toy([](const Vec&, const Vec&, double) { return 4.0; }));
    CHECK(red.h1(v1(2.0), Vec(0), 0.3)[0] == doctest::Approx(-0.5));
  }
  SUBCASE("example 1") {
    const auto red = slowfast::reduce_to_fast_axis(slowfast::example1(0.01));
    for (double x : {-0.4, 0.1, 0.3})
      for (double y : {-2.0, 0.5})
        for (double z : {0.0, 1.0, 4.0}) {
          const double h = (-x - 0.2 * x * std::sin(y) - 2 * x * std::cos(z)) / (3 - std::sin(x) + std::cos(y));
          CHECK(red.h1(v1(x), v1(y), z)[0] == doctest::Approx(h).epsilon(1e-14));
          CHECK(red.h1(v1(0.0), v1(y), z)[0] == 0.0);
          CHECK(red.h2(v1(0.0), v1(y), z)[0] == 0.0);
        }
  }
  SUBCASE("kuramoto mu-zeta has eps = 1/u and h1 = f") {
    const auto p = kuramoto::KuramotoStarParams::symmetric(1.0, 1.0, 0.9, 10.0);
    const auto red = slowfast::reduce_to_fast_axis(kuramoto::mu_zeta_system(p));
    CHECK(red.epsilon == doctest::Approx(0.1));
    for (double mu : {0.1, 0.5})
      for (double zeta : {0.0, 2.0})
        CHECK(red.h1(v1(mu), Vec(0), zeta)[0] == doctest::Approx(kuramoto::f_mu_zeta(mu, zeta, p)).epsilon(1e-12));
  }
  SUBCASE("vanishing f3 is a domain error") {
    const auto red = slowfast::reduce_to_fast_axis(toy([](const Vec&, const Vec&, double) { return 0.0; }));
    CHECK_THROWS_AS(red.h1(v1(1.0), Vec(0), 0.0), slowfast::DomainError);
  }
}

TEST_CASE("flipping the fast axis") {
  const auto neg = toy([](const Vec&, const Vec&, double z) { return -2.0 - std::cos(z); });
  const auto flipped = slowfast::flip_fast_axis(neg);
  const auto r = slowfast::verify_fast_rate_bound(flipped, Box::symmetric(1, 1.0, 0, 0, 0, 0.0, 2 * kPi), 2000);
  CHECK_FALSE(r.violated);
  CHECK(r.theta_lower == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("z is strictly increasing along the full system") {
  const auto sys = slowfast::example1(0.05);
  Vec s0(3);
  s0 << 0.3, 1.0, 0.0;
  const auto traj = ode::integrate(slowfast::full_rhs(sys), s0, 0.0, 5.0, ode::IntegratorConfig::adaptive(1e-9, 1e-12));
  for (std::size_t i = 1; i < traj.size(); ++i) CHECK(traj.states()[i][2] > traj.states()[i - 1][2]);
}

TEST_CASE("t-axis and z-axis solutions coincide") {
  const auto sys = slowfast::example1(0.05);
  const auto red = slowfast::reduce_to_fast_axis(sys);
  const auto cfg = ode::IntegratorConfig::adaptive(1e-11, 1e-13);
  Vec s0(3);
  s0 << 0.3, 1.0, 0.7;
  const auto t_traj = ode::integrate(slowfast::full_rhs(sys), s0, 0.0, 3.0, cfg);
  const double z_end = t_traj.back()[2];
  const auto z_traj = ode::integrate(slowfast::reduced_rhs(red), s0.head(2), 0.7, z_end, cfg, ode::Axis::fast_axis_z);
  double worst = 0.0;
  for (const auto& s : t_traj.states()) worst = std::max(worst, (z_traj.sample_at(std::min(s[2], z_end)) - s.head(2)).norm());
  CHECK(worst < 1e-7);
}

TEST_CASE("registry") {
  auto& reg = slowfast::SystemRegistry::instance();
  CHECK(reg.contains("example1"));
  CHECK(reg.contains("kuramoto_star"));
  const auto s = reg.make("example1", {{"epsilon", 0.02}});
  CHECK(s.epsilon == 0.02);
  CHECK_THROWS(reg.make("nope", {}));
  CHECK_THROWS_AS(slowfast::example1(-1.0).validate(), std::invalid_argument);
}
