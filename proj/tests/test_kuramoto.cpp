#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "sfl/kuramoto.hpp"

using namespace sfl;
using namespace sfl::kuramoto;
using ode::Vec;

namespace {

constexpr double kPi = std::numbers::pi;

KuramotoStarParams sym(double alpha, double u, double A = 1.0) { return KuramotoStarParams::symmetric(1.0, A, alpha, u); }

Vec to_vec(const Phases& th) {
  Vec v(3);
  v << th[0], th[1], th[2];
  return v;
}

}  // namespace

TEST_CASE("star vector field") {
  SUBCASE("synchronized at zero shift") {
    const auto r = star_rhs(sym(0.0, 0.0), {0.4, 0.4, 0.4});
    for (double x : r) CHECK(x == doctest::Approx(1.0));
  }
  SUBCASE("peripheral swap") {
    const auto p = sym(0.7, 2.0);
    const auto a = star_rhs(p, {0.1, 0.5, -0.9});
    const auto b = star_rhs(p, {0.1, -0.9, 0.5});
    CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-15));
    CHECK(a[1] == b[2]);
    CHECK(a[2] == b[1]);
  }
  SUBCASE("hand evaluation") {
    const auto r = star_rhs(sym(0.5, 0.0), {0.3, 0.0, 0.0});
    CHECK(r[0] == doctest::Approx(1.0 + 2.0 * std::sin(-0.8)).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(1.0 + std::sin(-0.2)).epsilon(1e-15));
    CHECK(r[2] == doctest::Approx(1.0 + std::sin(-0.2)).epsilon(1e-15));
  }
  SUBCASE("parameter validation") {
    CHECK_THROWS(sym(0.5, -1.0).validate());
    CHECK_THROWS(sym(2.0, 0.0).validate());
    CHECK_THROWS(sym(0.5, 0.0, 0.0).validate());
  }
}

TEST_CASE("polar observables") {
  SUBCASE("on the manifold") {
    const auto o = polar_observables({0.3, 1.2, 1.2});
    CHECK(o.r == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(o.mu) < 1e-15);
  }
  SUBCASE("antipodal peripherals") {
    const auto o = polar_observables({0.0, 0.0, kPi});
    CHECK(o.r < 1e-14);
    CHECK(o.degenerate);
  }
  SUBCASE("identities on random phases") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-10.0, 10.0);
    for (int i = 0; i < 500; ++i) {
      const Phases th{d(rng), d(rng), d(rng)};
      const auto o = polar_observables(th);
      CHECK(std::abs(o.z1 * o.z1 + o.z2 * o.z2 - o.r * o.r) < 1e-12);
      CHECK(std::abs(o.r - 0.5 * std::sqrt(2 + 2 * std::cos(th[1] - th[2]))) < 1e-12);
      CHECK(std::abs(o.r - std::abs(std::cos(0.5 * (th[1] - th[2])))) < 1e-12);
    }
  }
  SUBCASE("zeta unwraps against the previous value") {
    const auto o = polar_observables({0.0, -kPi + 0.01, -kPi + 0.01}, 3.1);
    CHECK(o.zeta == doctest::Approx(kPi - 0.01));
    const auto far = polar_observables({0.0, -kPi + 0.01, -kPi + 0.01}, 3.1 + 20 * kPi);
    CHECK(far.zeta == doctest::Approx(kPi - 0.01 + 20 * kPi));
  }
}

TEST_CASE("manifold distance") {
  const auto zero = manifold_distance({0.0, 0.4, 0.4});
  CHECK(zero.euclidean == 0.0);
  CHECK(std::abs(zero.mu) < 1e-15);
  const auto d = manifold_distance({0.0, 0.2, 0.0});
  CHECK(d.euclidean == doctest::Approx(0.2 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(d.mu == doctest::Approx(1 - std::cos(0.1)).epsilon(1e-10));
  const auto w = manifold_distance({0.0, 2 * kPi - 0.2, 0.0});
  CHECK(w.euclidean == doctest::Approx(d.euclidean).epsilon(1e-12));
  CHECK(w.mu == doctest::Approx(d.mu).epsilon(1e-9));
}

TEST_CASE("rotational invariance") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-kPi, kPi);
  const auto p = sym(0.8, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Phases th{d(rng), d(rng), d(rng)};
    const double s = 5 * d(rng);
    const Phases sh{th[0] + s, th[1] + s, th[2] + s};
    const auto a = polar_observables(th), b = polar_observables(sh);
    CHECK(std::abs(a.z1 - b.z1) < 1e-12);
    CHECK(std::abs(a.z2 - b.z2) < 1e-12);
    CHECK(std::abs(a.r - b.r) < 1e-12);
    CHECK(std::abs(a.mu - b.mu) < 1e-12);
    CHECK(std::abs(wrap_pi(th[1] - th[2]) - wrap_pi(sh[1] - sh[2])) < 1e-12);
    CHECK(std::abs(wrap_pi(th[0] - th[1]) - wrap_pi(sh[0] - sh[1])) < 1e-12);
    const auto ra = star_rhs(p, th), rb = star_rhs(p, sh);
    CHECK(std::abs((ra[0] - ra[1]) - (rb[0] - rb[1])) < 1e-12);
    CHECK(std::abs((ra[1] - ra[2]) - (rb[1] - rb[2])) < 1e-12);
  }
}

TEST_CASE("mu vanishes exactly on the manifold") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> d(-kPi, kPi);
  for (int i = 0; i < 400; ++i) {
    const double t1 = d(rng);
    const double t2 = (i % 2 == 0) ? t1 + 2 * kPi * static_cast<double>(i % 5) : d(rng);
    const auto o = polar_observables({d(rng), t1, t2});
    const bool on_manifold = std::abs(wrap_pi(t1 - t2)) < 1e-10;
    const bool mu_zero = std::abs(o.mu) < 1e-10;
    CHECK(on_manifold == mu_zero);
  }
}

TEST_CASE("mu-zeta equations") {
  const auto p = sym(0.6, 4.0);
  CHECK(mu_zeta_rhs(0.0, 1.3, p)[0] == 0.0);
  CHECK(mu_zeta_rhs(0.1, p.alpha, p)[0] == doctest::Approx(-0.19).epsilon(1e-12));
  // zeta rate at least u - 3A
  const auto q = sym(1.1, 10.0);
  double lowest = 1e300;
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j < 720; ++j) lowest = std::min(lowest, mu_zeta_rhs(i / 200.0, 2 * kPi * j / 720.0, q)[1]);
  CHECK(lowest >= q.u - 3 * q.A() - 1e-12);
}

TEST_CASE("full network matches the mu-zeta reduction") {
  const auto p = sym(0.9, 10.0);
  const double rtol = 1e-11;
  const auto cfg = ode::IntegratorConfig::adaptive(rtol, 1e-13);
  Vec th = to_vec({0.2, -0.4, 0.5});
  const auto o0 = polar_observables({th[0], th[1], th[2]});
  Vec s(2);
  s << o0.mu, o0.zeta;
  double zeta = o0.zeta, worst_mu = 0.0, worst_zeta = 0.0;
  // checkpoints close enough for nearest-branch unwrapping, no interpolation error
  for (int k = 0; k < 500; ++k) {
    th = ode::integrate_endpoint(star_ode(p), th, 0.1 * k, 0.1 * (k + 1), cfg);
    s = ode::integrate_endpoint(mu_zeta_ode(p), s, 0.1 * k, 0.1 * (k + 1), cfg);
    const auto o = polar_observables({th[0], th[1], th[2]}, zeta);
    zeta = o.zeta;
    worst_mu = std::max(worst_mu, std::abs(o.mu - s[0]));
    worst_zeta = std::max(worst_zeta, std::abs(o.zeta - s[1]) / std::max(1.0, std::abs(s[1])));
  }
  CHECK(worst_mu < 10 * rtol * 10);
  CHECK(worst_zeta < 10 * rtol * 10);
}

TEST_CASE("averaged mu rate") {
  const auto p = sym(1.0, 10.0);
  const auto a = averaged_mu_rhs(0.3, p);
  CHECK(std::abs(a.closed_form - a.quadrature) < 1e-8);
  CHECK(averaged_mu_closed_form(0.0, p) == 0.0);
  for (double alpha : {0.05, 0.3, 0.9, 1.4, 1.55})
    for (int k = 1; k < 100; ++k) CHECK(averaged_mu_rhs(k / 100.0, sym(alpha, 10.0)).closed_form < 0.0);
  CHECK(rate_constant_c(p, 0.5) == doctest::Approx(4 * kPi / 9 * (1 / std::sqrt(100 - 9 * 0.25) - 0.1)));
  CHECK_THROWS_AS(averaged_mu_rhs(0.3, sym(1.0, 3.0)), std::domain_error);
  CHECK_THROWS_AS(averaged_mu_rhs(1.0, p), std::domain_error);
}

TEST_CASE("phase-locked equilibria") {
  const auto z = phase_locked_equilibria(0.0);
  CHECK(z.c_alpha == 0.0);
  CHECK(z.c_prime_alpha == doctest::Approx(kPi));
  const auto q = phase_locked_equilibria(kPi / 4);
  CHECK(q.c_alpha == doctest::Approx(-std::atan(1.0 / 3.0)).epsilon(1e-12));
  for (double alpha : {0.1, 0.7, 1.2, 1.5}) {
    const auto e = phase_locked_equilibria(alpha);
    CHECK(std::abs(locked_residual(e.c_alpha, alpha)) < 1e-12);
    CHECK(std::abs(locked_residual(e.c_prime_alpha, alpha)) < 1e-12);
    CHECK(e.c_prime_alpha == kPi + e.c_alpha);
  }
}

TEST_CASE("linearized classification") {
  const auto a = linearized_classification(0.9, 1.0);
  CHECK(a.verdict_M1 == Verdict::stable);
  CHECK(a.verdict_M1prime == Verdict::unstable);
  const auto b = linearized_classification(1.2, 1.0);
  CHECK(b.verdict_M1 == Verdict::unstable);
  CHECK(b.verdict_M1prime == Verdict::unstable);
  const auto c = linearized_classification(kPi / 4, 1.0);
  CHECK(std::abs(c.eig_M1[0] + 2.236068) < 1e-6);
  CHECK(std::abs(c.eig_M1[1] + 0.447214) < 1e-6);
  CHECK(c.threshold == doctest::Approx(kPi / 3));
  for (double alpha : {0.2, 0.8, 1.0, 1.1, 1.4}) {
    const auto e = linearized_classification(alpha, 1.0);
    CHECK((e.verdict_M1 == Verdict::stable) == (e.eig_M1[0] < 0 && e.eig_M1[1] < 0));
    CHECK((e.verdict_M1 == Verdict::stable) == (alpha < kPi / 3));
  }
}

TEST_CASE("limit cycle residual") {
  const auto p = sym(1.3, 10.0);
  const double A = 1.0;
  for (double phi : {0.0, 1.0, 2.5, 4.0}) {
    const double s = 3 + 10 + 4 * A * std::sin(1.3) * std::sin(phi);
    const double d = 1 - 10 + 4 * A * std::cos(1.3) * std::cos(phi);
    CHECK(std::abs(limit_cycle_residual(0.5 * (s + d), 0.5 * (s - d), p)) < 1e-12);
  }
  CHECK(limit_cycle_residual(0.5 * (13 - 9), 0.5 * (13 + 9), p) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(limit_cycle_residual(1.0, 1.0, sym(0.0, 10.0)), std::domain_error);
}

TEST_CASE("remote synchronization experiments") {
  const auto cfg = ode::IntegratorConfig::adaptive(1e-10, 1e-13);
  SUBCASE("locked and stable below the threshold") {
    const double c = phase_locked_equilibria(0.9).c_alpha;
    const auto r = simulate_remote_sync_experiment(sym(0.9, 0.0), {c + 0.05, 0.05, -0.05}, 300.0, cfg);
    REQUIRE(r.mu_fit.accepted);
    const double oracle = 2 * std::abs(r.classification.transverse_M1);
    CHECK(r.mu_fit.rate_lambda == doctest::Approx(oracle).epsilon(0.1));
  }
  SUBCASE("unstable above the threshold") {
    const auto r = simulate_remote_sync_experiment(sym(1.2, 0.0), near_locked_initial(1.2, 0.02), 600.0, cfg);
    CHECK(r.growth_factor >= 10.0);
  }
  SUBCASE("detuning stabilizes") {
    const auto r = simulate_remote_sync_experiment(sym(1.4, 10.0), {0.0, -0.15, 0.15}, 600.0, cfg);
    CHECK(r.mu_fit.accepted);
    REQUIRE(r.averaged_negativity_max);
    CHECK(*r.averaged_negativity_max < 0.0);
  }
  SUBCASE("manifold invariance") {
    const auto traj = ode::integrate(star_ode(sym(1.3, 0.0)), to_vec({0.3, -1.0, -1.0}), 0.0, 100.0, cfg);
    for (const auto& s : traj.states()) CHECK(std::abs(wrap_pi(s[1] - s[2])) < 1e-9);
  }
  SUBCASE("slightly unequal couplings stay bounded") {
    KuramotoStarParams p = sym(0.9, 0.0);
    p.A2 = 1.02;
    const double c = phase_locked_equilibria(0.9).c_alpha;
    const auto traj = ode::integrate(star_ode(p), to_vec({c, 0.05, -0.05}), 0.0, 500.0, cfg);
    double worst = 0.0;
    for (const auto& s : traj.states()) worst = std::max(worst, std::abs(wrap_pi(s[1] - s[2])));
    CHECK(worst < 0.2);
    CHECK(std::abs(wrap_pi(traj.back()[1] - traj.back()[2])) > 1e-4);
  }
  SUBCASE("csv") {
    const auto r = simulate_remote_sync_experiment(sym(0.9, 0.0), near_locked_initial(0.9, 0.1), 20.0, cfg);
    std::ostringstream os;
    write_observables_csv(r.rows, os);
    CHECK(os.str().rfind("t,theta0,theta1,theta2,z1,z2,r,zeta,mu,dist_euclid,v1,v2,cycle_residual\n", 0) == 0);
  }
}
