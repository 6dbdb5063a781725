#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sfl/averaging.hpp"
#include "sfl/slowfast.hpp"
#include "sfl/stability.hpp"

using namespace sfl;
using namespace sfl::stability;
using ode::Vec;

namespace {

constexpr double kPi = std::numbers::pi;

Vec v1(double a) { return Vec::Constant(1, a); }

std::vector<double> grid(double a, double b, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

// dx/dt = a x with a y block that just rotates; state (x, y).
EnsembleProblem linear_problem(const Eigen::MatrixXd& a) {
  EnsembleProblem p;
  p.name = "linear";
  p.n = static_cast<int>(a.rows());
  p.m = 1;
  p.rhs = [a](double, const Vec& s) -> Vec {
    Vec d(s.size());
    d.head(a.rows()) = a * s.head(a.rows());
    d[a.rows()] = 1.0;
    return d;
  };
  p.y_lo = v1(-1.0);
  p.y_hi = v1(1.0);
  return p;
}

EnsembleSpec small_spec(double horizon, std::size_t count = 8) {
  EnsembleSpec s;
  s.count = count;
  s.horizon = horizon;
  s.seed = 3;
  return s;
}

LyapunovGrid scalar_grid(double r = 1.0) {
  LyapunovGrid g;
  g.w_radius = r;
  g.w_points = 15;
  g.v_lo = g.v_hi = Vec(0);
  return g;
}

}  // namespace

TEST_CASE("log-linear fit") {
  SUBCASE("exact exponential") {
    const auto t = grid(0.0, 10.0, 200);
    std::vector<double> y;
    for (double s : t) y.push_back(2.0 * std::exp(-0.5 * s));
    const auto f = fit_log_linear(t, y, 0.0);
    CHECK(std::abs(f.gain_k - 2.0) < 1e-9);
    CHECK(std::abs(f.rate_lambda - 0.5) < 1e-9);
    CHECK(std::abs(f.r_squared - 1.0) < 1e-9);
    CHECK(f.accepted);
    CHECK(f.envelope_c1 == doctest::Approx(1.0));
  }
  SUBCASE("constant is not a decay") {
    const auto t = grid(0.0, 10.0, 200);
    const auto f = fit_log_linear(t, std::vector<double>(t.size(), 1.0), 0.0);
    CHECK(std::abs(f.rate_lambda) < 1e-12);
    CHECK_FALSE(f.accepted);
  }
  SUBCASE("polynomial decay is rejected") {
    const auto t = grid(0.0, 200.0, 500);
    std::vector<double> y;
    for (double s : t) y.push_back(1.0 / ((1 + s) * (1 + s)));
    CHECK_FALSE(fit_log_linear(t, y, 0.0).accepted);
  }
  SUBCASE("too few nodes") {
    const ode::Trajectory traj({0.0, 1.0, 2.0}, {v1(1.0), v1(0.5), v1(0.25)}, {v1(-1.0), v1(-0.5), v1(-0.25)});
    CHECK_THROWS_AS(fit_exponential_decay(traj, leading(1)), FitError);
  }
  SUBCASE("zero norm at the window start") {
    const auto traj = ode::integrate([](double, const Vec& x) -> Vec { return -x; }, v1(0.0), 0.0, 5.0,
                                     ode::IntegratorConfig::fixed(0.01));
    CHECK_THROWS_AS(fit_exponential_decay(traj, leading(1)), FitError);
  }
}

TEST_CASE("fitted rate of linear systems") {
  Eigen::MatrixXd spiral(2, 2);
  spiral << -0.7, 1.0, -1.0, -0.7;
  Eigen::MatrixXd diag = Eigen::Vector2d(-1.0, -3.0).asDiagonal();
  Eigen::MatrixXd scalar = Eigen::MatrixXd::Constant(1, 1, -0.4);
  for (const auto& [a, abscissa] : {std::pair{spiral, 0.7}, std::pair{diag, 1.0}, std::pair{scalar, 0.4}}) {
    Vec s0 = Vec::Constant(a.rows() + 1, 0.3);
    const auto traj = ode::integrate(linear_problem(a).rhs, s0, 0.0, 25.0, ode::IntegratorConfig::adaptive(1e-10, 1e-14));
    const auto f = fit_exponential_decay(traj, leading(static_cast<int>(a.rows())));
    CHECK(f.accepted);
    CHECK(f.rate_lambda >= 0.95 * abscissa);
    CHECK(f.rate_lambda <= 1.05 * abscissa);
    CHECK(f.line_envelope_ratio <= 1.05);
  }
}

TEST_CASE("ensemble verdicts") {
  SUBCASE("decoupled linear decay") {
    const auto v = assess_partial_stability(linear_problem(Eigen::MatrixXd::Constant(1, 1, -1.0)), small_spec(20.0));
    CHECK(v.kind == VerdictKind::stable);
    CHECK(v.lambda == doctest::Approx(1.0).epsilon(0.02));
    CHECK(v.accepted == 8);
  }
  SUBCASE("example 1 is stable") {
    auto prob = make_problem(slowfast::example1(0.01), v1(-kPi), v1(kPi));
    prob.cfg = ode::IntegratorConfig::adaptive(1e-8, 1e-14);
    auto spec = small_spec(30.0, 16);
    spec.seed = 7;
    const auto v = assess_partial_stability(prob, spec);
    CHECK(v.kind == VerdictKind::stable);
    CHECK(v.lambda > 0.0);
  }
  SUBCASE("flipped drift is unstable") {
    auto prob = make_problem(slowfast::example1_flipped(0.01), v1(-kPi), v1(kPi));
    CHECK(assess_partial_stability(prob, small_spec(30.0)).kind == VerdictKind::unstable);
  }
  SUBCASE("same seed, same members; jobs do not matter") {
    const auto prob = linear_problem(Eigen::MatrixXd::Constant(1, 1, -0.5));
    auto spec = small_spec(10.0, 6);
    const auto a = assess_partial_stability(prob, spec);
    spec.jobs = 3;
    const auto b = assess_partial_stability(prob, spec);
    for (std::size_t i = 0; i < a.members.size(); ++i) {
      CHECK((a.members[i].x0 - b.members[i].x0).norm() == 0.0);
      CHECK(a.members[i].fit->rate_lambda == b.members[i].fit->rate_lambda);
    }
    CHECK(to_json(a).dump() == to_json(b).dump());
  }
  SUBCASE("member radii") {
    const auto prob = linear_problem(Eigen::MatrixXd::Constant(1, 1, -0.5));
    const auto spec = small_spec(10.0, 4);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(simulate_member(prob, spec, i).x0.norm() == doctest::Approx(0.3 * (i + 1) / 4.0));
  }
}

TEST_CASE("epsilon threshold search") {
  SUBCASE("epsilon-independent stability") {
    const auto r = find_epsilon_threshold([](double) { return VerdictKind::stable; }, 0.01, 1.0);
    CHECK(r.stable_throughout);
    CHECK(r.eps_stable == doctest::Approx(1.0));
  }
  SUBCASE("sharp switch") {
    const auto r = find_epsilon_threshold(
        [](double e) { return e < 0.3 ? VerdictKind::stable : VerdictKind::unstable; }, 0.01, 1.0);
    REQUIRE(r.eps_unstable);
    CHECK(r.eps_stable < 0.3);
    CHECK(*r.eps_unstable >= 0.3);
    CHECK(*r.eps_unstable / r.eps_stable <= 1.05 + 1e-12);
    CHECK(r.sweep.size() == 8);
  }
  SUBCASE("non-monotone sweep aborts with the table") {
    try {
      find_epsilon_threshold(
          [](double e) { return (e < 0.05 || e > 0.5) ? VerdictKind::stable : VerdictKind::unstable; }, 0.01, 1.0);
      FAIL("expected ThresholdError");
    } catch (const ThresholdError& e) {
      CHECK(e.sweep().size() == 8);
    }
  }
  SUBCASE("never stable") {
    CHECK_THROWS_AS(find_epsilon_threshold([](double) { return VerdictKind::unstable; }, 0.01, 1.0), ThresholdError);
  }
  SUBCASE("example 1 family") {
    auto pred = [](double eps) {
      auto prob = make_problem(slowfast::example1(eps), v1(-kPi), v1(kPi));
      prob.cfg = ode::IntegratorConfig::adaptive(1e-7, 1e-13);
      return assess_partial_stability(prob, small_spec(20.0, 4)).kind;
    };
    const auto r = find_epsilon_threshold(pred, 0.01, 1.0, 0.2, 4);
    CHECK(r.estimate() > 0.0);
    CHECK(std::isfinite(r.estimate()));
  }
}

TEST_CASE("converse Lyapunov function of dw/dz = -w") {
  const auto sys = scalar_decay(1.0, 0);
  const double exact = (1.0 - std::exp(-4.0)) / 2.0;
  CHECK(lyapunov_value(sys, v1(0.5), Vec(0), 0.0, 2.0) == doctest::Approx(0.25 * exact).epsilon(1e-10));
  CHECK(lyapunov_value(sys, v1(0.0), Vec(0), 0.3, 2.0) == 0.0);
  const auto est = build_converse_lyapunov(sys, 2.0, scalar_grid());
  CHECK(std::abs(est.raw.c1 - exact) < 1e-6);
  CHECK(std::abs(est.raw.c2 - exact) < 1e-6);
  CHECK(est.raw.c1 <= est.raw.c2);
  CHECK(est.max_zero_value == 0.0);
  CHECK(est.nonnegative);
  const auto rep = verify_lyapunov_certificate(est, sys);
  CHECK(rep.all_pass);
  CHECK(rep.min_margin > 0.2);

  SUBCASE("certificate soundness") {
    EnsembleProblem prob;
    prob.rhs = sys.rhs();
    prob.axis = ode::Axis::fast_axis_z;
    prob.n = 1;
    prob.m = 0;
    prob.y_lo = prob.y_hi = Vec(0);
    prob.start_at_phase = true;
    prob.z_hi = 1.0;
    auto spec = small_spec(20.0);
    spec.radius = est.grid_spec.w_radius;
    spec.seed = 99;
    CHECK(assess_partial_stability(prob, spec).kind == VerdictKind::stable);
  }
}

TEST_CASE("corrupted V breaks the v-gradient bound") {
  const auto sys = scalar_decay(1.0, 1);
  LyapunovGrid g = scalar_grid();
  g.v_points = 7;
  g.z_points = 2;
  g.v_lo = v1(-2.0);
  g.v_hi = v1(2.0);
  LyapunovOptions opt;
  const auto est = build_converse_lyapunov(sys, 2.0, g, opt);
  CHECK(verify_lyapunov_certificate(est, sys, opt).all_pass);
  opt.v_override = [&](const Vec& w, const Vec& v, double z) {
    return lyapunov_value(sys, w, v, z, 2.0) * (1.0 + v.norm());
  };
  const auto rep = verify_lyapunov_certificate(est, sys, opt);
  CHECK_FALSE(rep.all_pass);
  CHECK_FALSE(rep.checks[3].pass);
}

TEST_CASE("unstable systems have no certificate") {
  CHECK_THROWS(build_converse_lyapunov(scalar_decay(-1.0, 0), 2.0, scalar_grid()));
}

TEST_CASE("perturbation envelopes") {
  const auto sys = scalar_decay(1.0, 0);
  const auto cert = build_converse_lyapunov(sys, 2.0, scalar_grid());
  const auto& c = cert.certified;
  const auto cfg = ode::IntegratorConfig::adaptive(1e-10, 1e-14);
  auto run = [&](const ode::Rhs& f) { return ode::integrate(f, v1(0.5), 0.0, 30.0, cfg, ode::Axis::fast_axis_z); };

  SUBCASE("nominal") {
    const auto traj = run(sys.rhs());
    const auto rep = check_perturbation_envelope(cert, traj, 1, {});
    CHECK(rep.pass);
    const double amp = std::sqrt(c.c2 / c.c1) * 0.5;
    for (std::size_t i = 0; i < traj.size(); ++i) {
      CHECK(rep.convolution[i] == 0.0);
      CHECK(rep.envelope[i] == doctest::Approx(amp * std::exp(-rep.k1 * traj.times()[i])));
    }
  }
  SUBCASE("vanishing perturbation") {
    const auto traj = run([](double z, const Vec& w) -> Vec { return -w + 0.05 * w * std::sin(z); });
    PerturbationBoundSpec spec;
    spec.gamma1 = [](double) { return 0.05; };
    spec.kappa = c.c4 * 0.05;
    const auto rep = check_perturbation_envelope(cert, traj, 1, spec);
    CHECK(rep.pass);
    CHECK(rep.max_residual <= 0.0);
  }
  SUBCASE("constant psi tail") {
    const double psi = 0.05;
    const auto traj = run([psi](double z, const Vec& w) -> Vec { return -w + v1(psi * std::sin(z)); });
    PerturbationBoundSpec spec;
    spec.psi1 = [psi](double) { return psi; };
    const auto rep = check_perturbation_envelope(cert, traj, 1, spec);
    CHECK(rep.pass);
    const double tail = rep.k2 * c.c4 * psi / (2 * c.c1 * rep.k1);
    CHECK(rep.envelope.back() == doctest::Approx(tail).epsilon(1e-6));
    CHECK(traj.back().norm() <= 1.01 * tail);
  }
  SUBCASE("larger psi never lowers the envelope") {
    const auto traj = run(sys.rhs());
    PerturbationBoundSpec lo, hi;
    lo.psi1 = [](double z) { return 0.02 * (1 + std::sin(z)); };
    hi.psi1 = [](double z) { return 0.03 * (1 + std::sin(z)) + 0.01; };
    const auto a = check_perturbation_envelope(cert, traj, 1, lo);
    const auto b = check_perturbation_envelope(cert, traj, 1, hi);
    for (std::size_t i = 0; i < traj.size(); ++i) CHECK(b.envelope[i] >= a.envelope[i]);
  }
  SUBCASE("admissibility") {
    PerturbationBoundSpec spec;
    spec.kappa = c.c1 * c.c3 / c.c2;
    CHECK_THROWS_AS(envelope_constants(c, spec), AdmissibilityError);
    spec.kappa = 0.0;
    spec.eta = -1.0;
    CHECK_THROWS_AS(envelope_constants(c, spec), AdmissibilityError);
    spec.eta = 0.3;
    const auto k = envelope_constants(c, spec);
    CHECK(k.k1 == doctest::Approx(c.c3 / (2 * c.c2)));
    CHECK(k.k2 == doctest::Approx(std::exp(0.3 / (2 * c.c1))));
  }
  SUBCASE("start outside the ball") {
    const auto traj = ode::integrate(sys.rhs(), v1(5.0), 0.0, 5.0, cfg, ode::Axis::fast_axis_z);
    const auto rep = check_perturbation_envelope(cert, traj, 1, {});
    CHECK_FALSE(rep.ball_ok);
    CHECK_FALSE(rep.pass);
  }
}
