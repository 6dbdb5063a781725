#include "sfl/kuramoto.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "sfl/quadrature.hpp"

namespace sfl::kuramoto {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vec to_vec(const Phases& p) {
  Vec v(3);
  v << p[0], p[1], p[2];
  return v;
}

Phases to_phases(const Vec& v) { return {v[0], v[1], v[2]}; }

// Stable 1 - |cos(d/2)| for the wrapped peripheral difference d.
double mu_of_difference(double d) {
  const double a = 0.5 * wrap_pi(d);  // in (-pi/2, pi/2]
  const double s = std::sin(0.5 * a);
  return 2.0 * s * s;
}

void require_averaging_domain(double mu_hat, const KuramotoStarParams& p) {
  if (!(p.u > 3.0 * p.A())) throw std::domain_error("averaged mu rate needs u > 3A");
  if (!(mu_hat >= 0.0 && mu_hat < 1.0)) throw std::domain_error("averaged mu rate needs 0 <= mu_hat < 1");
}

}  // namespace

void KuramotoStarParams::validate() const {
  if (!std::isfinite(omega)) throw std::invalid_argument("omega must be finite");
  if (!(A1 > 0.0 && A2 > 0.0)) throw std::invalid_argument("coupling strengths must be > 0");
  if (!(alpha >= 0.0 && alpha <= 0.5 * kPi)) throw std::invalid_argument("alpha must lie in [0, pi/2]");
  if (!(u >= 0.0) || !std::isfinite(u)) throw std::invalid_argument("detuning u must be >= 0");
}

std::string to_string(Verdict v) { return v == Verdict::stable ? "stable" : "unstable"; }

double wrap_pi(double angle) {
  double r = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

Phases star_rhs(const KuramotoStarParams& p, const Phases& th) {
  const double a = p.alpha;
  return {p.omega + p.A1 * std::sin(th[1] - th[0] - a) + p.A2 * std::sin(th[2] - th[0] - a) + p.u,
          p.omega + p.A1 * std::sin(th[0] - th[1] - a), p.omega + p.A2 * std::sin(th[0] - th[2] - a)};
}

ode::Rhs star_ode(const KuramotoStarParams& p) {
  p.validate();
  return [p](double, const Vec& s) -> Vec { return to_vec(star_rhs(p, to_phases(s))); };
}

PolarObservables polar_observables(const Phases& th, std::optional<double> previous_zeta) {
  PolarObservables o;
  const double d1 = th[0] - th[1];
  const double d2 = th[0] - th[2];
  o.z1 = 0.5 * (std::cos(d1) + std::cos(d2));
  o.z2 = 0.5 * (std::sin(d1) + std::sin(d2));
  o.mu = mu_of_difference(th[1] - th[2]);
  o.r = 1.0 - o.mu;
  if (o.r < 1e-14) {
    o.degenerate = true;
    o.zeta = previous_zeta.value_or(kNaN);
    return o;
  }
  const double raw = std::atan2(o.z2, o.z1);
  o.zeta = previous_zeta ? *previous_zeta + wrap_pi(raw - *previous_zeta) : raw;
  return o;
}

ManifoldDistance manifold_distance(const Phases& th) {
  const double d = th[1] - th[2];
  return {std::abs(wrap_pi(d)) / std::numbers::sqrt2, mu_of_difference(d)};
}

std::array<double, 2> mu_zeta_rhs(double mu, double zeta, const KuramotoStarParams& p) {
  const double A = p.A();
  const double a = p.alpha;
  const double q = 1.0 - mu;
  return {-A * (1.0 - q * q) * std::cos(zeta - a),
          p.u - A * q * (2.0 * std::sin(zeta + a) + std::sin(zeta - a))};
}

ode::Rhs mu_zeta_ode(const KuramotoStarParams& p) {
  p.validate();
  return [p](double, const Vec& s) -> Vec {
    const auto d = mu_zeta_rhs(s[0], s[1], p);
    Vec out(2);
    out << d[0], d[1];
    return out;
  };
}

double f_mu_zeta(double mu, double zeta, const KuramotoStarParams& p) {
  const double A = p.A();
  const double a = p.alpha;
  const double den = 1.0 - (A / p.u) * (1.0 - mu) * (2.0 * std::sin(zeta + a) + std::sin(zeta - a));
  return -A * (2.0 - mu) * mu * std::cos(zeta - a) / den;
}

slowfast::SlowFastSystem mu_zeta_system(const KuramotoStarParams& p) {
  p.validate();
  if (!(p.u > 0.0)) throw std::invalid_argument("mu_zeta_system needs u > 0 (epsilon = 1/u)");
  slowfast::SlowFastSystem s;
  s.name = "kuramoto_star";
  s.n = 1;
  s.m = 0;
  s.epsilon = 1.0 / p.u;
  s.period = 2.0 * kPi;
  s.f1 = [p](const Vec& x, const Vec&, double z) -> Vec { return Vec::Constant(1, mu_zeta_rhs(x[0], z, p)[0]); };
  s.f2 = [](const Vec&, const Vec&, double) -> Vec { return Vec(0); };
  s.f3 = [p](const Vec& x, const Vec&, double z) { return mu_zeta_rhs(x[0], z, p)[1] / p.u; };
  return s;
}

double averaged_mu_closed_form(double mu_hat, const KuramotoStarParams& p) {
  require_averaging_domain(mu_hat, p);
  const double A = p.A();
  const double u = p.u;
  const double R2 = 5.0 + 4.0 * std::cos(2.0 * p.alpha);
  const double q = 1.0 - mu_hat;
  const double g = 1.0 / u - 1.0 / std::sqrt(u * u - A * A * q * q * R2);
  return 4.0 * kPi * (2.0 - mu_hat) * mu_hat * u * u * std::sin(2.0 * p.alpha) / (q * R2) * g;
}

double averaged_mu_rhs_printed(double mu_hat, const KuramotoStarParams& p) {
  require_averaging_domain(mu_hat, p);
  const double A = p.A();
  const double u = p.u;
  const double c2a = std::cos(2.0 * p.alpha);
  const double q = 1.0 - mu_hat;
  const double g = 1.0 / u - 1.0 / std::sqrt(u * u - 5.0 * A * A * q * q - 4.0 * A * A * q * q * c2a);
  return 4.0 * kPi * (2.0 - mu_hat) * mu_hat / (q * (5.0 + 4.0 * c2a)) * g;
}

double rate_constant_c(const KuramotoStarParams& p, double xi) {
  if (!(xi > 0.0 && xi < 1.0)) throw std::domain_error("xi must lie in (0, 1)");
  const double A = p.A();
  const double s = p.u * p.u - 9.0 * A * A * (1.0 - xi) * (1.0 - xi);
  if (!(s > 0.0)) throw std::domain_error("rate constant needs u > 3A(1 - xi)");
  return 4.0 * kPi / 9.0 * (1.0 / std::sqrt(s) - 1.0 / p.u);
}

AveragedMuReport averaged_mu_rhs(double mu_hat, const KuramotoStarParams& p, double xi,
                                 std::size_t quadrature_nodes) {
  require_averaging_domain(mu_hat, p);
  AveragedMuReport r;
  r.closed_form = averaged_mu_closed_form(mu_hat, p);
  r.printed_form = averaged_mu_rhs_printed(mu_hat, p);
  const auto rule = quad::Composite::with_nodes(quadrature_nodes);
  r.quadrature = rule.integrate([&](double z) { return f_mu_zeta(mu_hat, z, p); }, 0.0, 2.0 * kPi);
  r.rate_constant_c = rate_constant_c(p, xi);
  r.below_linear_bound = r.closed_form < -r.rate_constant_c * mu_hat;
  return r;
}

PhaseLockedPoints phase_locked_equilibria(double alpha) {
  const double c = -std::atan2(std::sin(alpha), 3.0 * std::cos(alpha));
  return {c, kPi + c};
}

double locked_residual(double x, double alpha, double A) {
  return -A * (2.0 * std::sin(x + alpha) + std::sin(x - alpha));
}

EquilibriumClassification linearized_classification(double alpha, double A) {
  if (!(A > 0.0)) throw std::invalid_argument("A must be > 0");
  EquilibriumClassification ec;
  const auto pts = phase_locked_equilibria(alpha);
  ec.c_alpha = pts.c_alpha;
  ec.c_prime_alpha = pts.c_prime_alpha;
  ec.threshold = std::atan(std::sqrt(3.0));
  auto eig = [&](double x) {
    const double d = std::cos(x + alpha) + std::cos(x - alpha);
    const double o = std::cos(x + alpha);
    Eigen::Matrix2d J;
    J << -A * d, -A * o, -A * o, -A * d;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(J, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();  // ascending
    return std::array<double, 2>{ev[0], ev[1]};
  };
  ec.eig_M1 = eig(ec.c_alpha);
  ec.eig_M1prime = eig(ec.c_prime_alpha);
  ec.verdict_M1 = ec.eig_M1[1] < 0.0 ? Verdict::stable : Verdict::unstable;
  ec.verdict_M1prime = ec.eig_M1prime[1] < 0.0 ? Verdict::stable : Verdict::unstable;
  ec.transverse_M1 = -A * std::cos(ec.c_alpha - alpha);
  return ec;
}

double limit_cycle_residual(double v1, double v2, const KuramotoStarParams& p) {
  const double s = std::sin(p.alpha), c = std::cos(p.alpha);
  if (std::abs(s) < 1e-12 || std::abs(c) < 1e-12)
    throw std::domain_error("limit cycle ellipse degenerate at alpha = 0 or pi/2");
  const double A = p.A();
  const double a = v1 + v2 - 3.0 * p.omega - p.u;
  const double b = v1 - v2 - p.omega + p.u;
  return a * a / (16.0 * A * A * s * s) + b * b / (16.0 * A * A * c * c) - 1.0;
}

std::vector<ObservableRow> observables(const ode::Trajectory& theta, const KuramotoStarParams& p) {
  const bool ellipse_ok = std::abs(std::sin(p.alpha)) >= 1e-12 && std::abs(std::cos(p.alpha)) >= 1e-12;
  std::vector<ObservableRow> rows;
  rows.reserve(theta.size());
  std::optional<double> prev;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    ObservableRow r;
    r.t = theta.times()[i];
    r.theta = to_phases(theta.states()[i]);
    r.obs = polar_observables(r.theta, prev);
    if (!std::isnan(r.obs.zeta)) prev = r.obs.zeta;
    r.dist_euclid = manifold_distance(r.theta).euclidean;
    const Phases rate = star_rhs(p, r.theta);
    r.v1 = rate[1] + rate[2];
    r.v2 = rate[0];
    r.cycle_residual = ellipse_ok ? limit_cycle_residual(r.v1, r.v2, p) : kNaN;
    rows.push_back(r);
  }
  return rows;
}

namespace {

stability::DecayFit fit_observable(const ode::Trajectory& traj, double transient_fraction, bool use_mu) {
  const auto& times = traj.times();
  const double t0 = traj.front_time();
  double t1 = traj.back_time();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto md = manifold_distance(to_phases(traj.states()[i]));
    if ((use_mu ? md.mu : md.euclidean) < stability::kNoiseFloor) {
      t1 = times[i];
      break;
    }
  }
  const double ts = t0 + transient_fraction * (t1 - t0);
  const auto in_window = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t1) -
                                                  std::lower_bound(times.begin(), times.end(), ts));
  stability::DecayFit fail;
  if (in_window < 20) return fail;
  const std::size_t samples = std::clamp<std::size_t>(in_window, 200, 20000);
  std::vector<double> t(samples), y(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    t[k] = k + 1 == samples ? t1 : ts + (t1 - ts) * static_cast<double>(k) / static_cast<double>(samples - 1);
    const auto md = manifold_distance(to_phases(traj.sample_at(t[k])));
    y[k] = use_mu ? md.mu : md.euclidean;
  }
  try {
    return stability::fit_log_linear(t, y, t0);
  } catch (const stability::FitError&) {
    return fail;
  }
}

}  // namespace

ExperimentReport simulate_remote_sync_experiment(const KuramotoStarParams& p, const Phases& theta0, double horizon,
                                                 const ode::IntegratorConfig& cfg, double transient_fraction) {
  p.validate();
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  ExperimentReport rep;
  rep.theta = ode::integrate(star_ode(p), to_vec(theta0), 0.0, horizon, cfg);
  rep.rows = observables(rep.theta, p);
  rep.mu_fit = fit_observable(rep.theta, transient_fraction, true);
  rep.dist_fit = fit_observable(rep.theta, transient_fraction, false);
  rep.classification = linearized_classification(p.alpha > 0.0 ? p.alpha : 0.0, p.A());
  rep.initial_dist = rep.rows.front().dist_euclid;
  rep.final_dist = rep.rows.back().dist_euclid;
  double peak = rep.initial_dist;
  for (const auto& r : rep.rows) peak = std::max(peak, r.dist_euclid);
  rep.growth_factor = rep.initial_dist > 0.0 ? peak / rep.initial_dist : 0.0;
  if (p.symmetric_coupling() && p.u > 3.0 * p.A()) {
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 1; k < 100; ++k) worst = std::max(worst, averaged_mu_closed_form(k / 100.0, p));
    rep.averaged_negativity_max = worst;
  }
  return rep;
}

void write_observables_csv(const std::vector<ObservableRow>& rows, std::ostream& os) {
  os << "t,theta0,theta1,theta2,z1,z2,r,zeta,mu,dist_euclid,v1,v2,cycle_residual\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.t << ',' << r.theta[0] << ',' << r.theta[1] << ',' << r.theta[2] << ',' << r.obs.z1 << ',' << r.obs.z2
       << ',' << r.obs.r << ',' << r.obs.zeta << ',' << r.obs.mu << ',' << r.dist_euclid << ',' << r.v1 << ','
       << r.v2 << ',' << r.cycle_residual << '\n';
  }
}

Phases near_locked_initial(double alpha, double delta) {
  const double c = phase_locked_equilibria(alpha).c_alpha;
  return {c, -0.5 * delta, 0.5 * delta};
}

}  // namespace sfl::kuramoto
