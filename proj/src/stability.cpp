#include "sfl/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "sfl/quadrature.hpp"
#include "sfl/util.hpp"

namespace sfl::stability {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double block_norm(const Vec& s, const std::vector<int>& sel) {
  double acc = 0.0;
  for (int i : sel) acc += s[i] * s[i];
  return std::sqrt(acc);
}

}  // namespace

std::vector<int> leading(int n) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

std::string to_string(VerdictKind v) {
  switch (v) {
    case VerdictKind::stable: return "stable";
    case VerdictKind::unstable: return "unstable";
    case VerdictKind::inconclusive: return "inconclusive";
  }
  return "?";
}

// -- fits ---------------------------------------------------------------------

DecayFit fit_log_linear(const std::vector<double>& t, const std::vector<double>& norm, double t_front) {
  if (t.size() != norm.size()) throw std::invalid_argument("fit_log_linear: size mismatch");
  if (t.size() < 20) throw FitError("fit window too short (< 20 nodes)");
  if (!(norm.front() > 0.0)) throw FitError("zero norm at fit window start");

  DecayFit fit;
  std::size_t end = t.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(norm[i] >= kNoiseFloor)) {
      end = i;
      fit.noise_floor_hit = true;
      break;
    }
  }
  if (end < 20) throw FitError("fit window too short after noise-floor truncation");

  const double n = static_cast<double>(end);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < end; ++i) {
    mx += t[i] - t_front;
    my += std::log(norm[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < end; ++i) {
    const double dx = t[i] - t_front - mx;
    const double dy = std::log(norm[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw FitError("fit window has zero length");
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double ssres = 0.0;
  for (std::size_t i = 0; i < end; ++i) {
    const double r = std::log(norm[i]) - (intercept + slope * (t[i] - t_front));
    ssres += r * r;
  }
  // A flat series carries no decay information at all.
  fit.r_squared = syy > 1e-30 * n ? std::clamp(1.0 - ssres / syy, 0.0, 1.0) : 0.0;
  fit.rate_lambda = -slope;
  fit.gain_k = std::exp(intercept);
  fit.t_start = t.front();
  fit.t_end = t[end - 1];
  fit.nodes = end;
  fit.accepted = fit.r_squared >= kMinR2 && fit.rate_lambda > 0.0;

  const double x0 = norm.front();
  for (std::size_t i = 0; i < end; ++i) {
    fit.envelope_c1 = std::max(fit.envelope_c1, norm[i] * std::exp(fit.rate_lambda * (t[i] - t.front())) / x0);
    fit.line_envelope_ratio = std::max(
        fit.line_envelope_ratio, norm[i] / (fit.gain_k * std::exp(-fit.rate_lambda * (t[i] - t_front))));
  }
  return fit;
}

DecayFit fit_exponential_decay(const ode::Trajectory& traj, const std::vector<int>& selector,
                               double transient_fraction) {
  if (traj.size() < 2) throw FitError("trajectory too short");
  if (!(transient_fraction >= 0.0 && transient_fraction < 1.0))
    throw std::invalid_argument("transient_fraction must lie in [0, 1)");
  for (int i : selector)
    if (i < 0 || i >= traj.dim()) throw std::invalid_argument("component selector out of range");
  const double t0 = traj.front_time();
  const auto& times = traj.times();
  // The usable span ends where the norm first reaches the noise floor.
  double t1 = traj.back_time();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (block_norm(traj.states()[i], selector) < kNoiseFloor) {
      t1 = times[i];
      break;
    }
  }
  const double ts = t0 + transient_fraction * (t1 - t0);
  const std::size_t in_window = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t1) -
                                                         std::lower_bound(times.begin(), times.end(), ts));
  if (in_window < 20) throw FitError("fit window too short (< 20 nodes)");

  // Uniform resampling keeps dense step clusters from dominating the fit.
  const std::size_t samples = std::clamp<std::size_t>(in_window, 200, 5000);
  std::vector<double> t(samples), y(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    t[k] = k + 1 == samples ? t1 : ts + (t1 - ts) * static_cast<double>(k) / static_cast<double>(samples - 1);
    y[k] = block_norm(traj.sample_at(t[k]), selector);
  }
  return fit_log_linear(t, y, t0);
}

// -- ensembles ----------------------------------------------------------------

EnsembleProblem make_problem(const slowfast::SlowFastSystem& sys, const Vec& y_lo, const Vec& y_hi) {
  EnsembleProblem p;
  p.name = sys.name;
  p.rhs = slowfast::full_rhs(sys);
  p.axis = ode::Axis::time_t;
  p.n = sys.n;
  p.m = sys.m;
  p.fast_state = true;
  p.y_lo = y_lo;
  p.y_hi = y_hi;
  p.z_hi = sys.period;
  return p;
}

EnsembleProblem make_problem(const slowfast::ReducedSystem& red, const Vec& y_lo, const Vec& y_hi) {
  EnsembleProblem p;
  p.name = red.name;
  p.rhs = slowfast::reduced_rhs(red);
  p.axis = ode::Axis::fast_axis_z;
  p.n = red.n;
  p.m = red.m;
  p.start_at_phase = true;
  p.y_lo = y_lo;
  p.y_hi = y_hi;
  p.z_hi = red.period;
  return p;
}

EnsembleProblem make_problem(const averaging::AveragedSystem& av, const Vec& y_lo, const Vec& y_hi) {
  EnsembleProblem p;
  p.name = av.name;
  p.rhs = averaging::averaged_rhs(av);
  p.axis = ode::Axis::fast_axis_z;
  p.n = av.n;
  p.m = av.m;
  p.start_at_phase = true;
  p.y_lo = y_lo;
  p.y_hi = y_hi;
  p.z_hi = av.period;
  return p;
}

MemberResult simulate_member(const EnsembleProblem& prob, const EnsembleSpec& spec, std::size_t index) {
  if (prob.y_lo.size() != prob.m || prob.y_hi.size() != prob.m)
    throw std::invalid_argument("ensemble y range does not match the y block size");
  const CounterRng rng(spec.seed, index);
  std::uint64_t c = 0;

  Vec dir(prob.n);
  for (int i = 0; i < prob.n; ++i) {
    // Box-Muller; 1 - u keeps the log argument away from zero.
    const double u1 = 1.0 - rng.uniform(c++);
    const double u2 = rng.uniform(c++);
    dir[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  if (dir.norm() == 0.0) dir[0] = 1.0;
  const double radius = spec.radius * static_cast<double>(index + 1) / static_cast<double>(spec.count);
  Vec x0 = radius * dir / dir.norm();
  if (spec.x_nonnegative) x0 = x0.cwiseAbs();

  const int dim = prob.n + prob.m + (prob.fast_state ? 1 : 0);
  Vec state(dim);
  state.head(prob.n) = x0;
  for (int j = 0; j < prob.m; ++j) state[prob.n + j] = rng.uniform(c++, prob.y_lo[j], prob.y_hi[j]);
  const double z0 = rng.uniform(c++, prob.z_lo, prob.z_hi);
  if (prob.fast_state) state[dim - 1] = z0;
  const double s0 = prob.start_at_phase ? z0 : 0.0;

  MemberResult res;
  res.index = index;
  res.x0 = x0;
  const double n0 = x0.norm();

  // Chunked so that growing members stop before they leave the domain.
  constexpr int kChunks = 40;
  std::vector<double> times;
  std::vector<Vec> states, slopes;
  double peak = n0;
  double reached = s0;
  for (int k = 0; k < kChunks; ++k) {
    const double a = s0 + spec.horizon * k / kChunks;
    const double b = s0 + spec.horizon * (k + 1) / kChunks;
    ode::Trajectory part;
    try {
      part = ode::integrate(prob.rhs, state, a, b, prob.cfg, prob.axis);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "ensemble member " << index << ": " << e.what();
      throw ode::IntegrationError(ode::IntegrationError::Kind::non_finite, msg.str());
    }
    const std::size_t skip = times.empty() ? 0 : 1;
    for (std::size_t i = skip; i < part.size(); ++i) {
      times.push_back(part.times()[i]);
      states.push_back(part.states()[i]);
      slopes.push_back(part.slopes()[i]);
      peak = std::max(peak, part.states()[i].head(prob.n).norm());
    }
    state = part.back();
    reached = b;
    if (peak >= 10.0 * n0) break;
    if (state.head(prob.n).norm() < 0.1 * kNoiseFloor) break;
  }
  res.growth = n0 > 0.0 ? peak / n0 : 0.0;
  res.reached = reached;
  if (res.growth >= 10.0) {
    res.note = "grew by >= 10x";
    if (spec.keep_trajectories) res.trajectory = ode::Trajectory(times, states, slopes, prob.axis);
    return res;
  }
  ode::Trajectory traj(std::move(times), std::move(states), std::move(slopes), prob.axis);
  if (spec.keep_trajectories) res.trajectory = traj;
  try {
    res.fit = fit_exponential_decay(traj, leading(prob.n), spec.transient_fraction);
    if (!res.fit->accepted) res.note = "decay not exponential";
  } catch (const FitError& e) {
    res.note = e.what();
  }
  return res;
}

StabilityVerdict assess_partial_stability(const EnsembleProblem& prob, const EnsembleSpec& spec) {
  if (spec.count == 0) throw std::invalid_argument("ensemble count must be > 0");
  if (!(spec.radius > 0.0)) throw std::invalid_argument("ensemble radius must be > 0");
  if (!(spec.horizon > 0.0)) throw std::invalid_argument("ensemble horizon must be > 0");
  StabilityVerdict v;
  v.seed = spec.seed;
  v.members.resize(spec.count);
  parallel_for(spec.count, spec.jobs, [&](std::size_t i) { v.members[i] = simulate_member(prob, spec, i); });

  bool grew = false;
  bool all_accepted = true;
  v.lambda = kInf;
  v.r2_min = 1.0;
  for (const auto& m : v.members) {
    if (m.growth >= 10.0) grew = true;
    if (m.fit && m.fit->accepted) {
      ++v.accepted;
      // Relative gain: the stability constant k for this member.
      v.k = std::max(v.k, m.fit->gain_k / m.x0.norm());
      v.lambda = std::min(v.lambda, m.fit->rate_lambda);
      v.r2_min = std::min(v.r2_min, m.fit->r_squared);
    } else {
      all_accepted = false;
      if (m.fit) v.r2_min = std::min(v.r2_min, m.fit->r_squared);
    }
  }
  if (v.accepted == 0) v.lambda = 0.0;
  if (grew)
    v.kind = VerdictKind::unstable;
  else if (all_accepted)
    v.kind = VerdictKind::stable;
  else
    v.kind = VerdictKind::inconclusive;
  return v;
}

// -- threshold ----------------------------------------------------------------

ThresholdReport find_epsilon_threshold(const EpsilonPredicate& predicate, double lo, double hi, double rel_width,
                                       std::size_t coarse) {
  if (!(lo > 0.0 && hi > lo)) throw std::invalid_argument("epsilon range must satisfy 0 < lo < hi");
  if (coarse < 2) throw std::invalid_argument("coarse sweep needs at least 2 points");
  if (!(rel_width > 0.0)) throw std::invalid_argument("rel_width must be > 0");
  ThresholdReport rep;
  for (std::size_t k = 0; k < coarse; ++k) {
    const double e = k + 1 == coarse ? hi : lo * std::pow(hi / lo, static_cast<double>(k) / static_cast<double>(coarse - 1));
    rep.sweep.push_back({e, predicate(e)});
  }
  std::size_t first_bad = coarse;
  for (std::size_t k = 0; k < coarse; ++k) {
    if (rep.sweep[k].verdict != VerdictKind::stable) {
      first_bad = k;
      break;
    }
  }
  for (std::size_t k = first_bad; k < coarse; ++k)
    if (rep.sweep[k].verdict == VerdictKind::stable)
      throw ThresholdError("non-monotone stability verdicts in the coarse sweep", rep.sweep);
  if (first_bad == 0) throw ThresholdError("no stable epsilon in range", rep.sweep);
  if (first_bad == coarse) {
    rep.eps_stable = hi;
    rep.stable_throughout = true;
    return rep;
  }
  double a = rep.sweep[first_bad - 1].epsilon;
  double b = rep.sweep[first_bad].epsilon;
  while ((b - a) / a > rel_width) {
    const double mid = std::sqrt(a * b);
    const VerdictKind v = predicate(mid);
    rep.bisection.push_back({mid, v});
    if (v == VerdictKind::stable)
      a = mid;
    else
      b = mid;
  }
  rep.eps_stable = a;
  rep.eps_unstable = b;
  return rep;
}

// -- converse Lyapunov ----------------------------------------------------------

ode::Rhs PartialSystem::rhs() const {
  return [sys = *this](double z, const Vec& s) -> Vec {
    const Vec w = s.head(sys.n);
    const Vec v = s.segment(sys.n, sys.m);
    Vec out(s.size());
    out.head(sys.n) = sys.F1(w, v, z);
    if (sys.m > 0) out.segment(sys.n, sys.m) = sys.F2(w, v, z);
    return out;
  };
}

PartialSystem partial_from(const averaging::AveragedSystem& av) {
  PartialSystem p;
  p.name = av.name;
  p.n = av.n;
  p.m = av.m;
  p.period = av.period;
  p.F1 = [h = av.h_av, eps = av.epsilon](const Vec& w, const Vec& v, double) -> Vec { return eps * h(w, v); };
  p.F2 = [h = av.h2, eps = av.epsilon](const Vec& w, const Vec& v, double z) -> Vec { return eps * h(w, v, z); };
  return p;
}

PartialSystem scalar_decay(double a, int m) {
  PartialSystem p;
  p.name = "scalar_decay";
  p.n = 1;
  p.m = m;
  p.F1 = [a](const Vec& w, const Vec&, double) -> Vec { return -a * w; };
  p.F2 = [m](const Vec&, const Vec&, double) -> Vec { return Vec::Zero(m); };
  return p;
}

namespace {

// One RK4 step on (w, v, q) with q' = ||w||^2.
void rk4_step(const PartialSystem& sys, Vec& w, Vec& v, double& q, double z, double h) {
  auto f = [&](const Vec& ww, const Vec& vv, double zz, Vec& dw, Vec& dv) {
    dw = sys.F1(ww, vv, zz);
    if (sys.m > 0) dv = sys.F2(ww, vv, zz);
  };
  Vec k1w, k1v, k2w, k2v, k3w, k3v, k4w, k4v;
  f(w, v, z, k1w, k1v);
  const double q1 = w.squaredNorm();
  Vec w2 = w + 0.5 * h * k1w;
  Vec v2 = sys.m > 0 ? Vec(v + 0.5 * h * k1v) : v;
  f(w2, v2, z + 0.5 * h, k2w, k2v);
  const double q2 = w2.squaredNorm();
  Vec w3 = w + 0.5 * h * k2w;
  Vec v3 = sys.m > 0 ? Vec(v + 0.5 * h * k2v) : v;
  f(w3, v3, z + 0.5 * h, k3w, k3v);
  const double q3 = w3.squaredNorm();
  Vec w4 = w + h * k3w;
  Vec v4 = sys.m > 0 ? Vec(v + h * k3v) : v;
  f(w4, v4, z + h, k4w, k4v);
  const double q4 = w4.squaredNorm();
  w += (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
  if (sys.m > 0) v += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  q += (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
}

struct PointDerivs {
  double V = 0.0;
  double wn = 0.0;
  double dVdz = 0.0;  // along trajectories
  double grad_w = 0.0;
  double grad_v = 0.0;
};

PointDerivs point_derivs(const PartialSystem& sys, const GridPoint& p, double delta,
                         double fd_step, const VFunction& vf) {
  PointDerivs d;
  d.V = vf(p.w, p.v, p.z);
  d.wn = p.w.norm();

  // Flow a short step forward and back with the same scheme, then difference V
  // along the trajectory.
  const double h = std::min(1e-2, 1e-3 * delta);
  Vec wf = p.w, vfw = p.v, wb = p.w, vb = p.v;
  double q = 0.0;
  rk4_step(sys, wf, vfw, q, p.z, h);
  rk4_step(sys, wb, vb, q, p.z, -h);
  d.dVdz = (vf(wf, vfw, p.z + h) - vf(wb, vb, p.z - h)) / (2.0 * h);

  Vec g(sys.n);
  for (int i = 0; i < sys.n; ++i) {
    Vec a = p.w, b = p.w;
    a[i] += fd_step;
    b[i] -= fd_step;
    g[i] = (vf(a, p.v, p.z) - vf(b, p.v, p.z)) / (2.0 * fd_step);
  }
  d.grad_w = g.norm();
  if (sys.m > 0) {
    Vec gv(sys.m);
    for (int j = 0; j < sys.m; ++j) {
      Vec a = p.v, b = p.v;
      a[j] += fd_step;
      b[j] -= fd_step;
      gv[j] = (vf(p.w, a, p.z) - vf(p.w, b, p.z)) / (2.0 * fd_step);
    }
    d.grad_v = gv.norm();
  }
  return d;
}

std::vector<double> axis_points(double lo, double hi, std::size_t count, bool shifted, bool closed) {
  std::vector<double> out;
  if (count == 0) return out;
  if (count == 1) return {0.5 * (lo + hi)};
  if (closed) {
    const double step = (hi - lo) / static_cast<double>(count - 1);
    const std::size_t k_max = shifted ? count - 1 : count;
    for (std::size_t k = 0; k < k_max; ++k) out.push_back(lo + step * (static_cast<double>(k) + (shifted ? 0.5 : 0.0)));
  } else {
    const double step = (hi - lo) / static_cast<double>(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(lo + step * (static_cast<double>(k) + (shifted ? 0.5 : 0.0)));
  }
  return out;
}

}  // namespace

double lyapunov_value(const PartialSystem& sys, const Vec& w, const Vec& v, double z, double delta,
                      std::size_t steps) {
  if (!(delta > 0.0)) throw std::invalid_argument("lyapunov horizon must be > 0");
  if (steps == 0) throw std::invalid_argument("lyapunov steps must be > 0");
  Vec ww = w, vv = v;
  double q = 0.0;
  const double h = delta / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    rk4_step(sys, ww, vv, q, z + h * static_cast<double>(k), h);
    if (!std::isfinite(q)) throw ode::IntegrationError(ode::IntegrationError::Kind::non_finite, "lyapunov_value: non-finite state");
  }
  return q;
}

double default_horizon(double lambda_hat) {
  if (!(lambda_hat > 0.0)) throw std::invalid_argument("default_horizon: rate must be > 0");
  return 5.0 / lambda_hat;
}

std::vector<GridPoint> make_grid(const LyapunovGrid& g, const PartialSystem& sys, bool shifted) {
  if (!(g.w_radius > 0.0)) throw std::invalid_argument("grid w_radius must be > 0");
  if (g.w_points < 2 || g.z_points == 0) throw std::invalid_argument("grid needs >= 2 w points and >= 1 z point");
  if (g.v_lo.size() != sys.m || g.v_hi.size() != sys.m) throw std::invalid_argument("grid v range does not match m");

  std::vector<Vec> ws;
  if (sys.n == 1) {
    for (double x : axis_points(-g.w_radius, g.w_radius, g.w_points, shifted, true)) ws.push_back(Vec::Constant(1, x));
  } else {
    for (std::size_t k = 0; k < g.w_points; ++k) {
      const CounterRng rng(97, k);
      Vec d(sys.n);
      for (int i = 0; i < sys.n; ++i) d[i] = rng.uniform(static_cast<std::uint64_t>(i), -1.0, 1.0);
      const double r = g.w_radius * (static_cast<double>(k) + (shifted ? 0.5 : 0.0)) / static_cast<double>(g.w_points - 1);
      ws.push_back(d.norm() > 0.0 ? Vec(r * d / d.norm()) : Vec(Vec::Zero(sys.n)));
    }
  }

  std::vector<Vec> vs;
  if (sys.m == 0) {
    vs.push_back(Vec(0));
  } else if (sys.m == 1) {
    for (double y : axis_points(g.v_lo[0], g.v_hi[0], g.v_points, shifted, true)) vs.push_back(Vec::Constant(1, y));
  } else {
    for (std::size_t k = 0; k < g.v_points; ++k) {
      const CounterRng rng(shifted ? 131 : 113, k);
      Vec y(sys.m);
      for (int j = 0; j < sys.m; ++j) y[j] = rng.uniform(static_cast<std::uint64_t>(j), g.v_lo[j], g.v_hi[j]);
      vs.push_back(y);
    }
  }

  const double z_hi = g.z_hi > g.z_lo ? g.z_hi : g.z_lo + (sys.period > 0.0 ? sys.period : 1.0);
  const auto zs = axis_points(g.z_lo, z_hi, g.z_points, shifted, false);

  std::vector<GridPoint> out;
  out.reserve(ws.size() * vs.size() * zs.size());
  for (const auto& w : ws)
    for (const auto& v : vs)
      for (double z : zs) out.push_back({w, v, z});
  return out;
}

LyapunovEstimate build_converse_lyapunov(const PartialSystem& sys, double delta, const LyapunovGrid& grid,
                                         const LyapunovOptions& opt) {
  if (!(delta > 0.0)) throw std::invalid_argument("horizon_delta must be > 0");
  if (!(opt.safety > 0.0 && opt.safety <= 1.0)) throw std::invalid_argument("safety must lie in (0, 1]");
  LyapunovEstimate est;
  est.horizon_delta = delta;
  est.grid_spec = grid;
  est.safety = opt.safety;
  est.steps_per_horizon = opt.steps_per_horizon;
  est.grid = make_grid(grid, sys, false);

  const VFunction vf = [&](const Vec& w, const Vec& v, double z) {
    return lyapunov_value(sys, w, v, z, delta, opt.steps_per_horizon);
  };
  std::vector<PointDerivs> d(est.grid.size());
  parallel_for(est.grid.size(), opt.jobs,
               [&](std::size_t i) { d[i] = point_derivs(sys, est.grid[i], delta, opt.fd_step, vf); });

  LyapunovConstants c{kInf, 0.0, kInf, 0.0, 0.0};
  est.values.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    est.values[i] = d[i].V;
    if (d[i].V < 0.0) est.nonnegative = false;
    if (d[i].wn < 1e-14) {
      est.max_zero_value = std::max(est.max_zero_value, std::abs(d[i].V));
      continue;
    }
    const double w2 = d[i].wn * d[i].wn;
    c.c1 = std::min(c.c1, d[i].V / w2);
    c.c2 = std::max(c.c2, d[i].V / w2);
    c.c3 = std::min(c.c3, -d[i].dVdz / w2);
    c.c4 = std::max(c.c4, d[i].grad_w / d[i].wn);
    c.c5 = std::max(c.c5, d[i].grad_v / d[i].wn);
  }
  if (!(c.c1 > 0.0) || !std::isfinite(c.c1))
    throw std::runtime_error("converse Lyapunov fit degenerate (c1 <= 0): system not stable on the grid");
  if (!(c.c3 > 0.0))
    throw std::runtime_error("converse Lyapunov fit degenerate (c3 <= 0): V does not decay along solutions");
  est.raw = c;
  const double s = opt.safety;
  est.certified = {c.c1 * s, c.c2 / s, c.c3 * s, c.c4 / s, c.c5 / s};
  return est;
}

CertificateReport verify_lyapunov_certificate(const LyapunovEstimate& est, const PartialSystem& sys,
                                              const LyapunovOptions& opt, double required_margin) {
  const auto pts = make_grid(est.grid_spec, sys, true);
  const double delta = est.horizon_delta;
  const std::size_t steps = est.steps_per_horizon;
  const VFunction vf = opt.v_override ? opt.v_override : VFunction([&](const Vec& w, const Vec& v, double z) {
    return lyapunov_value(sys, w, v, z, delta, steps);
  });
  std::vector<PointDerivs> d(pts.size());
  parallel_for(pts.size(), opt.jobs, [&](std::size_t i) { d[i] = point_derivs(sys, pts[i], delta, opt.fd_step, vf); });

  const auto& c = est.certified;
  double m_bounds = kInf, m_decay = kInf, m_gw = kInf, m_gv = kInf;
  // Relative slack bound/value - 1; a zero bound against a nonzero value is a hard failure.
  auto slack = [](double bound, double value) {
    if (value <= 0.0) return kInf;
    if (bound <= 0.0) return -1.0;
    return bound / value - 1.0;
  };
  for (const auto& p : d) {
    if (p.wn < 1e-14) {
      if (std::abs(p.V) > 1e-12) m_bounds = -1.0;
      continue;
    }
    const double w2 = p.wn * p.wn;
    if (p.V < 0.0) {
      m_bounds = -1.0;
    } else {
      m_bounds = std::min(m_bounds, p.V / (c.c1 * w2) - 1.0);
      m_bounds = std::min(m_bounds, slack(c.c2 * w2, p.V));
    }
    if (c.c3 > 0.0)
      m_decay = std::min(m_decay, -p.dVdz / (c.c3 * w2) - 1.0);
    else
      m_decay = -1.0;
    m_gw = std::min(m_gw, slack(c.c4 * p.wn, p.grad_w));
    m_gv = std::min(m_gv, slack(c.c5 * p.wn, p.grad_v));
  }

  CertificateReport rep;
  rep.points = pts.size();
  const std::array<std::pair<const char*, double>, 4> rows{{{"bounds", m_bounds},
                                                             {"decay", m_decay},
                                                             {"grad_w", m_gw},
                                                             {"grad_v", m_gv}}};
  rep.all_pass = true;
  rep.min_margin = kInf;
  for (std::size_t i = 0; i < 4; ++i) {
    rep.checks[i].name = rows[i].first;
    rep.checks[i].margin = rows[i].second;
    rep.checks[i].pass = rows[i].second >= required_margin;
    rep.all_pass = rep.all_pass && rep.checks[i].pass;
    rep.min_margin = std::min(rep.min_margin, rows[i].second);
  }
  return rep;
}

// -- envelopes ------------------------------------------------------------------

EnvelopeConstants envelope_constants(const LyapunovConstants& c, const PerturbationBoundSpec& spec) {
  if (!(c.c1 > 0.0 && c.c2 >= c.c1 && c.c3 > 0.0)) throw AdmissibilityError("certificate constants not admissible");
  if (!(spec.kappa >= 0.0 && spec.kappa < c.c1 * c.c3 / c.c2)) {
    std::ostringstream msg;
    msg << "kappa = " << spec.kappa << " must satisfy 0 <= kappa < c1 c3 / c2 = " << c.c1 * c.c3 / c.c2;
    throw AdmissibilityError(msg.str());
  }
  if (!(spec.eta >= 0.0)) throw AdmissibilityError("eta must be >= 0");
  EnvelopeConstants k;
  k.k1 = c.c3 / (2.0 * c.c2) - spec.kappa / (2.0 * c.c1);
  k.k2 = std::exp(spec.eta / (2.0 * c.c1));
  if (!(k.k1 > 0.0)) throw AdmissibilityError("k1 must be > 0");
  return k;
}

EnvelopeReport check_perturbation_envelope(const LyapunovEstimate& cert, const ode::Trajectory& traj, int n,
                                           const PerturbationBoundSpec& spec, double slack) {
  if (traj.size() == 0) throw std::invalid_argument("empty trajectory");
  if (n <= 0 || n > traj.dim()) throw std::invalid_argument("w block size out of range");
  const auto& c = cert.certified;
  const EnvelopeConstants k = envelope_constants(c, spec);
  const ZFunction zero = [](double) { return 0.0; };
  const ZFunction g1 = spec.gamma1 ? spec.gamma1 : zero;
  const ZFunction g2 = spec.gamma2 ? spec.gamma2 : zero;
  const ZFunction p1 = spec.psi1 ? spec.psi1 : zero;
  const ZFunction p2 = spec.psi2 ? spec.psi2 : zero;
  auto psi = [&](double z) { return c.c4 * p1(z) + c.c5 * p2(z); };
  auto gam = [&](double z) { return c.c4 * g1(z) + c.c5 * g2(z); };

  EnvelopeReport rep;
  rep.k1 = k.k1;
  rep.k2 = k.k2;
  const auto& zs = traj.times();
  const double z0 = zs.front();
  const double w0 = traj.front().head(n).norm();
  const double R = cert.grid_spec.w_radius;
  rep.ball_ok = w0 < (R / k.k2) * std::sqrt(c.c1 / c.c2);
  const double psi_cap = 2.0 * c.c1 * k.k1 * R / k.k2;

  rep.envelope.resize(zs.size());
  rep.convolution.resize(zs.size());
  rep.integral_condition_ok = true;
  rep.psi_bound_ok = true;
  rep.envelope_ok = true;
  rep.max_residual = -kInf;
  rep.max_ratio = 0.0;
  double conv = 0.0, gamma_int = 0.0;
  const double amp = k.k2 * std::sqrt(c.c2 / c.c1) * w0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    if (i > 0) {
      const double a = zs[i - 1], b = zs[i];
      const quad::Composite rule{std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((b - a) / 0.25))), 8};
      conv = std::exp(-k.k1 * (b - a)) * conv +
             rule.integrate([&](double s) { return std::exp(-k.k1 * (b - s)) * psi(s); }, a, b);
      gamma_int += rule.integrate(gam, a, b);
    }
    rep.convolution[i] = conv;
    rep.envelope[i] = amp * std::exp(-k.k1 * (zs[i] - z0)) + k.k2 / (2.0 * c.c1) * conv;
    if (gamma_int > spec.kappa * (zs[i] - z0) + spec.eta + 1e-12) rep.integral_condition_ok = false;
    if (!(psi(zs[i]) < psi_cap) && psi(zs[i]) > 0.0) rep.psi_bound_ok = false;
    const double wn = traj.states()[i].head(n).norm();
    rep.max_residual = std::max(rep.max_residual, wn - rep.envelope[i]);
    if (rep.envelope[i] > 0.0) rep.max_ratio = std::max(rep.max_ratio, wn / rep.envelope[i]);
    if (wn > (1.0 + slack) * rep.envelope[i]) rep.envelope_ok = false;
  }
  rep.pass = rep.envelope_ok && rep.ball_ok && rep.integral_condition_ok && rep.psi_bound_ok;
  return rep;
}

// -- JSON -----------------------------------------------------------------------

nlohmann::json to_json(const DecayFit& f) {
  return {{"gain_k", f.gain_k},       {"rate_lambda", f.rate_lambda}, {"r_squared", f.r_squared},
          {"window", {f.t_start, f.t_end}}, {"nodes", f.nodes},       {"accepted", f.accepted},
          {"noise_floor_hit", f.noise_floor_hit}, {"envelope_c1", f.envelope_c1}};
}

nlohmann::json to_json(const StabilityVerdict& v, bool members) {
  nlohmann::json j = {{"verdict", to_string(v.kind)}, {"k", v.k},       {"lambda", v.lambda},
                      {"r2_min", v.r2_min},          {"seed", v.seed}, {"accepted", v.accepted},
                      {"count", v.members.size()}};
  if (members) {
    auto arr = nlohmann::json::array();
    for (const auto& m : v.members) {
      nlohmann::json mj = {{"index", m.index}, {"x0_norm", m.x0.norm()}, {"growth", m.growth}, {"note", m.note}};
      if (m.fit) mj["fit"] = to_json(*m.fit);
      arr.push_back(mj);
    }
    j["members"] = arr;
  }
  return j;
}

nlohmann::json to_json(const LyapunovEstimate& est, const CertificateReport* report) {
  const auto& g = est.grid_spec;
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j = {
      {"horizon_delta", est.horizon_delta},
      {"c1", est.certified.c1},
      {"c2", est.certified.c2},
      {"c3", est.certified.c3},
      {"c4", est.certified.c4},
      {"c5", est.certified.c5},
      {"raw", {{"c1", est.raw.c1}, {"c2", est.raw.c2}, {"c3", est.raw.c3}, {"c4", est.raw.c4}, {"c5", est.raw.c5}}},
      {"safety", est.safety},
      {"grid_spec",
       {{"w_radius", g.w_radius},
        {"w_points", g.w_points},
        {"v_points", g.v_points},
        {"z_points", g.z_points},
        {"v_lo", vec(g.v_lo)},
        {"v_hi", vec(g.v_hi)},
        {"z_lo", g.z_lo},
        {"z_hi", g.z_hi}}},
      {"points", est.grid.size()},
      {"max_zero_value", est.max_zero_value}};
  if (report) {
    auto arr = nlohmann::json::array();
    for (const auto& c : report->checks) arr.push_back({{"name", c.name}, {"pass", c.pass}, {"margin", c.margin}});
    j["verification"] = {{"checks", arr}, {"all_pass", report->all_pass}, {"min_margin", report->min_margin}};
  }
  return j;
}

nlohmann::json to_json(const ThresholdReport& t) {
  auto rows = [](const std::vector<ThresholdRow>& r) {
    auto arr = nlohmann::json::array();
    for (const auto& x : r) arr.push_back({{"epsilon", x.epsilon}, {"verdict", to_string(x.verdict)}});
    return arr;
  };
  nlohmann::json j = {{"eps_stable", t.eps_stable},
                      {"stable_throughout", t.stable_throughout},
                      {"estimate", t.estimate()},
                      {"sweep", rows(t.sweep)},
                      {"bisection", rows(t.bisection)}};
  j["eps_unstable"] = t.eps_unstable ? nlohmann::json(*t.eps_unstable) : nlohmann::json(nullptr);
  return j;
}

}  // namespace sfl::stability
