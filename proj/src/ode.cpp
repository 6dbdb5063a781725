#include "sfl/ode.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace sfl::ode {

std::string to_string(Axis axis) { return axis == Axis::time_t ? "t" : "z"; }

IntegratorConfig IntegratorConfig::fixed(double step) {
  IntegratorConfig cfg;
  cfg.scheme = Scheme::rk4_fixed;
  cfg.step = step;
  return cfg;
}

IntegratorConfig IntegratorConfig::adaptive(double rtol, double atol) {
  IntegratorConfig cfg;
  cfg.scheme = Scheme::rk45_adaptive;
  cfg.rtol = rtol;
  cfg.atol = atol;
  return cfg;
}

void IntegratorConfig::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("integrator step must be > 0");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("integrator rtol/atol must be > 0");
  if (max_steps < 1) throw std::invalid_argument("integrator max_steps must be >= 1");
  if (output_stride < 1) throw std::invalid_argument("integrator output_stride must be >= 1");
}

Trajectory::Trajectory(std::vector<double> times, std::vector<Vec> states, std::vector<Vec> slopes,
                       Axis axis)
    : times_(std::move(times)), states_(std::move(states)), slopes_(std::move(slopes)), axis_(axis) {
  if (times_.empty() || times_.size() != states_.size() || slopes_.size() != states_.size())
    throw std::invalid_argument("trajectory: times/states/slopes length mismatch");
  const auto d = states_.front().size();
  if (d < 1) throw std::invalid_argument("trajectory: state dimension must be >= 1");
  for (std::size_t i = 0; i < times_.size(); ++i) {
    if (states_[i].size() != d || slopes_[i].size() != d)
      throw std::invalid_argument("trajectory: inconsistent state dimension");
    if (i > 0 && !(times_[i] > times_[i - 1]))
      throw std::invalid_argument("trajectory: times must be strictly increasing");
  }
}

namespace {

std::vector<Vec> evaluate_slopes(const std::vector<double>& times, const std::vector<Vec>& states,
                                 const Rhs& rhs) {
  std::vector<Vec> out;
  out.reserve(times.size());
  for (std::size_t i = 0; i < times.size() && i < states.size(); ++i) out.push_back(rhs(times[i], states[i]));
  return out;
}

}  // namespace

Trajectory::Trajectory(std::vector<double> times, std::vector<Vec> states, const Rhs& rhs, Axis axis)
    : Trajectory(times, states, evaluate_slopes(times, states, rhs), axis) {}

Vec Trajectory::sample_at(double s) const {
  if (times_.empty() || !(s >= times_.front() && s <= times_.back())) {
    std::ostringstream msg;
    msg << "sample_at: query " << s << " outside [" << (times_.empty() ? 0.0 : times_.front()) << ", "
        << (times_.empty() ? 0.0 : times_.back()) << "]";
    throw RangeError(msg.str());
  }
  auto it = std::upper_bound(times_.begin(), times_.end(), s);
  std::size_t hi = static_cast<std::size_t>(it - times_.begin());
  if (hi == times_.size()) return states_.back();
  std::size_t lo = hi - 1;
  if (s == times_[lo]) return states_[lo];
  const double h = times_[hi] - times_[lo];
  const double th = (s - times_[lo]) / h;
  const double th2 = th * th;
  const double th3 = th2 * th;
  const double h00 = 2 * th3 - 3 * th2 + 1;
  const double h10 = th3 - 2 * th2 + th;
  const double h01 = -2 * th3 + 3 * th2;
  const double h11 = th3 - th2;
  return h00 * states_[lo] + h10 * h * slopes_[lo] + h01 * states_[hi] + h11 * h * slopes_[hi];
}

Vec sample_at(const Trajectory& traj, double s) { return traj.sample_at(s); }

namespace {

void check_finite(const Vec& x, double s) {
  if (!x.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite state encountered at s = " << s;
    throw IntegrationError(IntegrationError::Kind::non_finite, msg.str());
  }
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

// Drives the stepping loop; `on_step(s, x, f)` is called for the initial node
// and every accepted step, with `last` set on the final one.
template <typename OnStep>
void run(const Rhs& rhs, const Vec& state0, double a, double b, const IntegratorConfig& cfg, OnStep&& on_step) {
  cfg.validate();
  if (!(b != a) || !std::isfinite(a) || !std::isfinite(b))
    throw IntegrationError(IntegrationError::Kind::bad_input, "integrate: span must satisfy a != b");
  if (state0.size() < 1) throw IntegrationError(IntegrationError::Kind::bad_input, "integrate: empty state");
  check_finite(state0, a);

  const double dir = b > a ? 1.0 : -1.0;
  const double span = std::abs(b - a);
  double s = a;
  Vec x = state0;
  Vec f = rhs(s, x);
  if (f.size() != x.size())
    throw IntegrationError(IntegrationError::Kind::bad_input, "integrate: rhs dimension mismatch");
  check_finite(f, s);
  on_step(s, x, f, false);

  std::size_t steps = 0;
  const double tiny = 64 * std::numeric_limits<double>::epsilon() * std::max(std::abs(a), std::abs(b));

  if (cfg.scheme == Scheme::rk4_fixed) {
    const auto n = static_cast<std::size_t>(std::ceil(span / cfg.step - 1e-9));
    if (n > cfg.max_steps)
      throw IntegrationError(IntegrationError::Kind::step_limit, "integrate: step count exceeds max_steps");
    const double h = dir * span / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec k1 = f;
      const Vec k2 = rhs(s + 0.5 * h, x + 0.5 * h * k1);
      const Vec k3 = rhs(s + 0.5 * h, x + 0.5 * h * k2);
      const Vec k4 = rhs(s + h, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      s = (i + 1 == n) ? b : a + static_cast<double>(i + 1) * h;
      check_finite(x, s);
      f = rhs(s, x);
      check_finite(f, s);
      on_step(s, x, f, i + 1 == n);
    }
    return;
  }

  // Adaptive Dormand-Prince with PI step-size control.
  double h = std::min(cfg.step, span);
  double err_prev = 1e-4;
  bool rejected = false;
  Vec k1 = f, k2, k3, k4, k5, k6, k7, x5;
  while (dir * (b - s) > tiny) {
    if (++steps > cfg.max_steps)
      throw IntegrationError(IntegrationError::Kind::step_limit, "integrate: step count exceeds max_steps");
    bool last = false;
    if (h >= dir * (b - s)) {
      h = dir * (b - s);
      last = true;
    }
    const double hs = dir * h;
    k2 = rhs(s + c2 * hs, x + hs * (a21 * k1));
    k3 = rhs(s + c3 * hs, x + hs * (a31 * k1 + a32 * k2));
    k4 = rhs(s + c4 * hs, x + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs(s + c5 * hs, x + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs(s + hs, x + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    x5 = x + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double s_new = last ? b : s + hs;
    k7 = rhs(s_new, x5);
    const Vec err_vec = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double sc = cfg.atol + cfg.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
      err = std::max(err, std::abs(err_vec[i]) / sc);
    }
    if (!std::isfinite(err)) {
      h *= 0.25;
      if (h < 1e-14 * std::max(1.0, span)) {
        std::ostringstream msg;
        msg << "non-finite state encountered near s = " << s;
        throw IntegrationError(IntegrationError::Kind::non_finite, msg.str());
      }
      rejected = true;
      continue;
    }
    if (err <= 1.0) {
      double fac = err == 0.0 ? 5.0 : 0.9 * std::pow(err, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
      fac = std::clamp(fac, 0.2, rejected ? 1.0 : 5.0);
      err_prev = std::max(err, 1e-4);
      s = s_new;
      x = x5;
      k1 = k7;
      check_finite(x, s);
      on_step(s, x, k1, last);
      if (last) return;
      h *= fac;
      rejected = false;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -1.0 / 5.0));
      rejected = true;
    }
    if (h < 1e-15 * std::max(1.0, std::abs(s)))
      throw IntegrationError(IntegrationError::Kind::step_limit, "integrate: step size underflow");
  }
}

}  // namespace

Trajectory integrate(const Rhs& rhs, const Vec& state0, double a, double b, const IntegratorConfig& cfg,
                     Axis axis) {
  std::vector<double> times;
  std::vector<Vec> states, slopes;
  std::size_t count = 0;
  run(rhs, state0, a, b, cfg, [&](double s, const Vec& x, const Vec& f, bool last) {
    if (count++ % cfg.output_stride == 0 || last) {
      times.push_back(s);
      states.push_back(x);
      slopes.push_back(f);
    }
  });
  if (b < a) {
    std::reverse(times.begin(), times.end());
    std::reverse(states.begin(), states.end());
    std::reverse(slopes.begin(), slopes.end());
  }
  return Trajectory(std::move(times), std::move(states), std::move(slopes), axis);
}

Vec integrate_endpoint(const Rhs& rhs, const Vec& state0, double a, double b, const IntegratorConfig& cfg) {
  Vec out;
  run(rhs, state0, a, b, cfg, [&](double, const Vec& x, const Vec&, bool last) {
    if (last) out = x;
  });
  return out;
}

void write_csv(const Trajectory& traj, std::ostream& os) {
  const auto d = traj.dim();
  os << to_string(traj.axis());
  for (Eigen::Index j = 0; j < d; ++j) os << ",x" << j;
  os << '\n';
  const auto old_prec = os.precision(17);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    os << traj.times()[i];
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << traj.states()[i][j];
    os << '\n';
  }
  os.precision(old_prec);
}

}  // namespace sfl::ode
