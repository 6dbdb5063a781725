#pragma once

// Explicit Runge-Kutta integration with dense (cubic Hermite) sampling.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sfl::ode {

using Vec = Eigen::VectorXd;

/// Right-hand side f(s, x) of dx/ds = f(s, x); s is t or z depending on the axis.
using Rhs = std::function<Vec(double, const Vec&)>;

enum class Axis { time_t, fast_axis_z };

std::string to_string(Axis axis);

enum class Scheme { rk4_fixed, rk45_adaptive };

struct IntegratorConfig {
  Scheme scheme = Scheme::rk45_adaptive;
  double step = 1e-3;  // rk4_fixed step; initial trial step for rk45_adaptive
  double rtol = 1e-9;
  double atol = 1e-12;
  std::size_t max_steps = 50'000'000;
  std::size_t output_stride = 1;  // keep every k-th accepted step (endpoints always kept)

  static IntegratorConfig fixed(double step);
  static IntegratorConfig adaptive(double rtol, double atol);

  /// Throws std::invalid_argument on non-positive step/tolerances or zero counts.
  void validate() const;
};

class IntegrationError : public std::runtime_error {
 public:
  enum class Kind { step_limit, non_finite, bad_input };
  IntegrationError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Time-indexed sampled solution. Times are strictly increasing; each node
/// carries the state and the vector-field value used for Hermite sampling.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<double> times, std::vector<Vec> states, std::vector<Vec> slopes,
             Axis axis = Axis::time_t);
  /// Slopes re-evaluated from `rhs` at every node.
  Trajectory(std::vector<double> times, std::vector<Vec> states, const Rhs& rhs,
             Axis axis = Axis::time_t);

  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec>& states() const { return states_; }
  const std::vector<Vec>& slopes() const { return slopes_; }
  Axis axis() const { return axis_; }
  std::size_t size() const { return times_.size(); }
  Eigen::Index dim() const { return states_.empty() ? 0 : states_.front().size(); }
  double front_time() const { return times_.front(); }
  double back_time() const { return times_.back(); }
  const Vec& front() const { return states_.front(); }
  const Vec& back() const { return states_.back(); }

  /// Cubic Hermite interpolation; exact at nodes. Throws RangeError outside the span.
  Vec sample_at(double s) const;

 private:
  std::vector<double> times_;
  std::vector<Vec> states_;
  std::vector<Vec> slopes_;
  Axis axis_ = Axis::time_t;
};

/// Integrates dx/ds = rhs(s, x) from s = a to s = b (b < a integrates backward;
/// the returned nodes are still stored with increasing times).
Trajectory integrate(const Rhs& rhs, const Vec& state0, double a, double b,
                     const IntegratorConfig& cfg, Axis axis = Axis::time_t);

/// Same as integrate() but only returns the final state.
Vec integrate_endpoint(const Rhs& rhs, const Vec& state0, double a, double b,
                       const IntegratorConfig& cfg);

Vec sample_at(const Trajectory& traj, double s);

/// CSV: header `t,x0,x1,...` (or `z,...` on the fast axis), one row per node, 17 significant digits.
void write_csv(const Trajectory& traj, std::ostream& os);

}  // namespace sfl::ode
