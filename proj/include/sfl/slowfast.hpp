#pragma once

// Slow-fast periodic systems
//
//     dx/dt = f1(x, y, z),  dy/dt = f2(x, y, z),  eps * dz/dt = f3(x, y, z)
//
// with f1, f2, f3 T-periodic in z and x = 0 a partial equilibrium. When
// f3 >= theta > 0 the fast variable z is a valid clock and the system can be
// rewritten on the z-axis as dx/dz = eps*h1, dy/dz = eps*h2 with h = f/f3.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfl/ode.hpp"

namespace sfl::slowfast {

using ode::Vec;

/// (x, y, z) -> R^k
using Field = std::function<Vec(const Vec& x, const Vec& y, double z)>;
/// (x, y, z) -> R
using ScalarField = std::function<double(const Vec& x, const Vec& y, double z)>;

struct SlowFastSystem {
  std::string name;
  int n = 1;  // slow stable block x
  int m = 0;  // slow remaining block y (0 allowed)
  Field f1;
  Field f2;
  ScalarField f3;
  double epsilon = 0.01;
  double period = 0.0;

  /// Throws std::invalid_argument on missing callbacks or non-positive eps/T/n.
  void validate() const;
};

struct ReducedSystem {
  std::string name;
  int n = 1;
  int m = 0;
  Field h1;
  Field h2;
  double epsilon = 0.01;
  double period = 0.0;
};

/// Axis-aligned sampling domain. The z range defaults to one period.
struct Box {
  Vec x_lo, x_hi;
  Vec y_lo, y_hi;
  double z_lo = 0.0;
  double z_hi = 0.0;

  static Box symmetric(int n, double x_radius, int m, double y_lo, double y_hi, double z_lo, double z_hi);
};

/// Sample point (x, y, z).
struct Point {
  Vec x, y;
  double z = 0.0;
};

struct FastRateReport {
  double theta_lower = 0.0;
  bool violated = true;
  Point witness;
  std::size_t samples = 0;
};

struct EquilibriumReport {
  double residual_f1 = 0.0;
  double residual_f2 = 0.0;
  bool pass = false;
};

struct PeriodicityReport {
  double max_deviation = 0.0;
  bool pass = false;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Latin-hypercube points over the box plus its corners (deterministic in seed).
std::vector<Point> sample_domain(const Box& box, std::size_t samples, std::uint64_t seed);

/// theta_lower = min of f3 over the samples; a grid-resolution certificate only.
/// Throws DomainError if f3 is non-finite at a sample.
FastRateReport verify_fast_rate_bound(const SlowFastSystem& sys, const Box& box, std::size_t samples = 100'000,
                                      std::uint64_t seed = 1);

/// Max of ||f1(0,y,z)|| and ||f2(0,y,z)|| over (y, z) samples; pass iff both < 1e-12.
EquilibriumReport check_partial_equilibrium(const SlowFastSystem& sys, const Box& box, std::size_t samples = 2000,
                                            std::uint64_t seed = 2);

/// Max |f_i(x,y,z+T) - f_i(x,y,z)| over samples; pass iff < 1e-9.
PeriodicityReport check_periodicity(const SlowFastSystem& sys, const Box& box, std::size_t samples = 2000,
                                    std::uint64_t seed = 3);

/// h1 = f1/f3, h2 = f2/f3. The returned maps throw DomainError if |f3| < 1e-12.
ReducedSystem reduce_to_fast_axis(const SlowFastSystem& sys);

/// Replaces z by -z so that a system with f3 <= -theta satisfies f3 >= theta.
SlowFastSystem flip_fast_axis(const SlowFastSystem& sys);

/// Full state (x, y, z) on the t-axis.
ode::Rhs full_rhs(const SlowFastSystem& sys);
/// State (x, y) on the z-axis: eps*(h1, h2).
ode::Rhs reduced_rhs(const ReducedSystem& red);

/// Largest fixed step resolving the fast phase on the t-axis: eps*T/(50*f3_max).
double default_full_step(const SlowFastSystem& sys, double f3_max);

Vec concat(const Vec& a, const Vec& b);

// -- built-in systems ---------------------------------------------------------

SlowFastSystem example1(double epsilon);
/// Example 1 with the sign of the x drift flipped (unstable reference).
SlowFastSystem example1_flipped(double epsilon);

/// Parameters of the built-in systems and custom factories.
using Params = std::map<std::string, double>;
using Factory = std::function<SlowFastSystem(const Params&)>;

/// Name -> factory. Built-ins: `example1`, `kuramoto_star`.
class SystemRegistry {
 public:
  static SystemRegistry& instance();

  void add(const std::string& name, Factory factory);
  bool contains(const std::string& name) const;
  SlowFastSystem make(const std::string& name, const Params& params) const;
  std::vector<std::string> names() const;

 private:
  SystemRegistry();
  std::map<std::string, Factory> factories_;
};

}  // namespace sfl::slowfast
