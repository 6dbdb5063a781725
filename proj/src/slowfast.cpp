#include "sfl/slowfast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "sfl/kuramoto.hpp"
#include "sfl/util.hpp"

namespace sfl::slowfast {

void SlowFastSystem::validate() const {
  if (!f1 || !f3 || (m > 0 && !f2)) throw std::invalid_argument("slow-fast system '" + name + "': missing field");
  if (n < 1 || m < 0) throw std::invalid_argument("slow-fast system '" + name + "': need n >= 1, m >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("slow-fast system '" + name + "': epsilon must be > 0");
  if (!(period > 0.0)) throw std::invalid_argument("slow-fast system '" + name + "': period must be > 0");
}

Box Box::symmetric(int n, double x_radius, int m, double y_lo, double y_hi, double z_lo, double z_hi) {
  Box b;
  b.x_lo = Vec::Constant(n, -x_radius);
  b.x_hi = Vec::Constant(n, x_radius);
  b.y_lo = Vec::Constant(m, y_lo);
  b.y_hi = Vec::Constant(m, y_hi);
  b.z_lo = z_lo;
  b.z_hi = z_hi;
  return b;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

std::vector<Point> sample_domain(const Box& box, std::size_t samples, std::uint64_t seed) {
  const auto n = box.x_lo.size();
  const auto m = box.y_lo.size();
  const auto dims = static_cast<std::size_t>(n + m + 1);
  std::vector<Point> pts;
  pts.reserve(samples + (std::size_t{1} << std::min<std::size_t>(dims, 16)));

  auto lerp = [](double lo, double hi, double u) { return lo + (hi - lo) * u; };

  // Latin hypercube: per-dimension stratified coordinates with independent
  // permutations derived from the counter-based generator.
  if (samples > 0) {
    std::vector<std::vector<std::size_t>> perm(dims, std::vector<std::size_t>(samples));
    for (std::size_t d = 0; d < dims; ++d) {
      CounterRng rng(seed, 1000 + d);
      auto& p = perm[d];
      for (std::size_t i = 0; i < samples; ++i) p[i] = i;
      for (std::size_t i = samples - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.bits(i) % (i + 1));
        std::swap(p[i], p[j]);
      }
    }
    CounterRng jitter(seed, 7);
    for (std::size_t i = 0; i < samples; ++i) {
      Point pt;
      pt.x.resize(n);
      pt.y.resize(m);
      for (std::size_t d = 0; d < dims; ++d) {
        const double u = (static_cast<double>(perm[d][i]) + jitter.uniform(i * dims + d)) / static_cast<double>(samples);
        if (d < static_cast<std::size_t>(n)) {
          pt.x[static_cast<Eigen::Index>(d)] = lerp(box.x_lo[static_cast<Eigen::Index>(d)], box.x_hi[static_cast<Eigen::Index>(d)], u);
        } else if (d < static_cast<std::size_t>(n + m)) {
          const auto k = static_cast<Eigen::Index>(d) - n;
          pt.y[k] = lerp(box.y_lo[k], box.y_hi[k], u);
        } else {
          pt.z = lerp(box.z_lo, box.z_hi, u);
        }
      }
      pts.push_back(std::move(pt));
    }
  }

  // Corners.
  if (dims <= 16) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << dims); ++mask) {
      Point pt;
      pt.x.resize(n);
      pt.y.resize(m);
      for (std::size_t d = 0; d < dims; ++d) {
        const bool hi = (mask >> d) & 1U;
        if (d < static_cast<std::size_t>(n)) {
          const auto k = static_cast<Eigen::Index>(d);
          pt.x[k] = hi ? box.x_hi[k] : box.x_lo[k];
        } else if (d < static_cast<std::size_t>(n + m)) {
          const auto k = static_cast<Eigen::Index>(d) - n;
          pt.y[k] = hi ? box.y_hi[k] : box.y_lo[k];
        } else {
          pt.z = hi ? box.z_hi : box.z_lo;
        }
      }
      pts.push_back(std::move(pt));
    }
  }
  return pts;
}

FastRateReport verify_fast_rate_bound(const SlowFastSystem& sys, const Box& box, std::size_t samples,
                                      std::uint64_t seed) {
  FastRateReport rep;
  rep.theta_lower = std::numeric_limits<double>::infinity();
  const auto pts = sample_domain(box, samples, seed);
  for (const auto& p : pts) {
    const double v = sys.f3(p.x, p.y, p.z);
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "f3 non-finite at z = " << p.z;
      throw DomainError(msg.str());
    }
    if (v < rep.theta_lower) {
      rep.theta_lower = v;
      rep.witness = p;
    }
  }
  rep.samples = pts.size();
  rep.violated = !(rep.theta_lower > 0.0);
  return rep;
}

EquilibriumReport check_partial_equilibrium(const SlowFastSystem& sys, const Box& box, std::size_t samples,
                                            std::uint64_t seed) {
  EquilibriumReport rep;
  const Vec zero = Vec::Zero(sys.n);
  for (const auto& p : sample_domain(box, samples, seed)) {
    rep.residual_f1 = std::max(rep.residual_f1, sys.f1(zero, p.y, p.z).norm());
    if (sys.m > 0) rep.residual_f2 = std::max(rep.residual_f2, sys.f2(zero, p.y, p.z).norm());
  }
  rep.pass = rep.residual_f1 < 1e-12 && rep.residual_f2 < 1e-12;
  return rep;
}

PeriodicityReport check_periodicity(const SlowFastSystem& sys, const Box& box, std::size_t samples,
                                    std::uint64_t seed) {
  PeriodicityReport rep;
  const double T = sys.period;
  for (const auto& p : sample_domain(box, samples, seed)) {
    rep.max_deviation = std::max(rep.max_deviation, (sys.f1(p.x, p.y, p.z + T) - sys.f1(p.x, p.y, p.z)).norm());
    if (sys.m > 0)
      rep.max_deviation = std::max(rep.max_deviation, (sys.f2(p.x, p.y, p.z + T) - sys.f2(p.x, p.y, p.z)).norm());
    rep.max_deviation = std::max(rep.max_deviation, std::abs(sys.f3(p.x, p.y, p.z + T) - sys.f3(p.x, p.y, p.z)));
  }
  rep.pass = rep.max_deviation < 1e-9;
  return rep;
}

namespace {

double guarded_f3(const ScalarField& f3, const Vec& x, const Vec& y, double z) {
  const double d = f3(x, y, z);
  if (!(std::abs(d) >= 1e-12)) {
    std::ostringstream msg;
    msg << "fast rate f3 = " << d << " too close to zero at z = " << z << " (assumption f3 >= theta violated)";
    throw DomainError(msg.str());
  }
  return d;
}

}  // namespace

ReducedSystem reduce_to_fast_axis(const SlowFastSystem& sys) {
  sys.validate();
  ReducedSystem red;
  red.name = sys.name;
  red.n = sys.n;
  red.m = sys.m;
  red.epsilon = sys.epsilon;
  red.period = sys.period;
  red.h1 = [f1 = sys.f1, f3 = sys.f3](const Vec& x, const Vec& y, double z) -> Vec {
    return f1(x, y, z) / guarded_f3(f3, x, y, z);
  };
  if (sys.m > 0) {
    red.h2 = [f2 = sys.f2, f3 = sys.f3](const Vec& x, const Vec& y, double z) -> Vec {
      return f2(x, y, z) / guarded_f3(f3, x, y, z);
    };
  } else {
    red.h2 = [](const Vec&, const Vec&, double) -> Vec { return Vec(0); };
  }
  return red;
}

SlowFastSystem flip_fast_axis(const SlowFastSystem& sys) {
  SlowFastSystem out = sys;
  out.name = sys.name + "_flipped_z";
  out.f1 = [f = sys.f1](const Vec& x, const Vec& y, double z) { return f(x, y, -z); };
  if (sys.f2) out.f2 = [f = sys.f2](const Vec& x, const Vec& y, double z) { return f(x, y, -z); };
  out.f3 = [f = sys.f3](const Vec& x, const Vec& y, double z) { return -f(x, y, -z); };
  return out;
}

ode::Rhs full_rhs(const SlowFastSystem& sys) {
  sys.validate();
  return [sys](double, const Vec& s) -> Vec {
    const Vec x = s.head(sys.n);
    const Vec y = s.segment(sys.n, sys.m);
    const double z = s[sys.n + sys.m];
    Vec out(s.size());
    out.head(sys.n) = sys.f1(x, y, z);
    if (sys.m > 0) out.segment(sys.n, sys.m) = sys.f2(x, y, z);
    out[sys.n + sys.m] = sys.f3(x, y, z) / sys.epsilon;
    return out;
  };
}

ode::Rhs reduced_rhs(const ReducedSystem& red) {
  return [red](double z, const Vec& s) -> Vec {
    const Vec x = s.head(red.n);
    const Vec y = s.segment(red.n, red.m);
    Vec out(s.size());
    out.head(red.n) = red.epsilon * red.h1(x, y, z);
    if (red.m > 0) out.segment(red.n, red.m) = red.epsilon * red.h2(x, y, z);
    return out;
  };
}

double default_full_step(const SlowFastSystem& sys, double f3_max) {
  return sys.epsilon * sys.period / (50.0 * std::max(f3_max, 1e-12));
}

namespace {

Vec v1(double a) {
  Vec out(1);
  out[0] = a;
  return out;
}

SlowFastSystem example1_impl(double epsilon, double drift_sign, std::string name) {
  SlowFastSystem s;
  s.name = std::move(name);
  s.n = 1;
  s.m = 1;
  s.epsilon = epsilon;
  s.period = 2.0 * std::numbers::pi;
  s.f1 = [drift_sign](const Vec& x, const Vec& y, double z) {
    return v1(drift_sign * (-x[0] - 0.2 * x[0] * std::sin(y[0]) - 2.0 * x[0] * std::cos(z)));
  };
  s.f2 = [](const Vec& x, const Vec& y, double z) {
    return v1(2.0 * x[0] * std::cos(y[0]) + x[0] * std::sin(z));
  };
  s.f3 = [](const Vec& x, const Vec& y, double) { return 3.0 - std::sin(x[0]) + std::cos(y[0]); };
  return s;
}

double param(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

SlowFastSystem example1(double epsilon) { return example1_impl(epsilon, 1.0, "example1"); }

SlowFastSystem example1_flipped(double epsilon) { return example1_impl(epsilon, -1.0, "example1_flipped"); }

SystemRegistry::SystemRegistry() {
  factories_["example1"] = [](const Params& p) { return example1(param(p, "epsilon", 0.01)); };
  factories_["kuramoto_star"] = [](const Params& p) {
    kuramoto::KuramotoStarParams kp;
    kp.omega = param(p, "omega", 1.0);
    kp.A1 = kp.A2 = param(p, "A", 1.0);
    kp.alpha = param(p, "alpha", 0.9);
    kp.u = param(p, "u", 10.0);
    return kuramoto::mu_zeta_system(kp);
  };
}

SystemRegistry& SystemRegistry::instance() {
  static SystemRegistry reg;
  return reg;
}

void SystemRegistry::add(const std::string& name, Factory factory) { factories_[name] = std::move(factory); }

bool SystemRegistry::contains(const std::string& name) const { return factories_.count(name) > 0; }

SlowFastSystem SystemRegistry::make(const std::string& name, const Params& params) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw std::invalid_argument("unknown system '" + name + "'");
  return it->second(params);
}

std::vector<std::string> SystemRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : factories_) out.push_back(k);
  return out;
}

}  // namespace sfl::slowfast
