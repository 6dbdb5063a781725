#include "sfl/averaging.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace sfl::averaging {

namespace {

void require_finite(const Vec& v, const char* what, double z) {
  if (!v.allFinite()) {
    std::ostringstream msg;
    msg << what << " non-finite at z = " << z;
    throw QuadratureError(msg.str());
  }
}

}  // namespace

Vec average_at(const ReducedSystem& red, const Vec& w, const Vec& v, std::size_t nodes, double offset) {
  const auto rule = quad::Composite::with_nodes(nodes);
  const double T = red.period;
  Vec acc = rule.integrate(
      [&](double s) -> Vec {
        Vec val = red.h1(w, v, s);
        require_finite(val, "averaging integrand", s);
        return val;
      },
      offset, offset + T);
  return acc / T;
}

AveragedSystem average_reduced(const ReducedSystem& red, std::size_t nodes) {
  if (nodes < 8) throw std::invalid_argument("average_reduced: need at least 8 quadrature nodes");
  if (!(red.period > 0.0)) throw std::invalid_argument("average_reduced: period must be > 0");
  AveragedSystem av;
  av.name = red.name + "_averaged";
  av.n = red.n;
  av.m = red.m;
  av.epsilon = red.epsilon;
  av.period = red.period;
  av.quadrature_nodes = nodes;
  av.h2 = red.h2;
  av.h_av = [red, nodes](const Vec& w, const Vec& v) { return average_at(red, w, v, nodes); };
  return av;
}

ode::Rhs averaged_rhs(const AveragedSystem& av) {
  return [av](double z, const Vec& s) -> Vec {
    const Vec w = s.head(av.n);
    const Vec v = s.segment(av.n, av.m);
    Vec out(s.size());
    out.head(av.n) = av.epsilon * av.h_av(w, v);
    if (av.m > 0) out.segment(av.n, av.m) = av.epsilon * av.h2(w, v, z);
    return out;
  };
}

DefectReport averaging_defect(const ReducedSystem& red, const AveragedSystem& av, const Vec& w, const Vec& v,
                              double z, double L1) {
  if (!(z >= 0.0)) throw std::invalid_argument("averaging_defect: z must be >= 0");
  const double T = red.period;
  const double zr = std::fmod(z, T);
  DefectReport rep;
  const Vec mean = av.h_av(w, v);
  if (zr == 0.0) {
    rep.u = Vec::Zero(red.n);
  } else {
    const auto rule = quad::Composite::with_nodes(std::max<std::size_t>(64, av.quadrature_nodes));
    rep.u = rule.integrate(
        [&](double s) -> Vec {
          Vec d = red.h1(w, v, s) - mean;
          require_finite(d, "defect integrand", s);
          return d;
        },
        0.0, zr);
  }
  rep.norm = rep.u.norm();
  rep.bound = 2.0 * T * L1 * w.norm();
  rep.within_bound = rep.norm <= rep.bound * (1.0 + 1e-12) + 1e-14;
  return rep;
}

double op_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  if (a.rows() == 1 || a.cols() == 1) return a.norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

Eigen::MatrixXd fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& at) {
  const double h = std::max(1e-6, 1e-6 * at.norm());
  const Vec f0 = f(at);
  Eigen::MatrixXd jac(f0.size(), at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    Vec p = at, q = at;
    p[j] += h;
    q[j] -= h;
    jac.col(j) = (f(p) - f(q)) / (2.0 * h);
  }
  return jac;
}

JacobianBounds estimate_jacobian_bounds(const ReducedSystem& red, const slowfast::Box& box, std::size_t samples,
                                        std::uint64_t seed) {
  JacobianBounds jb;
  const auto pts = slowfast::sample_domain(box, samples, seed);
  for (const auto& p : pts) {
    const Vec pt = slowfast::concat(p.x, p.y);
    // Jacobians are taken with respect to the full (x, y) point so that the FD
    // step scales with the point norm.
    auto h1_of = [&](const Vec& s) { return red.h1(s.head(red.n), s.segment(red.n, red.m), p.z); };
    const Eigen::MatrixXd j1 = fd_jacobian(h1_of, pt);
    if (!j1.allFinite()) throw QuadratureError("estimate_jacobian_bounds: non-finite derivative sample");
    jb.L1 = std::max(jb.L1, op_norm(j1.leftCols(red.n)));
    const double xn = p.x.norm();
    if (red.m > 0) {
      auto h2_of = [&](const Vec& s) { return red.h2(s.head(red.n), s.segment(red.n, red.m), p.z); };
      const Eigen::MatrixXd j2 = fd_jacobian(h2_of, pt);
      if (!j2.allFinite()) throw QuadratureError("estimate_jacobian_bounds: non-finite derivative sample");
      jb.L2 = std::max(jb.L2, op_norm(j2.leftCols(red.n)));
      if (xn > 1e-8) {
        jb.L1_prime = std::max(jb.L1_prime, op_norm(j1.rightCols(red.m)) / xn);
        jb.L2_prime = std::max(jb.L2_prime, op_norm(j2.rightCols(red.m)) / xn);
      }
    }
  }
  jb.samples = pts.size();
  return jb;
}

Vec example1_h_av(const Vec& w, const Vec& v) {
  Vec out(1);
  out[0] = -w[0] * (1.0 + 0.2 * std::sin(v[0])) / (3.0 - std::sin(w[0]) + std::cos(v[0]));
  return out;
}

AveragedSystem example1_averaged(double epsilon) {
  const auto red = slowfast::reduce_to_fast_axis(slowfast::example1(epsilon));
  AveragedSystem av;
  av.name = "example1_averaged";
  av.n = 1;
  av.m = 1;
  av.epsilon = epsilon;
  av.period = red.period;
  av.quadrature_nodes = 0;
  av.h2 = red.h2;
  av.h_av = example1_h_av;
  return av;
}

}  // namespace sfl::averaging
