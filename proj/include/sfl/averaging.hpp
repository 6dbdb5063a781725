#pragma once

// Partial averaging over the fast axis: only the stable block is averaged,
//
//     dw/dz = eps * h_av(w, v),   dv/dz = eps * h2(w, v, z),
//     h_av(w, v) = (1/T) * integral_0^T h1(w, v, s) ds.

#include <cstdint>

#include "sfl/quadrature.hpp"
#include "sfl/slowfast.hpp"

namespace sfl::averaging {

using ode::Vec;
using slowfast::Field;
using slowfast::ReducedSystem;

using AveragedField = std::function<Vec(const Vec& w, const Vec& v)>;

struct AveragedSystem {
  std::string name;
  int n = 1;
  int m = 0;
  AveragedField h_av;  // evaluated lazily by quadrature
  Field h2;
  double epsilon = 0.01;
  double period = 0.0;
  std::size_t quadrature_nodes = 64;
};

struct JacobianBounds {
  double L1 = 0.0;        // sup ||dh1/dx||
  double L2 = 0.0;        // sup ||dh2/dx||
  double L1_prime = 0.0;  // sup ||dh1/dy|| / ||x||
  double L2_prime = 0.0;  // sup ||dh2/dy|| / ||x||
  std::size_t samples = 0;
};

struct DefectReport {
  Vec u;              // integral_0^{z mod T} (h1 - h_av) ds
  double norm = 0.0;
  double bound = 0.0;  // 2 T L1 ||w||
  bool within_bound = false;
};

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Composite Gauss-Legendre average of h1 over [offset, offset + T].
Vec average_at(const ReducedSystem& red, const Vec& w, const Vec& v, std::size_t nodes = 64, double offset = 0.0);

/// Throws std::invalid_argument for nodes < 8 or a non-positive period.
AveragedSystem average_reduced(const ReducedSystem& red, std::size_t nodes = 64);

/// State (w, v) on the z-axis: eps * (h_av, h2).
ode::Rhs averaged_rhs(const AveragedSystem& av);

/// u(w, v, z) with z reduced modulo T. Requires z >= 0.
DefectReport averaging_defect(const ReducedSystem& red, const AveragedSystem& av, const Vec& w, const Vec& v,
                              double z, double L1);

/// Central-difference Jacobian sups over the box; FD step max(1e-6, 1e-6*||p||).
JacobianBounds estimate_jacobian_bounds(const ReducedSystem& red, const slowfast::Box& box,
                                        std::size_t samples = 4000, std::uint64_t seed = 11);

/// Spectral norm.
double op_norm(const Eigen::MatrixXd& a);

/// Central-difference Jacobian of f with respect to one argument block.
Eigen::MatrixXd fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& at);

/// Example 1: h1 = f1/f3 with f3 independent of z, so the cos z term averages
/// out and h_av(w, v) = -w (1 + 0.2 sin v) / (3 - sin w + cos v).
Vec example1_h_av(const Vec& w, const Vec& v);
/// Averaged Example 1 using the closed form above (quadrature-free).
AveragedSystem example1_averaged(double epsilon);

}  // namespace sfl::averaging
