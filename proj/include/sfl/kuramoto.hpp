#pragma once

// Kuramoto-Sakaguchi oscillators on a star with one central node (0) and two
// peripherals (1, 2):
//
//     dθi/dt = ω + Ai sin(θ0 − θi − α),                     i = 1, 2
//     dθ0/dt = ω + Σj Aj sin(θj − θ0 − α) + u
//
// Remote synchronization is θ1 = θ2. With z1 + i z2 = ½ Σj exp(i(θ0 − θj)) =
// r exp(iζ), the distance μ = 1 − r to the unit circle obeys a scalar slow
// equation driven by the fast angle ζ.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "sfl/ode.hpp"
#include "sfl/slowfast.hpp"
#include "sfl/stability.hpp"

namespace sfl::kuramoto {

using ode::Vec;
using Phases = std::array<double, 3>;

struct KuramotoStarParams {
  double omega = 1.0;
  double A1 = 1.0;
  double A2 = 1.0;
  double alpha = 0.9;
  double u = 0.0;

  static KuramotoStarParams symmetric(double omega, double A, double alpha, double u) {
    return {omega, A, A, alpha, u};
  }
  bool symmetric_coupling() const { return A1 == A2; }
  double A() const { return A1; }
  /// A1, A2 > 0, α in [0, π/2], u >= 0.
  void validate() const;
};

struct PolarObservables {
  double z1 = 0.0;
  double z2 = 0.0;
  double r = 0.0;
  double zeta = 0.0;  // unwrapped against the previous value when supplied
  double mu = 0.0;
  bool degenerate = false;  // r == 0, ζ undefined
};

struct ManifoldDistance {
  double euclidean = 0.0;  // wrapped |θ1 − θ2| / √2
  double mu = 0.0;         // 1 − r
};

struct PhaseLockedPoints {
  double c_alpha = 0.0;
  double c_prime_alpha = 0.0;
};

enum class Verdict { stable, unstable };

struct EquilibriumClassification {
  double c_alpha = 0.0;
  double c_prime_alpha = 0.0;
  std::array<double, 2> eig_M1{};       // ascending
  std::array<double, 2> eig_M1prime{};  // ascending
  Verdict verdict_M1 = Verdict::unstable;
  Verdict verdict_M1prime = Verdict::unstable;
  double threshold = 0.0;  // arctan(√3)
  /// Eigenvalue of the (1, −1) mode, transverse to the synchronization manifold.
  double transverse_M1 = 0.0;
};

struct AveragedMuReport {
  double closed_form = 0.0;     // corrected closed form of ∫₀^{2π} f(μ̂, ζ) dζ
  double printed_form = 0.0;    // expression as commonly printed (missing u² sin 2α)
  double quadrature = 0.0;      // composite Gauss-Legendre ∫₀^{2π} f(μ̂, ζ) dζ
  double rate_constant_c = 0.0;  // (4π/9)(1/√(u² − 9A²(1−ξ)²) − 1/u)
  bool below_linear_bound = false;  // closed_form < −c μ̂
};

std::string to_string(Verdict v);

double wrap_pi(double angle);  // to (−π, π]

Phases star_rhs(const KuramotoStarParams& p, const Phases& theta);
ode::Rhs star_ode(const KuramotoStarParams& p);

PolarObservables polar_observables(const Phases& theta, std::optional<double> previous_zeta = std::nullopt);
ManifoldDistance manifold_distance(const Phases& theta);

/// (dμ/dt, dζ/dt) for symmetric couplings.
std::array<double, 2> mu_zeta_rhs(double mu, double zeta, const KuramotoStarParams& p);
ode::Rhs mu_zeta_ode(const KuramotoStarParams& p);

/// dμ/dζ = ε f(μ, ζ) with ε = 1/u.
double f_mu_zeta(double mu, double zeta, const KuramotoStarParams& p);

/// (μ, ζ) as a scalar-fast slow-fast system: x = μ, z = ζ, ε = 1/u,
/// f3 = (dζ/dt)/u, period 2π. Requires u > 0.
slowfast::SlowFastSystem mu_zeta_system(const KuramotoStarParams& p);

/// Throws std::domain_error unless u > 3A and 0 <= μ̂ < 1.
AveragedMuReport averaged_mu_rhs(double mu_hat, const KuramotoStarParams& p, double xi = 0.5,
                                 std::size_t quadrature_nodes = 128);
double averaged_mu_closed_form(double mu_hat, const KuramotoStarParams& p);
double averaged_mu_rhs_printed(double mu_hat, const KuramotoStarParams& p);
double rate_constant_c(const KuramotoStarParams& p, double xi);

PhaseLockedPoints phase_locked_equilibria(double alpha);
/// Right-hand side of the phase-difference system x_i = θ0 − θi at x1 = x2 = x.
double locked_residual(double x, double alpha, double A = 1.0);
EquilibriumClassification linearized_classification(double alpha, double A);

/// (v1+v2−3ω−u)²/(16A² sin²α) + (v1−v2−ω+u)²/(16A² cos²α) − 1.
double limit_cycle_residual(double v1, double v2, const KuramotoStarParams& p);

struct ObservableRow {
  double t = 0.0;
  Phases theta{};
  PolarObservables obs;
  double dist_euclid = 0.0;
  double v1 = 0.0;
  double v2 = 0.0;
  double cycle_residual = 0.0;  // NaN when α is 0 or π/2
};

struct ExperimentReport {
  ode::Trajectory theta;
  std::vector<ObservableRow> rows;
  stability::DecayFit mu_fit;
  stability::DecayFit dist_fit;
  EquilibriumClassification classification;
  double growth_factor = 0.0;  // max wrapped |θ1−θ2| / initial
  double initial_dist = 0.0;
  double final_dist = 0.0;
  /// Filled when u > 3A: max of the averaged μ rate over a μ̂ grid in (0, 1) (< 0 expected).
  std::optional<double> averaged_negativity_max;
};

/// Observables rows from a phase trajectory with stateful ζ unwrapping.
std::vector<ObservableRow> observables(const ode::Trajectory& theta, const KuramotoStarParams& p);

ExperimentReport simulate_remote_sync_experiment(const KuramotoStarParams& p, const Phases& theta0, double horizon,
                                                 const ode::IntegratorConfig& cfg,
                                                 double transient_fraction = 0.1);

/// CSV with columns t,theta0,theta1,theta2,z1,z2,r,zeta,mu,dist_euclid,v1,v2,cycle_residual.
void write_observables_csv(const std::vector<ObservableRow>& rows, std::ostream& os);

/// Initial phases near the phase-locked manifold M1 with peripheral split `delta`.
Phases near_locked_initial(double alpha, double delta);

}  // namespace sfl::kuramoto
