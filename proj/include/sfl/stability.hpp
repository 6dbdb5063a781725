#pragma once

// Empirical partial exponential stability: log-linear decay fits, seeded
// ensembles, epsilon threshold search, a numerically built converse Lyapunov
// function and envelope checks for perturbed trajectories.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfl/averaging.hpp"
#include "sfl/ode.hpp"
#include "sfl/slowfast.hpp"

namespace sfl::stability {

using ode::Vec;

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNoiseFloor = 1e-13;
inline constexpr double kMinR2 = 0.98;

struct DecayFit {
  double gain_k = 0.0;       // exp(intercept) of the fit, referenced to the trajectory start
  double rate_lambda = 0.0;  // -slope, per unit of the independent axis
  double r_squared = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t nodes = 0;
  bool noise_floor_hit = false;
  bool accepted = false;
  /// Smallest c with ||x_i|| <= c ||x(t_start)|| exp(-rate (t_i - t_start)) at every fit node.
  double envelope_c1 = 0.0;
  /// max ||x_i|| / (gain_k exp(-rate (t_i - t_front))).
  double line_envelope_ratio = 0.0;
};

/// Fit on explicit samples; `t_front` is the axis origin used for gain_k.
DecayFit fit_log_linear(const std::vector<double>& t, const std::vector<double>& norm, double t_front);

/// Norm of the selected components, resampled uniformly on the post-transient
/// window. Throws FitError on fewer than 20 trajectory nodes in the window or a
/// zero norm at its start.
DecayFit fit_exponential_decay(const ode::Trajectory& traj, const std::vector<int>& selector,
                               double transient_fraction = 0.1);

/// First `n` components.
std::vector<int> leading(int n);

// -- ensembles ----------------------------------------------------------------

enum class VerdictKind { stable, unstable, inconclusive };
std::string to_string(VerdictKind v);

/// A system in (x, y[, z]) form ready for ensemble simulation.
struct EnsembleProblem {
  std::string name;
  ode::Rhs rhs;
  ode::Axis axis = ode::Axis::time_t;
  int n = 1;
  int m = 0;
  bool fast_state = false;      // trailing z component in the state (t-axis systems)
  bool start_at_phase = false;  // independent axis starts at the sampled z0 (z-axis systems)
  Vec y_lo, y_hi;
  double z_lo = 0.0;
  double z_hi = 0.0;
  ode::IntegratorConfig cfg = ode::IntegratorConfig::adaptive(1e-9, 1e-14);
};

EnsembleProblem make_problem(const slowfast::SlowFastSystem& sys, const Vec& y_lo, const Vec& y_hi);
EnsembleProblem make_problem(const slowfast::ReducedSystem& red, const Vec& y_lo, const Vec& y_hi);
EnsembleProblem make_problem(const averaging::AveragedSystem& av, const Vec& y_lo, const Vec& y_hi);

struct EnsembleSpec {
  std::size_t count = 64;
  double radius = 0.3;
  std::uint64_t seed = 1;
  double horizon = 10.0;
  double transient_fraction = 0.1;
  bool x_nonnegative = false;  // fold x into the positive orthant (e.g. a distance variable)
  bool keep_trajectories = false;
  std::size_t jobs = 1;
};

struct MemberResult {
  std::size_t index = 0;
  Vec x0;
  double growth = 0.0;  // max ||x|| / ||x0||
  double reached = 0.0;  // end of the simulated span
  std::optional<DecayFit> fit;
  std::optional<ode::Trajectory> trajectory;  // kept when EnsembleSpec::keep_trajectories
  std::string note;
};

struct StabilityVerdict {
  VerdictKind kind = VerdictKind::inconclusive;
  double k = 0.0;        // max gain over members
  double lambda = 0.0;   // min rate over members
  double r2_min = 0.0;
  std::size_t accepted = 0;
  std::uint64_t seed = 0;
  std::vector<MemberResult> members;
};

/// Member i starts with ||x0|| = radius (i+1)/count in a random direction and
/// uniform y, z. Integration errors are rethrown with the member index.
StabilityVerdict assess_partial_stability(const EnsembleProblem& prob, const EnsembleSpec& spec);

/// One member; exposed for tests.
MemberResult simulate_member(const EnsembleProblem& prob, const EnsembleSpec& spec, std::size_t index);

// -- epsilon threshold --------------------------------------------------------

struct ThresholdRow {
  double epsilon = 0.0;
  VerdictKind verdict = VerdictKind::inconclusive;
};

struct ThresholdReport {
  double eps_stable = 0.0;                  // largest tested epsilon with a stable verdict
  std::optional<double> eps_unstable;       // smallest tested epsilon without one
  bool stable_throughout = false;
  std::vector<ThresholdRow> sweep;
  std::vector<ThresholdRow> bisection;
  double estimate() const { return eps_unstable ? 0.5 * (eps_stable + *eps_unstable) : eps_stable; }
};

class ThresholdError : public std::runtime_error {
 public:
  ThresholdError(const std::string& what, std::vector<ThresholdRow> sweep)
      : std::runtime_error(what), sweep_(std::move(sweep)) {}
  const std::vector<ThresholdRow>& sweep() const { return sweep_; }

 private:
  std::vector<ThresholdRow> sweep_;
};

using EpsilonPredicate = std::function<VerdictKind(double)>;

/// Geometric coarse sweep of `coarse` points over [lo, hi], then bisection to
/// relative width `rel_width`. Non-monotone sweeps and the absence of any stable
/// point raise ThresholdError carrying the sweep table.
ThresholdReport find_epsilon_threshold(const EpsilonPredicate& predicate, double lo, double hi,
                                       double rel_width = 0.05, std::size_t coarse = 8);

// -- converse Lyapunov function ------------------------------------------------

/// dw/dz = F1(w, v, z), dv/dz = F2(w, v, z) with w = 0 invariant.
struct PartialSystem {
  std::string name;
  int n = 1;
  int m = 0;
  slowfast::Field F1;
  slowfast::Field F2;
  double period = 0.0;  // 0 for z-independent systems

  ode::Rhs rhs() const;
};

PartialSystem partial_from(const averaging::AveragedSystem& av);
/// dw/dz = -a w with an inert v block of size m.
PartialSystem scalar_decay(double a = 1.0, int m = 0);

struct LyapunovGrid {
  double w_radius = 0.3;
  std::size_t w_points = 15;
  std::size_t v_points = 15;
  std::size_t z_points = 8;
  Vec v_lo, v_hi;
  double z_lo = 0.0;
  double z_hi = 0.0;  // exclusive; defaults to z_lo + period (or z_lo + 1)
};

struct GridPoint {
  Vec w, v;
  double z = 0.0;
};

struct LyapunovConstants {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0, c5 = 0.0;
};

using VFunction = std::function<double(const Vec& w, const Vec& v, double z)>;

struct LyapunovOptions {
  double safety = 0.8;            // certified c1, c3 scaled by it; c2, c4, c5 divided by it
  double fd_step = 1e-5;          // spatial gradients
  std::size_t steps_per_horizon = 2000;  // RK4 steps for one V evaluation
  std::size_t jobs = 1;
  VFunction v_override;           // replaces the integral V during verification
};

struct LyapunovEstimate {
  double horizon_delta = 0.0;
  LyapunovGrid grid_spec;
  std::vector<GridPoint> grid;
  std::vector<double> values;
  LyapunovConstants raw;        // min/max ratios over the grid
  LyapunovConstants certified;  // raw with the safety factor applied
  double safety = 0.8;
  double max_zero_value = 0.0;  // max V over grid points with w = 0
  bool nonnegative = true;
  std::size_t steps_per_horizon = 2000;
};

/// V(w, v, z) = integral_z^{z+delta} ||phi_1(s; w, v, z)||^2 ds by fixed-step RK4
/// on the state augmented with the running integral.
double lyapunov_value(const PartialSystem& sys, const Vec& w, const Vec& v, double z, double delta,
                      std::size_t steps = 2000);

/// Default horizon 5 / lambda_hat.
double default_horizon(double lambda_hat);

/// Grid points in row-major (w, v, z) order. `shifted` moves every coordinate by
/// half a cell (the verification grid).
std::vector<GridPoint> make_grid(const LyapunovGrid& g, const PartialSystem& sys, bool shifted);

/// Throws std::runtime_error when c1 <= 0 or c3 <= 0 (non-stability or a bad grid).
LyapunovEstimate build_converse_lyapunov(const PartialSystem& sys, double delta, const LyapunovGrid& grid,
                                         const LyapunovOptions& opt = {});

struct InequalityCheck {
  std::string name;
  bool pass = false;
  double margin = 0.0;  // worst relative slack over the grid (bound / value - 1)
};

struct CertificateReport {
  std::array<InequalityCheck, 4> checks;  // bounds, decay, dV/dw, dV/dv
  bool all_pass = false;
  double min_margin = 0.0;
  std::size_t points = 0;
};

/// Checks the four inequalities against `est.certified` on the shifted grid.
/// An inequality passes when its margin is >= required_margin.
CertificateReport verify_lyapunov_certificate(const LyapunovEstimate& est, const PartialSystem& sys,
                                              const LyapunovOptions& opt = {}, double required_margin = 0.0);

// -- perturbation envelopes -----------------------------------------------------

using ZFunction = std::function<double(double)>;

struct PerturbationBoundSpec {
  ZFunction gamma1, gamma2;  // null means identically zero
  ZFunction psi1, psi2;
  double kappa = 0.0;
  double eta = 0.0;
};

class AdmissibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EnvelopeConstants {
  double k1 = 0.0;
  double k2 = 0.0;
};

/// k1 = c3/(2c2) - kappa/(2c1), k2 = exp(eta/(2c1)); throws AdmissibilityError
/// unless 0 <= kappa < c1 c3 / c2, eta >= 0 and k1 > 0.
EnvelopeConstants envelope_constants(const LyapunovConstants& c, const PerturbationBoundSpec& spec);

struct EnvelopeReport {
  bool pass = false;
  bool envelope_ok = false;
  bool ball_ok = false;               // ||w0|| < (R / k2) sqrt(c1/c2), R the certified radius
  bool integral_condition_ok = false;  // gamma integral bound on [z0, z_end]
  bool psi_bound_ok = false;
  double max_residual = 0.0;           // max ||w|| - envelope
  double max_ratio = 0.0;              // max ||w|| / envelope
  double k1 = 0.0, k2 = 0.0;
  std::vector<double> envelope;        // per trajectory node
  std::vector<double> convolution;     // integral term per node (before k2/(2c1))
};

/// `traj` is a z-axis trajectory whose first n components are w.
EnvelopeReport check_perturbation_envelope(const LyapunovEstimate& cert, const ode::Trajectory& traj, int n,
                                           const PerturbationBoundSpec& spec, double slack = 0.01);

// -- reports --------------------------------------------------------------------

nlohmann::json to_json(const DecayFit& fit);
nlohmann::json to_json(const StabilityVerdict& v, bool members = false);
nlohmann::json to_json(const LyapunovEstimate& est, const CertificateReport* report = nullptr);
nlohmann::json to_json(const ThresholdReport& t);

}  // namespace sfl::stability
