#include "sfl/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "sfl/averaging.hpp"
#include "sfl/kuramoto.hpp"
#include "sfl/slowfast.hpp"
#include "sfl/stability.hpp"
#include "sfl/util.hpp"

namespace sfl::cli {

namespace fs = std::filesystem;
using ode::Vec;
using Kind = ParamSpec::Kind;

namespace {

constexpr double kPi = std::numbers::pi;

ParamSpec num(std::string key, double fallback, double lo, double hi, bool lo_open, bool hi_open, std::string help) {
  ParamSpec p;
  p.key = std::move(key);
  p.kind = Kind::number;
  p.fallback = fallback;
  p.lo = lo;
  p.hi = hi;
  p.lo_open = lo_open;
  p.hi_open = hi_open;
  p.help = std::move(help);
  return p;
}

ParamSpec integer(std::string key, long fallback, long lo, long hi, std::string help) {
  ParamSpec p;
  p.key = std::move(key);
  p.kind = Kind::integer;
  p.fallback = fallback;
  p.lo = static_cast<double>(lo);
  p.hi = static_cast<double>(hi);
  p.help = std::move(help);
  return p;
}

ParamSpec list(std::string key, std::vector<double> fallback, double lo, double hi, bool lo_open, bool hi_open,
               std::string help) {
  ParamSpec p = num(std::move(key), 0.0, lo, hi, lo_open, hi_open, std::move(help));
  p.kind = Kind::number_list;
  p.fallback = fallback;
  return p;
}

ParamSpec choice(std::string key, std::string fallback, std::vector<std::string> choices, std::string help) {
  ParamSpec p;
  p.key = std::move(key);
  p.kind = Kind::choice;
  p.fallback = std::move(fallback);
  p.choices = std::move(choices);
  p.help = std::move(help);
  return p;
}

std::vector<ParamSpec> integrator_params(double rtol, double atol) {
  return {num("rtol", rtol, 0.0, 1e-2, true, false, "adaptive relative tolerance"),
          num("atol", atol, 0.0, 1e-2, true, false, "adaptive absolute tolerance")};
}

std::vector<ParamSpec> star_params() {
  return {num("A", 1.0, 0.0, 100.0, true, false, "coupling strength A1 = A2"),
          num("omega", 1.0, -100.0, 100.0, false, false, "natural frequency")};
}

template <typename... Lists>
std::vector<ParamSpec> join(std::vector<ParamSpec> a, const Lists&... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

std::vector<ScenarioInfo> build_scenarios() {
  const double half_pi = 0.5 * kPi;
  std::vector<ScenarioInfo> s;
  s.push_back({"example1", "ensemble stability of the full slow-fast Example 1 on the t-axis", false,
               join({num("epsilon", 0.01, 0.0, 1.0, true, false, "time-scale ratio"),
                     integer("ensemble", 64, 1, 100000, "ensemble members"),
                     num("radius", 0.3, 0.0, 1.0, true, false, "max ||x(0)||"),
                     num("horizon", 30.0, 0.0, 1e6, true, false, "t-axis horizon"),
                     num("transient_fraction", 0.1, 0.0, 1.0, false, true, "fit window start")},
                    integrator_params(1e-8, 1e-14))});
  s.push_back({"example1_averaged", "ensemble decay of the partially averaged Example 1 on the z-axis", false,
               join({num("epsilon", 0.05, 0.0, 1.0, true, false, "time-scale ratio"),
                     integer("ensemble", 64, 1, 100000, "ensemble members"),
                     num("radius", 0.3, 0.0, 1.0, true, false, "max ||w(0)||"),
                     num("span", 100.0, 0.0, 1e6, true, false, "z-axis horizon in units of 1/epsilon"),
                     integer("quadrature_nodes", 64, 8, 4096, "nodes for the averaging quadrature"),
                     num("transient_fraction", 0.1, 0.0, 1.0, false, true, "fit window start")},
                    integrator_params(1e-9, 1e-14))});
  s.push_back({"epsilon_sweep", "decay rate of reduced Example 1 versus epsilon, optional threshold search", true,
               join({list("epsilons", {0.0025, 0.005, 0.01, 0.02, 0.04}, 0.0, 1.0, true, false, "epsilon grid"),
                     integer("ensemble", 8, 1, 100000, "ensemble members per cell"),
                     num("radius", 0.3, 0.0, 1.0, true, false, "max ||x(0)||"),
                     num("span", 15.0, 0.0, 1e6, true, false, "z-axis horizon in units of 1/epsilon"),
                     num("threshold_lo", 0.0, 0.0, 10.0, false, false, "threshold search range (0 disables)"),
                     num("threshold_hi", 0.0, 0.0, 10.0, false, false, "threshold search range"),
                     integer("threshold_ensemble", 8, 1, 100000, "members per threshold predicate"),
                     num("threshold_horizon", 30.0, 0.0, 1e6, true, false, "t-axis horizon per predicate")},
                    integrator_params(1e-8, 1e-14))});
  s.push_back({"kuramoto_locked", "phase-locked equilibria at u = 0: eigenvalues and simulation", false,
               join({num("alpha", 0.9, 0.0, half_pi, true, true, "phase shift"),
                     num("delta", 0.1, 0.0, 1.0, true, false, "initial peripheral split"),
                     num("horizon", 600.0, 0.0, 1e6, true, false, "t horizon")},
                    star_params(), integrator_params(1e-10, 1e-13))});
  s.push_back({"kuramoto_detuned", "detuned star (u > 3A): mu decay and averaged rate audit", false,
               join({list("alphas", {0.3, 0.9, 1.4}, 0.0, half_pi, true, true, "phase shifts"),
                     num("u", 10.0, 0.0, 1e4, true, false, "detuning"),
                     num("mu0", 0.2, 0.0, 1.0, true, true, "initial distance mu(0)"),
                     num("xi", 0.5, 0.0, 1.0, true, true, "xi in the rate constant"),
                     num("horizon", 600.0, 0.0, 1e6, true, false, "t horizon")},
                    star_params(), integrator_params(1e-10, 1e-13))});
  s.push_back({"alpha_sweep", "verdict versus alpha at fixed u (eigenvalues and simulation)", true,
               join({num("alpha_min", 0.2, 0.0, half_pi, true, true, "first alpha"),
                     num("alpha_max", 1.5, 0.0, half_pi, true, true, "last alpha"),
                     num("alpha_step", 0.02, 0.0, 1.0, true, false, "grid step"),
                     num("u", 0.0, 0.0, 1e4, false, false, "detuning"),
                     num("delta", 0.1, 0.0, 1.0, true, false, "initial peripheral split"),
                     num("horizon", 1500.0, 0.0, 1e6, true, false, "t horizon")},
                    star_params(), integrator_params(1e-10, 1e-13))});
  s.push_back({"u_sweep", "(alpha, u) verdict map by simulation", true,
               join({list("alphas", {0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5}, 0.0, half_pi, true, true, "alpha grid"),
                     list("us", {0.0, 2.0, 5.0, 10.0}, 0.0, 1e4, false, false, "detuning grid"),
                     num("delta", 0.3, 0.0, 1.0, true, false, "initial peripheral split"),
                     num("horizon", 1500.0, 0.0, 1e6, true, false, "t horizon")},
                    star_params(), integrator_params(1e-10, 1e-13))});
  s.push_back({"certificate", "converse Lyapunov certificate: build and verify", false,
               {choice("system", "example1_averaged", {"example1_averaged", "scalar"}, "nominal system"),
                num("epsilon", 0.05, 0.0, 1.0, true, false, "epsilon of the averaged system"),
                num("delta", 0.0, 0.0, 1e6, false, false, "V horizon (0: 5 / pilot rate)"),
                num("w_radius", 0.3, 0.0, 10.0, true, false, "grid radius in w"),
                integer("w_points", 15, 2, 1000, "w grid points"),
                integer("v_points", 15, 1, 1000, "v grid points"),
                integer("z_points", 8, 1, 1000, "z grid points"),
                integer("steps", 1000, 10, 1000000, "RK4 steps per V evaluation"),
                num("safety", 0.8, 0.0, 1.0, true, false, "safety factor on fitted constants"),
                num("required_margin", 0.05, -1.0, 10.0, false, false, "verification margin")}});
  s.push_back({"envelope", "perturbation envelopes around dw/dz = -w", false,
               {choice("case", "both", {"both", "vanishing", "constant_psi"}, "perturbation case"),
                num("gain", 0.05, 0.0, 1.0, false, false, "g1 = gain * w * sin z"),
                num("psi_bar", 0.05, 0.0, 1.0, false, false, "g1 = psi_bar * sin z"),
                num("w0", 0.5, 0.0, 10.0, true, false, "initial ||w||"),
                num("horizon", 40.0, 0.0, 1e5, true, false, "z horizon"),
                num("delta", 2.0, 0.0, 100.0, true, false, "V horizon of the nominal certificate"),
                num("w_radius", 1.0, 0.0, 10.0, true, false, "certificate radius")}});
  return s;
}

std::string describe_range(const ParamSpec& p) {
  std::ostringstream os;
  os << (p.lo_open ? "(" : "[") << p.lo << ", " << p.hi << (p.hi_open ? ")" : "]");
  return os.str();
}

bool in_range(const ParamSpec& p, double v) {
  if (!std::isfinite(v)) return false;
  if (p.lo_open ? !(v > p.lo) : !(v >= p.lo)) return false;
  if (p.hi_open ? !(v < p.hi) : !(v <= p.hi)) return false;
  return true;
}

void check_param(const ParamSpec& p, const json& v, std::vector<std::string>& errors) {
  const std::string where = "params." + p.key;
  switch (p.kind) {
    case Kind::number:
      if (!v.is_number()) {
        errors.push_back(where + ": expected a number");
      } else if (!in_range(p, v.get<double>())) {
        errors.push_back(where + ": " + v.dump() + " outside " + describe_range(p));
      }
      break;
    case Kind::integer:
      if (!v.is_number_integer()) {
        errors.push_back(where + ": expected an integer");
      } else if (!in_range(p, v.get<double>())) {
        errors.push_back(where + ": " + v.dump() + " outside " + describe_range(p));
      }
      break;
    case Kind::number_list:
      if (!v.is_array() || v.empty()) {
        errors.push_back(where + ": expected a non-empty array of numbers");
        break;
      }
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number())
          errors.push_back(where + "[" + std::to_string(i) + "]: expected a number");
        else if (!in_range(p, v[i].get<double>()))
          errors.push_back(where + "[" + std::to_string(i) + "]: " + v[i].dump() + " outside " + describe_range(p));
      }
      break;
    case Kind::choice:
      if (!v.is_string() || std::find(p.choices.begin(), p.choices.end(), v.get<std::string>()) == p.choices.end()) {
        std::string opts;
        for (const auto& c : p.choices) opts += (opts.empty() ? "" : ", ") + c;
        errors.push_back(where + ": expected one of {" + opts + "}");
      }
      break;
  }
}

// Constraints that involve more than one parameter.
void cross_checks(const std::string& id, const json& p, std::vector<std::string>& errors) {
  auto d = [&](const char* k) { return p.at(k).get<double>(); };
  if (id == "kuramoto_detuned" && !(d("u") > 3.0 * d("A")))
    errors.push_back("params.u: detuned scenario needs u > 3A");
  if (id == "alpha_sweep") {
    if (!(d("alpha_max") >= d("alpha_min"))) errors.push_back("params.alpha_max: must be >= alpha_min");
    const double cells = std::floor((d("alpha_max") - d("alpha_min")) / d("alpha_step") + 1e-9) + 1.0;
    if (cells > 1e4) errors.push_back("params.alpha_step: grid exceeds 10^4 cells");
  }
  if (id == "u_sweep" && p.at("alphas").size() * p.at("us").size() > 10000)
    errors.push_back("params: grid exceeds 10^4 cells");
  if (id == "epsilon_sweep") {
    if (p.at("epsilons").size() > 10000) errors.push_back("params.epsilons: grid exceeds 10^4 cells");
    const double lo = d("threshold_lo"), hi = d("threshold_hi");
    if ((lo > 0.0 || hi > 0.0) && !(lo > 0.0 && hi > lo))
      errors.push_back("params.threshold_lo/threshold_hi: need 0 < threshold_lo < threshold_hi (or both 0)");
  }
}

std::vector<double> alpha_grid(const json& p) {
  const double lo = p.at("alpha_min").get<double>(), hi = p.at("alpha_max").get<double>();
  const double step = p.at("alpha_step").get<double>();
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t k = 0; k < n; ++k) out.push_back(lo + step * static_cast<double>(k));
  return out;
}

ode::IntegratorConfig integrator(const json& p) {
  return ode::IntegratorConfig::adaptive(p.at("rtol").get<double>(), p.at("atol").get<double>());
}

// -- per-case helpers ---------------------------------------------------------

struct Case {
  std::string id;
  json result;
  bool failed = false;
};

template <typename F>
Case run_case(const std::string& id, F&& body) {
  Case c;
  c.id = id;
  try {
    c.result = body();
    c.result["status"] = "ok";
  } catch (const std::exception& e) {
    c.failed = true;
    c.result = {{"status", "error"}, {"error", e.what()}};
  }
  c.result["case"] = id;
  return c;
}

void write_trajectory(const fs::path& file, const ode::Trajectory& traj, std::size_t max_rows = 5000) {
  // Thin long trajectories; the first and last nodes are always kept.
  const std::size_t stride = std::max<std::size_t>(1, traj.size() / max_rows);
  std::vector<double> t;
  std::vector<Vec> x, f;
  for (std::size_t i = 0; i < traj.size(); i += stride) {
    t.push_back(traj.times()[i]);
    x.push_back(traj.states()[i]);
    f.push_back(traj.slopes()[i]);
  }
  if (t.back() != traj.back_time()) {
    t.push_back(traj.back_time());
    x.push_back(traj.back());
    f.push_back(traj.slopes().back());
  }
  std::ofstream os(file);
  ode::write_csv(ode::Trajectory(std::move(t), std::move(x), std::move(f), traj.axis()), os);
}

void write_observables(const fs::path& file, const std::vector<kuramoto::ObservableRow>& rows,
                       std::size_t max_rows = 5000) {
  const std::size_t stride = std::max<std::size_t>(1, rows.size() / max_rows);
  std::vector<kuramoto::ObservableRow> thin;
  for (std::size_t i = 0; i < rows.size(); i += stride) thin.push_back(rows[i]);
  if (thin.back().t != rows.back().t) thin.push_back(rows.back());
  std::ofstream os(file);
  kuramoto::write_observables_csv(thin, os);
}

std::string verdict_of(const kuramoto::ExperimentReport& r) {
  if (r.growth_factor >= 10.0) return "unstable";
  if (r.mu_fit.accepted) return "stable";
  return "inconclusive";
}

json fit_json(const stability::DecayFit& f) { return stability::to_json(f); }

// -- scenarios ----------------------------------------------------------------

struct Output {
  std::vector<Case> cases;
  std::vector<json> sweep_rows;
  std::vector<std::string> sweep_columns;
  json extra = json::object();
  std::vector<fs::path> files;
};

Output run_example1(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  out.cases.push_back(run_case("ensemble", [&] {
    const auto sys = slowfast::example1(p.at("epsilon").get<double>());
    const auto box = slowfast::Box::symmetric(1, p.at("radius").get<double>(), 1, -kPi, kPi, 0.0, sys.period);
    const auto fast = slowfast::verify_fast_rate_bound(sys, box, 20000, cfg.seed);
    const auto eq = slowfast::check_partial_equilibrium(sys, box, 2000, cfg.seed);
    auto prob = stability::make_problem(sys, Vec::Constant(1, -kPi), Vec::Constant(1, kPi));
    prob.cfg = integrator(p);
    stability::EnsembleSpec spec;
    spec.count = p.at("ensemble").get<std::size_t>();
    spec.radius = p.at("radius").get<double>();
    spec.horizon = p.at("horizon").get<double>();
    spec.transient_fraction = p.at("transient_fraction").get<double>();
    spec.seed = cfg.seed;
    spec.jobs = cfg.jobs;
    spec.keep_trajectories = true;
    const auto v = stability::assess_partial_stability(prob, spec);
    const fs::path file = dir / "trajectories_ensemble.csv";
    write_trajectory(file, *v.members.back().trajectory);
    out.files.push_back(file);
    json j = stability::to_json(v);
    j["fast_rate_lower_bound"] = fast.theta_lower;
    j["partial_equilibrium_residual"] = std::max(eq.residual_f1, eq.residual_f2);
    j["axis"] = "t";
    return j;
  }));
  return out;
}

Output run_example1_averaged(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  out.cases.push_back(run_case("averaged_ensemble", [&] {
    const double eps = p.at("epsilon").get<double>();
    const auto red = slowfast::reduce_to_fast_axis(slowfast::example1(eps));
    const auto av = averaging::average_reduced(red, p.at("quadrature_nodes").get<std::size_t>());
    auto prob = stability::make_problem(av, Vec::Constant(1, -kPi), Vec::Constant(1, kPi));
    prob.cfg = integrator(p);
    stability::EnsembleSpec spec;
    spec.count = p.at("ensemble").get<std::size_t>();
    spec.radius = p.at("radius").get<double>();
    spec.horizon = p.at("span").get<double>() / eps;
    spec.transient_fraction = p.at("transient_fraction").get<double>();
    spec.seed = cfg.seed;
    spec.jobs = cfg.jobs;
    spec.keep_trajectories = true;
    const auto v = stability::assess_partial_stability(prob, spec);
    const fs::path file = dir / "trajectories_averaged.csv";
    write_trajectory(file, *v.members.back().trajectory);
    out.files.push_back(file);
    std::vector<double> rates;
    for (const auto& m : v.members)
      if (m.fit) rates.push_back(m.fit->rate_lambda);
    std::sort(rates.begin(), rates.end());
    json j = stability::to_json(v);
    j["axis"] = "z";
    j["lambda_over_epsilon"] = v.lambda / eps;
    j["median_lambda_over_epsilon"] = rates.empty() ? 0.0 : rates[rates.size() / 2] / eps;
    j["reference_rate_over_epsilon"] = 4.0 / 15.0;
    return j;
  }));
  return out;
}

Output run_epsilon_sweep(const ScenarioConfig& cfg, const fs::path&) {
  const json& p = cfg.params;
  Output out;
  out.sweep_columns = {"epsilon", "verdict", "lambda", "k", "r2_min"};
  const auto eps_list = p.at("epsilons").get<std::vector<double>>();
  std::vector<Case> cells(eps_list.size());
  parallel_for(eps_list.size(), cfg.jobs, [&](std::size_t i) {
    std::ostringstream id;
    id << "epsilon=" << eps_list[i];
    cells[i] = run_case(id.str(), [&] {
      const double eps = eps_list[i];
      const auto red = slowfast::reduce_to_fast_axis(slowfast::example1(eps));
      auto prob = stability::make_problem(red, Vec::Constant(1, -kPi), Vec::Constant(1, kPi));
      prob.cfg = integrator(p);
      stability::EnsembleSpec spec;
      spec.count = p.at("ensemble").get<std::size_t>();
      spec.radius = p.at("radius").get<double>();
      spec.horizon = p.at("span").get<double>() / eps;
      spec.seed = cfg.seed;
      const auto v = stability::assess_partial_stability(prob, spec);
      json j = stability::to_json(v);
      j["epsilon"] = eps;
      return j;
    });
  });
  std::vector<double> xs, ys;
  for (auto& c : cells) {
    if (!c.failed) {
      out.sweep_rows.push_back({c.result["epsilon"], c.result["verdict"], c.result["lambda"], c.result["k"],
                                c.result["r2_min"]});
      xs.push_back(c.result["epsilon"].get<double>());
      ys.push_back(c.result["lambda"].get<double>());
    }
    out.cases.push_back(std::move(c));
  }
  if (xs.size() >= 2) {
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    const double slope = sxx > 0 ? sxy / sxx : 0.0;
    out.extra["rate_vs_epsilon"] = {{"slope", slope},
                                    {"intercept", my - slope * mx},
                                    {"r_squared", syy > 0 && sxx > 0 ? sxy * sxy / (sxx * syy) : 0.0}};
  }
  const double lo = p.at("threshold_lo").get<double>(), hi = p.at("threshold_hi").get<double>();
  if (lo > 0.0) {
    Case c = run_case("threshold", [&] {
      auto pred = [&](double eps) {
        auto prob = stability::make_problem(slowfast::example1(eps), Vec::Constant(1, -kPi), Vec::Constant(1, kPi));
        prob.cfg = integrator(p);
        stability::EnsembleSpec spec;
        spec.count = p.at("threshold_ensemble").get<std::size_t>();
        spec.radius = p.at("radius").get<double>();
        spec.horizon = p.at("threshold_horizon").get<double>();
        spec.seed = cfg.seed;
        spec.jobs = cfg.jobs;
        return stability::assess_partial_stability(prob, spec).kind;
      };
      try {
        return stability::to_json(stability::find_epsilon_threshold(pred, lo, hi));
      } catch (const stability::ThresholdError& e) {
        stability::ThresholdReport partial;
        partial.sweep = e.sweep();
        json j = stability::to_json(partial);
        j["error"] = e.what();
        return j;
      }
    });
    out.cases.push_back(std::move(c));
  }
  return out;
}

json classification_json(const kuramoto::EquilibriumClassification& ec) {
  return {{"c_alpha", ec.c_alpha},
          {"c_prime_alpha", ec.c_prime_alpha},
          {"eig_M1", ec.eig_M1},
          {"eig_M1prime", ec.eig_M1prime},
          {"verdict_M1", kuramoto::to_string(ec.verdict_M1)},
          {"verdict_M1prime", kuramoto::to_string(ec.verdict_M1prime)},
          {"threshold", ec.threshold}};
}

Output run_kuramoto_locked(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  const double alpha = p.at("alpha").get<double>();
  const auto params = kuramoto::KuramotoStarParams::symmetric(p.at("omega").get<double>(), p.at("A").get<double>(), alpha, 0.0);
  const auto ec = kuramoto::linearized_classification(alpha, params.A());
  json map;
  for (const bool prime : {false, true}) {
    const std::string id = prime ? "M1prime" : "M1";
    Case c = run_case(id, [&] {
      auto th = kuramoto::near_locked_initial(alpha, p.at("delta").get<double>());
      if (prime) th[0] = ec.c_prime_alpha;
      const auto r = kuramoto::simulate_remote_sync_experiment(params, th, p.at("horizon").get<double>(), integrator(p));
      const fs::path file = dir / ("trajectories_" + id + ".csv");
      write_observables(file, r.rows);
      out.files.push_back(file);
      const std::string eig = kuramoto::to_string(prime ? ec.verdict_M1prime : ec.verdict_M1);
      map[id] = {{"eigenvalues", eig}, {"simulation", verdict_of(r)}};
      return json{{"equilibrium", id},
                  {"eigen_verdict", eig},
                  {"simulation_verdict", verdict_of(r)},
                  {"growth_factor", r.growth_factor},
                  {"mu_fit", fit_json(r.mu_fit)},
                  {"dist_fit", fit_json(r.dist_fit)}};
    });
    out.cases.push_back(std::move(c));
  }
  out.extra["classification"] = classification_json(ec);
  out.extra["verdict_map"] = map;
  return out;
}

Output run_kuramoto_detuned(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  const auto alphas = p.at("alphas").get<std::vector<double>>();
  std::vector<Case> cases(alphas.size());
  std::vector<fs::path> files(alphas.size());
  parallel_for(alphas.size(), cfg.jobs, [&](std::size_t i) {
    std::ostringstream id;
    id << "alpha=" << alphas[i];
    cases[i] = run_case(id.str(), [&] {
      const auto params = kuramoto::KuramotoStarParams::symmetric(p.at("omega").get<double>(), p.at("A").get<double>(),
                                                                  alphas[i], p.at("u").get<double>());
      const double split = 2.0 * std::acos(1.0 - p.at("mu0").get<double>());
      const double phase0 = CounterRng(cfg.seed, i).uniform(0, -kPi, kPi);
      const kuramoto::Phases th{phase0, -0.5 * split, 0.5 * split};
      const auto r = kuramoto::simulate_remote_sync_experiment(params, th, p.at("horizon").get<double>(), integrator(p));
      files[i] = dir / ("trajectories_case" + std::to_string(i) + ".csv");
      write_observables(files[i], r.rows);

      const double xi = p.at("xi").get<double>();
      bool negative = true, linear = true;
      double worst_gap = -1e300;
      for (int k = 1; k < 200; ++k) {
        const double mu = k / 200.0;
        const auto a = kuramoto::averaged_mu_rhs(mu, params, xi);
        negative = negative && a.closed_form < 0.0;
        if (mu <= 0.5) {
          linear = linear && a.below_linear_bound;
          worst_gap = std::max(worst_gap, a.closed_form + a.rate_constant_c * mu);
        }
      }
      return json{{"alpha", alphas[i]},
                  {"mu_fit", fit_json(r.mu_fit)},
                  {"dist_fit", fit_json(r.dist_fit)},
                  {"simulation_verdict", verdict_of(r)},
                  {"averaged_negative", negative},
                  {"averaged_max", *r.averaged_negativity_max},
                  {"linear_bound_holds", linear},
                  {"linear_bound_worst_gap", worst_gap},
                  {"rate_constant_c", kuramoto::rate_constant_c(params, xi)}};
    });
  });
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!files[i].empty()) out.files.push_back(files[i]);
    out.cases.push_back(std::move(cases[i]));
  }
  return out;
}

struct StarCell {
  double alpha = 0.0;
  double u = 0.0;
};

Output run_star_sweep(const ScenarioConfig& cfg, const std::vector<StarCell>& grid, bool with_eigen) {
  const json& p = cfg.params;
  Output out;
  out.sweep_columns = {"alpha", "u", "verdict", "lambda", "r2", "growth"};
  if (with_eigen) out.sweep_columns.push_back("eigen_verdict");
  std::vector<Case> cells(grid.size());
  parallel_for(grid.size(), cfg.jobs, [&](std::size_t i) {
    std::ostringstream id;
    id << "alpha=" << grid[i].alpha << ",u=" << grid[i].u;
    cells[i] = run_case(id.str(), [&] {
      const auto params = kuramoto::KuramotoStarParams::symmetric(p.at("omega").get<double>(), p.at("A").get<double>(),
                                                                  grid[i].alpha, grid[i].u);
      const auto th = kuramoto::near_locked_initial(grid[i].alpha, p.at("delta").get<double>());
      const auto r = kuramoto::simulate_remote_sync_experiment(params, th, p.at("horizon").get<double>(), integrator(p));
      json j = {{"alpha", grid[i].alpha}, {"u", grid[i].u},           {"verdict", verdict_of(r)},
                {"lambda", r.mu_fit.rate_lambda}, {"r2", r.mu_fit.r_squared}, {"growth", r.growth_factor}};
      if (with_eigen)
        j["eigen_verdict"] = kuramoto::to_string(kuramoto::linearized_classification(grid[i].alpha, params.A()).verdict_M1);
      return j;
    });
  });
  for (auto& c : cells) {
    if (!c.failed) {
      json row = json::array();
      for (const auto& col : out.sweep_columns) row.push_back(c.result[col]);
      out.sweep_rows.push_back(row);
    }
    out.cases.push_back(std::move(c));
  }
  return out;
}

// First adjacent pair of cells whose `key` verdict changes.
json flip_bracket(const std::vector<Case>& cases, const std::string& key) {
  for (std::size_t i = 1; i < cases.size(); ++i) {
    if (cases[i - 1].failed || cases[i].failed) continue;
    if (cases[i - 1].result[key] != cases[i].result[key])
      return {cases[i - 1].result["alpha"], cases[i].result["alpha"]};
  }
  return nullptr;
}

Output run_alpha_sweep(const ScenarioConfig& cfg, const fs::path&) {
  std::vector<StarCell> grid;
  for (double a : alpha_grid(cfg.params)) grid.push_back({a, cfg.params.at("u").get<double>()});
  const bool eigen = cfg.params.at("u").get<double>() == 0.0;
  Output out = run_star_sweep(cfg, grid, eigen);
  out.extra["simulation_flip"] = flip_bracket(out.cases, "verdict");
  if (eigen) out.extra["eigen_flip"] = flip_bracket(out.cases, "eigen_verdict");
  out.extra["threshold"] = std::atan(std::sqrt(3.0));
  return out;
}

Output run_u_sweep(const ScenarioConfig& cfg, const fs::path&) {
  std::vector<StarCell> grid;
  for (double a : cfg.params.at("alphas").get<std::vector<double>>())
    for (double u : cfg.params.at("us").get<std::vector<double>>()) grid.push_back({a, u});
  return run_star_sweep(cfg, grid, false);
}

Output run_certificate(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  out.cases.push_back(run_case("certificate", [&] {
    const bool scalar = p.at("system").get<std::string>() == "scalar";
    const double eps = p.at("epsilon").get<double>();
    const auto sys = scalar ? stability::scalar_decay(1.0, 0) : stability::partial_from(averaging::example1_averaged(eps));
    double delta = p.at("delta").get<double>();
    json pilot = nullptr;
    if (delta == 0.0) {
      // Pilot ensemble for the decay rate; delta = 5 / rate.
      stability::EnsembleProblem prob;
      prob.name = sys.name;
      prob.rhs = sys.rhs();
      prob.axis = ode::Axis::fast_axis_z;
      prob.n = sys.n;
      prob.m = sys.m;
      prob.start_at_phase = true;
      prob.y_lo = Vec::Constant(sys.m, -kPi);
      prob.y_hi = Vec::Constant(sys.m, kPi);
      prob.z_hi = sys.period > 0 ? sys.period : 1.0;
      stability::EnsembleSpec spec;
      spec.count = 8;
      spec.radius = p.at("w_radius").get<double>();
      spec.horizon = scalar ? 40.0 : 100.0 / eps;
      spec.seed = cfg.seed;
      const auto v = stability::assess_partial_stability(prob, spec);
      if (v.kind != stability::VerdictKind::stable) throw std::runtime_error("pilot ensemble not stable");
      delta = stability::default_horizon(v.lambda);
      pilot = stability::to_json(v);
    }
    stability::LyapunovGrid g;
    g.w_radius = p.at("w_radius").get<double>();
    g.w_points = p.at("w_points").get<std::size_t>();
    g.v_points = p.at("v_points").get<std::size_t>();
    g.z_points = p.at("z_points").get<std::size_t>();
    g.v_lo = Vec::Constant(sys.m, -kPi);
    g.v_hi = Vec::Constant(sys.m, kPi);
    stability::LyapunovOptions opt;
    opt.steps_per_horizon = p.at("steps").get<std::size_t>();
    opt.safety = p.at("safety").get<double>();
    opt.jobs = cfg.jobs;
    const auto est = stability::build_converse_lyapunov(sys, delta, g, opt);
    const auto rep = stability::verify_lyapunov_certificate(est, sys, opt, p.at("required_margin").get<double>());
    {
      const fs::path file = dir / "certificate_grid.csv";
      std::ofstream os(file);
      os << "w,v,z,V\n" << std::setprecision(17);
      for (std::size_t i = 0; i < est.grid.size(); ++i)
        os << est.grid[i].w.norm() * (est.grid[i].w.size() == 1 && est.grid[i].w[0] < 0 ? -1.0 : 1.0) << ','
           << (est.grid[i].v.size() ? est.grid[i].v[0] : 0.0) << ',' << est.grid[i].z << ',' << est.values[i] << '\n';
      out.files.push_back(file);
    }
    json j = stability::to_json(est, &rep);
    j["seed"] = cfg.seed;
    j["verdict"] = rep.all_pass ? "certified" : "not_certified";
    if (!pilot.is_null()) j["pilot"] = pilot;
    return j;
  }));
  return out;
}

Output run_envelope(const ScenarioConfig& cfg, const fs::path& dir) {
  const json& p = cfg.params;
  Output out;
  const std::string which = p.at("case").get<std::string>();
  const auto nominal = stability::scalar_decay(1.0, 0);
  stability::LyapunovGrid g;
  g.w_radius = p.at("w_radius").get<double>();
  g.v_lo = Vec(0);
  g.v_hi = Vec(0);
  const auto cert = stability::build_converse_lyapunov(nominal, p.at("delta").get<double>(), g);
  const auto& c = cert.certified;
  const double horizon = p.at("horizon").get<double>();
  const Vec w0 = Vec::Constant(1, p.at("w0").get<double>());
  const auto icfg = ode::IntegratorConfig::adaptive(1e-10, 1e-14);

  if (which == "both" || which == "vanishing") {
    out.cases.push_back(run_case("vanishing", [&] {
      const double gain = p.at("gain").get<double>();
      const ode::Rhs rhs = [gain](double z, const Vec& w) -> Vec { return -w + gain * w * std::sin(z); };
      const auto traj = ode::integrate(rhs, w0, 0.0, horizon, icfg, ode::Axis::fast_axis_z);
      stability::PerturbationBoundSpec spec;
      spec.gamma1 = [gain](double) { return gain; };
      spec.kappa = c.c4 * gain;
      const auto rep = stability::check_perturbation_envelope(cert, traj, 1, spec);
      const fs::path file = dir / "trajectories_vanishing.csv";
      write_trajectory(file, traj);
      out.files.push_back(file);
      double conv_max = 0.0;
      for (double v : rep.convolution) conv_max = std::max(conv_max, std::abs(v));
      return json{{"pass", rep.pass}, {"envelope_ok", rep.envelope_ok}, {"ball_ok", rep.ball_ok},
                  {"integral_condition_ok", rep.integral_condition_ok}, {"max_ratio", rep.max_ratio},
                  {"max_residual", rep.max_residual}, {"k1", rep.k1}, {"k2", rep.k2},
                  {"convolution_max", conv_max}};
    }));
  }
  if (which == "both" || which == "constant_psi") {
    out.cases.push_back(run_case("constant_psi", [&] {
      const double psi_bar = p.at("psi_bar").get<double>();
      const ode::Rhs rhs = [psi_bar](double z, const Vec& w) -> Vec { return -w + Vec::Constant(1, psi_bar * std::sin(z)); };
      const auto traj = ode::integrate(rhs, w0, 0.0, horizon, icfg, ode::Axis::fast_axis_z);
      stability::PerturbationBoundSpec spec;
      spec.psi1 = [psi_bar](double) { return psi_bar; };
      const auto rep = stability::check_perturbation_envelope(cert, traj, 1, spec);
      const double tail = rep.k2 * c.c4 * psi_bar / (2.0 * c.c1 * rep.k1);
      double late = 0.0;
      for (std::size_t i = 0; i < traj.size(); ++i)
        if (traj.times()[i] >= 0.5 * horizon) late = std::max(late, traj.states()[i].norm());
      const fs::path file = dir / "trajectories_constant_psi.csv";
      write_trajectory(file, traj);
      out.files.push_back(file);
      return json{{"pass", rep.pass && late <= 1.01 * tail && rep.envelope.back() <= 1.01 * tail},
                  {"envelope_ok", rep.envelope_ok}, {"ball_ok", rep.ball_ok}, {"psi_bound_ok", rep.psi_bound_ok},
                  {"tail_bound", tail}, {"late_max_norm", late}, {"final_envelope", rep.envelope.back()},
                  {"k1", rep.k1}, {"k2", rep.k2}};
    }));
  }
  out.extra["certificate"] = stability::to_json(cert);
  return out;
}

using Runner = Output (*)(const ScenarioConfig&, const fs::path&);

Runner runner_for(const std::string& id) {
  if (id == "example1") return run_example1;
  if (id == "example1_averaged") return run_example1_averaged;
  if (id == "epsilon_sweep") return run_epsilon_sweep;
  if (id == "kuramoto_locked") return run_kuramoto_locked;
  if (id == "kuramoto_detuned") return run_kuramoto_detuned;
  if (id == "alpha_sweep") return run_alpha_sweep;
  if (id == "u_sweep") return run_u_sweep;
  if (id == "certificate") return run_certificate;
  if (id == "envelope") return run_envelope;
  throw std::logic_error("no runner for scenario " + id);
}

void write_csv_row(std::ostream& os, const json& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) os << ',';
    if (row[i].is_string())
      os << row[i].get<std::string>();
    else
      os << row[i].dump();
  }
  os << '\n';
}

const char* kPlotScript = R"PY(#!/usr/bin/env python3
# Renders the CSV artifacts of this run directory. Usage: python3 plot.py
import csv, glob, json, os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def read(path):
    with open(path) as f:
        return list(csv.DictReader(f))

for path in sorted(glob.glob(os.path.join(here, "trajectories_*.csv"))):
    rows = read(path)
    if not rows:
        continue
    fig, ax = plt.subplots()
    if "mu" in rows[0]:
        t = [float(r["t"]) for r in rows]
        ax.semilogy(t, [max(float(r["mu"]), 1e-300) for r in rows], label="mu")
        ax.semilogy(t, [max(float(r["dist_euclid"]), 1e-300) for r in rows], label="dist")
        ax.set_xlabel("t")
    else:
        axis = next(iter(rows[0]))
        t = [float(r[axis]) for r in rows]
        ax.semilogy(t, [max(abs(float(r["x0"])), 1e-300) for r in rows], label="|x|")
        ax.set_xlabel(axis)
    ax.legend()
    fig.savefig(path[:-4] + ".png", dpi=120)
    plt.close(fig)

sweep = os.path.join(here, "sweep.csv")
if os.path.exists(sweep):
    rows = read(sweep)
    colors = {"stable": "tab:green", "unstable": "tab:red", "inconclusive": "tab:gray"}
    fig, ax = plt.subplots()
    if "alpha" in rows[0]:
        ax.scatter([float(r["alpha"]) for r in rows], [float(r["u"]) for r in rows],
                   c=[colors.get(r["verdict"], "k") for r in rows])
        ax.set_xlabel("alpha")
        ax.set_ylabel("u")
    else:
        ax.plot([float(r["epsilon"]) for r in rows], [float(r["lambda"]) for r in rows], "o-")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("lambda")
    fig.savefig(os.path.join(here, "sweep.png"), dpi=120)
    plt.close(fig)
)PY";

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error([&] {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        return msg;
      }()),
      errors_(std::move(errors)) {}

const std::vector<ScenarioInfo>& scenarios() {
  static const std::vector<ScenarioInfo> s = build_scenarios();
  return s;
}

const ScenarioInfo* find_scenario(const std::string& id) {
  for (const auto& s : scenarios())
    if (s.id == id) return &s;
  return nullptr;
}

ScenarioConfig parse_config(const json& raw, const Overrides& ov) {
  std::vector<std::string> errors;
  if (!raw.is_object()) throw ConfigError({"config must be a JSON object"});
  static const std::vector<std::string> top = {"scenario", "seed", "output_dir", "jobs", "params"};
  for (const auto& [k, v] : raw.items())
    if (std::find(top.begin(), top.end(), k) == top.end()) errors.push_back("unknown key: " + k);

  ScenarioConfig cfg;
  const ScenarioInfo* info = nullptr;
  if (!raw.contains("scenario") || !raw["scenario"].is_string()) {
    errors.push_back("scenario: required string");
  } else {
    cfg.scenario = raw["scenario"].get<std::string>();
    info = find_scenario(cfg.scenario);
    if (!info) errors.push_back("scenario: unknown id '" + cfg.scenario + "'");
  }
  if (raw.contains("seed")) {
    if (!raw["seed"].is_number_integer() || raw["seed"].get<std::int64_t>() < 0)
      errors.push_back("seed: expected a non-negative integer");
    else
      cfg.seed = raw["seed"].get<std::uint64_t>();
  }
  if (raw.contains("jobs")) {
    if (!raw["jobs"].is_number_integer() || raw["jobs"].get<std::int64_t>() <= 0)
      errors.push_back("jobs: expected a positive integer");
    else
      cfg.jobs = raw["jobs"].get<std::size_t>();
  }
  if (raw.contains("output_dir")) {
    if (!raw["output_dir"].is_string() || raw["output_dir"].get<std::string>().empty())
      errors.push_back("output_dir: expected a non-empty string");
    else
      cfg.output_dir = raw["output_dir"].get<std::string>();
  }
  json params = raw.contains("params") ? raw["params"] : json::object();
  if (!params.is_object()) {
    errors.push_back("params: expected an object");
    params = json::object();
  }
  if (info) {
    for (const auto& [k, v] : params.items()) {
      const bool known = std::any_of(info->params.begin(), info->params.end(), [&](const ParamSpec& p) { return p.key == k; });
      if (!known) errors.push_back("params." + k + ": unknown key for scenario " + info->id);
    }
    json resolved = json::object();
    for (const auto& spec : info->params) {
      const json v = params.contains(spec.key) ? params[spec.key] : spec.fallback;
      check_param(spec, v, errors);
      resolved[spec.key] = v;
    }
    try {
      cross_checks(info->id, resolved, errors);
    } catch (const json::exception&) {
      // a wrongly typed field is already reported above
    }
    cfg.params = resolved;
  }
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.jobs) {
    if (*ov.jobs == 0)
      errors.push_back("--jobs: must be positive");
    else
      cfg.jobs = *ov.jobs;
  }
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (cfg.output_dir.empty()) cfg.output_dir = fs::path("out") / cfg.scenario;
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ScenarioConfig load_config(const fs::path& path, const Overrides& ov) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"cannot read config file " + path.string()});
  json raw;
  try {
    raw = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("parse error: ") + e.what()});
  }
  return parse_config(raw, ov);
}

std::string canonical(const json& j) { return j.dump(2) + "\n"; }

RunSummary run_scenario(const ScenarioConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioInfo* info = find_scenario(cfg.scenario);
  if (!info) throw ConfigError({"scenario: unknown id '" + cfg.scenario + "'"});
  fs::create_directories(cfg.output_dir);

  Output out = runner_for(cfg.scenario)(cfg, cfg.output_dir);

  RunSummary rs;
  json cases = json::array();
  for (const auto& c : out.cases) {
    cases.push_back(c.result);
    rs.any_case_failed = rs.any_case_failed || c.failed;
  }
  rs.files = out.files;
  if (info->sweep) {
    const fs::path file = cfg.output_dir / "sweep.csv";
    std::ofstream os(file);
    os << std::setprecision(17);
    for (std::size_t i = 0; i < out.sweep_columns.size(); ++i) os << (i ? "," : "") << out.sweep_columns[i];
    os << '\n';
    for (const auto& row : out.sweep_rows) write_csv_row(os, row);
    rs.files.push_back(file);
  }
  {
    const fs::path file = cfg.output_dir / "plot.py";
    std::ofstream os(file);
    os << kPlotScript;
    rs.files.push_back(file);
  }
  rs.summary = {{"scenario", cfg.scenario},
                {"seed", cfg.seed},
                {"config", {{"scenario", cfg.scenario}, {"seed", cfg.seed}, {"params", cfg.params}}},
                {"cases", cases},
                {"status", rs.any_case_failed ? "failed_cases" : "ok"}};
  for (const auto& [k, v] : out.extra.items()) rs.summary[k] = v;
  {
    const fs::path file = cfg.output_dir / "summary.json";
    std::ofstream os(file);
    os << canonical(rs.summary);
    rs.files.push_back(file);
  }
  rs.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    const fs::path file = cfg.output_dir / "timing.json";
    std::ofstream os(file);
    os << json{{"wall_seconds", rs.wall_seconds}, {"jobs", cfg.jobs}}.dump(2) << '\n';
    rs.files.push_back(file);
  }
  return rs;
}

int main_entry(int argc, char** argv) {
  CLI::App app{"slow-fast stability lab"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> jobs;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "scenario config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--jobs", jobs, "worker threads");
  };
  auto* run = app.add_subcommand("run", "run one scenario");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "run a sweep scenario and write sweep.csv");
  add_common(sweep);
  auto* ls = app.add_subcommand("list-scenarios", "list scenario ids and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (ls->parsed()) {
    for (const auto& s : scenarios()) {
      std::cout << s.id << (s.sweep ? " [sweep]" : "") << "  " << s.description << '\n';
      for (const auto& p : s.params) std::cout << "    " << p.key << " = " << p.fallback.dump() << "  " << p.help << '\n';
    }
    return 0;
  }

  Overrides ov;
  ov.seed = seed;
  ov.jobs = jobs;
  if (out_dir) ov.output_dir = fs::path(*out_dir);
  ScenarioConfig cfg;
  try {
    cfg = load_config(config_path, ov);
    if (sweep->parsed() && !find_scenario(cfg.scenario)->sweep)
      throw ConfigError({"scenario " + cfg.scenario + " is not a sweep scenario"});
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }

  try {
    const RunSummary rs = run_scenario(cfg);
    std::cout << "scenario " << cfg.scenario << ": " << rs.summary["status"].get<std::string>() << " ("
              << rs.summary["cases"].size() << " cases) -> " << cfg.output_dir.string() << '\n';
    return rs.any_case_failed ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace sfl::cli
