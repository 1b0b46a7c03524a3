#pragma once

// Time integrators for the overdamped and inertial extended dynamics, the
// plain (delta = 1, beta_bar = beta) dynamics and the limiting z-dynamics,
// plus trajectory recording and replica ensembles.
//
// Time is the slow clock: delta^{-1} multiplies the q (and p) drift and noise,
// the z-line is integrated with dt as given.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/freenergy.hpp"
#include "tamd/model.hpp"
#include "tamd/observables.hpp"
#include "tamd/rng.hpp"
#include "tamd/spectral.hpp"

namespace tamd {

enum class Dynamics { Overdamped, Inertial, Plain, Limiting };

inline std::string to_string(Dynamics k) {
  switch (k) {
    case Dynamics::Overdamped: return "overdamped";
    case Dynamics::Inertial: return "inertial";
    case Dynamics::Plain: return "plain";
    case Dynamics::Limiting: return "limiting";
  }
  return "?";
}

/// Throws GuardError when dt / delta exceeds half the reciprocal of the
/// largest q-curvature of U.
inline void check_stability(const Potential& pot, const TamdParams& params) {
  const double curvature = pot.q_curvature_bound();
  if (curvature <= 0.0) return;
  const double ratio = params.dt / params.delta;
  const double bound = 0.5 / curvature;
  if (ratio > bound) {
    std::ostringstream msg;
    msg << "stability guard: dt/delta = " << ratio << " exceeds 0.5/max_curvature = " << bound
        << " (max q-curvature " << curvature << ")";
    throw GuardError(msg.str());
  }
}

/// Parameters of the plain dynamics: no acceleration, z at the physical temperature.
inline TamdParams plain_params(TamdParams p) {
  p.delta = 1.0;
  p.beta_bar = p.beta;
  return p;
}

namespace detail {

inline void wrap_in_place(const Domain& dom, State& s) {
  for (double& qi : s.q) qi = wrap_coordinate(qi, dom.Lq);
  s.z = wrap_coordinate(s.z, dom.Lz);
}

// Gaussian draws: q-block, then z.
template <class Noise>
void overdamped_kernel(State& s, const Potential& pot, const TamdParams& prm, Noise& noise,
                       Derivatives& der) {
  pot.derivatives(s.q, s.z, der);
  const double q_drift = prm.dt / prm.delta;
  const double q_noise = std::sqrt(2.0 * prm.dt / (prm.beta * prm.delta));
  const double z_noise = std::sqrt(2.0 * prm.dt / prm.beta_bar);
  for (std::size_t i = 0; i < s.q.size(); ++i) s.q[i] += -q_drift * der.grad_q[i] + q_noise * noise.gaussian();
  s.z += -prm.dt * der.dz + z_noise * noise.gaussian();
  wrap_in_place(pot.domain(), s);
}

// z half step, BAOAB for (q, p), z half step. Gaussian draws: p-block, then
// the two z half-step increments.
template <class Noise>
void inertial_kernel(State& s, const Potential& pot, const TamdParams& prm, Noise& noise, Derivatives& der,
                     std::vector<double>& xi_p) {
  auto& p = *s.p;
  const std::size_t d = s.q.size();
  xi_p.resize(d);
  for (auto& x : xi_p) x = noise.gaussian();
  const double xi_z1 = noise.gaussian();
  const double xi_z2 = noise.gaussian();

  const double h = 0.5 * prm.dt;
  const double z_noise = std::sqrt(2.0 * h / prm.beta_bar);
  const double inv_delta = 1.0 / prm.delta;
  const double decay = std::exp(-prm.gamma * prm.dt / (prm.delta * prm.mass));
  const double ou_sd = std::sqrt(prm.mass / prm.beta * (1.0 - decay * decay));
  const Domain& dom = pot.domain();

  pot.derivatives(s.q, s.z, der);
  s.z = wrap_coordinate(s.z - h * der.dz + z_noise * xi_z1, dom.Lz);

  pot.derivatives(s.q, s.z, der);
  for (std::size_t i = 0; i < d; ++i) {
    p[i] -= h * inv_delta * der.grad_q[i];
    s.q[i] += h * inv_delta * p[i] / prm.mass;
    p[i] = decay * p[i] + ou_sd * xi_p[i];
    s.q[i] += h * inv_delta * p[i] / prm.mass;
  }
  pot.derivatives(s.q, s.z, der);
  for (std::size_t i = 0; i < d; ++i) p[i] -= h * inv_delta * der.grad_q[i];

  s.z += -h * der.dz + z_noise * xi_z2;
  wrap_in_place(dom, s);
}

}  // namespace detail

/// One Euler-Maruyama step of the overdamped extended dynamics.
template <class Noise>
State step_overdamped(State s, const Potential& pot, const TamdParams& params, Noise& noise) {
  if (s.p) throw ConfigError("step_overdamped: state carries momenta");
  check_stability(pot, params);
  Derivatives der;
  detail::overdamped_kernel(s, pot, params, noise, der);
  return s;
}

/// One splitting step of the inertial extended dynamics.
template <class Noise>
State step_inertial(State s, const Potential& pot, const TamdParams& params, Noise& noise) {
  if (!s.p) throw ConfigError("step_inertial: state has no momenta");
  if (s.p->size() != s.q.size()) throw ConfigError("step_inertial: momentum dimension mismatch");
  check_stability(pot, params);
  Derivatives der;
  std::vector<double> xi;
  detail::inertial_kernel(s, pot, params, noise, der, xi);
  return s;
}

/// One Euler-Maruyama step of dz = -A'(z) dt + sqrt(2/beta_bar) dW.
template <class Noise>
double step_limiting(double z, const TrigInterpolant& mean_force, const TamdParams& params, Noise& noise) {
  const double L = mean_force.period();
  const double drift = mean_force(z);
  return wrap_coordinate(z - params.dt * drift + std::sqrt(2.0 * params.dt / params.beta_bar) * noise.gaussian(),
                         L);
}

/// Recorded path: every `stride` steps, including the initial state.
struct Trajectory {
  int d = 1;
  bool inertial = false;
  std::vector<double> times;
  std::vector<double> z;
  std::vector<double> q;  ///< d values per record
  std::vector<double> p;  ///< d values per record (inertial only)
  std::vector<std::string> observable_names;
  std::vector<std::vector<double>> observable_series;

  std::size_t size() const { return times.size(); }
  double sample_interval() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }

  State state(std::size_t k) const {
    State s;
    s.q.assign(q.begin() + static_cast<std::ptrdiff_t>(k * d), q.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    if (inertial)
      s.p = std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(k * d),
                                p.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    s.z = z[k];
    return s;
  }

  const std::vector<double>& series(const std::string& name) const {
    for (std::size_t i = 0; i < observable_names.size(); ++i)
      if (observable_names[i] == name) return observable_series[i];
    throw ConfigError("trajectory has no observable '" + name + "'");
  }
};

/// Runs params.n_steps steps of the chosen dynamics from `initial` with the
/// Gaussian stream (params.seed, stream_id). The limiting dynamics needs
/// `profile` and evolves z only.
inline Trajectory simulate(const State& initial, Dynamics kind, const Potential& pot, const TamdParams& params,
                           const std::vector<Observable>& observables, std::uint64_t stream_id = 0,
                           const FreeEnergyProfile* profile = nullptr) {
  params.validate();
  const Domain& dom = pot.domain();
  if (static_cast<int>(initial.q.size()) != dom.d) throw ConfigError("simulate: initial q has wrong dimension");
  const bool inertial = kind == Dynamics::Inertial;
  if (inertial && !initial.p) throw ConfigError("simulate: inertial dynamics needs initial momenta");
  if (!inertial && initial.p) throw ConfigError("simulate: momenta given for a non-inertial dynamics");

  const TamdParams prm = kind == Dynamics::Plain ? plain_params(params) : params;
  TrigInterpolant mean_force;
  if (kind == Dynamics::Limiting) {
    if (!profile) throw ConfigError("simulate: limiting dynamics needs a free-energy profile");
    for (const auto& o : observables)
      if (o.depends_on_q())
        throw ConfigError("simulate: observable '" + o.name() + "' depends on q, which the limiting dynamics lacks");
    mean_force = profile->mean_force_interpolant();
  } else {
    check_stability(pot, prm);
  }

  Trajectory traj;
  traj.d = dom.d;
  traj.inertial = inertial;
  for (const auto& o : observables) traj.observable_names.push_back(o.name());
  traj.observable_series.resize(observables.size());
  const std::size_t n_rec = static_cast<std::size_t>(prm.n_steps / prm.stride) + 1;
  traj.times.reserve(n_rec);
  traj.z.reserve(n_rec);
  traj.q.reserve(n_rec * dom.d);
  for (auto& s : traj.observable_series) s.reserve(n_rec);

  State s = wrap(dom, initial);
  Derivatives der, obs_scratch;
  auto record = [&](long long step) {
    traj.times.push_back(static_cast<double>(step) * prm.dt);
    traj.z.push_back(s.z);
    traj.q.insert(traj.q.end(), s.q.begin(), s.q.end());
    if (inertial) traj.p.insert(traj.p.end(), s.p->begin(), s.p->end());
    for (std::size_t i = 0; i < observables.size(); ++i)
      traj.observable_series[i].push_back(observables[i](pot, s.q, s.z, obs_scratch));
  };
  record(0);

  RngStream rng(prm.seed, stream_id);
  std::vector<double> xi;
  for (long long step = 1; step <= prm.n_steps; ++step) {
    try {
      switch (kind) {
        case Dynamics::Overdamped:
        case Dynamics::Plain:
          detail::overdamped_kernel(s, pot, prm, rng, der);
          break;
        case Dynamics::Inertial:
          detail::inertial_kernel(s, pot, prm, rng, der, xi);
          break;
        case Dynamics::Limiting:
          s.z = step_limiting(s.z, mean_force, prm, rng);
          break;
      }
      if (!std::isfinite(s.z) || !std::isfinite(s.q[0])) throw GuardError("non-finite state");
    } catch (const GuardError& e) {
      throw GuardError("step " + std::to_string(step) + ": " + e.what());
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(step) + ": " + e.what());
    }
    if (step % prm.stride == 0) record(step);
  }
  return traj;
}

struct EscapeTimes {
  std::vector<double> times;  ///< completed transition durations
  bool censored = false;      ///< step budget ran out before n_events transitions
  long long steps = 0;
};

/// Durations of successive transitions between two z-wells: each event ends
/// when z comes within `tol` (on the circle) of the well it is heading to,
/// and the next event heads back. The run starts heading from the well
/// nearest to initial.z towards the other one.
inline EscapeTimes escape_times(const State& initial, Dynamics kind, const Potential& pot, const TamdParams& params,
                                double well_a, double well_b, double tol, int n_events, long long max_steps,
                                std::uint64_t stream_id = 0) {
  params.validate();
  if (kind == Dynamics::Limiting) throw ConfigError("escape_times: use the overdamped, plain or inertial dynamics");
  if (n_events < 1 || max_steps < 1) throw ConfigError("escape_times: n_events and max_steps must be positive");
  const bool inertial = kind == Dynamics::Inertial;
  if (inertial != initial.p.has_value()) throw ConfigError("escape_times: momenta must match the dynamics");
  const TamdParams prm = kind == Dynamics::Plain ? plain_params(params) : params;
  check_stability(pot, prm);
  const double Lz = pot.domain().Lz;
  auto circle_distance = [Lz](double x, double y) {
    const double d = std::abs(wrap_coordinate(x - y, Lz));
    return std::min(d, Lz - d);
  };
  State s = wrap(pot.domain(), initial);
  double target = circle_distance(s.z, well_a) <= circle_distance(s.z, well_b) ? well_b : well_a;
  RngStream rng(prm.seed, stream_id);
  Derivatives der;
  std::vector<double> xi;
  EscapeTimes out;
  long long last = 0;
  for (long long step = 1; step <= max_steps; ++step) {
    if (inertial)
      detail::inertial_kernel(s, pot, prm, rng, der, xi);
    else
      detail::overdamped_kernel(s, pot, prm, rng, der);
    if (!std::isfinite(s.z)) throw GuardError("escape_times: step " + std::to_string(step) + ": non-finite state");
    if (circle_distance(s.z, target) < tol) {
      out.times.push_back(static_cast<double>(step - last) * prm.dt);
      last = step;
      target = target == well_a ? well_b : well_a;
      if (static_cast<int>(out.times.size()) == n_events) {
        out.steps = step;
        return out;
      }
    }
  }
  out.steps = max_steps;
  out.censored = true;
  return out;
}

/// One trajectory per initial state; replica k uses stream k. The result does
/// not depend on the number of worker threads.
inline std::vector<Trajectory> ensemble(const std::vector<State>& initials, Dynamics kind, const Potential& pot,
                                        const TamdParams& params, const std::vector<Observable>& observables,
                                        unsigned threads = 1, const FreeEnergyProfile* profile = nullptr) {
  if (initials.empty()) throw ConfigError("ensemble: need at least one replica");
  const std::size_t n = initials.size();
  std::vector<Trajectory> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        out[k] = simulate(initials[k], kind, pot, params, observables, k, profile);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::string msg;
  int code = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error& e) {
      if (!code) code = e.exit_code();
      msg += "replica " + std::to_string(k) + ": " + e.what() + "; ";
    } catch (const std::exception& e) {
      if (!code) code = 4;
      msg += "replica " + std::to_string(k) + ": " + e.what() + "; ";
    }
  }
  if (code == 2) throw ConfigError("ensemble: " + msg);
  if (code == 3) throw GuardError("ensemble: " + msg);
  if (code != 0) throw SolverError("ensemble: " + msg);
  return out;
}

}  // namespace tamd
