#pragma once

// Experiment configuration: INI text with [potential], [params], [grid] and
// [experiment] sections. Unknown keys are rejected; every value is checked
// before any computation starts.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/fpgrid.hpp"
#include "tamd/model.hpp"
#include "tamd/observables.hpp"
#include "tamd/sde.hpp"

namespace tamd {

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k = {"fe", "sample", "fpe", "sweep", "variance", "rate", "gain"};
  return k;
}

struct ExperimentConfig {
  // [potential]
  std::string potential_kind = "tilted";
  Domain domain;
  std::vector<double> v_cos{1.0}, v_sin, w_cos, w_sin, xi_cos, xi_sin;
  double a = 1.0, eps = 0.5, phase = 0.0, k = 1.0;

  // [params]
  TamdParams params;
  std::vector<double> delta_list;
  int replicas = 1;
  Dynamics dynamics = Dynamics::Overdamped;
  double q0 = 0.5, z0 = 0.0;

  // [grid]
  GridSpec grid;

  // [experiment]
  std::string kind;
  std::vector<std::string> observables{"cos_z"};
  std::string output = "tamd";
  double burn_in = 0.1;
  int n_batches = 32;
  bool spectrum = true;
  double t_final = 0.5, dt_pde = 1e-3, amplitude = 0.5;
  std::string perturbation = "sin_z";
  double fit_from = -1.0, fit_to = -1.0;  // negative: 20% and 80% of t_final
  std::vector<double> barrier_list{1.0, 2.0, 3.0};
  int n_events = 32;
  double escape_tol = 0.05;
  long long max_steps = 200000000;

  std::set<std::string> explicit_keys;  ///< "section.key" present in the file
  bool seed_from_env = false;

  Potential potential() const {
    auto series = [](const std::vector<double>& c, const std::vector<double>& s) {
      TrigSeries t;
      for (std::size_t i = 0; i < std::max(c.size(), s.size()); ++i)
        t.terms.push_back({static_cast<int>(i) + 1, i < c.size() ? c[i] : 0.0, i < s.size() ? s[i] : 0.0});
      return t;
    };
    if (potential_kind == "separable") return Potential(domain, Separable{series(v_cos, v_sin), series(w_cos, w_sin)});
    if (potential_kind == "tilted") return Potential(domain, TiltedCoupling{a, eps, phase});
    return Potential(domain, CollectiveVariable{series(v_cos, v_sin), k, series(xi_cos, xi_sin)});
  }

  /// Separable potential with V from the file and the double well
  /// W(z) = (E/2) cos(4 pi z / Lz), wells at Lz/4 and 3Lz/4, barrier E.
  Potential double_well(double E) const {
    TrigSeries V;
    for (std::size_t i = 0; i < std::max(v_cos.size(), v_sin.size()); ++i)
      V.terms.push_back({static_cast<int>(i) + 1, i < v_cos.size() ? v_cos[i] : 0.0, i < v_sin.size() ? v_sin[i] : 0.0});
    TrigSeries W;
    W.terms.push_back({2, 0.5 * E, 0.0});
    return Potential(domain, Separable{V, W});
  }

  std::vector<double> deltas() const { return delta_list.empty() ? std::vector<double>{params.delta} : delta_list; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  return v;
}

inline long long parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size())
    throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
  return v;
}

/// Splits at commas outside parentheses.
inline std::vector<std::string> split_top_level(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> v;
  for (const auto& item : split_top_level(text)) v.push_back(parse_double(key, item));
  return v;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("config key '" + key + "': '" + text + "' is not a boolean");
}

struct KeySpec {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  /// Experiment kinds that read the key (empty: all).
  std::set<std::string> used_by;
  /// Potential kinds that read the key (empty: all).
  std::set<std::string> potentials;
};

inline const std::vector<KeySpec>& key_table() {
  using C = ExperimentConfig;
  const std::set<std::string> all;
  const std::set<std::string> sampling = {"sample", "variance"};
  const std::set<std::string> grid_kinds = {"fe", "fpe", "sweep", "variance", "rate"};
  const std::set<std::string> solver_kinds = {"fpe", "sweep", "variance", "rate"};
  static const std::vector<KeySpec> t = {
      {"potential", "kind",
       [](C& c, const std::string& v) {
         c.potential_kind = trim(v);
         if (c.potential_kind != "separable" && c.potential_kind != "tilted" && c.potential_kind != "collective")
           throw ConfigError("config key 'potential.kind': expected separable, tilted or collective, got '" + v + "'");
       },
       [](const C& c) { return c.potential_kind; }, all, {}},
      {"potential", "d", [](C& c, const std::string& v) { c.domain.d = static_cast<int>(parse_int("potential.d", v)); },
       [](const C& c) { return std::to_string(c.domain.d); }, all, {}},
      {"potential", "lq", [](C& c, const std::string& v) { c.domain.Lq = parse_double("potential.lq", v); },
       [](const C& c) { return fmt(c.domain.Lq); }, all, {}},
      {"potential", "lz", [](C& c, const std::string& v) { c.domain.Lz = parse_double("potential.lz", v); },
       [](const C& c) { return fmt(c.domain.Lz); }, all, {}},
      {"potential", "v_cos", [](C& c, const std::string& v) { c.v_cos = parse_list("potential.v_cos", v); },
       [](const C& c) { return fmt_list(c.v_cos); }, all, {"separable", "collective"}},
      {"potential", "v_sin", [](C& c, const std::string& v) { c.v_sin = parse_list("potential.v_sin", v); },
       [](const C& c) { return fmt_list(c.v_sin); }, all, {"separable", "collective"}},
      {"potential", "w_cos", [](C& c, const std::string& v) { c.w_cos = parse_list("potential.w_cos", v); },
       [](const C& c) { return fmt_list(c.w_cos); },
       {"fe", "sample", "fpe", "sweep", "variance", "rate"}, {"separable"}},
      {"potential", "w_sin", [](C& c, const std::string& v) { c.w_sin = parse_list("potential.w_sin", v); },
       [](const C& c) { return fmt_list(c.w_sin); },
       {"fe", "sample", "fpe", "sweep", "variance", "rate"}, {"separable"}},
      {"potential", "a", [](C& c, const std::string& v) { c.a = parse_double("potential.a", v); },
       [](const C& c) { return fmt(c.a); }, all, {"tilted"}},
      {"potential", "eps", [](C& c, const std::string& v) { c.eps = parse_double("potential.eps", v); },
       [](const C& c) { return fmt(c.eps); }, all, {"tilted"}},
      {"potential", "phase", [](C& c, const std::string& v) { c.phase = parse_double("potential.phase", v); },
       [](const C& c) { return fmt(c.phase); }, all, {"tilted"}},
      {"potential", "k", [](C& c, const std::string& v) { c.k = parse_double("potential.k", v); },
       [](const C& c) { return fmt(c.k); }, all, {"collective"}},
      {"potential", "xi_cos", [](C& c, const std::string& v) { c.xi_cos = parse_list("potential.xi_cos", v); },
       [](const C& c) { return fmt_list(c.xi_cos); }, all, {"collective"}},
      {"potential", "xi_sin", [](C& c, const std::string& v) { c.xi_sin = parse_list("potential.xi_sin", v); },
       [](const C& c) { return fmt_list(c.xi_sin); }, all, {"collective"}},

      {"params", "beta", [](C& c, const std::string& v) { c.params.beta = parse_double("params.beta", v); },
       [](const C& c) { return fmt(c.params.beta); }, all, {}},
      {"params", "beta_bar", [](C& c, const std::string& v) { c.params.beta_bar = parse_double("params.beta_bar", v); },
       [](const C& c) { return fmt(c.params.beta_bar); }, all, {}},
      {"params", "delta", [](C& c, const std::string& v) { c.params.delta = parse_double("params.delta", v); },
       [](const C& c) { return fmt(c.params.delta); }, {"sample", "fpe", "variance", "rate", "gain"}, {}},
      {"params", "delta_list", [](C& c, const std::string& v) { c.delta_list = parse_list("params.delta_list", v); },
       [](const C& c) { return fmt_list(c.delta_list); }, {"sweep"}, {}},
      {"params", "gamma", [](C& c, const std::string& v) { c.params.gamma = parse_double("params.gamma", v); },
       [](const C& c) { return fmt(c.params.gamma); }, sampling, {}},
      {"params", "mass", [](C& c, const std::string& v) { c.params.mass = parse_double("params.mass", v); },
       [](const C& c) { return fmt(c.params.mass); }, sampling, {}},
      {"params", "dt", [](C& c, const std::string& v) { c.params.dt = parse_double("params.dt", v); },
       [](const C& c) { return fmt(c.params.dt); }, {"sample", "variance", "gain"}, {}},
      {"params", "n_steps", [](C& c, const std::string& v) { c.params.n_steps = parse_int("params.n_steps", v); },
       [](const C& c) { return std::to_string(c.params.n_steps); }, sampling, {}},
      {"params", "stride", [](C& c, const std::string& v) { c.params.stride = parse_int("params.stride", v); },
       [](const C& c) { return std::to_string(c.params.stride); }, sampling, {}},
      {"params", "seed",
       [](C& c, const std::string& v) {
         const long long s = parse_int("params.seed", v);
         if (s < 0) throw ConfigError("config key 'params.seed': must be >= 0");
         c.params.seed = static_cast<std::uint64_t>(s);
       },
       [](const C& c) { return std::to_string(c.params.seed); }, {"sample", "variance", "gain"}, {}},
      {"params", "replicas",
       [](C& c, const std::string& v) { c.replicas = static_cast<int>(parse_int("params.replicas", v)); },
       [](const C& c) { return std::to_string(c.replicas); }, {"sample", "variance", "gain"}, {}},
      {"params", "dynamics",
       [](C& c, const std::string& v) {
         const std::string t = trim(v);
         if (t == "overdamped") c.dynamics = Dynamics::Overdamped;
         else if (t == "inertial") c.dynamics = Dynamics::Inertial;
         else if (t == "plain") c.dynamics = Dynamics::Plain;
         else if (t == "limiting") c.dynamics = Dynamics::Limiting;
         else throw ConfigError("config key 'params.dynamics': expected overdamped, inertial, plain or limiting, got '" + v + "'");
       },
       [](const C& c) { return to_string(c.dynamics); }, sampling, {}},
      {"params", "q0", [](C& c, const std::string& v) { c.q0 = parse_double("params.q0", v); },
       [](const C& c) { return fmt(c.q0); }, {"sample", "variance", "gain"}, {}},
      {"params", "z0", [](C& c, const std::string& v) { c.z0 = parse_double("params.z0", v); },
       [](const C& c) { return fmt(c.z0); }, sampling, {}},

      {"grid", "n_q", [](C& c, const std::string& v) { c.grid.n_q = static_cast<int>(parse_int("grid.n_q", v)); },
       [](const C& c) { return std::to_string(c.grid.n_q); }, grid_kinds, {}},
      {"grid", "n_z", [](C& c, const std::string& v) { c.grid.n_z = static_cast<int>(parse_int("grid.n_z", v)); },
       [](const C& c) { return std::to_string(c.grid.n_z); }, {"fe", "sample", "fpe", "sweep", "variance", "rate"}, {}},
      {"grid", "scheme",
       [](C& c, const std::string& v) {
         const std::string t = trim(v);
         if (t == "spectral") c.grid.scheme = Scheme::Spectral;
         else if (t == "fd2") c.grid.scheme = Scheme::Fd2;
         else throw ConfigError("config key 'grid.scheme': expected spectral or fd2, got '" + v + "'");
       },
       [](const C& c) { return to_string(c.grid.scheme); }, solver_kinds, {}},

      {"experiment", "kind",
       [](C& c, const std::string& v) {
         c.kind = trim(v);
         const auto& ks = experiment_kinds();
         if (std::find(ks.begin(), ks.end(), c.kind) == ks.end())
           throw ConfigError("config key 'experiment.kind': unknown kind '" + v + "'");
       },
       [](const C& c) { return c.kind; }, all, {}},
      {"experiment", "observables",
       [](C& c, const std::string& v) {
         c.observables = split_top_level(v);
         if (c.observables.empty()) throw ConfigError("config key 'experiment.observables': empty list");
       },
       [](const C& c) { return join(c.observables); }, {"sample", "sweep", "variance"}, {}},
      {"experiment", "output", [](C& c, const std::string& v) { c.output = trim(v); },
       [](const C& c) { return c.output; }, all, {}},
      {"experiment", "burn_in", [](C& c, const std::string& v) { c.burn_in = parse_double("experiment.burn_in", v); },
       [](const C& c) { return fmt(c.burn_in); }, sampling, {}},
      {"experiment", "n_batches",
       [](C& c, const std::string& v) { c.n_batches = static_cast<int>(parse_int("experiment.n_batches", v)); },
       [](const C& c) { return std::to_string(c.n_batches); }, sampling, {}},
      {"experiment", "spectrum", [](C& c, const std::string& v) { c.spectrum = parse_bool("experiment.spectrum", v); },
       [](const C& c) { return std::string(c.spectrum ? "true" : "false"); }, {"fpe", "sweep"}, {}},
      {"experiment", "t_final", [](C& c, const std::string& v) { c.t_final = parse_double("experiment.t_final", v); },
       [](const C& c) { return fmt(c.t_final); }, {"rate"}, {}},
      {"experiment", "dt_pde", [](C& c, const std::string& v) { c.dt_pde = parse_double("experiment.dt_pde", v); },
       [](const C& c) { return fmt(c.dt_pde); }, {"rate"}, {}},
      {"experiment", "perturbation", [](C& c, const std::string& v) { c.perturbation = trim(v); },
       [](const C& c) { return c.perturbation; }, {"rate"}, {}},
      {"experiment", "amplitude",
       [](C& c, const std::string& v) { c.amplitude = parse_double("experiment.amplitude", v); },
       [](const C& c) { return fmt(c.amplitude); }, {"rate"}, {}},
      {"experiment", "fit_from", [](C& c, const std::string& v) { c.fit_from = parse_double("experiment.fit_from", v); },
       [](const C& c) { return fmt(c.fit_from >= 0 ? c.fit_from : 0.2 * c.t_final); }, {"rate"}, {}},
      {"experiment", "fit_to", [](C& c, const std::string& v) { c.fit_to = parse_double("experiment.fit_to", v); },
       [](const C& c) { return fmt(c.fit_to >= 0 ? c.fit_to : 0.8 * c.t_final); }, {"rate"}, {}},
      {"experiment", "barrier_list",
       [](C& c, const std::string& v) { c.barrier_list = parse_list("experiment.barrier_list", v); },
       [](const C& c) { return fmt_list(c.barrier_list); }, {"gain"}, {}},
      {"experiment", "n_events",
       [](C& c, const std::string& v) { c.n_events = static_cast<int>(parse_int("experiment.n_events", v)); },
       [](const C& c) { return std::to_string(c.n_events); }, {"gain"}, {}},
      {"experiment", "escape_tol",
       [](C& c, const std::string& v) { c.escape_tol = parse_double("experiment.escape_tol", v); },
       [](const C& c) { return fmt(c.escape_tol); }, {"gain"}, {}},
      {"experiment", "max_steps",
       [](C& c, const std::string& v) { c.max_steps = parse_int("experiment.max_steps", v); },
       [](const C& c) { return std::to_string(c.max_steps); }, {"gain"}, {}},
  };
  return t;
}

}  // namespace detail

/// Checks every field against the preconditions of the modules the
/// experiment kind will call.
inline void validate(const ExperimentConfig& c) {
  if (c.kind.empty()) throw ConfigError("config key 'experiment.kind' is required");
  c.domain.validate();
  const Potential pot = c.potential();  // validates coefficients
  TamdParams p = c.params;
  p.validate();
  for (double d : c.delta_list)
    if (!(d > 0.0 && d <= 1.0)) throw ConfigError("config key 'params.delta_list': entries must lie in (0, 1]");
  if (c.replicas < 1) throw ConfigError("config key 'params.replicas': must be >= 1");
  if (c.output.empty() || c.output.find('/') != std::string::npos)
    throw ConfigError("config key 'experiment.output': must be a non-empty file stem without '/'");

  const std::string& k = c.kind;
  const bool grid_kind = k == "fe" || k == "fpe" || k == "sweep" || k == "variance" || k == "rate";
  if (grid_kind) {
    if (c.grid.n_q < 8 || c.grid.n_z < 8) throw ConfigError("config keys 'grid.n_q'/'grid.n_z': must be >= 8");
    if (c.grid.n_z % 2) throw ConfigError("config key 'grid.n_z': must be even");
  }
  if (k == "fpe" || k == "sweep" || k == "variance" || k == "rate") {
    if (c.domain.d != 1) throw ConfigError("config key 'potential.d': grid solvers need d = 1");
    try {
      c.grid.validate();
    } catch (const GuardError& e) {
      throw GuardError(std::string("config section [grid]: ") + e.what());
    } catch (const Error& e) {
      throw ConfigError(std::string("config section [grid]: ") + e.what());
    }
  }
  if (k == "sweep") {
    if (c.delta_list.size() < 3) throw ConfigError("config key 'params.delta_list': sweep needs at least 3 values");
  }
  if (k == "sample" || k == "variance" || k == "sweep") {
    const auto obs = parse_observables(c.observables);
    if (c.dynamics == Dynamics::Limiting)
      for (const auto& o : obs)
        if (o.depends_on_q())
          throw ConfigError("config key 'experiment.observables': '" + o.name() +
                            "' depends on q, which the limiting dynamics does not evolve");
  }
  if (k == "sample" || k == "variance") {
    if (!(c.burn_in >= 0.0 && c.burn_in < 1.0)) throw ConfigError("config key 'experiment.burn_in': must lie in [0, 1)");
    if (c.n_batches < 10) throw ConfigError("config key 'experiment.n_batches': must be >= 10");
    const long long records = c.params.n_steps / c.params.stride + 1;
    const long long kept = records - static_cast<long long>(std::floor(c.burn_in * static_cast<double>(records)));
    if (static_cast<long long>(c.n_batches) * 10 > kept)
      throw ConfigError("config key 'experiment.n_batches': " + std::to_string(c.n_batches) +
                        " batches need at least " + std::to_string(10LL * c.n_batches) + " retained records, have " +
                        std::to_string(kept));
    if (c.dynamics != Dynamics::Limiting) {
      TamdParams pp = c.dynamics == Dynamics::Plain ? plain_params(p) : p;
      check_stability(pot, pp);
    }
    if (k == "variance" && c.dynamics != Dynamics::Overdamped && c.dynamics != Dynamics::Limiting)
      throw ConfigError("config key 'params.dynamics': variance compares against overdamped or limiting grids only");
    if (k == "variance" && c.domain.d != 1) throw ConfigError("config key 'potential.d': variance needs d = 1");
  }
  if (k == "rate") {
    if (!(c.t_final > 0.0) || !(c.dt_pde > 0.0) || c.dt_pde > c.t_final)
      throw ConfigError("config keys 'experiment.t_final'/'experiment.dt_pde': need 0 < dt_pde <= t_final");
    const auto o = Observable::parse(c.perturbation);
    if (!o.periodic()) throw ConfigError("config key 'experiment.perturbation': must be a periodic observable");
    const double from = c.fit_from >= 0 ? c.fit_from : 0.2 * c.t_final;
    const double to = c.fit_to >= 0 ? c.fit_to : 0.8 * c.t_final;
    if (!(from < to) || to > c.t_final)
      throw ConfigError("config keys 'experiment.fit_from'/'experiment.fit_to': need fit_from < fit_to <= t_final");
  }
  if (k == "gain") {
    if (c.potential_kind != "separable")
      throw ConfigError("config key 'potential.kind': gain uses a separable potential with a double-well W");
    if (c.barrier_list.size() < 2) throw ConfigError("config key 'experiment.barrier_list': need at least 2 barriers");
    for (double e : c.barrier_list)
      if (!(e > 0.0)) throw ConfigError("config key 'experiment.barrier_list': barriers must be positive");
    if (c.n_events < 1 || c.max_steps < 1)
      throw ConfigError("config keys 'experiment.n_events'/'experiment.max_steps': must be positive");
    if (!(c.escape_tol > 0.0 && c.escape_tol < 0.25 * c.domain.Lz))
      throw ConfigError("config key 'experiment.escape_tol': must lie in (0, Lz/4)");
    check_stability(pot, p);
    check_stability(pot, plain_params(p));
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig c;
  const auto& table = detail::key_table();
  for (const auto& [section, node] : pt) {
    if (node.empty())
      throw ConfigError(origin + ": key '" + section + "' appears outside a section");
    bool known_section = false;
    for (const auto& ks : table) known_section |= ks.section == section;
    if (!known_section) throw ConfigError(origin + ": unknown section [" + section + "]");
    for (const auto& [key, value] : node) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const detail::KeySpec& ks) { return ks.section == section && ks.key == key; });
      if (it == table.end()) throw ConfigError(origin + ": unknown key '" + key + "' in section [" + section + "]");
      it->set(c, value.data());
      c.explicit_keys.insert(section + "." + key);
    }
  }
  if (const char* env = std::getenv("TAMD_LAB_SEED")) {
    c.params.seed = static_cast<std::uint64_t>(detail::parse_int("TAMD_LAB_SEED", env));
    if (detail::trim(env).starts_with("-")) throw ConfigError("TAMD_LAB_SEED must be >= 0");
    c.seed_from_env = true;
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in, path);
}

/// Keys set in the file that the experiment kind (or potential kind) ignores.
inline std::vector<std::string> unused_key_warnings(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& ks : detail::key_table()) {
    const std::string name = ks.section + "." + ks.key;
    if (!c.explicit_keys.count(name)) continue;
    if (!ks.used_by.empty() && !ks.used_by.count(c.kind))
      out.push_back("warning: " + name + " is unused by kind=" + c.kind);
    else if (!ks.potentials.empty() && !ks.potentials.count(c.potential_kind))
      out.push_back("warning: " + name + " is unused by potential kind=" + c.potential_kind);
  }
  if (c.kind == "sweep" && c.explicit_keys.count("params.delta"))
    out.push_back("warning: params.delta is replaced by params.delta_list in a sweep");
  return out;
}

}  // namespace tamd
