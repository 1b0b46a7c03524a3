#pragma once

// Experiment runner behind the tamd_lab command: one function per experiment
// kind, each validating first and writing its CSV files at the very end.

#include <atomic>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tamd/config.hpp"
#include "tamd/csv.hpp"
#include "tamd/errors.hpp"
#include "tamd/estimators.hpp"
#include "tamd/fpgrid.hpp"
#include "tamd/freenergy.hpp"
#include "tamd/sde.hpp"

namespace tamd {

struct RunOptions {
  std::filesystem::path output_dir = ".";
  unsigned threads = 1;
  bool include_q = false;
};

struct OutputFile {
  std::string name;
  std::vector<std::string> columns;
};

inline std::vector<std::string> trajectory_columns(const ExperimentConfig& c, bool include_q) {
  std::vector<std::string> cols = {"t", "z"};
  if (include_q) {
    if (c.domain.d == 1)
      cols.push_back("q");
    else
      for (int i = 1; i <= c.domain.d; ++i) cols.push_back("q" + std::to_string(i));
  }
  for (const auto& o : c.observables) cols.push_back("obs_" + o);
  return cols;
}

inline const std::vector<std::string>& stats_columns() {
  static const std::vector<std::string> c = {"observable", "mean", "se", "batch_variance", "iat", "n_effective"};
  return c;
}

/// Files an experiment will write, with their columns.
inline std::vector<OutputFile> planned_outputs(const ExperimentConfig& c, bool include_q = false) {
  const std::string s = c.output;
  const std::vector<std::string> field = {"q", "z", "value"}, zfield = {"z", "value"}, kv = {"quantity", "value"};
  std::vector<OutputFile> out;
  if (c.kind == "fe") {
    out.push_back({s + "_profile.csv", {"z", "A", "A1", "A2", "Z"}});
  } else if (c.kind == "sample") {
    if (c.replicas == 1)
      out.push_back({s + "_trajectory.csv", trajectory_columns(c, include_q)});
    else
      for (int r = 0; r < c.replicas; ++r)
        out.push_back({s + "_trajectory_" + std::to_string(r) + ".csv", trajectory_columns(c, include_q)});
    out.push_back({s + "_stats.csv", stats_columns()});
    out.push_back({s + "_histogram_z.csv", {"z", "count"}});
  } else if (c.kind == "fpe") {
    out.push_back({s + "_density.csv", field});
    out.push_back({s + "_h_frak.csv", field});
    out.push_back({s + "_h_tilde.csv", field});
    out.push_back({s + "_h_bar.csv", zfield});
    out.push_back({s + "_G.csv", zfield});
    if (c.spectrum) out.push_back({s + "_spectrum.csv", {"re", "im"}});
    out.push_back({s + "_report.csv", kv});
  } else if (c.kind == "sweep") {
    out.push_back({s + "_sweep.csv", {"delta", "gap", "lambda_ref", "h_err", "var_delta", "var_ref"}});
  } else if (c.kind == "variance") {
    out.push_back({s + "_variance.csv", {"observable", "grid_mean", "mc_mean", "mc_se", "grid_var", "mc_var", "ref_var"}});
    out.push_back({s + "_stats.csv", stats_columns()});
  } else if (c.kind == "rate") {
    out.push_back({s + "_decay.csv", {"t", "distance"}});
    out.push_back({s + "_rate.csv", kv});
  } else if (c.kind == "gain") {
    out.push_back({s + "_gain.csv",
                   {"barrier", "tamd_time", "tamd_se", "plain_time", "plain_se", "ratio", "tamd_events", "plain_events"}});
  }
  return out;
}

/// Dry run: resolved parameters, sizes and output schema. No computation.
inline void describe(const ExperimentConfig& c, const RunOptions& opt, std::ostream& os) {
  os << "experiment kind = " << c.kind << "\n";
  std::string section;
  for (const auto& ks : detail::key_table()) {
    if (ks.section != section) {
      section = ks.section;
      os << "[" << section << "]\n";
    }
    const std::string name = ks.section + "." + ks.key;
    os << "  " << ks.key << " = " << ks.get(c);
    if (name == "params.seed" && c.seed_from_env)
      os << "  (from TAMD_LAB_SEED)";
    else if (!c.explicit_keys.count(name))
      os << "  (default)";
    os << "\n";
  }
  os << "plan:\n";
  const std::string& k = c.kind;
  if (k == "fe" || k == "fpe" || k == "sweep" || k == "variance" || k == "rate") {
    const long long n = static_cast<long long>(c.grid.n_q) * c.grid.n_z;
    os << "  grid n_q x n_z = " << c.grid.n_q << " x " << c.grid.n_z << " = " << n << " nodes";
    if (k != "fe") os << ", dense operators of " << (n * n * 8) / (1024 * 1024) << " MiB each";
    os << "\n";
  }
  if (k == "fpe" || k == "sweep" || k == "variance" || k == "rate")
    os << "  solver tolerances: stationary residual 1e-9 (or the eps |L*||h| round-off floor if larger), "
          "cross-construction 1e-8, zero cluster |lambda| < 1e-10 max(1, ||L||_inf), bordered-solve multiplier 1e-8\n";
  if (k == "sweep") os << "  deltas: " << detail::fmt_list(c.deltas()) << "\n";
  if (k == "sample" || k == "variance" || k == "gain") {
    os << "  replicas = " << c.replicas << ", threads = " << opt.threads << "\n";
  }
  if (k == "sample" || k == "variance") {
    const long long rec = c.params.n_steps / c.params.stride + 1;
    os << "  steps per replica = " << c.params.n_steps << ", records per replica = " << rec
       << ", dt/delta = " << c.params.dt / (c.dynamics == Dynamics::Plain ? 1.0 : c.params.delta) << "\n";
  }
  if (k == "gain")
    os << "  escape events per replica = " << c.n_events << " for each of " << c.barrier_list.size()
       << " barriers, both TAMD and plain dynamics\n";
  os << "outputs (in " << opt.output_dir.string() << "):\n";
  for (const auto& f : planned_outputs(c, opt.include_q)) os << "  " << f.name << ": " << detail::join(f.columns) << "\n";
  for (const auto& w : unused_key_warnings(c)) os << w << "\n";
}

namespace detail {

/// Runs f(i) for i in [0, n) on up to `threads` workers. Errors are collected
/// and rethrown as one, tagged by index, with the type of the first failure.
template <class F>
void parallel_for(std::size_t n, unsigned threads, const char* what, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
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
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      if (!code) code = e.exit_code();
      msg += std::string(what) + " " + std::to_string(i) + ": " + e.what() + "; ";
    } catch (const std::exception& e) {
      if (!code) code = 4;
      msg += std::string(what) + " " + std::to_string(i) + ": " + e.what() + "; ";
    }
  }
  if (code == 2) throw ConfigError(msg);
  if (code == 3) throw GuardError(msg);
  if (code) throw SolverError(msg);
}

class Outputs {
 public:
  explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) {}
  AtomicFile& open(const std::string& name) {
    files_.push_back(std::make_unique<AtomicFile>(dir_ / name));
    return *files_.back();
  }
  void commit() {
    for (auto& f : files_) f->commit();
  }
  std::vector<std::filesystem::path> paths() const {
    std::vector<std::filesystem::path> p;
    for (const auto& f : files_) p.push_back(f->path());
    return p;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::unique_ptr<AtomicFile>> files_;
};

inline void write_field(AtomicFile& f, const Generators& g, std::span<const double> v) {
  CsvWriter w(f.stream());
  w.header({"q", "z", "value"});
  for (int i = 0; i < g.n_q(); ++i)
    for (int j = 0; j < g.n_z(); ++j) w.row(g.q_node(i), g.z_node(j), v[static_cast<std::size_t>(i) * g.n_z() + j]);
}

inline void write_zfield(AtomicFile& f, const Generators& g, std::span<const double> v) {
  CsvWriter w(f.stream());
  w.header({"z", "value"});
  for (int j = 0; j < g.n_z(); ++j) w.row(g.z_node(j), v[j]);
}

inline void write_stats(AtomicFile& f, const TrajectoryStats& st) {
  CsvWriter w(f.stream());
  w.header(stats_columns());
  for (const auto& s : st.observables) w.row(s.name, s.mean, s.se, s.batch_variance, s.iat, s.n_effective);
}

inline void write_trajectory(std::ostream& os, const Trajectory& t, bool include_q,
                             const std::vector<std::string>& columns) {
  CsvWriter w(os);
  w.header(columns);
  std::vector<double> row;
  for (std::size_t k = 0; k < t.size(); ++k) {
    row.clear();
    row.push_back(t.times[k]);
    row.push_back(t.z[k]);
    if (include_q)
      for (int i = 0; i < t.d; ++i) row.push_back(t.q[k * t.d + i]);
    for (const auto& s : t.observable_series) row.push_back(s[k]);
    w.row(row);
  }
}

inline std::vector<State> initial_states(const ExperimentConfig& c) {
  State s;
  s.q.assign(c.domain.d, c.q0);
  s.z = c.z0;
  if (c.dynamics == Dynamics::Inertial) s.p = std::vector<double>(c.domain.d, 0.0);
  return std::vector<State>(static_cast<std::size_t>(c.replicas), s);
}

inline Generators with_delta(Generators g, double delta) {
  g.delta = delta;
  g.Ldelta.matrix = g.L0.matrix / delta + g.L1.matrix;
  return g;
}

}  // namespace detail

inline void run_fe(const ExperimentConfig& c, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto prof = free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z);
  CsvWriter w(out.open(c.output + "_profile.csv").stream());
  w.header({"z", "A", "A1", "A2", "Z"});
  for (int j = 0; j < prof.n_z(); ++j) w.row(prof.z_nodes[j], prof.A[j], prof.A1[j], prof.A2[j], prof.Zvals[j]);
  log << "free energy on " << prof.n_z() << " z nodes, shift " << prof.shift << "\n";
}

inline void run_sample(const ExperimentConfig& c, const RunOptions& opt, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto obs = parse_observables(c.observables);
  std::unique_ptr<FreeEnergyProfile> prof;
  if (c.dynamics == Dynamics::Limiting)
    prof = std::make_unique<FreeEnergyProfile>(
        free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z));
  const auto trajs = ensemble(detail::initial_states(c), c.dynamics, pot, c.params, obs, opt.threads, prof.get());
  const auto st = ergodic_stats(trajs, c.burn_in, c.n_batches, c.grid.n_q, c.grid.n_z, c.domain.Lq, c.domain.Lz);
  const auto files = planned_outputs(c, opt.include_q);
  for (std::size_t r = 0; r < trajs.size(); ++r)
    detail::write_trajectory(out.open(files[r].name).stream(), trajs[r], opt.include_q, files[r].columns);
  detail::write_stats(out.open(c.output + "_stats.csv"), st);
  CsvWriter h(out.open(c.output + "_histogram_z.csv").stream());
  h.header({"z", "count"});
  for (int j = 0; j < c.grid.n_z; ++j) h.row(c.domain.Lz * j / c.grid.n_z, st.histogram_z[j]);
  for (const auto& s : st.observables)
    log << s.name << ": mean " << s.mean << " +- " << s.se << ", batch variance " << s.batch_variance << "\n";
}

inline void run_fpe(const ExperimentConfig& c, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto prof = free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z);
  const auto g = build_generators(pot, prof, c.params, c.grid);
  const auto st = stationary_density(g.Ldelta);
  const auto ff = fluctuation_field(pot, prof);
  const auto cf = correction_fields(g, ff.g1);
  const double cres = correction_residual(g, cf, c.params.delta);
  detail::write_field(out.open(c.output + "_density.csv"), g, st.h_delta);
  detail::write_field(out.open(c.output + "_h_frak.csv"), g, cf.h_frak);
  detail::write_field(out.open(c.output + "_h_tilde.csv"), g, cf.h_tilde);
  detail::write_zfield(out.open(c.output + "_h_bar.csv"), g, cf.h_bar);
  detail::write_zfield(out.open(c.output + "_G.csv"), g, cf.G);
  std::vector<std::pair<std::string, double>> report = {
      {"delta", c.params.delta},
      {"residual_norm", st.residual_norm},
      {"normalization", st.normalization},
      {"construction_gap", cf.construction_gap},
      {"solvability", cf.solvability},
      {"correction_residual", cres},
      {"limiting_gap", limiting_gap(g.A_op)},
  };
  if (c.spectrum) {
    const auto rep = spectral_report(g.Ldelta, g.A_op, c.params.beta_bar);
    CsvWriter w(out.open(c.output + "_spectrum.csv").stream());
    w.header({"re", "im"});
    for (const auto& ev : rep.eigenvalues) w.row(ev.real(), ev.imag());
    report.insert(report.end(), {{"gap", rep.gap},
                                 {"gap_imag", rep.gap_imag},
                                 {"lambda_ref", rep.lambda_ref},
                                 {"R2_marginal", rep.R2_marginal},
                                 {"eigen_count", static_cast<double>(rep.eigen_count)},
                                 {"zero_multiplicity", static_cast<double>(rep.zero_multiplicity)}});
  }
  CsvWriter w(out.open(c.output + "_report.csv").stream());
  w.header({"quantity", "value"});
  for (const auto& [k, v] : report) {
    w.row(k, v);
    log << k << " = " << v << "\n";
  }
}

struct SweepRow {
  double delta = 0.0, gap = std::nan(""), lambda_ref = std::nan(""), h_err = 0.0, var_delta = 0.0, var_ref = 0.0;
  double phi_err = 0.0;  ///< || Phi_delta - Psi ||_w
};

/// delta sweep of the first-order theory for one observable. The correction
/// fields do not depend on delta, so they are computed once.
inline std::vector<SweepRow> delta_sweep(const Potential& pot, const TamdParams& params, const GridSpec& grid,
                                         const std::vector<double>& deltas, std::span<const double> phi_nodes,
                                         bool spectrum, std::ostream* log = nullptr) {
  const auto prof = free_energy_profile(pot, params.beta, params.beta_bar, grid.n_q, grid.n_z);
  TamdParams p = params;
  p.delta = deltas.front();
  const auto base = build_generators(pot, prof, p, grid);
  const auto ff = fluctuation_field(pot, prof);
  const auto cf = correction_fields(base, ff.g1);
  const double var_ref = reference_variance(base, phi_nodes);
  const auto ap = approx_poisson(base, phi_nodes);
  const auto Psi = base.embed(ap.Psi);
  std::vector<SweepRow> rows;
  for (double d : deltas) {
    const auto g = detail::with_delta(base, d);
    const auto st = stationary_density(g.Ldelta);
    SweepRow r;
    r.delta = d;
    std::vector<double> e(st.h_delta.size()), pe(e.size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = st.h_delta[k] - 1.0 - d * cf.h_frak[k];
    r.h_err = weighted_norm(g.weights, e);
    const auto ps = poisson_solve(g.Ldelta, st.h_delta, phi_nodes);
    r.var_delta = ps.sigma2;
    r.var_ref = var_ref;
    for (std::size_t k = 0; k < e.size(); ++k) pe[k] = ps.Phi[k] - Psi[k];
    r.phi_err = weighted_norm(g.weights, pe);
    if (spectrum) {
      const auto rep = spectral_report(g.Ldelta, g.A_op, params.beta_bar);
      r.gap = rep.gap;
      r.lambda_ref = rep.lambda_ref;
    } else {
      r.lambda_ref = limiting_gap(g.A_op);
    }
    if (log)
      *log << "delta " << d << ": h_err " << r.h_err << ", var " << r.var_delta << " (ref " << var_ref << ")"
           << (spectrum ? ", gap " + std::to_string(r.gap) : std::string()) << "\n";
    rows.push_back(r);
  }
  return rows;
}

inline void run_sweep(const ExperimentConfig& c, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto prof = free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z);
  TamdParams p = c.params;
  p.delta = c.delta_list.front();
  const auto g = build_generators(pot, prof, p, c.grid);
  const auto phi = nodal_values(g, pot, Observable::parse(c.observables.front()));
  const auto rows = delta_sweep(pot, c.params, c.grid, c.delta_list, phi, c.spectrum, &log);

  std::vector<double> ds, gaps, herr, vdiff;
  for (const auto& r : rows) {
    ds.push_back(r.delta);
    gaps.push_back(std::abs(r.gap - r.lambda_ref));
    herr.push_back(r.h_err);
    vdiff.push_back(std::abs(r.var_delta - r.var_ref));
  }
  auto fit = [&](const std::vector<double>& ys, bool enabled) {
    if (!enabled) return SlopeFit{std::nan(""), 0.0, std::nan("")};
    for (double y : ys)
      if (!(y > 0.0)) return SlopeFit{std::nan(""), 0.0, std::nan("")};
    return slope_fit(ds, ys);
  };
  const auto fg = fit(gaps, c.spectrum), fh = fit(herr, true), fv = fit(vdiff, true);
  CsvWriter w(out.open(c.output + "_sweep.csv").stream());
  w.header({"delta", "gap", "lambda_ref", "h_err", "var_delta", "var_ref"});
  for (const auto& r : rows) w.row(r.delta, r.gap, r.lambda_ref, r.h_err, r.var_delta, r.var_ref);
  const double nan = std::nan("");
  w.row(std::string("slope"), fg.slope, nan, fh.slope, fv.slope, nan);
  w.row(std::string("r2"), fg.r2, nan, fh.r2, fv.r2, nan);
  log << "h_err slope " << fh.slope << " (r2 " << fh.r2 << "), variance slope " << fv.slope << " (r2 " << fv.r2
      << ")\n";
}

inline void run_variance(const ExperimentConfig& c, const RunOptions& opt, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto obs = parse_observables(c.observables);
  const auto prof = free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z);
  const auto g = build_generators(pot, prof, c.params, c.grid);
  const bool limiting = c.dynamics == Dynamics::Limiting;
  std::vector<double> h(g.weights.size(), 1.0);
  std::unique_ptr<PoissonSolver> ps;
  if (!limiting) {
    h = stationary_density(g.Ldelta).h_delta;
    ps = std::make_unique<PoissonSolver>(g.Ldelta, h);
  }
  const auto trajs = ensemble(detail::initial_states(c), c.dynamics, pot, c.params, obs, opt.threads, &prof);
  const auto st = ergodic_stats(trajs, c.burn_in, c.n_batches, c.grid.n_q, c.grid.n_z, c.domain.Lq, c.domain.Lz);

  CsvWriter w(out.open(c.output + "_variance.csv").stream());
  w.header({"observable", "grid_mean", "mc_mean", "mc_se", "grid_var", "mc_var", "ref_var"});
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double mean = grid_expectation(g, pot, obs[i], h);
    double var = std::nan(""), ref = std::nan("");
    if (obs[i].periodic()) {
      const auto phi = nodal_values(g, pot, obs[i]);
      ref = reference_variance(g, phi);
      var = limiting ? ref : ps->solve(phi).sigma2;
    }
    const auto& s = st.observables[i];
    w.row(s.name, mean, s.mean, s.se, var, s.batch_variance, ref);
    log << s.name << ": grid mean " << mean << ", MC " << s.mean << " +- " << s.se << "; grid variance " << var
        << ", MC " << s.batch_variance << ", reference " << ref << "\n";
  }
  detail::write_stats(out.open(c.output + "_stats.csv"), st);
}

inline void run_rate(const ExperimentConfig& c, detail::Outputs& out, std::ostream& log) {
  const auto pot = c.potential();
  const auto prof = free_energy_profile(pot, c.params.beta, c.params.beta_bar, c.grid.n_q, c.grid.n_z);
  const auto g = build_generators(pot, prof, c.params, c.grid);
  const auto st = stationary_density(g.Ldelta);
  const auto rep = spectral_report(g.Ldelta, g.A_op, c.params.beta_bar);
  const auto phi = nodal_values(g, pot, Observable::parse(c.perturbation));
  const double m = weighted_mean(g.weights, phi);
  std::vector<double> f0(phi.size());
  for (std::size_t k = 0; k < f0.size(); ++k) f0[k] = st.h_delta[k] + c.amplitude * (phi[k] - m);
  const double mass = inner(g.weights, f0, std::vector<double>(f0.size(), 1.0));
  for (double& v : f0) v += 1.0 - mass;
  const auto decay = propagate(g.Ldelta, st.h_delta, f0, c.t_final, c.dt_pde);

  const double from = c.fit_from >= 0 ? c.fit_from : 0.2 * c.t_final;
  const double to = c.fit_to >= 0 ? c.fit_to : 0.8 * c.t_final;
  std::vector<double> ts, ys;
  for (std::size_t k = 0; k < decay.t.size(); ++k)
    if (decay.t[k] >= from - 1e-12 && decay.t[k] <= to + 1e-12) {
      ts.push_back(decay.t[k]);
      ys.push_back(decay.distance[k]);
    }
  const auto fit = decay_rate_fit(ts, ys);
  CsvWriter w(out.open(c.output + "_decay.csv").stream());
  w.header({"t", "distance"});
  for (std::size_t k = 0; k < decay.t.size(); ++k) w.row(decay.t[k], decay.distance[k]);
  CsvWriter r(out.open(c.output + "_rate.csv").stream());
  r.header({"quantity", "value"});
  const double rel = std::abs(fit.slope - rep.gap) / rep.gap;
  for (const auto& [k, v] : std::vector<std::pair<std::string, double>>{{"fitted_rate", fit.slope},
                                                                        {"fit_r2", fit.r2},
                                                                        {"gap", rep.gap},
                                                                        {"lambda_ref", rep.lambda_ref},
                                                                        {"relative_error", rel},
                                                                        {"max_mass_drift", decay.max_mass_drift}}) {
    r.row(k, v);
    log << k << " = " << v << "\n";
  }
}

struct GainRow {
  double barrier = 0.0;
  double tamd_time = 0.0, tamd_se = 0.0, plain_time = 0.0, plain_se = 0.0;
  long long tamd_events = 0, plain_events = 0;
  double ratio() const { return plain_time / tamd_time; }
};

/// Mean transition time between the wells of W(z) = (E/2) cos(4 pi z / Lz)
/// for the TAMD dynamics (params) and the plain dynamics, for each barrier E.
inline std::vector<GainRow> gain_benchmark(const ExperimentConfig& c, unsigned threads, std::ostream* log = nullptr) {
  std::vector<GainRow> rows;
  const double Lz = c.domain.Lz;
  const auto R = static_cast<std::size_t>(c.replicas);
  for (double E : c.barrier_list) {
    const auto pot = c.double_well(E);
    State s0;
    s0.q.assign(c.domain.d, c.q0);
    s0.z = 0.25 * Lz;
    std::vector<EscapeTimes> res(2 * R);
    detail::parallel_for(2 * R, threads, "escape job", [&](std::size_t i) {
      const bool plain = i >= R;
      res[i] = escape_times(s0, plain ? Dynamics::Plain : Dynamics::Overdamped, pot, c.params, 0.25 * Lz, 0.75 * Lz,
                            c.escape_tol, c.n_events, c.max_steps, i);
    });
    auto summarize = [&](std::size_t first, double& mean, double& se, long long& count) {
      std::vector<double> all;
      for (std::size_t i = first; i < first + R; ++i) all.insert(all.end(), res[i].times.begin(), res[i].times.end());
      if (all.empty())
        throw GuardError("gain: no transition completed within max_steps at barrier " + std::to_string(E));
      count = static_cast<long long>(all.size());
      double s = 0.0, s2 = 0.0;
      for (double t : all) s += t;
      mean = s / count;
      for (double t : all) s2 += (t - mean) * (t - mean);
      se = count > 1 ? std::sqrt(s2 / (count - 1) / count) : std::nan("");
    };
    GainRow r;
    r.barrier = E;
    summarize(0, r.tamd_time, r.tamd_se, r.tamd_events);
    summarize(R, r.plain_time, r.plain_se, r.plain_events);
    if (log)
      *log << "barrier " << E << ": TAMD " << r.tamd_time << " +- " << r.tamd_se << ", plain " << r.plain_time
           << " +- " << r.plain_se << ", ratio " << r.ratio() << "\n";
    rows.push_back(r);
  }
  return rows;
}

inline void run_gain(const ExperimentConfig& c, const RunOptions& opt, detail::Outputs& out, std::ostream& log) {
  const auto rows = gain_benchmark(c, opt.threads, &log);
  CsvWriter w(out.open(c.output + "_gain.csv").stream());
  w.header({"barrier", "tamd_time", "tamd_se", "plain_time", "plain_se", "ratio", "tamd_events", "plain_events"});
  for (const auto& r : rows)
    w.row(r.barrier, r.tamd_time, r.tamd_se, r.plain_time, r.plain_se, r.ratio(), r.tamd_events, r.plain_events);
}

/// Runs the experiment and returns the written files. Nothing is written if
/// any stage fails.
inline std::vector<std::filesystem::path> run(const ExperimentConfig& c, const RunOptions& opt, std::ostream& log) {
  validate(c);
  std::error_code ec;
  std::filesystem::create_directories(opt.output_dir, ec);
  if (ec || !std::filesystem::is_directory(opt.output_dir))
    throw ConfigError("output directory '" + opt.output_dir.string() + "' cannot be created");
  for (const auto& w : unused_key_warnings(c)) log << w << "\n";

  detail::Outputs out(opt.output_dir);
  const std::string& k = c.kind;
  if (k == "fe") run_fe(c, out, log);
  else if (k == "sample") run_sample(c, opt, out, log);
  else if (k == "fpe") run_fpe(c, out, log);
  else if (k == "sweep") run_sweep(c, out, log);
  else if (k == "variance") run_variance(c, opt, out, log);
  else if (k == "rate") run_rate(c, out, log);
  else if (k == "gain") run_gain(c, opt, out, log);
  out.commit();
  return out.paths();
}

}  // namespace tamd
