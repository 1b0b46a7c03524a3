// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

#include "tamd/tamd.hpp"

using namespace tamd;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
  bool pass;
  std::string detail;
};

Potential separable_cos() {
  return Potential(Domain{}, Separable{TrigSeries{{{1, 1.0, 0.0}}}, TrigSeries{{{1, 1.0, 0.0}}}});
}

Generators generators(const Potential& pot, const TamdParams& p, int n_q, int n_z) {
  return build_generators(pot, free_energy_profile(pot, p.beta, p.beta_bar, n_q, n_z), p, GridSpec{n_q, n_z});
}

double max_dev(std::span<const double> v, double c) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x - c));
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

unsigned workers() { return std::max(1u, std::min(8u, std::thread::hardware_concurrency())); }

Outcome separable_exactness() {
  const auto pot = separable_cos();
  double worst_h = 0.0, worst_hf = 0.0;
  for (auto [beta, beta_bar, delta] : {std::tuple{1.0, 1.0, 1.0}, {4.0, 1.0, 0.1}, {2.0, 0.5, 0.01}}) {
    TamdParams p;
    p.beta = beta;
    p.beta_bar = beta_bar;
    p.delta = delta;
    const auto prof = free_energy_profile(pot, beta, beta_bar, 64, 64);
    const auto g = build_generators(pot, prof, p, GridSpec{64, 64});
    worst_h = std::max(worst_h, max_dev(stationary_density(g.Ldelta).h_delta, 1.0));
    worst_hf = std::max(worst_hf, max_dev(correction_fields(g, fluctuation_field(pot, prof).g1).h_frak, 0.0));
  }
  return {worst_h <= 1e-9 && worst_hf <= 1e-9, "max|h-1| = " + fmt(worst_h) + ", max|h_frak| = " + fmt(worst_hf)};
}

Outcome reversible_reduction() {
  Potential pot(Domain{}, TiltedCoupling{1.0, 0.5, 0.0});
  double worst = 0.0;
  for (double delta : {1.0, 0.1}) {
    TamdParams p;
    p.beta = p.beta_bar = 2.0;
    p.delta = delta;
    worst = std::max(worst, max_dev(stationary_density(generators(pot, p, 64, 64).Ldelta).h_delta, 1.0));
  }
  return {worst <= 1e-9, "max|h-1| = " + fmt(worst)};
}

Outcome poincare_oracle() {
  Potential pot(Domain{}, Separable{TrigSeries{{{1, 1.0, 0.0}}}, TrigSeries{}});
  TamdParams p;
  const auto g = generators(pot, p, 8, 64);
  const double lambda = limiting_gap(g.A_op);
  const double err = std::abs(lambda - 4 * pi * pi);
  std::ostringstream os;
  os.precision(12);
  os << "lambda = " << lambda << ", |lambda - 4 pi^2| = " << err;
  return {err <= 1e-6, os.str()};
}

Outcome gap_shadow() {
  Potential pot(Domain{}, TiltedCoupling{1.0, 0.5, 0.0});
  TamdParams p;
  p.beta = 4.0;
  p.beta_bar = 1.0;
  p.delta = 1e-3;
  const auto g = generators(pot, p, 48, 48);
  const auto st = stationary_density(g.Ldelta);
  const auto rep = spectral_report(g.Ldelta, g.A_op, p.beta_bar);
  const auto phi = nodal_values(g, pot, Observable::parse("sin_z"));
  const double m = weighted_mean(g.weights, phi);
  std::vector<double> f0(phi.size());
  for (std::size_t k = 0; k < f0.size(); ++k) f0[k] = st.h_delta[k] + 0.5 * (phi[k] - m);
  const double mass = inner(g.weights, f0, std::vector<double>(f0.size(), 1.0));
  for (double& v : f0) v += 1.0 - mass;
  const auto dec = propagate(g.Ldelta, st.h_delta, f0, 0.5, 1e-3);
  std::vector<double> ts, ys;
  for (std::size_t k = 0; k < dec.t.size(); ++k)
    if (dec.t[k] >= 0.1 - 1e-12 && dec.t[k] <= 0.4 + 1e-12) {
      ts.push_back(dec.t[k]);
      ys.push_back(dec.distance[k]);
    }
  const double rate = decay_rate_fit(ts, ys).slope;
  const double gap_err = std::abs(rep.gap - rep.lambda_ref) / rep.lambda_ref;
  const double rate_err = std::abs(rate - rep.gap) / rep.gap;
  return {gap_err <= 0.10 && rate_err <= 0.05 && rep.zero_multiplicity == 1,
          "gap = " + fmt(rep.gap) + ", lambda = " + fmt(rep.lambda_ref) + " (" + fmt(100 * gap_err) +
              "%), fitted rate = " + fmt(rate) + " (" + fmt(100 * rate_err) + "%), zero multiplicity " +
              std::to_string(rep.zero_multiplicity)};
}

// criteria 5-7 share one delta sweep
struct Sweep {
  std::vector<SweepRow> rows;
  double residual = 0.0;
};

const Sweep& shared_sweep() {
  static const Sweep s = [] {
    Potential pot(Domain{}, TiltedCoupling{1.0, 0.25, 0.0});
    TamdParams p;
    p.beta = 1.0;
    p.beta_bar = 0.5;
    p.delta = 0.1;
    const GridSpec grid{64, 64};
    const auto prof = free_energy_profile(pot, p.beta, p.beta_bar, 64, 64);
    const auto g = build_generators(pot, prof, p, grid);
    const auto cf = correction_fields(g, fluctuation_field(pot, prof).g1);
    const auto phi = nodal_values(g, pot, Observable::parse("mixed(0.5, 1)"));
    Sweep out;
    out.residual = correction_residual(g, cf, 0.1);
    out.rows = delta_sweep(pot, p, grid, {0.2, 0.1, 0.05, 0.025}, phi, false);
    return out;
  }();
  return s;
}

SlopeFit sweep_fit(auto get) {
  std::vector<double> ds, ys;
  for (const auto& r : shared_sweep().rows) {
    ds.push_back(r.delta);
    ys.push_back(get(r));
  }
  return slope_fit(ds, ys);
}

Outcome invariant_measure_order() {
  const auto f = sweep_fit([](const SweepRow& r) { return r.h_err; });
  const double res = shared_sweep().residual;
  return {f.slope >= 1.7 && f.slope <= 2.3 && f.r2 >= 0.98 && res <= 1e-8,
          "slope = " + fmt(f.slope) + ", r2 = " + fmt(f.r2) + ", residual at delta = 0.1: " + fmt(res)};
}

Outcome variance_order() {
  const auto f = sweep_fit([](const SweepRow& r) { return std::abs(r.var_delta - r.var_ref); });
  return {f.slope >= 0.9 && f.r2 >= 0.95,
          "slope = " + fmt(f.slope) + ", r2 = " + fmt(f.r2) + ", sigma2_ref = " + fmt(shared_sweep().rows[0].var_ref)};
}

Outcome poisson_order() {
  const auto f = sweep_fit([](const SweepRow& r) { return r.phi_err; });
  return {f.slope >= 0.9, "slope = " + fmt(f.slope) + ", r2 = " + fmt(f.r2)};
}

Outcome mc_grid_crosscheck() {
  Potential pot(Domain{}, TiltedCoupling{1.0, 0.25, 0.0});
  TamdParams p;
  p.beta = 1.0;
  p.beta_bar = 0.5;
  p.delta = 0.05;
  // dt/delta = 1e-4: at 5e-3 the Euler-Maruyama bias in cos_q is ~50 SE
  p.dt = 5e-6;
  p.n_steps = 100000000;
  p.stride = 100;
  const int n = 48, nb = 1000;
  const auto g = generators(pot, p, n, n);
  const auto st = stationary_density(g.Ldelta);
  PoissonSolver ps(g.Ldelta, st.h_delta);
  const auto obs = parse_observables(registered_observable_names());
  const auto tr = simulate(State{{0.5}, std::nullopt, 0.0}, Dynamics::Overdamped, pot, p, obs);
  const auto stats = ergodic_stats(tr, 0.1, nb, n, n);
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& s = stats.observables[i];
    const double e = grid_expectation(g, pot, obs[i], st.h_delta);
    const double z = (s.mean - e) / s.se;
    ok = ok && std::abs(z) <= 3.0;
    detail += s.name + ": " + fmt(z) + " SE";
    if (obs[i].periodic()) {
      const double ratio = s.batch_variance / ps.solve(nodal_values(g, pot, obs[i])).sigma2;
      ok = ok && std::abs(ratio - 1.0) <= 0.25;
      detail += ", var ratio " + fmt(ratio);
    }
    detail += "; ";
  }
  GridDensity target{n, n, 1.0, 1.0, {}};
  for (std::size_t k = 0; k < g.weights.size(); ++k) target.mass.push_back(g.weights[k] * st.h_delta[k]);
  const auto dc = density_check({tr}, target, 0.1, nb);
  ok = ok && dc.passes(0.01);
  detail += "KS " + fmt(dc.ks_distance) + " < " + fmt(dc.ks_critical_01) + " (n_eff " + fmt(dc.n_effective) + ")";
  return {ok, detail};
}

Outcome thermodynamic_integration() {
  Potential pot(Domain{}, TiltedCoupling{1.0, 0.5, 0.0});
  TamdParams p;
  p.beta = 4.0;
  p.dt = 1e-3;
  p.stride = 10;
  p.seed = 17;
  const auto prof = free_energy_profile(pot, p.beta, 1.0, 64, 64);
  const auto a1 = prof.mean_force_interpolant();
  bool ok = true;
  std::string detail;
  std::uint64_t stream = 0;
  for (double z : {0.1, 0.3, 0.7}) {
    const auto e = mean_force_estimate(pot, p, z, 1000000, stream++);
    const double dev = (e.estimate - a1(z)) / e.se;
    ok = ok && std::abs(dev) <= 3.0;
    detail += "z=" + fmt(z) + ": " + fmt(e.estimate) + " vs " + fmt(a1(z)) + " (" + fmt(dev) + " SE); ";
  }
  return {ok, detail};
}

Outcome weak_order() {
  Potential pot(Domain{}, TiltedCoupling{1.0, 0.5, 0.0});
  TamdParams p;
  p.beta = 4.0;
  p.beta_bar = 1.0;
  p.delta = 1.0;
  const auto g = generators(pot, p, 48, 48);
  const auto obs = parse_observables({"cos_z"});
  const double exact = grid_expectation(g, pot, obs[0], stationary_density(g.Ldelta).h_delta);
  const double T = 2e5;
  std::vector<double> dts{4e-3, 2e-3, 1e-3}, bias(3), se(3);
  detail::parallel_for(3, workers(), "dt", [&](std::size_t i) {
    TamdParams q = p;
    q.dt = dts[i];
    q.n_steps = static_cast<long long>(T / q.dt);
    q.stride = std::max(1LL, static_cast<long long>(0.01 / q.dt));
    q.seed = 23;
    const auto tr = simulate(State{{0.5}, std::nullopt, 0.0}, Dynamics::Overdamped, pot, q, obs);
    const auto s = ergodic_stats(tr).observables[0];
    bias[i] = std::abs(s.mean - exact);
    se[i] = s.se;
  });
  const auto f = slope_fit(dts, bias);
  std::string detail = "order = " + fmt(f.slope) + "; bias";
  for (int i = 0; i < 3; ++i) detail += " " + fmt(bias[i]) + " (se " + fmt(se[i]) + ")";
  return {f.slope >= 0.9, detail};
}

Outcome computational_gain() {
  ExperimentConfig c;
  c.kind = "gain";
  c.potential_kind = "separable";
  c.v_cos = {1.0};
  c.params.beta = 3.0;
  c.params.beta_bar = 1.0;
  c.params.delta = 0.1;
  c.params.dt = 1e-3;
  c.params.seed = 29;
  c.replicas = 4;
  c.n_events = 8;
  c.barrier_list = {1.0, 2.0, 3.0};
  validate(c);
  const auto rows = gain_benchmark(c, workers());
  bool ok = true;
  std::string detail = "ratio plain/TAMD:";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail += " E=" + fmt(rows[i].barrier) + " " + fmt(rows[i].ratio());
    if (i > 0) ok = ok && rows[i].ratio() > rows[i - 1].ratio();
  }
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double budget;  // seconds
  };
  const std::vector<Criterion> criteria = {
      {"separable exactness of h_delta and h_frak (64x64)", separable_exactness, 10.0},
      {"reversible reduction beta_bar = beta", reversible_reduction, 10.0},
      {"flat free energy has gap 4 pi^2", poincare_oracle, 1.0},
      {"gap near lambda at delta = 1e-3 and propagate rate matches gap", gap_shadow, 300.0},
      {"first-order invariant-measure correction", invariant_measure_order, 300.0},
      {"asymptotic variance converges at order delta", variance_order, 300.0},
      {"Poisson solution approaches its limit at order delta", poisson_order, 120.0},
      {"Monte Carlo against the grid at delta = 0.05", mc_grid_crosscheck, 600.0},
      {"thermodynamic integration of the mean force", thermodynamic_integration, 300.0},
      {"weak order of the stationary bias", weak_order, 600.0},
      {"escape-time gain grows with the barrier", computational_gain, 900.0},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt(secs) + " s";
    if (criteria[i].budget > 0.0) {
      timing += secs < criteria[i].budget ? " within " : " OVER ";
      timing += fmt(criteria[i].budget) + " s budget";
      if (secs >= criteria[i].budget) o.pass = false;
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].name << " -- "
              << o.detail << " [" << timing << "]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
