#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

#include "tamd/estimators.hpp"
#include "tamd/freenergy.hpp"
#include "tamd/sde.hpp"

using namespace tamd;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

// Replays a fixed list of draws.
struct FixedNoise {
  std::vector<double> draws;
  std::size_t next = 0;
  double gaussian() { return next < draws.size() ? draws[next++] : 0.0; }
};

Potential flat() { return Potential(Domain{}, Separable{}); }

Potential separable(double v, double w) {
  return Potential(Domain{}, Separable{TrigSeries{{{1, v, 0.0}}}, TrigSeries{{{1, w, 0.0}}}});
}

// z-marginal on n nodes proportional to exp(-beta_bar W(z))
GridDensity boltzmann_z(double w_amp, double beta_bar, int n = 64) {
  GridDensity g{1, n, 1.0, 1.0, {}};
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    g.mass.push_back(std::exp(-beta_bar * w_amp * std::cos(2 * pi * j / n)));
    s += g.mass.back();
  }
  for (double& m : g.mass) m /= s;
  return g;
}

}  // namespace

TEST_CASE("overdamped step arithmetic") {
  TamdParams p;
  p.beta = 1.0;
  p.delta = 0.1;
  p.dt = 1e-3;
  FixedNoise noise{{1.0, 0.0}};
  const auto s = step_overdamped(State{{0.2}, std::nullopt, 0.6}, flat(), p, noise);
  CHECK(s.q[0] - 0.2 == Approx(std::sqrt(0.02)).epsilon(1e-12));
  CHECK(s.z == 0.6);

  FixedNoise zero;
  const double q0 = 0.1;
  const auto d = step_overdamped(State{{q0}, std::nullopt, 0.3}, separable(1.0, 1.0), p, zero);
  CHECK(d.q[0] - q0 == Approx(p.dt / p.delta * 2 * pi * std::sin(2 * pi * q0)).epsilon(1e-12));
}

TEST_CASE("z noise uses beta_bar and q noise uses beta delta") {
  TamdParams p;
  p.beta = 2.0;
  p.beta_bar = 0.5;
  p.delta = 0.25;
  p.dt = 1e-3;
  FixedNoise noise{{0.0, 1.0}};
  const auto s = step_overdamped(State{{0.2}, std::nullopt, 0.5}, flat(), p, noise);
  CHECK(s.q[0] == Approx(0.2));
  CHECK(s.z - 0.5 == Approx(std::sqrt(2 * p.dt / p.beta_bar)));
}

TEST_CASE("inertial free flight with zero noise") {
  TamdParams p;
  p.beta = 1.0;
  p.delta = 0.2;
  p.gamma = 3.0;
  p.mass = 2.0;
  p.dt = 1e-2;
  FixedNoise zero;
  const double p0 = 0.7;
  const auto s = step_inertial(State{{0.1}, std::vector<double>{p0}, 0.4}, flat(), p, zero);
  const double decay = std::exp(-p.gamma * p.dt / (p.delta * p.mass));
  const double h = 0.5 * p.dt / (p.delta * p.mass);
  CHECK((*s.p)[0] == Approx(decay * p0).epsilon(1e-14));
  CHECK(s.q[0] == Approx(0.1 + h * p0 * (1 + decay)).epsilon(1e-14));
  CHECK(s.z == Approx(0.4));

  CHECK_THROWS_AS(step_inertial(State{{0.1}, std::nullopt, 0.4}, flat(), p, zero), ConfigError);
  CHECK_THROWS_AS(step_overdamped(State{{0.1}, std::vector<double>{0.0}, 0.4}, flat(), p, zero), ConfigError);
}

TEST_CASE("stability guard rejects stiff steps") {
  TamdParams p;
  p.delta = 0.01;
  p.dt = 1e-3;
  FixedNoise zero;
  CHECK_THROWS_AS(step_overdamped(State{{0.1}, std::nullopt, 0.0}, separable(1.0, 1.0), p, zero), GuardError);
  CHECK_THROWS_AS(simulate(State{{0.1}, std::nullopt, 0.0}, Dynamics::Overdamped, separable(1.0, 1.0), p, {}),
                  GuardError);
}

TEST_CASE("limiting step") {
  TamdParams p;
  p.beta_bar = 0.5;
  p.dt = 1e-3;
  TrigInterpolant zero_force(std::vector<double>(16, 0.0), 1.0);
  FixedNoise one{{1.0}};
  CHECK(step_limiting(0.3, zero_force, p, one) - 0.3 == Approx(std::sqrt(2 * p.dt / p.beta_bar)));

  std::vector<double> a1(32);
  for (int j = 0; j < 32; ++j) a1[j] = -2 * pi * std::sin(2 * pi * j / 32.0);
  TrigInterpolant force(a1, 1.0);
  FixedNoise zero;
  CHECK(step_limiting(0.0, force, p, zero) == Approx(0.0).margin(1e-14));
  CHECK(step_limiting(0.5, force, p, zero) == Approx(0.5).margin(1e-14));
  CHECK(step_limiting(0.45, force, p, zero) > 0.45);  // towards the minimum of A at 0.5

  RngStream rng(4, 0);
  double s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double dz = step_limiting(0.5, zero_force, p, rng) - 0.5;
    s2 += dz * dz;
  }
  // variance of a chi-square mean: relative sd sqrt(2/n) ~ 0.3%
  CHECK(s2 / n == Approx(2 * p.dt / p.beta_bar).epsilon(0.015));
}

TEST_CASE("trajectory recording and determinism") {
  TamdParams p;
  p.delta = 0.5;
  p.dt = 1e-3;
  p.n_steps = 0;
  const auto obs = parse_observables({"cos_z", "cos_q"});
  const auto pot = separable(1.0, 1.0);
  auto t0 = simulate(State{{0.2}, std::nullopt, 0.1}, Dynamics::Overdamped, pot, p, obs);
  REQUIRE(t0.size() == 1);
  CHECK(t0.z[0] == 0.1);
  CHECK(t0.series("cos_z")[0] == Approx(std::cos(2 * pi * 0.1)));

  p.n_steps = 1000;
  p.stride = 10;
  const auto a = simulate(State{{0.2}, std::nullopt, 0.1}, Dynamics::Overdamped, pot, p, obs, 3);
  const auto b = simulate(State{{0.2}, std::nullopt, 0.1}, Dynamics::Overdamped, pot, p, obs, 3);
  REQUIRE(a.size() == 101);
  CHECK(a.times[1] == Approx(10 * p.dt));
  CHECK(a.observable_series == b.observable_series);
  CHECK(a.z == b.z);
  const auto c = simulate(State{{0.2}, std::nullopt, 0.1}, Dynamics::Overdamped, pot, p, obs, 4);
  CHECK(a.z != c.z);
}

TEST_CASE("independent streams are uncorrelated") {
  TamdParams p;
  p.dt = 1e-2;
  p.n_steps = 1000000;
  p.stride = 10;
  const auto obs = parse_observables({"cos_z"});
  const auto a = simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Overdamped, flat(), p, obs, 0);
  const auto b = simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Overdamped, flat(), p, obs, 1);
  const auto& x = a.series("cos_z");
  const auto& y = b.series("cos_z");
  REQUIRE(x.size() > 100000);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.01);
}

TEST_CASE("overdamped z-marginal of a separable system") {
  TamdParams p;
  p.beta = 1.0;
  p.beta_bar = 0.5;
  p.delta = 0.5;
  p.dt = 5e-4;  // at 2e-3 the Euler-Maruyama bias is visible to KS
  p.n_steps = 4000000;
  p.stride = 4;
  const auto t = simulate(State{{0.3}, std::nullopt, 0.0}, Dynamics::Overdamped, separable(1.0, 1.0), p, {});
  const auto chk = density_check({t}, boltzmann_z(1.0, p.beta_bar));
  CHECK(chk.n_samples >= 900000);
  CHECK(chk.passes(0.01));
}

TEST_CASE("inertial dynamics: momentum law and z-marginal") {
  TamdParams p;
  p.beta = 2.0;
  p.beta_bar = 1.0;
  p.delta = 0.5;
  p.gamma = 1.0;
  p.mass = 3.0;
  p.dt = 2e-3;
  p.n_steps = 1000000;
  const auto t = simulate(State{{0.3}, std::vector<double>{0.0}, 0.0}, Dynamics::Inertial, separable(1.0, 1.0), p, {});
  std::vector<double> p2(t.p.size());
  for (std::size_t k = 0; k < p2.size(); ++k) p2[k] = t.p[k] * t.p[k];
  const auto st = series_stats(p2, t.sample_interval(), 0.1, 50);
  CHECK(std::abs(st.mean - p.mass / p.beta) < 3 * st.se);
  CHECK(density_check({t}, boltzmann_z(1.0, p.beta_bar)).passes(0.01));
}

TEST_CASE("limiting dynamics samples exp(-beta_bar A)") {
  const auto pot = separable(1.0, 1.0);
  const auto prof = free_energy_profile(pot, 1.0, 1.0, 32, 64);
  TamdParams p;
  p.beta_bar = 1.0;
  p.dt = 1e-3;
  p.n_steps = 1000000;
  const auto t = simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Limiting, pot, p, {}, 0, &prof);
  CHECK(density_check({t}, boltzmann_z(1.0, 1.0)).passes(0.01));
  CHECK_THROWS_AS(simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Limiting, pot, p, parse_observables({"cos_q"}),
                           0, &prof),
                  ConfigError);
  CHECK_THROWS_AS(simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Limiting, pot, p, {}), ConfigError);
}

TEST_CASE("ensemble matches per-replica simulate") {
  TamdParams p;
  p.delta = 0.5;
  p.dt = 1e-3;
  p.n_steps = 5000;
  p.stride = 5;
  const auto pot = separable(1.0, 1.0);
  const auto obs = parse_observables({"cos_z"});
  std::vector<State> init{{{0.1}, std::nullopt, 0.2}, {{0.7}, std::nullopt, 0.9}, {{0.4}, std::nullopt, 0.5}};
  const auto serial = ensemble(init, Dynamics::Overdamped, pot, p, obs, 1);
  const auto threaded = ensemble(init, Dynamics::Overdamped, pot, p, obs, 3);
  for (std::size_t k = 0; k < init.size(); ++k) {
    const auto ref = simulate(init[k], Dynamics::Overdamped, pot, p, obs, k);
    CHECK(serial[k].z == ref.z);
    CHECK(threaded[k].z == ref.z);
  }
  const auto one = ensemble({init[0]}, Dynamics::Overdamped, pot, p, obs);
  CHECK(one[0].z == serial[0].z);

  // a bad replica is reported by index and keeps its error type
  TamdParams stiff = p;
  stiff.delta = 0.001;
  try {
    ensemble(init, Dynamics::Overdamped, pot, stiff, obs, 2);
    FAIL("expected a guard error");
  } catch (const GuardError& e) {
    CHECK(std::string(e.what()).find("replica 0") != std::string::npos);
  }
}

TEST_CASE("pooled replicas sample the separable z-marginal") {
  TamdParams p;
  p.beta = 1.0;
  p.beta_bar = 1.0;
  p.delta = 0.5;
  p.dt = 5e-4;
  p.n_steps = 160000;
  p.stride = 4;
  std::vector<State> init;
  for (int r = 0; r < 64; ++r) init.push_back(State{{0.0}, std::nullopt, r / 64.0});
  const auto trajs = ensemble(init, Dynamics::Overdamped, separable(1.0, 1.0), p, {}, 4);
  CHECK(density_check(trajs, boltzmann_z(1.0, 1.0)).passes(0.01));
}

TEST_CASE("escape times") {
  Potential dw(Domain{}, Separable{TrigSeries{{{1, 1.0, 0.0}}}, TrigSeries{{{2, 0.5, 0.0}}}});
  TamdParams p;
  p.beta = 3.0;
  p.beta_bar = 1.0;
  p.delta = 0.1;
  p.dt = 1e-3;
  const auto e = escape_times(State{{0.5}, std::nullopt, 0.25}, Dynamics::Overdamped, dw, p, 0.25, 0.75, 0.05, 10,
                              100000000);
  CHECK_FALSE(e.censored);
  REQUIRE(e.times.size() == 10);
  for (double t : e.times) CHECK(t > 0.0);
  const auto cut = escape_times(State{{0.5}, std::nullopt, 0.25}, Dynamics::Plain, dw, p, 0.25, 0.75, 0.05, 10, 10);
  CHECK(cut.censored);
  CHECK(cut.times.empty());
}
