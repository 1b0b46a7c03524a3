#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "tamd/estimators.hpp"
#include "tamd/freenergy.hpp"

using namespace tamd;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

std::vector<double> ar1(double rho, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g;
  std::vector<double> x(n);
  double v = g(gen);
  for (auto& xi : x) {
    xi = v;
    v = rho * v + std::sqrt(1 - rho * rho) * g(gen);
  }
  return x;
}

}  // namespace

TEST_CASE("constant series") {
  std::vector<double> c(5000, 2.5);
  const auto st = series_stats(c, 0.1);
  CHECK(st.mean == 2.5);
  CHECK(st.batch_variance == 0.0);
  CHECK(st.se == 0.0);
  CHECK(st.iat == 0.5);
}

TEST_CASE("iid Gaussians") {
  const auto x = ar1(0.0, 100000, 1);
  // 1000 batches: the batch-variance estimate has relative sd sqrt(2/999)
  const auto st = series_stats(x, 1.0, 0.0, 1000);
  CHECK(st.batch_variance == Approx(1.0).epsilon(0.2));
  CHECK(st.iat >= 0.4);
  CHECK(st.iat <= 0.7);
  CHECK(std::abs(st.mean) < 3 * st.se);
  CHECK(st.marginal_variance == Approx(1.0).epsilon(0.02));
}

TEST_CASE("AR(1) asymptotic variance and autocorrelation time") {
  // sigma^2 = tau (1 + rho) / (1 - rho); IAT = (1 + rho) / (2 (1 - rho))
  const double rho = 0.8, tau = 0.5;
  const auto x = ar1(rho, 1000000, 2);
  const auto st = series_stats(x, tau, 0.0, 50);
  CHECK(st.batch_variance == Approx(tau * (1 + rho) / (1 - rho)).epsilon(0.12));
  CHECK(st.iat == Approx((1 + rho) / (2 * (1 - rho))).epsilon(0.12));
  CHECK(st.n_effective == Approx(1e6 / (2 * st.iat)).epsilon(1e-9));
}

TEST_CASE("replicated series pool their batches") {
  const auto a = ar1(0.5, 50000, 3), b = ar1(0.5, 50000, 4);
  std::vector<std::span<const double>> reps{a, b};
  const auto st = series_stats(reps, 1.0, 0.1, 20);
  CHECK(st.n_samples == 90000);
  CHECK(st.batch_variance == Approx(3.0).epsilon(0.25));
}

TEST_CASE("batch count guard") {
  std::vector<double> x(100, 1.0);
  CHECK_THROWS_AS(series_stats(x, 1.0, 0.0, 32), ConfigError);
  CHECK_THROWS_AS(series_stats(x, 1.0, 0.0, 5), ConfigError);
}

TEST_CASE("uniform z under flat TAMD averages cos_z to zero") {
  TamdParams p;
  p.delta = 0.5;
  p.dt = 1e-3;
  p.n_steps = 500000;
  p.stride = 10;
  Potential flat(Domain{}, Separable{});
  const auto t = simulate(State{{0.0}, std::nullopt, 0.0}, Dynamics::Overdamped, flat, p, parse_observables({"cos_z"}));
  const auto st = ergodic_stats(t);
  const auto& s = st.get("cos_z");
  CHECK(std::abs(s.mean) < 3 * s.se);
  long long total = 0;
  for (auto c : st.histogram_z) total += c;
  CHECK(total == st.n_samples);
}

TEST_CASE("mean force estimates") {
  TamdParams p;
  p.beta = 4.0;
  p.dt = 1e-3;
  p.stride = 10;
  Potential sep(Domain{}, Separable{TrigSeries{{{1, 1.0, 0.0}}}, TrigSeries{{{1, 1.0, 0.0}}}});
  const auto e = mean_force_estimate(sep, p, 0.3, 100000);
  CHECK(e.estimate == Approx(-2 * pi * std::sin(2 * pi * 0.3)).epsilon(1e-12));

  Potential zfree(Domain{}, Separable{TrigSeries{{{1, 1.0, 0.0}}}, TrigSeries{}});
  CHECK(mean_force_estimate(zfree, p, 0.3, 100000).estimate == 0.0);

  Potential tilt(Domain{}, TiltedCoupling{1.0, 0.5, 0.0});
  const auto prof = free_energy_profile(tilt, p.beta, 1.0, 64, 64);
  const double a1 = prof.mean_force_interpolant()(0.3);
  const auto m = mean_force_estimate(tilt, p, 0.3, 1000000);
  CHECK(std::abs(m.estimate - a1) < 3 * m.se);
}

TEST_CASE("marginal CDF against direct quadrature") {
  const int n = 32;
  std::vector<double> mass(n);
  for (int j = 0; j < n; ++j) mass[j] = std::exp(-std::cos(2 * pi * j / n)) / n;
  MarginalCdf F(mass, 1.0);
  const int m = 200000;
  double cum = 0.0, total = 0.0;
  std::vector<double> acc(m + 1, 0.0);
  for (int i = 0; i < m; ++i) {
    const double z = (i + 0.5) / m;
    cum += std::exp(-std::cos(2 * pi * z)) / m;
    acc[i + 1] = cum;
  }
  total = cum;
  for (double z : {0.1, 0.25, 0.5, 0.77, 0.9}) {
    const double ref = acc[static_cast<int>(z * m)] / total;
    CHECK(F(z) == Approx(ref).margin(1e-6));
    CHECK(F.inverse(F(z)) == Approx(z).margin(1e-6));
  }
  CHECK(F(0.0) == 0.0);
  CHECK(F(1.0) == Approx(1.0));
}

TEST_CASE("KS null calibration with inverse-CDF samples") {
  const int n = 64;
  std::vector<double> mass(n);
  double s = 0.0;
  for (int j = 0; j < n; ++j) s += mass[j] = std::exp(-2.0 * std::cos(2 * pi * j / n) + 0.5 * std::sin(4 * pi * j / n));
  for (double& v : mass) v /= s;
  MarginalCdf F(mass, 1.0);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u;
  std::vector<double> zs(20000);
  for (double& z : zs) z = F.inverse(u(gen));
  CHECK(ks_distance(zs, F) < ks_critical(0.05, zs.size()));
  CHECK(ks_critical(0.05, 1.0) == Approx(1.3581).margin(1e-4));

  // a shifted sample is caught
  for (double& z : zs) z = wrap_coordinate(z + 0.05, 1.0);
  CHECK(ks_distance(zs, F) > ks_critical(0.01, zs.size()));
}

TEST_CASE("slope fits") {
  std::vector<double> xs{0.2, 0.1, 0.05, 0.025}, sq, lin;
  for (double x : xs) {
    sq.push_back(x * x);
    lin.push_back(3.7 * x);
  }
  const auto f2 = slope_fit(xs, sq);
  CHECK(f2.slope == Approx(2.0).epsilon(1e-12));
  CHECK(f2.r2 == Approx(1.0).epsilon(1e-12));
  CHECK(slope_fit(xs, lin).slope == Approx(1.0).epsilon(1e-12));

  std::mt19937_64 gen(12);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<double> dx, dy;
  for (int i = 0; i <= 10; ++i) {
    const double x = std::pow(10.0, -1.0 + i / 10.0);
    dx.push_back(x);
    dy.push_back(std::pow(x, 1.5) * (1.0 + g(gen)));
  }
  const auto f = slope_fit(dx, dy);
  CHECK(f.slope >= 1.3);
  CHECK(f.slope <= 1.7);

  std::vector<double> ts, ys;
  for (int i = 0; i < 20; ++i) {
    ts.push_back(0.01 * i);
    ys.push_back(2.0 * std::exp(-39.0 * ts.back()));
  }
  CHECK(decay_rate_fit(ts, ys).slope == Approx(39.0).epsilon(1e-10));
  CHECK_THROWS_AS(slope_fit(std::vector<double>{1, 2}, std::vector<double>{1, 2}), ConfigError);
}
