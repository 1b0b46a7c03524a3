#pragma once

// Monte-Carlo statistics over trajectories: batch-means ergodic averages,
// histograms, density checks against grid targets, and log-log fits.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/model.hpp"
#include "tamd/rng.hpp"
#include "tamd/sde.hpp"
#include "tamd/spectral.hpp"

namespace tamd {

struct SeriesStats {
  std::string name;
  double mean = 0.0;
  double se = 0.0;
  double batch_variance = 0.0;  ///< estimate of lim T Var(time average)
  double iat = 0.5;             ///< in units of the sampling interval
  double n_effective = 0.0;
  double marginal_variance = 0.0;
  std::size_t n_samples = 0;
};

/// Batch-means statistics of one or more replicas of the same observable.
/// Each replica is cut into n_batches blocks after discarding its burn-in
/// fraction; all block means are pooled.
inline SeriesStats series_stats(const std::vector<std::span<const double>>& replicas, double sample_interval,
                                double burn_in = 0.1, int n_batches = 32) {
  if (replicas.empty()) throw ConfigError("series_stats: no samples");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw ConfigError("series_stats: burn_in must lie in [0, 1)");
  if (!(sample_interval > 0.0)) throw ConfigError("series_stats: sample interval must be positive");

  std::vector<double> batch_means;
  std::size_t block = 0, used = 0;
  double sum = 0.0, sum2 = 0.0;
  for (const auto& x : replicas) {
    const std::size_t start = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(x.size())));
    const std::size_t n = x.size() - start;
    if (n_batches < 10 || static_cast<std::size_t>(n_batches) * 10 > n)
      throw ConfigError("series_stats: n_batches = " + std::to_string(n_batches) + " needs 10 <= n_batches <= " +
                        std::to_string(n / 10) + " for " + std::to_string(n) + " retained samples");
    const std::size_t b = n / static_cast<std::size_t>(n_batches);
    if (block == 0) block = b;
    if (b != block) throw ConfigError("series_stats: replicas must have equal length");
    const std::size_t first = x.size() - b * n_batches;
    for (int k = 0; k < n_batches; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const double v = x[first + k * b + i];
        s += v;
        sum2 += v * v;
      }
      sum += s;
      batch_means.push_back(s / static_cast<double>(b));
    }
    used += b * n_batches;
  }

  SeriesStats st;
  st.n_samples = used;
  st.mean = sum / static_cast<double>(used);
  const double m = static_cast<double>(batch_means.size());
  double var_bm = 0.0;
  for (double bm : batch_means) var_bm += (bm - st.mean) * (bm - st.mean);
  var_bm /= (m - 1.0);
  st.marginal_variance = std::max(0.0, sum2 / static_cast<double>(used) - st.mean * st.mean);
  st.batch_variance = static_cast<double>(block) * sample_interval * var_bm;
  st.se = std::sqrt(var_bm / m);
  st.iat = 0.5;
  // relative floor guards constant series against round-off in the variance
  if (st.marginal_variance > 1e-14 * std::max(1.0, st.mean * st.mean))
    st.iat = std::max(0.5, st.batch_variance / (2.0 * sample_interval * st.marginal_variance));
  else
    st.batch_variance = 0.0, st.se = 0.0;
  st.n_effective = static_cast<double>(used) / (2.0 * st.iat);
  return st;
}

inline SeriesStats series_stats(std::span<const double> x, double sample_interval, double burn_in = 0.1,
                                int n_batches = 32) {
  return series_stats(std::vector<std::span<const double>>{x}, sample_interval, burn_in, n_batches);
}

struct TrajectoryStats {
  std::vector<SeriesStats> observables;
  int n_q = 0;
  int n_z = 0;
  std::vector<long long> histogram_z;   ///< n_z bins centred on the z nodes
  std::vector<long long> histogram_qz;  ///< n_q * n_z bins, q-major (d = 1 only)
  std::size_t n_samples = 0;

  const SeriesStats& get(const std::string& name) const {
    for (const auto& s : observables)
      if (s.name == name) return s;
    throw ConfigError("no statistics for observable '" + name + "'");
  }
};

namespace detail {
inline int node_bin(double x, double L, int n) {
  int k = static_cast<int>(std::floor(x / L * n + 0.5));
  return ((k % n) + n) % n;
}

inline std::size_t burn_start(std::size_t n, double burn_in) {
  return static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(n)));
}
}  // namespace detail

/// Pooled ergodic statistics over replicas recorded with the same settings.
inline TrajectoryStats ergodic_stats(const std::vector<Trajectory>& trajs, double burn_in = 0.1,
                                     int n_batches = 32, int n_q = 64, int n_z = 64, double Lq = 1.0,
                                     double Lz = 1.0) {
  if (trajs.empty()) throw ConfigError("ergodic_stats: empty trajectory set");
  TrajectoryStats out;
  out.n_q = n_q;
  out.n_z = n_z;
  const auto& names = trajs.front().observable_names;
  const double tau = trajs.front().sample_interval();
  if (!(tau > 0.0)) throw ConfigError("ergodic_stats: trajectories need at least two records");
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::span<const double>> series;
    for (const auto& t : trajs) series.emplace_back(t.observable_series.at(i));
    auto st = series_stats(series, tau, burn_in, n_batches);
    st.name = names[i];
    out.observables.push_back(st);
  }

  out.histogram_z.assign(n_z, 0);
  const bool joint = trajs.front().d == 1;
  if (joint) out.histogram_qz.assign(static_cast<std::size_t>(n_q) * n_z, 0);
  for (const auto& t : trajs) {
    for (std::size_t k = detail::burn_start(t.size(), burn_in); k < t.size(); ++k) {
      const int iz = detail::node_bin(t.z[k], Lz, n_z);
      ++out.histogram_z[iz];
      if (joint) ++out.histogram_qz[static_cast<std::size_t>(detail::node_bin(t.q[k], Lq, n_q)) * n_z + iz];
      ++out.n_samples;
    }
  }
  return out;
}

inline TrajectoryStats ergodic_stats(const Trajectory& traj, double burn_in = 0.1, int n_batches = 32,
                                     int n_q = 64, int n_z = 64, double Lq = 1.0, double Lz = 1.0) {
  return ergodic_stats(std::vector<Trajectory>{traj}, burn_in, n_batches, n_q, n_z, Lq, Lz);
}

struct MeanForceEstimate {
  double estimate = 0.0;
  double se = 0.0;
  SeriesStats stats;
};

/// Time average of d_z U(q_t, z_fixed) along dq = -grad_q U dt + sqrt(2/beta) dW
/// with z frozen. Uses params.beta, dt, stride and seed; n_steps overrides
/// params.n_steps.
inline MeanForceEstimate mean_force_estimate(const Potential& pot, const TamdParams& params, double z_fixed,
                                             long long n_steps, std::uint64_t stream_id = 0) {
  TamdParams prm = params;
  prm.delta = 1.0;
  prm.n_steps = n_steps;
  prm.validate();
  check_stability(pot, prm);
  const Domain& dom = pot.domain();
  const double z = wrap_coordinate(z_fixed, dom.Lz);
  std::vector<double> q(dom.d, 0.0);
  RngStream rng(prm.seed, stream_id);
  Derivatives der;
  const double noise = std::sqrt(2.0 * prm.dt / prm.beta);
  std::vector<double> series;
  series.reserve(static_cast<std::size_t>(n_steps / prm.stride) + 1);
  for (long long step = 1; step <= n_steps; ++step) {
    pot.derivatives(q, z, der);
    if (step % prm.stride == 0) series.push_back(der.dz);
    for (int i = 0; i < dom.d; ++i) q[i] = wrap_coordinate(q[i] - prm.dt * der.grad_q[i] + noise * rng.gaussian(), dom.Lq);
    if (!std::isfinite(q[0])) throw GuardError("mean_force_estimate: step " + std::to_string(step) + ": non-finite state");
  }
  MeanForceEstimate r;
  r.stats = series_stats(series, prm.dt * prm.stride);
  r.stats.name = "dz_u";
  r.estimate = r.stats.mean;
  r.se = r.stats.se;
  return r;
}

/// A probability mass per node of a periodic (q, z) grid, q-major. For d > 1
/// runs use n_q = 1 (z-marginal only).
struct GridDensity {
  int n_q = 0;
  int n_z = 0;
  double Lq = 1.0;
  double Lz = 1.0;
  std::vector<double> mass;

  std::vector<double> z_marginal() const {
    std::vector<double> m(n_z, 0.0);
    for (int i = 0; i < n_q; ++i)
      for (int j = 0; j < n_z; ++j) m[j] += mass[static_cast<std::size_t>(i) * n_z + j];
    return m;
  }
};

/// CDF on [0, Lz) of the trigonometric interpolant of a nodal z-density,
/// tabulated on a fine grid.
class MarginalCdf {
 public:
  MarginalCdf(std::span<const double> z_mass, double Lz, int refine = 64) : Lz_(Lz) {
    const int n = static_cast<int>(z_mass.size());
    std::vector<double> rho(z_mass.begin(), z_mass.end());
    for (double& r : rho) r *= n / Lz;
    if (n < 8 || n % 2 != 0) throw ConfigError("marginal CDF: need an even node count >= 8");
    // exact antiderivative of the interpolant, by its coefficients
    const int half = n / 2;
    std::vector<double> a(half + 1, 0.0), b(half + 1, 0.0);
    for (int k = 0; k <= half; ++k) {
      double sa = 0.0, sb = 0.0;
      for (int j = 0; j < n; ++j) {
        const double th = kTwoPi * static_cast<double>(k) * j / n;
        sa += rho[j] * std::cos(th);
        sb += rho[j] * std::sin(th);
      }
      a[k] = 2.0 * sa / n;
      b[k] = 2.0 * sb / n;
    }
    a[0] *= 0.5;
    a[half] *= 0.5;
    b[half] = 0.0;
    const int m = n * refine;
    table_.resize(m + 1);
    for (int i = 0; i <= m; ++i) {
      const double x = Lz * i / m;
      double F = a[0] * x;
      for (int k = 1; k <= half; ++k) {
        const double w = kTwoPi * k / Lz;
        F += (a[k] * std::sin(w * x) - b[k] * (std::cos(w * x) - 1.0)) / w;
      }
      table_[i] = F;
    }
    const double total = table_.back();
    if (!(total > 0.0)) throw SolverError("marginal CDF: non-positive total mass");
    for (double& F : table_) F /= total;
  }

  double operator()(double z) const {
    const double u = std::clamp(z / Lz_, 0.0, 1.0) * (table_.size() - 1);
    const std::size_t i = std::min(static_cast<std::size_t>(u), table_.size() - 2);
    const double t = u - static_cast<double>(i);
    return (1.0 - t) * table_[i] + t * table_[i + 1];
  }

  /// Inverse by bisection on the table.
  double inverse(double p) const {
    auto it = std::lower_bound(table_.begin(), table_.end(), p);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - table_.begin()));
    i = std::min(i, table_.size() - 1);
    const double lo = table_[i - 1], hi = table_[i];
    const double t = hi > lo ? (p - lo) / (hi - lo) : 0.0;
    return Lz_ * (static_cast<double>(i - 1) + t) / static_cast<double>(table_.size() - 1);
  }

 private:
  double Lz_;
  std::vector<double> table_;
};

/// Two-sided asymptotic Kolmogorov-Smirnov critical value c(alpha) / sqrt(n).
inline double ks_critical(double alpha, double n) {
  if (!(alpha > 0.0 && alpha < 1.0) || !(n > 0.0)) throw ConfigError("ks_critical: bad arguments");
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(n);
}

/// KS statistic of samples in [0, Lz) against a CDF.
template <class Cdf>
double ks_distance(std::vector<double> samples, const Cdf& F) {
  if (samples.empty()) throw ConfigError("ks_distance: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = F(samples[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

struct DensityCheck {
  double ks_distance = 0.0;
  double l2_w = 0.0;          ///< L2(target) norm of (empirical / target - 1), d = 1 only
  double n_samples = 0.0;
  double n_effective = 0.0;   ///< from the slower of the cos_z / sin_z autocorrelations
  double ks_critical_01 = 0.0;
  double ks_critical_05 = 0.0;
  bool passes(double alpha) const { return ks_distance < ks_critical(alpha, n_effective); }
};

inline DensityCheck density_check(const std::vector<Trajectory>& trajs, const GridDensity& target,
                                  double burn_in = 0.1, int n_batches = 32) {
  if (trajs.empty()) throw ConfigError("density_check: empty trajectory set");
  if (target.mass.size() != static_cast<std::size_t>(target.n_q) * target.n_z)
    throw ConfigError("density_check: target size does not match its grid");
  std::vector<double> zs;
  std::vector<std::vector<double>> cz(trajs.size()), sz(trajs.size());
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    const auto& t = trajs[r];
    for (std::size_t k = detail::burn_start(t.size(), burn_in); k < t.size(); ++k) zs.push_back(t.z[k]);
    cz[r].reserve(t.size());
    sz[r].reserve(t.size());
    for (double z : t.z) {
      cz[r].push_back(std::cos(kTwoPi * z / target.Lz));
      sz[r].push_back(std::sin(kTwoPi * z / target.Lz));
    }
  }
  if (zs.size() < 10000) throw ConfigError("density_check: need at least 1e4 pooled samples");

  DensityCheck out;
  out.n_samples = static_cast<double>(zs.size());
  const double tau = trajs.front().sample_interval();
  std::vector<std::span<const double>> sc, ss;
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    sc.emplace_back(cz[r]);
    ss.emplace_back(sz[r]);
  }
  const double iat = std::max(series_stats(sc, tau > 0 ? tau : 1.0, burn_in, n_batches).iat,
                              series_stats(ss, tau > 0 ? tau : 1.0, burn_in, n_batches).iat);
  out.n_effective = std::min(out.n_samples, out.n_samples / (2.0 * iat));
  out.ks_critical_01 = ks_critical(0.01, out.n_effective);
  out.ks_critical_05 = ks_critical(0.05, out.n_effective);

  const auto zm = target.z_marginal();
  MarginalCdf F(zm, target.Lz);

  if (trajs.front().d == 1 && target.n_q > 1) {
    std::vector<double> counts(target.mass.size(), 0.0);
    for (const auto& t : trajs)
      for (std::size_t k = detail::burn_start(t.size(), burn_in); k < t.size(); ++k)
        counts[static_cast<std::size_t>(detail::node_bin(t.q[k], target.Lq, target.n_q)) * target.n_z +
               detail::node_bin(t.z[k], target.Lz, target.n_z)] += 1.0;
    double s = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double p = target.mass[i];
      const double phat = counts[i] / out.n_samples;
      s += (phat - p) * (phat - p) / p;
    }
    out.l2_w = std::sqrt(s);
  }
  out.ks_distance = ks_distance(std::move(zs), F);
  return out;
}

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

namespace detail {
inline SlopeFit linear_fit(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("slope_fit: abscissae must not all coincide");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}
}  // namespace detail

/// Least-squares slope of log y against log x.
inline SlopeFit slope_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("slope_fit: length mismatch");
  if (xs.size() < 3) throw ConfigError("slope_fit: need at least 3 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
      throw ConfigError("slope_fit: non-positive value at index " + std::to_string(i));
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  return detail::linear_fit(lx, ly);
}

/// Exponential rate r from a fit of log y = c - r t.
inline SlopeFit decay_rate_fit(std::span<const double> ts, std::span<const double> ys) {
  if (ts.size() != ys.size() || ts.size() < 3) throw ConfigError("decay_rate_fit: need >= 3 matched points");
  std::vector<double> ly;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!(ys[i] > 0.0)) throw ConfigError("decay_rate_fit: non-positive value at index " + std::to_string(i));
    ly.push_back(std::log(ys[i]));
  }
  auto f = detail::linear_fit(ts, ly);
  f.slope = -f.slope;
  return f;
}

}  // namespace tamd
