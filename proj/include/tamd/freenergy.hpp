#pragma once

// Free energy A(z), mean force A'(z), A''(z) and the fluctuation field W(q,z)
// by trapezoidal quadrature on uniform periodic grids.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/model.hpp"
#include "tamd/spectral.hpp"

namespace tamd {

namespace detail {

/// Visits every node of the tensor grid n^d on (L T)^d.
template <class F>
void for_each_q_node(int d, int n, double L, F&& f) {
  std::vector<int> idx(d, 0);
  std::vector<double> q(d, 0.0);
  while (true) {
    for (int i = 0; i < d; ++i) q[i] = L * idx[i] / n;
    f(std::span<const double>(q));
    int i = 0;
    while (i < d && ++idx[i] == n) idx[i++] = 0;
    if (i == d) break;
  }
}

inline double cell_volume(int d, int n, double L) { return std::pow(L / n, d); }

/// log sum_i exp(x_i) without overflow.
inline double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

/// log of the trapezoidal approximation of the integral of exp(-beta U(., z)).
inline double log_partition(const Potential& pot, double beta, double z, int n_q) {
  if (n_q < 8) throw ConfigError("partition: n_q must be >= 8");
  const auto& dom = pot.domain();
  std::vector<double> e;
  detail::for_each_q_node(dom.d, n_q, dom.Lq, [&](std::span<const double> q) {
    e.push_back(-beta * pot.evaluate(q, z));
  });
  return detail::log_sum_exp(e) + std::log(detail::cell_volume(dom.d, n_q, dom.Lq));
}

/// Z(z) = integral of exp(-beta U(q, z)) dq over the periodic q-domain.
inline double partition(const Potential& pot, double beta, double z, int n_q) {
  return std::exp(log_partition(pot, beta, z, n_q));
}

/// Tabulated free energy on the uniform z-grid. A carries the additive shift
/// that normalizes exp(-beta_bar A) on the z-grid.
struct FreeEnergyProfile {
  Domain domain;
  double beta = 1.0;
  double beta_bar = 1.0;
  int n_q = 0;
  std::vector<double> z_nodes;
  std::vector<double> A;
  std::vector<double> A1;
  std::vector<double> A2;
  std::vector<double> Zvals;
  std::vector<double> logZ;
  double shift = 0.0;

  int n_z() const { return static_cast<int>(z_nodes.size()); }
  double dz() const { return domain.Lz / n_z(); }

  /// Nodal values of the normalized marginal density exp(-beta_bar A).
  std::vector<double> marginal_density() const {
    std::vector<double> m(A.size());
    for (std::size_t j = 0; j < A.size(); ++j) m[j] = std::exp(-beta_bar * A[j]);
    return m;
  }

  /// A'(z) at arbitrary z in [0, Lz) by trigonometric interpolation.
  TrigInterpolant mean_force_interpolant() const { return TrigInterpolant(A1, domain.Lz); }
};

inline FreeEnergyProfile free_energy_profile(const Potential& pot, double beta, double beta_bar,
                                             int n_q, int n_z) {
  if (n_q < 8 || n_z < 8) throw ConfigError("free_energy_profile: n_q and n_z must be >= 8");
  if (!(beta > 0.0) || !(beta_bar > 0.0)) throw ConfigError("free_energy_profile: temperatures must be positive");
  const auto& dom = pot.domain();
  FreeEnergyProfile prof;
  prof.domain = dom;
  prof.beta = beta;
  prof.beta_bar = beta_bar;
  prof.n_q = n_q;
  prof.z_nodes.resize(n_z);
  prof.A.resize(n_z);
  prof.A1.resize(n_z);
  prof.A2.resize(n_z);
  prof.Zvals.resize(n_z);
  prof.logZ.resize(n_z);

  const double log_cell = std::log(detail::cell_volume(dom.d, n_q, dom.Lq));
  std::vector<double> expo, uz, uzz;
  Derivatives der;
  for (int j = 0; j < n_z; ++j) {
    const double z = dom.Lz * j / n_z;
    prof.z_nodes[j] = z;
    expo.clear();
    uz.clear();
    uzz.clear();
    detail::for_each_q_node(dom.d, n_q, dom.Lq, [&](std::span<const double> q) {
      expo.push_back(-beta * pot.evaluate(q, z));
      pot.derivatives(q, z, der);
      uz.push_back(der.dz);
      uzz.push_back(der.dzz);
    });
    const double m = *std::max_element(expo.begin(), expo.end());
    double s = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < expo.size(); ++i) {
      const double r = std::exp(expo[i] - m);
      s += r;
      s1 += r * uz[i];
      s2 += r * (uzz[i] - beta * uz[i] * uz[i]);
    }
    const double a1 = s1 / s;
    prof.logZ[j] = m + std::log(s) + log_cell;
    prof.Zvals[j] = std::exp(prof.logZ[j]);
    prof.A1[j] = a1;
    prof.A2[j] = s2 / s + beta * a1 * a1;
  }

  std::vector<double> e(n_z);
  for (int j = 0; j < n_z; ++j) e[j] = beta_bar * prof.logZ[j] / beta;  // -beta_bar * A0
  prof.shift = (detail::log_sum_exp(e) + std::log(prof.dz())) / beta_bar;
  for (int j = 0; j < n_z; ++j) prof.A[j] = -prof.logZ[j] / beta + prof.shift;

  for (double zv : prof.Zvals)
    if (!(zv > 0.0) || !std::isfinite(zv)) throw GuardError("free_energy_profile: partition function overflowed");
  double norm = 0.0;
  for (double a : prof.A) norm += std::exp(-beta_bar * a) * prof.dz();
  if (std::abs(norm - 1.0) > 1e-12)
    throw SolverError("free_energy_profile: marginal normalization off by " + std::to_string(norm - 1.0));
  return prof;
}

/// W(q, z) and g1 = (beta/beta_bar - 1) W on the (q, z) tensor grid of the
/// profile, stored q-major (index iq * n_z + iz).
struct FluctuationField {
  int n_q = 0;
  int n_z = 0;
  std::vector<double> W;
  std::vector<double> g1;
  double max_conditional_mean = 0.0;  ///< max_z |Pi_z W|
};

inline FluctuationField fluctuation_field(const Potential& pot, const FreeEnergyProfile& prof) {
  const auto& dom = pot.domain();
  if (dom.d != 1) throw ConfigError("fluctuation_field: only d = 1 tensor grids are supported");
  const int nq = prof.n_q, nz = prof.n_z();
  const double beta = prof.beta, bb = prof.beta_bar;
  FluctuationField f;
  f.n_q = nq;
  f.n_z = nz;
  f.W.resize(static_cast<std::size_t>(nq) * nz);
  f.g1.resize(f.W.size());
  const double prefactor = beta / bb - 1.0;
  Derivatives der;
  std::vector<double> expo(nq), wcol(nq);
  for (int j = 0; j < nz; ++j) {
    const double z = prof.z_nodes[j];
    for (int i = 0; i < nq; ++i) {
      const double q = dom.Lq * i / nq;
      expo[i] = -beta * pot.evaluate(std::span<const double>(&q, 1), z);
      pot.derivatives(std::span<const double>(&q, 1), z, der);
      const double w = -(der.dzz - prof.A2[j]) +
                       (beta * der.dz + (bb - beta) * prof.A1[j]) * (der.dz - prof.A1[j]);
      wcol[i] = w;
      f.W[static_cast<std::size_t>(i) * nz + j] = w;
      f.g1[static_cast<std::size_t>(i) * nz + j] = prefactor * w;
    }
    const double m = *std::max_element(expo.begin(), expo.end());
    double s = 0.0, sw = 0.0;
    for (int i = 0; i < nq; ++i) {
      const double r = std::exp(expo[i] - m);
      s += r;
      sw += r * wcol[i];
    }
    f.max_conditional_mean = std::max(f.max_conditional_mean, std::abs(sw / s));
  }
  if (f.max_conditional_mean > 1e-8)
    throw GuardError("fluctuation_field: conditional mean of W is " + std::to_string(f.max_conditional_mean) +
                     " (> 1e-8); the q-quadrature is under-resolved");
  return f;
}

}  // namespace tamd
