#pragma once

// Generators of the overdamped extended dynamics on a periodic (q, z) tensor
// grid (d = 1), with the reference-measure inner product, and the solvers
// built on them: stationary density, spectrum, first-order corrections,
// Poisson problems and time propagation.
//
// Nodes are ordered q-major, index iq * n_z + iz. Every generator is written
// in weighted divergence form rho^{-1} (rho f')' so that the discrete
// operators keep the structure of the continuous ones exactly: constants are
// annihilated, the fast generator is self-adjoint, the projection of the slow
// generator onto z-functions is the limiting generator, and the solvability
// condition of the fluctuation field holds to round-off.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/freenergy.hpp"
#include "tamd/linalg.hpp"
#include "tamd/model.hpp"
#include "tamd/observables.hpp"
#include "tamd/rng.hpp"
#include "tamd/spectral.hpp"

namespace tamd {

struct GridSpec {
  int n_q = 64;
  int n_z = 64;
  Scheme scheme = Scheme::Spectral;

  int size() const { return n_q * n_z; }

  void validate() const {
    if (n_q < 8 || n_z < 8) throw ConfigError("grid: n_q and n_z must be >= 8");
    if (scheme == Scheme::Spectral && (n_q % 2 || n_z % 2))
      throw ConfigError("grid: the spectral scheme needs even n_q and n_z");
    if (static_cast<long long>(n_q) * n_z > 16384)
      throw GuardError("grid: n_q * n_z = " + std::to_string(static_cast<long long>(n_q) * n_z) +
                       " exceeds the dense-solve limit 16384");
  }
};

struct GridOperator {
  enum class ActsOn { Full, ZOnly };
  Eigen::MatrixXd matrix;
  std::vector<double> weights;
  ActsOn acts_on = ActsOn::Full;

  int size() const { return static_cast<int>(matrix.rows()); }

  Eigen::VectorXd apply(std::span<const double> f) const {
    return matrix * Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
  }
};

/// T* = D^{-1} T^T D with D = diag(weights).
inline GridOperator adjoint(const GridOperator& op) {
  GridOperator out;
  out.weights = op.weights;
  out.acts_on = op.acts_on;
  const auto& w = op.weights;
  const Eigen::Index n = op.matrix.rows();
  out.matrix.resize(n, n);
  // tiled, since a plain transpose of a few thousand rows thrashes the cache
  constexpr Eigen::Index tile = 64;
  for (Eigen::Index j0 = 0; j0 < n; j0 += tile)
    for (Eigen::Index i0 = 0; i0 < n; i0 += tile)
      for (Eigen::Index j = j0; j < std::min(n, j0 + tile); ++j)
        for (Eigen::Index i = i0; i < std::min(n, i0 + tile); ++i) out.matrix(i, j) = op.matrix(j, i) * w[j] / w[i];
  return out;
}

/// Row sums, accumulated column by column to follow the storage order.
inline Eigen::VectorXd row_sums(const Eigen::MatrixXd& m) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) s += m.col(c);
  return s;
}

inline Eigen::VectorXd abs_row_sums(const Eigen::MatrixXd& m) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) s += m.col(c).cwiseAbs();
  return s;
}

inline double inf_norm(const Eigen::MatrixXd& m) { return abs_row_sums(m).maxCoeff(); }

/// <f, g>_w = sum_i w_i f_i g_i.
inline double inner(std::span<const double> w, std::span<const double> f, std::span<const double> g) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * f[i] * g[i];
  return s;
}

inline double weighted_norm(std::span<const double> w, std::span<const double> f) {
  return std::sqrt(inner(w, f, f));
}

inline double weighted_mean(std::span<const double> w, std::span<const double> f) {
  double s = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += w[i] * f[i];
    sw += w[i];
  }
  return s / sw;
}

/// Conditional average over q at each z node.
inline std::vector<double> project_z(std::span<const double> field, std::span<const double> weights, int n_q,
                                     int n_z) {
  if (field.size() != weights.size() || field.size() != static_cast<std::size_t>(n_q) * n_z)
    throw ConfigError("project_z: field does not match the grid");
  std::vector<double> num(n_z, 0.0), den(n_z, 0.0);
  for (int i = 0; i < n_q; ++i)
    for (int j = 0; j < n_z; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n_z + j;
      num[j] += weights[k] * field[k];
      den[j] += weights[k];
    }
  for (int j = 0; j < n_z; ++j) num[j] /= den[j];
  return num;
}

/// Extends a z-function constantly in q.
inline std::vector<double> embed_z(std::span<const double> zf, int n_q) {
  const std::size_t nz = zf.size();
  std::vector<double> out(static_cast<std::size_t>(n_q) * nz);
  for (int i = 0; i < n_q; ++i) std::copy(zf.begin(), zf.end(), out.begin() + static_cast<std::ptrdiff_t>(i * nz));
  return out;
}

struct Generators {
  GridSpec grid;
  Domain domain;
  double beta = 1.0;
  double beta_bar = 1.0;
  double delta = 1.0;
  GridOperator L0, L1, Ldelta, A_op;
  std::vector<double> weights;    ///< reference measure per node, sums to 1
  std::vector<double> z_weights;  ///< marginal exp(-beta_bar A) dz per z node, sums to 1

  int n_q() const { return grid.n_q; }
  int n_z() const { return grid.n_z; }
  double q_node(int i) const { return domain.Lq * i / grid.n_q; }
  double z_node(int j) const { return domain.Lz * j / grid.n_z; }

  std::vector<double> project(std::span<const double> f) const { return project_z(f, weights, grid.n_q, grid.n_z); }
  std::vector<double> embed(std::span<const double> zf) const { return embed_z(zf, grid.n_q); }

  /// Conditional reference weights of the slice at z node j (sum to 1).
  std::vector<double> slice_weights(int j) const {
    std::vector<double> r(grid.n_q);
    double s = 0.0;
    for (int i = 0; i < grid.n_q; ++i) s += r[i] = weights[static_cast<std::size_t>(i) * grid.n_z + j];
    for (double& x : r) x /= s;
    return r;
  }
};

/// Builds L0 (fast, per z-slice), L1 (slow), L_delta = L0 / delta + L1 and the
/// limiting generator on the z-grid.
inline Generators build_generators(const Potential& pot, const FreeEnergyProfile& prof, const TamdParams& params,
                                   const GridSpec& grid) {
  grid.validate();
  const Domain& dom = pot.domain();
  if (dom.d != 1) throw ConfigError("build_generators: grid solvers support d = 1 only");
  if (prof.n_q != grid.n_q || prof.n_z() != grid.n_z)
    throw ConfigError("build_generators: profile grid " + std::to_string(prof.n_q) + "x" +
                      std::to_string(prof.n_z()) + " does not match grid " + std::to_string(grid.n_q) + "x" +
                      std::to_string(grid.n_z));
  if (prof.beta != params.beta || prof.beta_bar != params.beta_bar)
    throw ConfigError("build_generators: profile temperatures differ from params");
  if (!(params.delta > 0.0)) throw ConfigError("build_generators: delta must be positive");

  const int nq = grid.n_q, nz = grid.n_z, n = grid.size();
  const double beta = params.beta, bb = params.beta_bar;
  Generators g;
  g.grid = grid;
  g.domain = dom;
  g.beta = beta;
  g.beta_bar = bb;
  g.delta = params.delta;

  // log of the unnormalized reference density exp(-beta U - (beta_bar - beta) A)
  std::vector<double> logw(n), uz(n);
  Derivatives der;
  for (int i = 0; i < nq; ++i) {
    const double q = dom.Lq * i / nq;
    for (int j = 0; j < nz; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * nz + j;
      const double z = prof.z_nodes[j];
      logw[k] = -beta * pot.evaluate(std::span<const double>(&q, 1), z) - (bb - beta) * prof.A[j];
      pot.derivatives(std::span<const double>(&q, 1), z, der);
      uz[k] = der.dz;
    }
  }
  const double lmax = *std::max_element(logw.begin(), logw.end());
  g.weights.resize(n);
  double total = 0.0;
  for (int k = 0; k < n; ++k) total += g.weights[k] = std::exp(logw[k] - lmax);
  for (double& w : g.weights) w /= total;
  g.z_weights = prof.marginal_density();
  double zt = 0.0;
  for (double& m : g.z_weights) zt += m *= prof.dz();
  for (double& m : g.z_weights) m /= zt;

  const WeightedLaplacian Kq(grid.scheme, nq, dom.Lq), Kz(grid.scheme, nz, dom.Lz);
  const Eigen::MatrixXd D1z = diff1(grid.scheme, nz, dom.Lz);

  g.L0.matrix = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> rho(std::max(nq, nz));
  for (int j = 0; j < nz; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < nq; ++i) m = std::max(m, logw[static_cast<std::size_t>(i) * nz + j]);
    for (int i = 0; i < nq; ++i) rho[i] = std::exp(logw[static_cast<std::size_t>(i) * nz + j] - m);
    const Eigen::MatrixXd K = Kq(std::span<const double>(rho.data(), nq));
    for (int a = 0; a < nq; ++a)
      for (int b = 0; b < nq; ++b) g.L0.matrix(a * nz + j, b * nz + j) = K(a, b) / beta;
  }

  const double drift_factor = beta / bb - 1.0;
  g.L1.matrix = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < nq; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * nz;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < nz; ++j) m = std::max(m, logw[off + j]);
    for (int j = 0; j < nz; ++j) rho[j] = std::exp(logw[off + j] - m);
    const Eigen::MatrixXd K = Kz(std::span<const double>(rho.data(), nz));
    auto block = g.L1.matrix.block(i * nz, i * nz, nz, nz);
    block = K / bb;
    for (int a = 0; a < nz; ++a) block.row(a) += drift_factor * (uz[off + a] - prof.A1[a]) * D1z.row(a);
  }

  // Row sums vanish analytically; pinning them removes the O(eps ||L||) drift
  // that would otherwise leak mass in long time integrations.
  auto pin_row_sums = [](Eigen::MatrixXd& m) {
    const Eigen::VectorXd off = row_sums(m) - m.diagonal();
    m.diagonal() = -off;
  };
  pin_row_sums(g.L0.matrix);
  pin_row_sums(g.L1.matrix);

  g.L0.weights = g.L1.weights = g.Ldelta.weights = g.weights;
  g.Ldelta.matrix = g.L0.matrix / params.delta + g.L1.matrix;

  std::vector<double> mz = g.z_weights;
  g.A_op.matrix = Kz(mz) / bb;
  pin_row_sums(g.A_op.matrix);
  g.A_op.weights = g.z_weights;
  g.A_op.acts_on = GridOperator::ActsOn::ZOnly;

  for (const GridOperator* op : {&g.L0, &g.L1, &g.Ldelta, &g.A_op}) {
    if (row_sums(op->matrix).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, inf_norm(op->matrix)))
      throw SolverError("build_generators: discrete generator does not annihilate constants");
  }
  return g;
}

struct StationarySolution {
  std::vector<double> h_delta;
  double residual_norm = 0.0;
  double residual_tolerance = 0.0;
  double normalization = 0.0;
  int iterations = 0;
};

/// Density of the invariant measure against the reference measure, by
/// shifted inverse iteration on the adjoint generator. A second, unrelated
/// start vector must converge to the same vector, otherwise the kernel is
/// not simple.
inline StationarySolution stationary_density(const GridOperator& Ldelta) {
  const GridOperator Ls = adjoint(Ldelta);
  const int n = Ls.size();
  // the mean diagonal is a typical eigenvalue scale; the infinity norm is
  // dominated by rows of negligible weight
  const double shift = 1e-8 * std::max(1.0, Ls.matrix.diagonal().cwiseAbs().mean());
  Eigen::MatrixXd M = Ls.matrix;
  M.diagonal().array() -= shift;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
  const auto& w = Ldelta.weights;

  auto normalize = [&](Eigen::VectorXd& x) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += w[i] * x(i);
    if (!(std::abs(s) > 0.0) || !std::isfinite(s)) throw SolverError("stationary_density: iteration collapsed");
    x /= s;
  };
  int iterations = 0;
  auto iterate = [&](Eigen::VectorXd x) {
    normalize(x);
    double previous = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd y = lu.solve(x);
      normalize(y);
      const double change = (y - x).cwiseAbs().maxCoeff() / std::max(1.0, y.cwiseAbs().maxCoeff());
      x = std::move(y);
      iterations = std::max(iterations, it + 1);
      // converged, or stalled at round-off
      if (change < 1e-13 || (it >= 3 && change >= 0.5 * previous)) break;
      previous = change;
    }
    return x;
  };

  Eigen::VectorXd h = iterate(Eigen::VectorXd::Ones(n));
  RngStream rng(0x5eed, 0);
  Eigen::VectorXd start(n);
  for (int i = 0; i < n; ++i) start(i) = 0.5 + rng.uniform();
  const Eigen::VectorXd h2 = iterate(start);
  double diff = 0.0;
  for (int i = 0; i < n; ++i) diff += w[i] * (h(i) - h2(i)) * (h(i) - h2(i));
  if (std::sqrt(diff) > 1e-6)
    throw SolverError("stationary_density: zero eigenvalue is not simple (start vectors disagree by " +
                      std::to_string(std::sqrt(diff)) + ")");

  StationarySolution sol;
  sol.h_delta.assign(h.data(), h.data() + n);
  sol.iterations = iterations;
  for (int i = 0; i < n; ++i) sol.normalization += w[i] * h(i);
  for (int i = 0; i < n; ++i)
    if (!(h(i) > 0.0))
      throw GuardError("stationary_density: non-positive density at node " + std::to_string(i) +
                       "; the grid is too coarse");
  const Eigen::VectorXd r = Ls.matrix * h;
  sol.residual_norm = weighted_norm(w, std::span<const double>(r.data(), n));
  // Evaluating L* h in floating point cannot do better than eps |L*| |h|.
  const Eigen::VectorXd floor = Ls.matrix.cwiseAbs() * h.cwiseAbs();
  sol.residual_tolerance =
      std::max(1e-9, 100.0 * std::numeric_limits<double>::epsilon() *
                         weighted_norm(w, std::span<const double>(floor.data(), n)));
  if (sol.residual_norm > sol.residual_tolerance)
    throw SolverError("stationary_density: residual " + std::to_string(sol.residual_norm) + " exceeds " +
                      std::to_string(sol.residual_tolerance));
  return sol;
}

/// Spectral gap of -A on mean-zero z-functions. A is self-adjoint in the
/// marginal weights, so the symmetrized matrix is diagonalized.
inline std::vector<double> limiting_spectrum(const GridOperator& A_op) {
  const int n = A_op.size();
  Eigen::VectorXd s(n);
  for (int i = 0; i < n; ++i) s(i) = std::sqrt(A_op.weights[i]);
  Eigen::MatrixXd S = s.asDiagonal() * A_op.matrix * s.cwiseInverse().asDiagonal();
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("limiting_spectrum: eigensolver failed");
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + n);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline double limiting_gap(const GridOperator& A_op) {
  const auto ev = limiting_spectrum(A_op);
  return -ev.at(1);
}

struct SpectralReport {
  double gap = 0.0;
  double gap_imag = 0.0;  ///< imaginary part of the eigenvalue realizing the gap
  double lambda_ref = 0.0;
  double R2_marginal = 0.0;
  int eigen_count = 0;
  int zero_multiplicity = 0;
  std::vector<std::complex<double>> eigenvalues;  ///< sorted by decreasing real part
};

inline SpectralReport spectral_report(const GridOperator& Ldelta, const GridOperator& A_op, double beta_bar) {
  SpectralReport rep;
  // L* = D^{-1} L^T D has the spectrum of L
  rep.eigenvalues = eigenvalues(Ldelta.matrix);
  std::sort(rep.eigenvalues.begin(), rep.eigenvalues.end(),
            [](const auto& a, const auto& b) { return a.real() > b.real(); });
  rep.eigen_count = static_cast<int>(rep.eigenvalues.size());
  const double zero_tol = 1e-10 * std::max(1.0, inf_norm(Ldelta.matrix));
  rep.gap = std::numeric_limits<double>::infinity();
  for (const auto& ev : rep.eigenvalues) {
    if (std::abs(ev) < zero_tol) {
      ++rep.zero_multiplicity;
    } else if (-ev.real() < rep.gap) {
      rep.gap = -ev.real();
      rep.gap_imag = std::abs(ev.imag());
    }
  }
  if (rep.zero_multiplicity != 1)
    throw SolverError("spectral_report: " + std::to_string(rep.zero_multiplicity) +
                      " eigenvalues in the zero cluster (expected exactly one)");
  rep.R2_marginal = beta_bar * limiting_gap(A_op);
  rep.lambda_ref = rep.R2_marginal / beta_bar;
  return rep;
}

struct CorrectionFields {
  std::vector<double> u;             ///< (L0*)^{-1} (1 - Pi_z) g1
  std::vector<double> h_frak;        ///< hierarchy construction
  std::vector<double> h_frak_closed; ///< closed-form construction
  std::vector<double> h_bar;
  std::vector<double> h_tilde;
  std::vector<double> G;
  double construction_gap = 0.0;     ///< || h_frak - h_frak_closed ||_w
  double solvability = 0.0;          ///< max_z |Pi_z g1|
};

namespace detail {

/// Solves op x = b slice by slice in q under zero conditional mean, where op
/// is block diagonal over z nodes. Returns x with Pi_z x = 0.
inline std::vector<double> slice_solve(const Generators& g, const Eigen::MatrixXd& op, std::span<const double> b,
                                       const char* who) {
  const int nq = g.n_q(), nz = g.n_z();
  std::vector<double> x(b.size());
  Eigen::MatrixXd block(nq, nq);
  Eigen::VectorXd rhs(nq);
  const std::vector<double> ones(nq, 1.0);
  for (int j = 0; j < nz; ++j) {
    for (int a = 0; a < nq; ++a) {
      rhs(a) = b[static_cast<std::size_t>(a) * nz + j];
      for (int c = 0; c < nq; ++c) block(a, c) = op(a * nz + j, c * nz + j);
    }
    const auto rw = g.slice_weights(j);
    try {
      BorderedSolver solver(block, ones, rw);
      const Eigen::VectorXd y = solver.solve(rhs);
      if (std::abs(solver.multiplier()) > 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff()))
        throw SolverError("right-hand side is not orthogonal to the kernel (multiplier " +
                          std::to_string(solver.multiplier()) + ")");
      for (int a = 0; a < nq; ++a) x[static_cast<std::size_t>(a) * nz + j] = y(a);
    } catch (const SolverError& e) {
      throw SolverError(std::string(who) + ": slice " + std::to_string(j) + ": " + e.what());
    }
  }
  return x;
}

inline std::vector<double> remove_projection(const Generators& g, std::span<const double> f) {
  const auto p = g.project(f);
  std::vector<double> out(f.begin(), f.end());
  for (int i = 0; i < g.n_q(); ++i)
    for (int j = 0; j < g.n_z(); ++j) out[static_cast<std::size_t>(i) * g.n_z() + j] -= p[j];
  return out;
}

/// Solves M x = b for a z-operator with constant kernel under sum m x = 0.
inline std::vector<double> z_solve(const Eigen::MatrixXd& M, std::span<const double> m, std::span<const double> b,
                                   const char* who) {
  const std::vector<double> ones(b.size(), 1.0);
  try {
    BorderedSolver s(M, ones, m);
    const Eigen::VectorXd x =
        s.solve(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
    return {x.data(), x.data() + x.size()};
  } catch (const SolverError& e) {
    throw SolverError(std::string(who) + ": " + e.what());
  }
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline CorrectionFields correction_fields(const Generators& g, std::span<const double> g1) {
  const int nq = g.n_q(), nz = g.n_z(), n = nq * nz;
  if (g1.size() != static_cast<std::size_t>(n)) throw ConfigError("correction_fields: g1 does not match the grid");
  CorrectionFields cf;
  const auto pg = g.project(g1);
  for (double v : pg) cf.solvability = std::max(cf.solvability, std::abs(v));
  if (cf.solvability > 1e-8)
    throw GuardError("correction_fields: solvability violated, max |Pi_z g1| = " + std::to_string(cf.solvability));

  const GridOperator L0s = adjoint(g.L0), L1s = adjoint(g.L1);
  cf.u = detail::slice_solve(g, L0s.matrix, detail::remove_projection(g, g1), "correction_fields");

  const Eigen::VectorXd L1s_u = L1s.apply(cf.u);
  cf.G = g.project(std::span<const double>(L1s_u.data(), n));

  // Pi_z L1* restricted to z-functions
  Eigen::MatrixXd M(nz, nz);
  for (int c = 0; c < nz; ++c) {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(nz);
    std::vector<double> acc(n);
    for (int r = 0; r < n; ++r) {
      double s = 0.0;
      for (int i = 0; i < nq; ++i) s += L1s.matrix(r, i * nz + c);
      acc[r] = s;
    }
    const auto p = g.project(acc);
    for (int r = 0; r < nz; ++r) M(r, c) = p[r];
  }
  cf.h_bar = detail::z_solve(M, g.z_weights, cf.G, "correction_fields (hierarchy)");
  const auto h_bar_closed =
      detail::z_solve(adjoint(g.A_op).matrix, g.z_weights, cf.G, "correction_fields (closed form)");

  cf.h_frak.resize(n);
  cf.h_frak_closed.resize(n);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nz; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * nz + j;
      cf.h_frak[k] = -cf.u[k] + cf.h_bar[j];
      cf.h_frak_closed[k] = -cf.u[k] + h_bar_closed[j];
    }
  std::vector<double> d(n);
  for (int k = 0; k < n; ++k) d[k] = cf.h_frak[k] - cf.h_frak_closed[k];
  cf.construction_gap = weighted_norm(g.weights, d);

  const Eigen::VectorXd L1s_h = L1s.apply(cf.h_frak);
  cf.h_tilde = detail::slice_solve(
      g, L0s.matrix, detail::remove_projection(g, std::span<const double>(L1s_h.data(), n)), "correction_fields");
  for (double& v : cf.h_tilde) v = -v;
  return cf;
}

/// || L_delta* (1 + delta h + delta^2 h~) - delta^2 L1* h~ ||_w.
inline double correction_residual(const Generators& g, const CorrectionFields& cf, double delta) {
  const int n = g.grid.size();
  const Eigen::MatrixXd Ls = adjoint(g.L0).matrix / delta + adjoint(g.L1).matrix;
  Eigen::VectorXd f(n), ht(n);
  for (int k = 0; k < n; ++k) {
    f(k) = 1.0 + delta * cf.h_frak[k] + delta * delta * cf.h_tilde[k];
    ht(k) = cf.h_tilde[k];
  }
  const Eigen::VectorXd r = Ls * f - delta * delta * (adjoint(g.L1).matrix * ht);
  return weighted_norm(g.weights, std::span<const double>(r.data(), n));
}

/// Solver for -L_delta Phi = P_delta phi with sum w Phi = 0, reusable across
/// observables.
class PoissonSolver {
 public:
  PoissonSolver(const GridOperator& Ldelta, std::span<const double> h_delta)
      : weights_(Ldelta.weights),
        h_(h_delta.begin(), h_delta.end()),
        solver_(-Ldelta.matrix, std::vector<double>(Ldelta.weights.size(), 1.0), Ldelta.weights) {}

  struct Result {
    std::vector<double> Phi;
    std::vector<double> centred;  ///< P_delta phi
    double sigma2 = 0.0;
  };

  Result solve(std::span<const double> phi) {
    const std::size_t n = weights_.size();
    if (phi.size() != n) throw ConfigError("poisson_solve: observable does not match the grid");
    double mean = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean += weights_[k] * h_[k] * phi[k];
    Result r;
    r.centred.resize(n);
    Eigen::VectorXd b(n);
    for (std::size_t k = 0; k < n; ++k) b(k) = r.centred[k] = phi[k] - mean;
    const Eigen::VectorXd x = solver_.solve(b);
    if (std::abs(solver_.multiplier()) > 1e-8 * std::max(1.0, b.cwiseAbs().maxCoeff()))
      throw SolverError("poisson_solve: kernel leakage (multiplier " + std::to_string(solver_.multiplier()) + ")");
    r.Phi = detail::to_std(x);
    double s = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s += weights_[k] * r.centred[k] * r.Phi[k] * h_[k];
      scale += weights_[k] * std::abs(r.centred[k] * r.Phi[k]) * h_[k];
    }
    r.sigma2 = 2.0 * s;
    // a constant phi leaves only round-off in both factors
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * std::abs(*std::max_element(phi.begin(), phi.end(), [](double a, double b) { return std::abs(a) < std::abs(b); })) *
                         x.cwiseAbs().maxCoeff();
    if (r.sigma2 < -(1e-10 * 2.0 * scale + floor))
      throw SolverError("poisson_solve: negative asymptotic variance " + std::to_string(r.sigma2));
    r.sigma2 = std::max(0.0, r.sigma2);
    return r;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> h_;
  BorderedSolver solver_;
};

inline PoissonSolver::Result poisson_solve(const GridOperator& Ldelta, std::span<const double> h_delta,
                                           std::span<const double> phi) {
  PoissonSolver s(Ldelta, h_delta);
  return s.solve(phi);
}

struct ApproxPoisson {
  std::vector<double> Psi;  ///< z nodes
  std::vector<double> psi;  ///< full grid
};

namespace detail {
/// Pi_z P0 phi and P0 phi.
inline std::pair<std::vector<double>, std::vector<double>> centre_reference(const Generators& g,
                                                                            std::span<const double> phi) {
  if (phi.size() != g.weights.size()) throw ConfigError("observable does not match the grid");
  const double mean = weighted_mean(g.weights, phi);
  std::vector<double> p0(phi.begin(), phi.end());
  for (double& v : p0) v -= mean;
  return {g.project(p0), p0};
}
}  // namespace detail

/// sigma^2_ref = 2 sum_z m (Pi_z P0 phi) (-A^{-1} Pi_z P0 phi).
inline double reference_variance(const Generators& g, std::span<const double> phi) {
  const auto [pz, p0] = detail::centre_reference(g, phi);
  std::vector<double> rhs(pz.size());
  for (std::size_t j = 0; j < pz.size(); ++j) rhs[j] = -pz[j];
  const auto Psi = detail::z_solve(g.A_op.matrix, g.z_weights, rhs, "reference_variance");
  const double v = 2.0 * inner(g.z_weights, pz, Psi);
  if (v < -1e-12) throw SolverError("reference_variance: negative result " + std::to_string(v));
  return std::max(0.0, v);
}

inline ApproxPoisson approx_poisson(const Generators& g, std::span<const double> phi) {
  const auto [pz, p0] = detail::centre_reference(g, phi);
  const auto ainv = detail::z_solve(g.A_op.matrix, g.z_weights, pz, "approx_poisson");
  ApproxPoisson out;
  out.Psi.resize(ainv.size());
  for (std::size_t j = 0; j < ainv.size(); ++j) out.Psi[j] = -ainv[j];
  const auto e = g.embed(ainv);
  const Eigen::VectorXd l1e = g.L1.apply(e);
  std::vector<double> rhs(p0.size());
  for (std::size_t k = 0; k < rhs.size(); ++k) rhs[k] = l1e(static_cast<Eigen::Index>(k)) - p0[k];
  out.psi = detail::slice_solve(g, g.L0.matrix, detail::remove_projection(g, rhs), "approx_poisson");
  return out;
}

struct DecaySeries {
  std::vector<double> t;
  std::vector<double> distance;  ///< || f(t) - h_delta ||_w
  double max_mass_drift = 0.0;  ///< max |mass(t) - 1| over the run
};

/// Crank-Nicolson for df/dt = L_delta* f, started with `startup` backward
/// Euler half steps so that stiff components of f0 are damped rather than
/// left oscillating.
inline DecaySeries propagate(const GridOperator& Ldelta, std::span<const double> h_delta,
                             std::span<const double> f0, double T, double dt_pde, int startup = 4) {
  const int n = Ldelta.size();
  if (f0.size() != static_cast<std::size_t>(n) || h_delta.size() != f0.size())
    throw ConfigError("propagate: vectors do not match the grid");
  if (!(T > 0.0) || !(dt_pde > 0.0)) throw ConfigError("propagate: T and dt_pde must be positive");
  const auto& w = Ldelta.weights;
  const double mass0 = inner(w, f0, std::vector<double>(n, 1.0));
  if (std::abs(mass0 - 1.0) > 1e-10) throw ConfigError("propagate: f0 must have weighted mean 1");

  const Eigen::MatrixXd Ls = adjoint(Ldelta).matrix;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  // backward Euler with step dt/2 and Crank-Nicolson with step dt share the
  // implicit matrix I - (dt/2) L*
  Eigen::PartialPivLU<Eigen::MatrixXd> lu((I - 0.5 * dt_pde * Ls).eval());
  if (!(lu.rcond() > 1e-15)) throw SolverError("propagate: step matrix is singular; reduce dt_pde");
  const Eigen::MatrixXd cn_rhs = I + 0.5 * dt_pde * Ls;

  Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(f0.data(), n);
  const Eigen::Map<const Eigen::VectorXd> h(h_delta.data(), n);
  DecaySeries out;
  double last_mass = mass0;
  auto record = [&](double t) {
    const Eigen::VectorXd d = f - h;
    out.t.push_back(t);
    out.distance.push_back(weighted_norm(w, std::span<const double>(d.data(), n)));
    const double mass = inner(w, std::span<const double>(f.data(), n), std::vector<double>(n, 1.0));
    out.max_mass_drift = std::max(out.max_mass_drift, std::abs(mass - 1.0));
    if (std::abs(mass - last_mass) > 1e-10)
      throw SolverError("propagate: mass changed by " + std::to_string(mass - last_mass) + " in one step at t = " +
                        std::to_string(t));
    last_mass = mass;
  };
  record(0.0);
  double t = 0.0;
  for (int k = 0; k < startup && t < T - 1e-12 * T; ++k) {
    f = lu.solve(f);
    t += 0.5 * dt_pde;
    if (k % 2 == 1) record(t);
  }
  const long long steps = static_cast<long long>(std::llround((T - t) / dt_pde));
  for (long long k = 0; k < steps; ++k) {
    f = lu.solve(cn_rhs * f);
    t += dt_pde;
    record(t);
  }
  return out;
}

/// Nodal values of an observable on the full grid.
inline std::vector<double> nodal_values(const Generators& g, const Potential& pot, const Observable& obs) {
  std::vector<double> v(g.weights.size());
  Derivatives scratch;
  for (int i = 0; i < g.n_q(); ++i) {
    const double q = g.q_node(i);
    for (int j = 0; j < g.n_z(); ++j)
      v[static_cast<std::size_t>(i) * g.n_z() + j] = obs(pot, std::span<const double>(&q, 1), g.z_node(j), scratch);
  }
  return v;
}

/// Expectation of an observable under the grid measure h * weights. The
/// z-moments jump at the seam of the circle, so they are integrated against
/// the trigonometric interpolant of the z-marginal on a fine midpoint grid.
inline double grid_expectation(const Generators& g, const Potential& pot, const Observable& obs,
                               std::span<const double> h) {
  const int nq = g.n_q(), nz = g.n_z();
  if (obs.periodic()) {
    const auto v = nodal_values(g, pot, obs);
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) s += g.weights[k] * h[k] * v[k];
    return s;
  }
  std::vector<double> rho(nz, 0.0);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nz; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * nz + j;
      rho[j] += g.weights[k] * h[k];
    }
  const double Lz = g.domain.Lz;
  for (double& r : rho) r *= nz / Lz;
  const TrigInterpolant f(rho, Lz);
  const int m = 64 * nz;
  double s = 0.0, mass = 0.0;
  for (int k = 0; k < m; ++k) {
    const double z = Lz * (k + 0.5) / m;
    const double d = f(z);
    s += d * std::pow(z, obs.moment());
    mass += d;
  }
  return s / mass;
}

}  // namespace tamd
