#pragma once

// Differentiation matrices on uniform periodic grids and trigonometric
// interpolation of nodal data.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/model.hpp"

namespace tamd {

enum class Scheme { Spectral, Fd2 };

inline std::string to_string(Scheme s) { return s == Scheme::Spectral ? "spectral" : "fd2"; }

/// First-derivative matrix on n equispaced nodes of [0, L). Antisymmetric for
/// both schemes.
inline Eigen::MatrixXd diff1(Scheme scheme, int n, double L) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  if (scheme == Scheme::Spectral) {
    if (n % 2 != 0) throw ConfigError("spectral differentiation needs an even node count");
    const double h = kTwoPi / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const int k = i - j;
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        D(i, j) = 0.5 * sign / std::tan(0.5 * k * h);
      }
    D *= kTwoPi / L;
  } else {
    const double dx = L / n;
    for (int i = 0; i < n; ++i) {
      D(i, (i + 1) % n) += 0.5 / dx;
      D(i, (i + n - 1) % n) -= 0.5 / dx;
    }
  }
  return D;
}

/// Second-derivative matrix. For the spectral scheme this is the exact
/// Fourier second derivative (the Nyquist mode is not annihilated).
inline Eigen::MatrixXd diff2(Scheme scheme, int n, double L) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  if (scheme == Scheme::Spectral) {
    if (n % 2 != 0) throw ConfigError("spectral differentiation needs an even node count");
    const double h = kTwoPi / n;
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const int k = i - j;
        if (k == 0) {
          D(i, j) = -pi2 / (3.0 * h * h) - 1.0 / 6.0;
        } else {
          const double sign = (k % 2 == 0) ? 1.0 : -1.0;
          const double s = std::sin(0.5 * k * h);
          D(i, j) = -0.5 * sign / (s * s);
        }
      }
    D *= (kTwoPi / L) * (kTwoPi / L);
  } else {
    const double dx = L / n;
    for (int i = 0; i < n; ++i) {
      D(i, i) -= 2.0 / (dx * dx);
      D(i, (i + 1) % n) += 1.0 / (dx * dx);
      D(i, (i + n - 1) % n) += 1.0 / (dx * dx);
    }
  }
  return D;
}

/// Matrix of f -> rho^{-1} (rho f')' for a positive nodal weight rho.
///
/// rho * K is symmetric and negative semidefinite with kernel {constants},
/// so K is self-adjoint in the rho-weighted inner product and annihilates
/// constants exactly. For constant rho it reduces to diff2. The spectral form
/// is D1 rho D1 plus mean(rho) (D2 - D1 D1); the second term acts only on the
/// Nyquist mode, which D1 cannot see. The fd2 form is the compact flux stencil
/// with arithmetic mid-point weights.
class WeightedLaplacian {
 public:
  WeightedLaplacian(Scheme scheme, int n, double L) : scheme_(scheme), n_(n), L_(L) {
    if (scheme == Scheme::Spectral) {
      d1_ = diff1(scheme, n, L);
      nyquist_ = diff2(scheme, n, L) - d1_ * d1_;
    }
  }

  Eigen::MatrixXd operator()(std::span<const double> rho) const {
    Eigen::MatrixXd S(n_, n_);
    double mean = 0.0;
    for (double r : rho) mean += r;
    mean /= n_;
    if (scheme_ == Scheme::Spectral) {
      Eigen::Map<const Eigen::VectorXd> r(rho.data(), n_);
      S.noalias() = d1_ * r.asDiagonal() * d1_;
      S += mean * nyquist_;
    } else {
      S.setZero();
      const double dx = L_ / n_;
      for (int i = 0; i < n_; ++i) {
        const int ip = (i + 1) % n_;
        const double flux = 0.5 * (rho[i] + rho[ip]) / (dx * dx);
        S(i, ip) += flux;
        S(ip, i) += flux;
        S(i, i) -= flux;
        S(ip, ip) -= flux;
      }
    }
    for (int i = 0; i < n_; ++i) S.row(i) /= rho[i];
    return S;
  }

  const Eigen::MatrixXd& d1() const { return d1_; }

 private:
  Scheme scheme_;
  int n_;
  double L_;
  Eigen::MatrixXd d1_;
  Eigen::MatrixXd nyquist_;
};

/// Trigonometric interpolant of samples f_j = f(j L / n), n even.
class TrigInterpolant {
 public:
  TrigInterpolant() = default;
  TrigInterpolant(std::span<const double> values, double L) : L_(L), n_(static_cast<int>(values.size())) {
    if (n_ < 2 || n_ % 2 != 0) throw ConfigError("trigonometric interpolation needs an even node count");
    const int half = n_ / 2;
    a_.assign(half + 1, 0.0);
    b_.assign(half + 1, 0.0);
    for (int k = 0; k <= half; ++k) {
      double sa = 0.0, sb = 0.0;
      for (int j = 0; j < n_; ++j) {
        const double th = kTwoPi * static_cast<double>(k) * j / n_;
        sa += values[j] * std::cos(th);
        sb += values[j] * std::sin(th);
      }
      a_[k] = 2.0 * sa / n_;
      b_[k] = 2.0 * sb / n_;
    }
    a_[0] *= 0.5;
    a_[half] *= 0.5;
    b_[half] = 0.0;
  }

  /// Value at x; x must lie in [0, L).
  double operator()(double x) const {
    if (!(x >= 0.0 && x < L_))
      throw GuardError("trigonometric interpolant evaluated outside one period: x = " + std::to_string(x));
    const double th = kTwoPi * x / L_;
    const double c1 = std::cos(th), s1 = std::sin(th);
    double ck = 1.0, sk = 0.0, acc = a_[0];
    for (std::size_t k = 1; k < a_.size(); ++k) {
      const double cn = ck * c1 - sk * s1;
      sk = sk * c1 + ck * s1;
      ck = cn;
      acc += a_[k] * ck + b_[k] * sk;
    }
    return acc;
  }

  double period() const { return L_; }
  int nodes() const { return n_; }

 private:
  double L_ = 1.0;
  int n_ = 0;
  std::vector<double> a_, b_;
};

}  // namespace tamd
