#pragma once

// Periodic domains, trigonometric-polynomial potentials and the shared
// parameter set of the extended (q, z) dynamics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "tamd/errors.hpp"

namespace tamd {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Maps x into [0, period).
inline double wrap_coordinate(double x, double period) {
  double r = x - period * std::floor(x / period);
  if (r >= period) r -= period;  // x slightly below a multiple of period
  if (r < 0.0) r = 0.0;
  return r;
}

struct Domain {
  int d = 1;        ///< number of q components
  double Lq = 1.0;  ///< period of every q component
  double Lz = 1.0;  ///< period of z

  void validate() const {
    if (d < 1) throw ConfigError("domain: d must be >= 1, got " + std::to_string(d));
    if (!(Lq > 0.0)) throw ConfigError("domain: lq must be > 0");
    if (!(Lz > 0.0)) throw ConfigError("domain: lz must be > 0");
  }
};

/// One harmonic c*cos(2 pi k x / L) + s*sin(2 pi k x / L).
struct TrigTerm {
  int freq = 0;
  double cos_amp = 0.0;
  double sin_amp = 0.0;
};

/// Finite trigonometric polynomial of period L (L supplied at evaluation).
struct TrigSeries {
  std::vector<TrigTerm> terms;

  struct Jet {
    double value = 0.0, d1 = 0.0, d2 = 0.0;
  };

  Jet jet(double x, double period) const {
    Jet j;
    for (const auto& t : terms) {
      const double w = kTwoPi * t.freq / period;
      const double c = std::cos(w * x), s = std::sin(w * x);
      j.value += t.cos_amp * c + t.sin_amp * s;
      j.d1 += w * (-t.cos_amp * s + t.sin_amp * c);
      j.d2 -= w * w * (t.cos_amp * c + t.sin_amp * s);
    }
    return j;
  }
  double value(double x, double period) const { return jet(x, period).value; }

  /// Upper bound of |f^(order)| from the coefficients.
  double derivative_bound(int order, double period) const {
    double b = 0.0;
    for (const auto& t : terms) {
      const double w = kTwoPi * t.freq / period;
      b += std::pow(std::abs(w), order) * std::hypot(t.cos_amp, t.sin_amp);
    }
    return b;
  }
  int max_frequency() const {
    int m = 0;
    for (const auto& t : terms) m = std::max(m, std::abs(t.freq));
    return m;
  }

  void validate(const std::string& what) const {
    for (const auto& t : terms) {
      if (t.freq < 0) throw ConfigError(what + ": negative frequency " + std::to_string(t.freq));
      if (!std::isfinite(t.cos_amp) || !std::isfinite(t.sin_amp))
        throw ConfigError(what + ": non-finite amplitude");
    }
  }
};

/// U(q, z) = sum_i V(q_i) + W(z).
struct Separable {
  TrigSeries V;
  TrigSeries W;
};

/// U(q, z) = a sum_i cos(2 pi q_i/Lq) + eps sum_i cos(2 pi (q_i/Lq - z/Lz) + phase).
struct TiltedCoupling {
  double a = 1.0;
  double eps = 0.5;
  double phase = 0.0;
};

/// U(q, z) = sum_i V(q_i) + P(xi(q) - z) with the periodic penalty
/// P(u) = k (Lz/pi)^2 sin^2(pi u / Lz), which behaves as k u^2 near u = 0.
/// The collective variable xi(q) = Lz (q_1/Lq + xi_terms(q_1)) winds once
/// around the z-circle as q_1 winds once around its own circle.
struct CollectiveVariable {
  TrigSeries V;
  double k = 1.0;
  TrigSeries xi;
};

struct Derivatives {
  std::vector<double> grad_q;     ///< nabla_q U
  double dz = 0.0;                ///< d_z U
  double dzz = 0.0;               ///< d_z^2 U
  std::vector<double> grad_q_dz;  ///< nabla_q d_z U
};

/// Immutable potential energy on (L_q T)^d x (L_z T).
class Potential {
 public:
  using Kind = std::variant<Separable, TiltedCoupling, CollectiveVariable>;

  Potential(Domain domain, Kind kind) : domain_(domain), kind_(std::move(kind)) {
    domain_.validate();
    std::visit([](const auto& k) { validate_kind(k); }, kind_);
  }

  const Domain& domain() const { return domain_; }
  const Kind& kind() const { return kind_; }

  double evaluate(std::span<const double> q, double z) const {
    return std::visit([&](const auto& k) { return value_of(k, q, z); }, kind_);
  }

  /// Fills `out` (resized to d) with analytic derivatives at (q, z).
  void derivatives(std::span<const double> q, double z, Derivatives& out) const {
    out.grad_q.assign(q.size(), 0.0);
    out.grad_q_dz.assign(q.size(), 0.0);
    std::visit([&](const auto& k) { derivs_of(k, q, z, out); }, kind_);
  }

  /// Partial derivative d_z U only; the hot path of the mean-force estimator.
  double dz(std::span<const double> q, double z) const {
    Derivatives tmp;
    derivatives(q, z, tmp);
    return tmp.dz;
  }

  /// Upper bound on max |d^2 U / d q_i^2| over the domain.
  double q_curvature_bound() const {
    return std::visit([&](const auto& k) { return curvature_of(k); }, kind_);
  }

  /// Largest frequency present in either variable (grid-resolution hint).
  int max_frequency() const {
    return std::visit(
        [](const auto& k) -> int {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, Separable>)
            return std::max(k.V.max_frequency(), k.W.max_frequency());
          else if constexpr (std::is_same_v<T, TiltedCoupling>)
            return 1;
          else
            return std::max(k.V.max_frequency(), k.xi.max_frequency() + 1);
        },
        kind_);
  }

 private:
  static void validate_kind(const Separable& s) {
    s.V.validate("separable V");
    s.W.validate("separable W");
  }
  static void validate_kind(const TiltedCoupling& t) {
    if (!std::isfinite(t.a) || !std::isfinite(t.eps) || !std::isfinite(t.phase))
      throw ConfigError("tilted: non-finite coefficient");
  }
  static void validate_kind(const CollectiveVariable& c) {
    c.V.validate("cv V");
    c.xi.validate("cv xi");
    if (!(c.k >= 0.0)) throw ConfigError("cv: k must be >= 0");
  }

  double value_of(const Separable& s, std::span<const double> q, double z) const {
    double u = s.W.value(z, domain_.Lz);
    for (double qi : q) u += s.V.value(qi, domain_.Lq);
    return u;
  }
  void derivs_of(const Separable& s, std::span<const double> q, double z, Derivatives& out) const {
    for (std::size_t i = 0; i < q.size(); ++i) out.grad_q[i] = s.V.jet(q[i], domain_.Lq).d1;
    const auto w = s.W.jet(z, domain_.Lz);
    out.dz = w.d1;
    out.dzz = w.d2;
  }
  double curvature_of(const Separable& s) const { return s.V.derivative_bound(2, domain_.Lq); }

  double value_of(const TiltedCoupling& t, std::span<const double> q, double z) const {
    double u = 0.0;
    for (double qi : q) {
      u += t.a * std::cos(kTwoPi * qi / domain_.Lq) +
           t.eps * std::cos(kTwoPi * (qi / domain_.Lq - z / domain_.Lz) + t.phase);
    }
    return u;
  }
  void derivs_of(const TiltedCoupling& t, std::span<const double> q, double z, Derivatives& out) const {
    const double kq = kTwoPi / domain_.Lq, kz = kTwoPi / domain_.Lz;
    out.dz = 0.0;
    out.dzz = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double th = kTwoPi * (q[i] / domain_.Lq - z / domain_.Lz) + t.phase;
      const double s = std::sin(th), c = std::cos(th);
      out.grad_q[i] = -t.a * kq * std::sin(kq * q[i]) - t.eps * kq * s;
      out.dz += t.eps * kz * s;
      out.dzz -= t.eps * kz * kz * c;
      out.grad_q_dz[i] = t.eps * kz * kq * c;
    }
  }
  double curvature_of(const TiltedCoupling& t) const {
    const double kq = kTwoPi / domain_.Lq;
    return kq * kq * (std::abs(t.a) + std::abs(t.eps));
  }

  double value_of(const CollectiveVariable& c, std::span<const double> q, double z) const {
    double u = 0.0;
    for (double qi : q) u += c.V.value(qi, domain_.Lq);
    const double Lz = domain_.Lz;
    const double xi = Lz * (q[0] / domain_.Lq + c.xi.value(q[0], domain_.Lq));
    const double s = std::sin(std::numbers::pi * (xi - z) / Lz);
    return u + c.k * (Lz / std::numbers::pi) * (Lz / std::numbers::pi) * s * s;
  }
  void derivs_of(const CollectiveVariable& c, std::span<const double> q, double z, Derivatives& out) const {
    for (std::size_t i = 0; i < q.size(); ++i) out.grad_q[i] = c.V.jet(q[i], domain_.Lq).d1;
    const double Lz = domain_.Lz;
    const auto xj = c.xi.jet(q[0], domain_.Lq);
    const double xi = Lz * (q[0] / domain_.Lq + xj.value);
    const double dxi = Lz * (1.0 / domain_.Lq + xj.d1);
    const double arg = kTwoPi * (xi - z) / Lz;
    const double p1 = c.k * (Lz / std::numbers::pi) * std::sin(arg);  // P'(u)
    const double p2 = 2.0 * c.k * std::cos(arg);                      // P''(u)
    out.grad_q[0] += p1 * dxi;
    out.dz = -p1;
    out.dzz = p2;
    out.grad_q_dz[0] = -p2 * dxi;
  }
  double curvature_of(const CollectiveVariable& c) const {
    const double Lz = domain_.Lz;
    const double dxi = Lz * (1.0 / domain_.Lq + c.xi.derivative_bound(1, domain_.Lq));
    const double d2xi = Lz * c.xi.derivative_bound(2, domain_.Lq);
    return c.V.derivative_bound(2, domain_.Lq) + 2.0 * c.k * dxi * dxi +
           c.k * (Lz / std::numbers::pi) * d2xi;
  }

  Domain domain_;
  Kind kind_;
};

inline double evaluate(const Potential& pot, std::span<const double> q, double z) {
  return pot.evaluate(q, z);
}

inline Derivatives derivatives(const Potential& pot, std::span<const double> q, double z) {
  Derivatives d;
  pot.derivatives(q, z, d);
  return d;
}

/// Physical and artificial inverse temperatures, timescale separation and
/// integrator settings shared by the samplers and the grid solvers.
struct TamdParams {
  double beta = 1.0;
  double beta_bar = 1.0;
  double delta = 1.0;
  double gamma = 1.0;
  double mass = 1.0;
  double dt = 1e-3;
  long long n_steps = 1000;
  long long stride = 1;
  std::uint64_t seed = 1;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw ConfigError(std::string("params: ") + name + " must be a positive finite number");
    };
    positive(beta, "beta");
    positive(beta_bar, "beta_bar");
    positive(gamma, "gamma");
    positive(mass, "mass");
    positive(dt, "dt");
    if (!(delta > 0.0 && delta <= 1.0))
      throw ConfigError("params: delta must lie in (0, 1], got " + std::to_string(delta));
    if (n_steps < 0) throw ConfigError("params: n_steps must be >= 0");
    if (stride < 1) throw ConfigError("params: stride must be >= 1");
  }
};

/// Point of the extended phase space. `p` is present iff the dynamics is inertial.
struct State {
  std::vector<double> q;
  std::optional<std::vector<double>> p;
  double z = 0.0;
};

inline State wrap(const Domain& domain, State s) {
  for (double& qi : s.q) qi = wrap_coordinate(qi, domain.Lq);
  s.z = wrap_coordinate(s.z, domain.Lz);
  return s;
}

}  // namespace tamd
