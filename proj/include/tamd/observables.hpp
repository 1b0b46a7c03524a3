#pragma once

#include <charconv>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tamd/errors.hpp"
#include "tamd/model.hpp"

namespace tamd {

/// A registered observable phi(q, z). Names:
///   cos_q          mean over components of cos(2 pi q_i / Lq)
///   cos_z, sin_z   cos(2 pi z / Lz), sin(2 pi z / Lz)
///   z_moment(k)    z^k with z in [0, Lz)
///   dz_u           d_z U(q, z), the mean-force integrand
///   mixed(c1,c2)   c1 cos_q + c2 cos_z
class Observable {
 public:
  enum class Kind { CosQ, CosZ, SinZ, ZMoment, DzU, Mixed };

  static Observable parse(std::string_view text) {
    std::string s;
    for (char ch : text)
      if (ch != ' ' && ch != '\t') s.push_back(ch);
    Observable o;
    o.name_ = s;
    if (s == "cos_q") {
      o.kind_ = Kind::CosQ;
    } else if (s == "cos_z") {
      o.kind_ = Kind::CosZ;
    } else if (s == "sin_z") {
      o.kind_ = Kind::SinZ;
    } else if (s == "dz_u") {
      o.kind_ = Kind::DzU;
    } else if (s.starts_with("z_moment(") && s.ends_with(")")) {
      o.kind_ = Kind::ZMoment;
      const auto args = arguments(s, 9);
      if (args.size() != 1 || args[0] < 1 || args[0] != std::floor(args[0]))
        throw ConfigError("observable '" + s + "': z_moment takes one positive integer");
      o.k_ = static_cast<int>(args[0]);
    } else if (s.starts_with("mixed(") && s.ends_with(")")) {
      o.kind_ = Kind::Mixed;
      const auto args = arguments(s, 6);
      if (args.size() != 2) throw ConfigError("observable '" + s + "': mixed takes two coefficients");
      o.c1_ = args[0];
      o.c2_ = args[1];
    } else {
      throw ConfigError("unknown observable '" + s + "'");
    }
    return o;
  }

  const std::string& name() const { return name_; }
  Kind kind() const { return kind_; }
  bool depends_on_q() const { return kind_ == Kind::CosQ || kind_ == Kind::DzU || kind_ == Kind::Mixed; }
  /// False for z_moment, which jumps at the seam of the z-circle.
  bool periodic() const { return kind_ != Kind::ZMoment; }
  int moment() const { return k_; }

  double operator()(const Potential& pot, std::span<const double> q, double z, Derivatives& scratch) const {
    const auto& dom = pot.domain();
    switch (kind_) {
      case Kind::CosQ:
        return cos_q(q, dom.Lq);
      case Kind::CosZ:
        return std::cos(kTwoPi * z / dom.Lz);
      case Kind::SinZ:
        return std::sin(kTwoPi * z / dom.Lz);
      case Kind::ZMoment:
        return std::pow(z, k_);
      case Kind::DzU:
        pot.derivatives(q, z, scratch);
        return scratch.dz;
      case Kind::Mixed:
        return c1_ * cos_q(q, dom.Lq) + c2_ * std::cos(kTwoPi * z / dom.Lz);
    }
    return 0.0;
  }

  double operator()(const Potential& pot, std::span<const double> q, double z) const {
    Derivatives scratch;
    return (*this)(pot, q, z, scratch);
  }

 private:
  static double cos_q(std::span<const double> q, double Lq) {
    double s = 0.0;
    for (double qi : q) s += std::cos(kTwoPi * qi / Lq);
    return s / static_cast<double>(q.size());
  }

  static std::vector<double> arguments(const std::string& s, std::size_t open) {
    std::vector<double> out;
    std::stringstream ss(s.substr(open, s.size() - open - 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ConfigError("observable '" + s + "': bad argument '" + tok + "'");
      out.push_back(v);
    }
    return out;
  }

  std::string name_;
  Kind kind_ = Kind::CosQ;
  int k_ = 1;
  double c1_ = 0.0, c2_ = 0.0;
};

inline std::vector<Observable> parse_observables(const std::vector<std::string>& names) {
  std::vector<Observable> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(Observable::parse(n));
  return out;
}

/// The full registered set, one instance per family.
inline std::vector<std::string> registered_observable_names() {
  return {"cos_q", "cos_z", "sin_z", "z_moment(1)", "dz_u", "mixed(0.5,1)"};
}

}  // namespace tamd
