#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/quadrature.hpp"

namespace nelson {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

/// Physical parameters of one run. Units: hbar = m = c = 1, omega(k) = |k|.
struct ModelParams {
  double eps = 0.1;     ///< UV regularization (Gaussian form factor exp(-eps k^2 / 2)).
  double lambda = 1.0;  ///< Infrared cutoff: modes with |k| < lambda are absent.
  double g = 0.0;       ///< Coupling constant.
  double big_t = 4.0;   ///< Half-length of the time window [-T, T].
  double tau = 2.0;     ///< Split between near-diagonal and off-diagonal parts, 0 < tau < T.

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("ModelParams: " + what); };
    if (!std::isfinite(eps) || !(eps > 0.0)) fail("eps must be finite and > 0");
    if (!std::isfinite(lambda) || !(lambda > 0.0)) fail("lambda must be finite and > 0");
    if (!std::isfinite(g)) fail("g must be finite");
    if (!std::isfinite(big_t) || !(big_t > 0.0)) fail("big_t must be finite and > 0");
    if (!std::isfinite(tau) || !(tau > 0.0 && tau < big_t)) fail("tau must satisfy 0 < tau < big_t");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Dispersion relation.
inline double omega(double k_norm) { return k_norm; }

/// Combined particle-plus-field propagator 1 / (omega(k) + |k|^2 / 2).
inline double beta(double k_norm) { return 1.0 / (omega(k_norm) + 0.5 * k_norm * k_norm); }

/// Spherical Bessel j0(z) = sin z / z.
inline double sph_j0(double z) {
  const double z2 = z * z;
  if (std::abs(z) < 1e-3) {
    return 1.0 - z2 / 6.0 * (1.0 - z2 / 20.0);
  }
  return std::sin(z) / z;
}

/// Spherical Bessel j1(z) = sin z / z^2 - cos z / z, with a series near 0.
inline double sph_j1(double z) {
  const double az = std::abs(z);
  if (az < 0.5) {
    const double z2 = z * z;
    // sum_k (-1)^k z^(2k+1) / ((2k+3)!! (2k)!!), truncated below 2e-18 for |z| < 0.5
    return z * (1.0 / 3.0 +
                z2 * (-1.0 / 30.0 +
                      z2 * (1.0 / 840.0 +
                            z2 * (-1.0 / 45360.0 +
                                  z2 * (1.0 / 3991680.0 + z2 * (-1.0 / 518918400.0 + z2 / 93405312000.0))))));
  }
  return std::sin(z) / (z * z) - std::cos(z) / z;
}

/// Quadrature-backed evaluator for the momentum-space integrals of the model.
///
/// Every integral over the shell |k| >= lambda is isotropic apart from the plane
/// wave exp(-i k.x), whose angular average is j0(|k||x|). All kernels therefore
/// reduce to radial integrals on [lambda, R] plus a certified Gaussian tail.
/// Evaluation is const and touches no mutable state.
class KernelEvaluator {
 public:
  KernelEvaluator(ModelParams params, QuadratureConfig quad) : params_(params), quad_(quad) {
    params_.validate();
    quad_.validate();
  }

  const ModelParams& params() const { return params_; }
  const QuadratureConfig& quad() const { return quad_; }

  /// Pair potential W(x, t) for |x| = x_norm.
  Estimate w_kernel(double x_norm, double t) const {
    check_finite(x_norm, t, "w_kernel");
    const double u = std::abs(t);
    const double rho = std::abs(x_norm);
    const double eps = params_.eps;
    auto f = [=](double r) { return kTwoPi * r * std::exp(-eps * r * r - r * u) * sph_j0(r * rho); };
    return radial({eps, u, 1.0, kTwoPi}, rho, f);
  }

  /// rho(x, t): W with the extra propagator factor beta(k).
  Estimate rho_kernel(double x_norm, double t) const {
    check_finite(x_norm, t, "rho_kernel");
    const double u = std::abs(t);
    const double rho = std::abs(x_norm);
    const double eps = params_.eps;
    auto f = [=](double r) {
      return kTwoPi * std::exp(-eps * r * r - r * u) * sph_j0(r * rho) / (1.0 + 0.5 * r);
    };
    return radial({eps, u, -1.0, 2.0 * kTwoPi}, rho, f);
  }

  /// d rho / d|x| at (|x| = x_norm, t). Odd in x_norm.
  Estimate rho_radial_derivative(double x_norm, double t) const {
    check_finite(x_norm, t, "rho_radial_derivative");
    const double u = std::abs(t);
    const double rho = x_norm;
    const double eps = params_.eps;
    auto f = [=](double r) {
      return -kTwoPi * r * std::exp(-eps * r * r - r * u) * sph_j1(r * rho) / (1.0 + 0.5 * r);
    };
    return radial({eps, u, 0.0, kTwoPi}, std::abs(rho), f);
  }

  /// Spatial gradient of rho at (x, t); zero at x = 0.
  Vec3 grad_rho(const Vec3& x, double t) const {
    for (double c : x) check_finite(c, t, "grad_rho");
    const double r = norm(x);
    if (r == 0.0) {
      return {0.0, 0.0, 0.0};
    }
    const double d = rho_radial_derivative(r, t).value / r;
    return {d * x[0], d * x[1], d * x[2]};
  }

  /// Renormalization energy at unit coupling, -rho(0, 0). Multiply by g^2 at use sites.
  Estimate renorm_energy() const {
    const Estimate r = rho_kernel(0.0, 0.0);
    return {-r.value, r.abs_error};
  }

  /// Same quantity from the counterterm integral
  ///   -int_{|k| > lambda} exp(-eps |k|^2) beta(k) / (2 omega(k)) dk
  /// evaluated on three-vectors in spherical coordinates (product angular rule).
  Estimate renorm_energy_3d() const {
    const double eps = params_.eps;
    const auto& dirs = angular_rule();
    auto f = [&](double r) {
      double acc = 0.0;
      for (const auto& [n, w] : dirs) {
        const Vec3 k{r * n[0], r * n[1], r * n[2]};
        const double kn = norm(k);
        acc += w * std::exp(-eps * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2])) * beta(kn) /
               (2.0 * omega(kn));
      }
      return 2.0 * kTwoPi * r * r * acc;
    };
    const Estimate e = radial({eps, 0.0, -1.0, 2.0 * kTwoPi}, 0.0, f);
    return {-e.value, e.abs_error};
  }

  /// c(tau) = 8 pi int_lambda^inf exp(-eps r^2 - tau r) dr at the configured tau.
  Estimate c_tau() const { return c_tau(params_.tau); }

  Estimate c_tau(double tau) const {
    if (!std::isfinite(tau) || !(tau > 0.0)) {
      throw std::domain_error("c_tau: tau must be finite and > 0");
    }
    const double eps = params_.eps;
    auto f = [=](double r) { return 8.0 * kPi * std::exp(-eps * r * r - tau * r); };
    return radial({eps, tau, 0.0, 8.0 * kPi}, 0.0, f);
  }

  /// I(eps, lambda) = int_{|k| >= lambda} exp(-eps |k|^2) / |k|^3 dk; the overlap
  /// lower bound is exp(-g^2 I).
  Estimate gamma_bound_exponent() const {
    const double eps = params_.eps;
    auto f = [=](double r) { return 2.0 * kTwoPi * std::exp(-eps * r * r) / r; };
    return radial({eps, 0.0, -1.0, 2.0 * kTwoPi}, 0.0, f);
  }

  /// Brownian average of W(B_u - B_0, u):
  ///   wbar(u) = int exp(-eps k^2) exp(-(omega + k^2/2) u) / (2 omega) dk.
  Estimate w_bar(double u) const {
    check_finite(u, 0.0, "w_bar");
    if (u < 0.0) throw std::domain_error("w_bar: u must be >= 0");
    const double eps = params_.eps;
    auto f = [=](double r) { return kTwoPi * r * std::exp(-eps * r * r - (r + 0.5 * r * r) * u); };
    return radial({eps + 0.5 * u, u, 1.0, kTwoPi}, 0.0, f);
  }

  /// int_0^inf wbar(u) du with the u-integral done in closed form.
  Estimate w_bar_integral() const {
    const double eps = params_.eps;
    auto f = [=](double r) { return kTwoPi * r * std::exp(-eps * r * r) / (r + 0.5 * r * r); };
    return radial({eps, 0.0, -1.0, 2.0 * kTwoPi}, 0.0, f);
  }

  /// E[S] over Brownian paths on [-T, T]:
  ///   2 int_0^{2T} (2T - u) wbar(u) du
  /// = 4 pi int r exp(-eps r^2) (a L + expm1(-a L)) / a^2 dr,  a = r + r^2/2, L = 2T.
  Estimate mean_s_quadrature(double big_t) const {
    check_finite(big_t, 0.0, "mean_s_quadrature");
    if (big_t < 0.0) throw std::domain_error("mean_s_quadrature: T must be >= 0");
    if (big_t == 0.0) return {0.0, 0.0};
    const double eps = params_.eps;
    const double len = 2.0 * big_t;
    auto f = [=](double r) {
      const double a = r + 0.5 * r * r;
      const double al = a * len;
      return 2.0 * kTwoPi * r * std::exp(-eps * r * r) * (al + std::expm1(-al)) / (a * a);
    };
    return radial({eps, 0.0, -1.0, 4.0 * kTwoPi * len}, 0.0, f);
  }

  /// int_0^L rho(0, u) du.
  Estimate rho_time_integral(double len) const {
    check_finite(len, 0.0, "rho_time_integral");
    if (len < 0.0) throw std::domain_error("rho_time_integral: L must be >= 0");
    const double eps = params_.eps;
    auto f = [=](double r) {
      return kTwoPi * std::exp(-eps * r * r) * (-std::expm1(-r * len)) / (r * (1.0 + 0.5 * r));
    };
    return radial({eps, 0.0, -2.0, 2.0 * kTwoPi}, 0.0, f);
  }

  /// Deterministic bound on |Z| for the split [s + tau] clamped to T:
  ///   2 int_{-T}^{T} rho(0, min(tau, T - s)) ds
  /// = 2 ((2T - tau) rho(0, tau) + int_0^tau rho(0, u) du),
  /// from |rho(x, u)| <= rho(0, u). A path frozen at the origin attains it.
  Estimate boundary_bound(double big_t, double tau) const {
    check_finite(big_t, tau, "boundary_bound");
    if (!(tau > 0.0 && tau <= 2.0 * big_t)) throw std::domain_error("boundary_bound: need 0 < tau <= 2T");
    const Estimate r = rho_kernel(0.0, tau);
    const Estimate i = rho_time_integral(tau);
    return {2.0 * ((2.0 * big_t - tau) * r.value + i.value),
            2.0 * ((2.0 * big_t - tau) * r.abs_error + i.abs_error)};
  }

  /// Radius beyond which the tail of a majorant r^power exp(-eps r^2 - rate r)
  /// is certified below the tail budget.
  double tail_cut_for(double rate, double power, double scale) const {
    return tail_radius(params_.eps, rate, power, scale, params_.lambda, tail_budget());
  }

 private:
  static constexpr double kPi = std::numbers::pi;
  static constexpr double kTwoPi = 2.0 * std::numbers::pi;
  // Panels for oscillatory splitting kick in above this many radians of sin(r|x|).
  static constexpr double kOscillationThreshold = 50.0;

  struct Majorant {
    double eps;
    double rate;
    double power;
    double scale;
  };

  double tail_budget() const { return 0.1 * quad_.abs_tol; }

  static void check_finite(double a, double b, const char* who) {
    if (!std::isfinite(a) || !std::isfinite(b)) {
      throw std::domain_error(std::string(who) + ": non-finite argument");
    }
  }

  template <class F>
  Estimate radial(const Majorant& m, double oscillation, const F& f) const {
    const double lower = params_.lambda;
    double upper = 0.0;
    double tail = 0.0;
    if (quad_.tail_cut > 0.0) {
      upper = std::max(quad_.tail_cut, lower);
      tail = tail_bound(m.eps, m.rate, m.power, m.scale, upper);
      if (!(tail <= quad_.abs_tol)) {
        throw QuadratureError("configured tail_cut does not certify the tail below abs_tol", tail);
      }
    } else {
      upper = tail_radius(m.eps, m.rate, m.power, m.scale, lower, tail_budget());
      tail = upper > lower ? tail_bound(m.eps, m.rate, m.power, m.scale, upper) : 0.0;
      if (upper == lower) {
        // Whole integral is below the tail budget.
        return {0.0, tail_bound(m.eps, m.rate, m.power, m.scale, lower)};
      }
    }

    const double budget = quad_.abs_tol - tail;
    if (oscillation * upper <= kOscillationThreshold) {
      Estimate e = integrate_adaptive(f, lower, upper, quad_.rel_tol, budget, quad_.max_subdivisions);
      return {e.value, e.abs_error + tail};
    }

    // Integrate between consecutive zeros of sin(r |x|).
    std::vector<double> cuts{lower};
    const double period = std::numbers::pi / oscillation;
    for (double n = std::floor(lower / period) + 1.0; n * period < upper; n += 1.0) {
      cuts.push_back(n * period);
    }
    cuts.push_back(upper);
    const double panel_budget = budget / static_cast<double>(cuts.size() - 1);
    CompensatedSum value;
    double error = tail;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const Estimate e = integrate_adaptive(f, cuts[i], cuts[i + 1], quad_.rel_tol, panel_budget,
                                            quad_.max_subdivisions);
      value.add(e.value);
      error += e.abs_error;
    }
    return {value.value(), error};
  }

  /// Product rule on the unit sphere: 8-point Gauss-Legendre in cos(theta)
  /// times 16 equispaced azimuths. Weights sum to 1 (angular average).
  static const std::vector<std::pair<Vec3, double>>& angular_rule() {
    static const std::vector<std::pair<Vec3, double>> rule = [] {
      using boost::math::quadrature::gauss;
      const auto& x = gauss<double, 8>::abscissa();
      const auto& w = gauss<double, 8>::weights();
      constexpr int kAzimuths = 16;
      std::vector<std::pair<Vec3, double>> out;
      for (std::size_t i = 0; i < x.size(); ++i) {
        for (double sign : {-1.0, 1.0}) {
          const double c = sign * x[i];
          const double s = std::sqrt(1.0 - c * c);
          for (int j = 0; j < kAzimuths; ++j) {
            const double phi = kTwoPi * (j + 0.5) / kAzimuths;
            out.push_back({Vec3{s * std::cos(phi), s * std::sin(phi), c}, 0.5 * w[i] / kAzimuths});
          }
        }
      }
      return out;
    }();
    return rule;
  }

  ModelParams params_;
  QuadratureConfig quad_;
};

}  // namespace nelson
