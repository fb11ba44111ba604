#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace nelson {

/// Tolerances for all radial integrals.
struct QuadratureConfig {
  double rel_tol = 1e-12;
  double abs_tol = 1e-14;
  int max_subdivisions = 4000;
  /// Upper truncation radius; 0 lets the evaluator pick the smallest radius
  /// whose certified tail bound is below abs_tol / 10.
  double tail_cut = 0.0;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
      throw std::invalid_argument("QuadratureConfig: tolerances must be positive");
    }
    if (max_subdivisions < 1) {
      throw std::invalid_argument("QuadratureConfig: max_subdivisions must be >= 1");
    }
    if (!(tail_cut >= 0.0) || !std::isfinite(tail_cut)) {
      throw std::invalid_argument("QuadratureConfig: tail_cut must be finite and >= 0");
    }
  }

  friend bool operator==(const QuadratureConfig&, const QuadratureConfig&) = default;
};

/// A value together with an absolute error estimate.
struct Estimate {
  double value = 0.0;
  double abs_error = 0.0;

  operator double() const { return value; }  // NOLINT(google-explicit-constructor)
};

/// Thrown when adaptive subdivision runs out of budget.
class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(const std::string& what, double achieved_error)
      : std::runtime_error(what), achieved_error_(achieved_error) {}

  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

namespace detail {

struct Panel {
  double a;
  double b;
  double value;
  double error;

  bool operator<(const Panel& other) const { return error < other.error; }
};

/// 21-point Kronrod rule with embedded 10-point Gauss rule on [a, b].
template <class F>
Panel kronrod21(const F& f, double a, double b) {
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  const auto& x = gauss_kronrod<double, 21>::abscissa();
  const auto& wk = gauss_kronrod<double, 21>::weights();
  const auto& wg = gauss<double, 10>::weights();

  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);

  // Odd Kronrod indices carry the Gauss nodes; the 10-point rule has no
  // node at the origin.
  const double f0 = f(center);
  double kronrod = f0 * wk[0];
  double gauss_sum = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double dx = half * x[i];
    const double pair = f(center - dx) + f(center + dx);
    kronrod += pair * wk[i];
    if (i % 2 == 1) {
      gauss_sum += pair * wg[i / 2];
    }
  }
  kronrod *= half;
  gauss_sum *= half;
  const double roundoff = 50.0 * std::numeric_limits<double>::epsilon() * std::abs(kronrod);
  return {a, b, kronrod, std::max(std::abs(kronrod - gauss_sum), roundoff)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod integration of f over [a, b].
///
/// Bisects the panel with the largest error estimate until the summed error is
/// below max(abs_tol, rel_tol * |I|). Throws QuadratureError carrying the
/// achieved error when `max_subdivisions` panels are not enough.
template <class F>
Estimate integrate_adaptive(const F& f, double a, double b, double rel_tol, double abs_tol,
                            int max_subdivisions) {
  if (!(std::isfinite(a) && std::isfinite(b))) {
    throw std::domain_error("integrate_adaptive: non-finite interval");
  }
  if (a == b) {
    return {0.0, 0.0};
  }
  std::priority_queue<detail::Panel> panels;
  panels.push(detail::kronrod21(f, a, b));
  double total_value = panels.top().value;
  double total_error = panels.top().error;

  auto converged = [&] {
    return total_error <= std::max(abs_tol, rel_tol * std::abs(total_value));
  };

  int count = 1;
  while (!converged()) {
    if (count >= max_subdivisions) {
      std::ostringstream msg;
      msg << "adaptive quadrature on [" << a << ", " << b << "] did not converge in "
          << max_subdivisions << " panels (error " << total_error << ")";
      throw QuadratureError(msg.str(), total_error);
    }
    const detail::Panel worst = panels.top();
    panels.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) {
      // Panel has collapsed to adjacent doubles; nothing more to gain.
      throw QuadratureError("adaptive quadrature: panel collapsed below machine resolution",
                            total_error);
    }
    const detail::Panel left = detail::kronrod21(f, worst.a, mid);
    const detail::Panel right = detail::kronrod21(f, mid, worst.b);
    total_value += left.value + right.value - worst.value;
    total_error += left.error + right.error - worst.error;
    panels.push(left);
    panels.push(right);
    ++count;
  }

  // Re-sum from the panels to shed the drift of the running updates.
  CompensatedSum value;
  CompensatedSum error;
  while (!panels.empty()) {
    value.add(panels.top().value);
    error.add(panels.top().error);
    panels.pop();
  }
  return {value.value(), error.value()};
}

/// Gauss-Legendre nodes and weights on [a, b], split into `panels` equal pieces
/// with ten points each. Used for fixed-node tabulation.
struct FixedRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline FixedRule composite_gauss_legendre(double a, double b, int panels) {
  using boost::math::quadrature::gauss;
  const auto& x = gauss<double, 10>::abscissa();
  const auto& w = gauss<double, 10>::weights();
  FixedRule rule;
  rule.nodes.reserve(static_cast<std::size_t>(panels) * 10);
  rule.weights.reserve(static_cast<std::size_t>(panels) * 10);
  const double width = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double center = a + (p + 0.5) * width;
    const double half = 0.5 * width;
    for (std::size_t i = 0; i < x.size(); ++i) {
      rule.nodes.push_back(center - half * x[i]);
      rule.weights.push_back(half * w[i]);
      rule.nodes.push_back(center + half * x[i]);
      rule.weights.push_back(half * w[i]);
    }
  }
  return rule;
}

/// Certified radius for a Gaussian-damped radial tail.
///
/// For r >= R the majorant h(r) = scale * r^power * exp(-eps r^2 - rate r) has
/// log-derivative at most -kappa(R) = power+/R - 2 eps R - rate, so
/// int_R^inf h <= h(R) / kappa(R). Returns the smallest R >= lower (to within
/// bisection resolution) with that bound below `budget`.
inline double tail_radius(double eps, double rate, double power, double scale, double lower,
                          double budget) {
  auto bound = [&](double r) {
    const double kappa = 2.0 * eps * r + rate - std::max(power, 0.0) / r;
    if (kappa <= 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    const double log_h = std::log(scale) + power * std::log(r) - eps * r * r - rate * r;
    return std::exp(log_h) / kappa;
  };
  double lo = std::max(lower, 1e-300);
  if (bound(lo) <= budget) {
    return lo;
  }
  double hi = std::max(2.0 * lo, 1.0);
  while (!(bound(hi) <= budget)) {
    hi *= 2.0;
    if (hi > 1e12) {
      throw std::domain_error("tail_radius: integrand is not integrable to the requested budget");
    }
  }
  for (int it = 0; it < 80 && hi - lo > 1e-9 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (bound(mid) <= budget ? hi : lo) = mid;
  }
  return hi;
}

/// Tail bound value at R, matching tail_radius.
inline double tail_bound(double eps, double rate, double power, double scale, double r) {
  const double kappa = 2.0 * eps * r + rate - std::max(power, 0.0) / r;
  if (kappa <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return std::exp(std::log(scale) + power * std::log(r) - eps * r * r - rate * r) / kappa;
}

}  // namespace nelson
