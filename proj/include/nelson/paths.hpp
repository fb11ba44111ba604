#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nelson/kernels.hpp"
#include "nelson/quadrature.hpp"
#include "nelson/rng.hpp"

namespace nelson {

/// Uniform time grid on [-T, T] with an even number of steps, so that -T, 0
/// and T are grid points.
struct PathGrid {
  double big_t = 4.0;
  int n_steps = 160;

  PathGrid() = default;
  PathGrid(double horizon, int steps) : big_t(horizon), n_steps(steps) { validate(); }

  /// Grid with spacing as close to `dt` as possible (rounded to an even step count).
  static PathGrid with_spacing(double horizon, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("PathGrid: dt must be > 0");
    int steps = static_cast<int>(std::lround(2.0 * horizon / dt));
    steps += steps % 2;
    return PathGrid(horizon, std::max(steps, 2));
  }

  double dt() const { return 2.0 * big_t / n_steps; }
  double time(int i) const { return -big_t + i * dt(); }

  /// Grid index of time t; throws std::domain_error if t is not a grid point.
  int index_of(double t) const {
    const double x = (t + big_t) / dt();
    const double i = std::round(x);
    if (std::abs(x - i) > 1e-9 * std::max(1.0, std::abs(x)) || i < 0 || i > n_steps) {
      throw std::domain_error("PathGrid: time " + std::to_string(t) + " is not a grid point");
    }
    return static_cast<int>(i);
  }

  /// Lag (in steps) equal to the duration `span`; throws if not a whole number of steps.
  int steps_of(double span) const {
    const double x = span / dt();
    const double i = std::round(x);
    if (std::abs(x - i) > 1e-9 * std::max(1.0, std::abs(x))) {
      throw std::domain_error("PathGrid: duration " + std::to_string(span) +
                              " is not a multiple of dt");
    }
    return static_cast<int>(i);
  }

  void validate() const {
    if (!std::isfinite(big_t) || !(big_t > 0.0)) throw std::invalid_argument("PathGrid: big_t must be > 0");
    if (n_steps < 2 || n_steps % 2 != 0) throw std::invalid_argument("PathGrid: n_steps must be even and >= 2");
  }

  friend bool operator==(const PathGrid&, const PathGrid&) = default;
};

/// Discretized three-dimensional Brownian path on [-T, T], anchored at 0 at -T.
struct BrownianPath {
  PathGrid grid;
  std::vector<Vec3> increments;  ///< increments[i] = B(t_{i+1}) - B(t_i)
  std::vector<Vec3> positions;   ///< positions[0] = 0, n_steps + 1 entries

  static BrownianPath from_increments(const PathGrid& grid, std::vector<Vec3> increments) {
    if (increments.size() != static_cast<std::size_t>(grid.n_steps)) {
      throw std::invalid_argument("BrownianPath: increment count does not match grid");
    }
    BrownianPath path{grid, std::move(increments), {}};
    path.positions.resize(path.increments.size() + 1);
    path.positions[0] = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < path.increments.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        path.positions[i + 1][c] = path.positions[i][c] + path.increments[i][c];
      }
    }
    return path;
  }

  /// Path with every increment zero.
  static BrownianPath frozen(const PathGrid& grid) {
    return from_increments(grid, std::vector<Vec3>(static_cast<std::size_t>(grid.n_steps), Vec3{}));
  }

  /// The same path on a grid `factor` times coarser (adjacent increments summed).
  BrownianPath coarsened(int factor) const {
    if (factor < 1 || grid.n_steps % factor != 0 || (grid.n_steps / factor) % 2 != 0) {
      throw std::invalid_argument("BrownianPath: coarsening factor must leave an even step count");
    }
    std::vector<Vec3> inc(increments.size() / static_cast<std::size_t>(factor), Vec3{});
    for (std::size_t i = 0; i < increments.size(); ++i) {
      for (int c = 0; c < 3; ++c) inc[i / static_cast<std::size_t>(factor)][c] += increments[i][c];
    }
    return from_increments(PathGrid(grid.big_t, grid.n_steps / factor), std::move(inc));
  }

  /// Time-reversed path: increments negated and taken in reverse order.
  BrownianPath reversed() const {
    std::vector<Vec3> inc(increments.rbegin(), increments.rend());
    for (auto& v : inc) v = {-v[0], -v[1], -v[2]};
    return from_increments(grid, std::move(inc));
  }
};

inline BrownianPath sample_path(const PathGrid& grid, const RandomStream& stream) {
  grid.validate();
  auto engine = stream.engine();
  std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt()));
  std::vector<Vec3> inc(static_cast<std::size_t>(grid.n_steps));
  for (auto& v : inc) {
    v = {normal(engine), normal(engine), normal(engine)};
  }
  return BrownianPath::from_increments(grid, std::move(inc));
}

/// W, rho and d rho / d|x| tabulated at every lag of a fixed time step and on a
/// uniform grid in |x|, evaluated by 4-point Lagrange interpolation in |x|.
///
/// Lags hit table rows exactly, so only the spatial direction is interpolated.
/// Table entries come from a fixed composite Gauss-Legendre rule in the radial
/// momentum (one matrix product per kernel); lookups beyond the tabulated
/// |x| range fall back to the adaptive evaluator.
class PairKernelTable {
 public:
  struct Options {
    /// Spatial spacing is x_step_scale * sqrt(eps).
    double x_step_scale = 0.15;
    /// |x| range covers x_range_sigmas standard deviations of a 3D Brownian
    /// displacement over the longest lag, plus one unit.
    double x_range_sigmas = 8.0;
    bool with_rho = true;
  };

  PairKernelTable(const KernelEvaluator& kernels, double dt, int max_lag)
      : PairKernelTable(kernels, dt, max_lag, Options{}) {}

  PairKernelTable(const KernelEvaluator& kernels, double dt, int max_lag, Options options)
      : kernels_(kernels), dt_(dt), max_lag_(max_lag), with_rho_(options.with_rho) {
    if (!(dt > 0.0) || max_lag < 0) throw std::invalid_argument("PairKernelTable: bad dt or max_lag");
    const double eps = kernels.params().eps;
    h_ = options.x_step_scale * std::sqrt(eps);
    x_max_ = options.x_range_sigmas * std::sqrt(std::max(max_lag, 1) * dt) + 1.0;
    n_x_ = static_cast<int>(std::ceil(x_max_ / h_)) + 4;
    x_max_ = (n_x_ - 4) * h_;
    build();
  }

  double dt() const { return dt_; }
  int max_lag() const { return max_lag_; }
  double x_step() const { return h_; }
  double x_max() const { return x_max_; }
  bool has_rho() const { return with_rho_; }
  const KernelEvaluator& kernels() const { return kernels_; }

  double w(int lag, double x_norm) const { return lookup(w_, lag, x_norm, Kind::W); }
  double rho(int lag, double x_norm) const { return lookup(rho_, lag, x_norm, Kind::Rho); }
  double rho_radial_derivative(int lag, double x_norm) const {
    return lookup(drho_, lag, x_norm, Kind::DRho);
  }

  /// grad rho(x, lag dt) . v
  double grad_rho_dot(int lag, const Vec3& x, const Vec3& v) const {
    const double r = norm(x);
    if (r == 0.0) return 0.0;
    return rho_radial_derivative(lag, r) / r * (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]);
  }

 private:
  enum class Kind { W, Rho, DRho };

  void build() {
    const ModelParams& p = kernels_.params();
    const double eps = p.eps;
    // Radial cutoff: tail of 2 pi r exp(-eps r^2) below 1e-13 (the steepest
    // majorant among the three kernels at lag 0).
    const double upper = tail_radius(eps, 0.0, 1.0, 2.0 * std::numbers::pi, p.lambda, 1e-13);
    const double panel_width = std::min(0.5, 4.0 / x_max_);
    const int panels = std::max(1, static_cast<int>(std::ceil((upper - p.lambda) / panel_width)));
    const FixedRule rule = composite_gauss_legendre(p.lambda, upper, panels);
    const Eigen::Index n_r = static_cast<Eigen::Index>(rule.nodes.size());

    Eigen::MatrixXd decay(n_r, max_lag_ + 1);
    for (Eigen::Index m = 0; m < n_r; ++m) {
      const double r = rule.nodes[static_cast<std::size_t>(m)];
      for (int lag = 0; lag <= max_lag_; ++lag) decay(m, lag) = std::exp(-r * lag * dt_);
    }

    const double two_pi = 2.0 * std::numbers::pi;
    auto tabulate = [&](auto&& radial_factor, auto&& spatial) {
      Eigen::MatrixXd a(n_x_, n_r);
      for (Eigen::Index m = 0; m < n_r; ++m) {
        const double r = rule.nodes[static_cast<std::size_t>(m)];
        const double base = two_pi * rule.weights[static_cast<std::size_t>(m)] *
                            std::exp(-eps * r * r) * radial_factor(r);
        for (int j = 0; j < n_x_; ++j) a(j, m) = base * spatial(r, node(j));
      }
      // Row-major by lag: [lag][x].
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
          (a * decay).transpose();
      return std::vector<double>(out.data(), out.data() + out.size());
    };

    w_ = tabulate([](double r) { return r; }, [](double r, double x) { return sph_j0(r * x); });
    if (with_rho_) {
      rho_ = tabulate([](double r) { return 1.0 / (1.0 + 0.5 * r); },
                      [](double r, double x) { return sph_j0(r * x); });
      drho_ = tabulate([](double r) { return -r / (1.0 + 0.5 * r); },
                       [](double r, double x) { return sph_j1(r * x); });
    }
  }

  // Column j holds |x| = (j - 1) h; column 0 is the mirror image at -h.
  double node(int j) const { return (j - 1) * h_; }

  double lookup(const std::vector<double>& table, int lag, double x_norm, Kind kind) const {
    if (lag < 0 || lag > max_lag_) throw std::out_of_range("PairKernelTable: lag out of range");
    if (kind != Kind::W && !with_rho_) throw std::logic_error("PairKernelTable: built without rho tables");
    if (!(x_norm < x_max_)) {
      return fallback(lag, x_norm, kind);
    }
    const double s = x_norm / h_;
    const int i = static_cast<int>(s);
    const double t = s - i;
    const double* row = table.data() + static_cast<std::size_t>(lag) * n_x_ + i;
    const double tm1 = t - 1.0;
    const double tm2 = t - 2.0;
    const double tp1 = t + 1.0;
    return -t * tm1 * tm2 / 6.0 * row[0] + tp1 * tm1 * tm2 / 2.0 * row[1] -
           tp1 * t * tm2 / 2.0 * row[2] + tp1 * t * tm1 / 6.0 * row[3];
  }

  double fallback(int lag, double x_norm, Kind kind) const {
    const double u = lag * dt_;
    switch (kind) {
      case Kind::W:
        return kernels_.w_kernel(x_norm, u).value;
      case Kind::Rho:
        return kernels_.rho_kernel(x_norm, u).value;
      case Kind::DRho:
        return kernels_.rho_radial_derivative(x_norm, u).value;
    }
    return 0.0;
  }

  KernelEvaluator kernels_;
  double dt_;
  int max_lag_;
  bool with_rho_;
  double h_ = 0.0;
  double x_max_ = 0.0;
  int n_x_ = 0;
  std::vector<double> w_;
  std::vector<double> rho_;
  std::vector<double> drho_;
};

/// Per-path values of the pair action and its renormalized decomposition.
struct PathFunctionals {
  double s_full = 0.0;      ///< S: double integral of W over [-T, T]^2
  double s_od = 0.0;        ///< off-diagonal part, t beyond the clamped split point
  double y_ito = 0.0;       ///< stochastic-integral term
  double z_boundary = 0.0;  ///< boundary term
  double s_ren = 0.0;       ///< s_od + y_ito + z_boundary
};

namespace detail {

inline double trapezoid_weight(int i, int n, double dt) { return (i == 0 || i == n) ? 0.5 * dt : dt; }

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline void check_table(const BrownianPath& path, const PairKernelTable& table, int lags_needed) {
  const double dt = path.grid.dt();
  if (std::abs(table.dt() - dt) > 1e-12 * dt) {
    throw std::invalid_argument("kernel table time step does not match the path grid");
  }
  if (table.max_lag() < lags_needed) {
    throw std::invalid_argument("kernel table does not cover the path horizon");
  }
}

}  // namespace detail

/// Trapezoid double sum of W(B_t - B_s, t - s) over the grid.
inline double s_full(const BrownianPath& path, const PairKernelTable& table) {
  const int n = path.grid.n_steps;
  detail::check_table(path, table, n);
  const double dt = path.grid.dt();
  const auto& b = path.positions;
  // Diagonal: sum_i w_i^2 W(0, 0).
  const double diag = (0.5 * dt * dt + (n - 1) * dt * dt) * table.w(0, 0.0);
  double off = 0.0;
  for (int lag = 1; lag <= n; ++lag) {
    double row = 0.0;
    for (int i = 0; i + lag <= n; ++i) {
      const int j = i + lag;
      row += detail::trapezoid_weight(i, n, dt) * detail::trapezoid_weight(j, n, dt) *
             table.w(lag, detail::distance(b[j], b[i]));
    }
    off += row;
  }
  return diag + 2.0 * off;
}

/// Splits S into S_OD + Y + Z with the split point [s + tau] clamped to T.
/// tau must be a whole number of grid steps with 0 < tau < T.
inline PathFunctionals s_decomposed(const BrownianPath& path, const PairKernelTable& table, double tau) {
  const PathGrid& grid = path.grid;
  if (!(tau > 0.0 && tau < grid.big_t)) throw std::domain_error("s_decomposed: need 0 < tau < T");
  const int n = grid.n_steps;
  const int tau_steps = grid.steps_of(tau);
  detail::check_table(path, table, n);
  if (!table.has_rho()) throw std::invalid_argument("s_decomposed: table lacks rho kernels");
  const double dt = grid.dt();
  const auto& b = path.positions;
  const auto& inc = path.increments;

  PathFunctionals out;
  out.s_full = s_full(path, table);
  double od = 0.0;
  double y = 0.0;
  double z = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double wi = detail::trapezoid_weight(i, n, dt);
    const int k = std::min(i + tau_steps, n);
    // Off-diagonal: trapezoid over t in [t_k, T].
    if (k < n) {
      double inner = 0.5 * dt * table.w(k - i, detail::distance(b[k], b[i]));
      for (int j = k + 1; j < n; ++j) inner += dt * table.w(j - i, detail::distance(b[j], b[i]));
      inner += 0.5 * dt * table.w(n - i, detail::distance(b[n], b[i]));
      od += wi * inner;
    }
    // Forward-point stochastic sum over t in [t_i, t_k).
    double ito = 0.0;
    for (int j = i; j < k; ++j) {
      const Vec3 x{b[j][0] - b[i][0], b[j][1] - b[i][1], b[j][2] - b[i][2]};
      ito += table.grad_rho_dot(j - i, x, inc[static_cast<std::size_t>(j)]);
    }
    y += wi * ito;
    z += wi * table.rho(k - i, detail::distance(b[k], b[i]));
  }
  out.s_od = 2.0 * od;
  out.y_ito = 2.0 * y;
  out.z_boundary = -2.0 * z;
  out.s_ren = out.s_od + out.y_ito + out.z_boundary;
  return out;
}

struct ItoSides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Both sides of
///   int_s^S W(B_t - B_s, t - s) dt = rho(0,0) - rho(B_S - B_s, S - s) + int_s^S grad rho . dB_t
/// on the grid (trapezoid on the left, forward-point sum on the right).
inline ItoSides ito_identity_check(const BrownianPath& path, const PairKernelTable& table, double s,
                                   double big_s) {
  const PathGrid& grid = path.grid;
  const int i = grid.index_of(s);
  const int k = grid.index_of(big_s);
  if (k < i) throw std::domain_error("ito_identity_check: need s <= S");
  detail::check_table(path, table, k - i);
  if (!table.has_rho()) throw std::invalid_argument("ito_identity_check: table lacks rho kernels");
  if (k == i) return {0.0, 0.0};
  const double dt = grid.dt();
  const auto& b = path.positions;
  double lhs = 0.5 * dt * table.w(0, 0.0);
  for (int j = i + 1; j < k; ++j) lhs += dt * table.w(j - i, detail::distance(b[j], b[i]));
  lhs += 0.5 * dt * table.w(k - i, detail::distance(b[k], b[i]));
  double ito = 0.0;
  for (int j = i; j < k; ++j) {
    const Vec3 x{b[j][0] - b[i][0], b[j][1] - b[i][1], b[j][2] - b[i][2]};
    ito += table.grad_rho_dot(j - i, x, path.increments[static_cast<std::size_t>(j)]);
  }
  const double rhs = table.rho(0, 0.0) - table.rho(k - i, detail::distance(b[k], b[i])) + ito;
  return {lhs, rhs};
}

// Binary path dump: little-endian throughout.
//   8 bytes  magic "NLSNPTH1"
//   u64      n_steps
//   f64      big_t
//   u64      seed, stream, index
//   f64[3 n] increments, component-major within each step
namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  os.write(bytes, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw std::runtime_error("path dump: truncated input");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

inline constexpr char kPathMagic[8] = {'N', 'L', 'S', 'N', 'P', 'T', 'H', '1'};

}  // namespace detail

inline void write_path(std::ostream& os, const BrownianPath& path, const RandomStream& origin) {
  os.write(detail::kPathMagic, 8);
  detail::put_u64(os, static_cast<std::uint64_t>(path.grid.n_steps));
  detail::put_u64(os, std::bit_cast<std::uint64_t>(path.grid.big_t));
  detail::put_u64(os, origin.seed);
  detail::put_u64(os, origin.stream);
  detail::put_u64(os, origin.index);
  for (const auto& v : path.increments) {
    for (double c : v) detail::put_u64(os, std::bit_cast<std::uint64_t>(c));
  }
  if (!os) throw std::runtime_error("path dump: write failed");
}

struct PathRecord {
  BrownianPath path;
  RandomStream origin;
};

inline PathRecord read_path(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, detail::kPathMagic)) {
    throw std::runtime_error("path dump: bad magic");
  }
  const auto n = detail::get_u64(is);
  const double big_t = std::bit_cast<double>(detail::get_u64(is));
  RandomStream origin;
  origin.seed = detail::get_u64(is);
  origin.stream = detail::get_u64(is);
  origin.index = detail::get_u64(is);
  if (n > (1ULL << 28)) throw std::runtime_error("path dump: implausible step count");
  const PathGrid grid(big_t, static_cast<int>(n));
  std::vector<Vec3> inc(n);
  for (auto& v : inc) {
    for (double& c : v) c = std::bit_cast<double>(detail::get_u64(is));
  }
  return {BrownianPath::from_increments(grid, std::move(inc)), origin};
}

}  // namespace nelson
