#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nelson/kernels.hpp"
#include "nelson/parallel.hpp"
#include "nelson/quadrature.hpp"

namespace nelson {

/// One discrete boson mode: momentum and quadrature weight (cell volume).
struct Mode {
  Vec3 k{};
  double weight = 0.0;
};

/// Discretized momentum shell lambda <= |k| <= k_max, closed under k -> -k.
class MomentumGrid {
 public:
  /// Radial composite Gauss-Legendre (ten nodes per panel) times 2 * n_half
  /// near-equal-area directions: a Fibonacci lattice on the upper hemisphere
  /// together with its antipodes.
  static MomentumGrid spherical(const ModelParams& params, int radial_panels, int n_half, double k_max = 0.0) {
    params.validate();
    if (radial_panels < 1 || n_half < 1) throw std::invalid_argument("MomentumGrid: empty grid");
    if (k_max == 0.0) k_max = default_k_max(params);
    if (!(k_max > params.lambda)) throw std::invalid_argument("MomentumGrid: k_max must exceed lambda");
    const FixedRule radial = composite_gauss_legendre(params.lambda, k_max, radial_panels);
    const double solid = 4.0 * std::numbers::pi / (2.0 * n_half);
    std::vector<Vec3> dirs;
    dirs.reserve(static_cast<std::size_t>(n_half));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n_half; ++i) {
      const double z = 1.0 - (i + 0.5) / n_half;  // cos(theta) in (0, 1)
      const double s = std::sqrt(1.0 - z * z);
      const double phi = golden * i;
      dirs.push_back({s * std::cos(phi), s * std::sin(phi), z});
    }
    std::vector<Mode> modes;
    modes.reserve(radial.nodes.size() * dirs.size() * 2);
    for (std::size_t a = 0; a < radial.nodes.size(); ++a) {
      const double r = radial.nodes[a];
      const double w = radial.weights[a] * r * r * solid;
      for (const Vec3& d : dirs) {
        modes.push_back({{r * d[0], r * d[1], r * d[2]}, w});
        modes.push_back({{-r * d[0], -r * d[1], -r * d[2]}, w});
      }
    }
    return MomentumGrid(std::move(modes), k_max, params.lambda);
  }

  /// Outer radius with exp(-eps k_max^2) = 1e-9.
  static double default_k_max(const ModelParams& params) {
    return std::max(std::sqrt(9.0 * std::log(10.0) / params.eps), 2.0 * params.lambda);
  }

  MomentumGrid(std::vector<Mode> modes, double k_max, double lambda)
      : modes_(std::move(modes)), k_max_(k_max) {
    if (modes_.empty()) throw std::invalid_argument("MomentumGrid: no modes");
    for (const Mode& m : modes_) {
      const double r = norm(m.k);
      if (!(m.weight > 0.0)) throw std::invalid_argument("MomentumGrid: weights must be positive");
      if (r < lambda * (1.0 - 1e-12)) throw std::invalid_argument("MomentumGrid: mode inside the infrared hole");
    }
  }

  const std::vector<Mode>& modes() const { return modes_; }
  std::size_t size() const { return modes_.size(); }
  double k_max() const { return k_max_; }

  double total_weight() const {
    CompensatedSum s;
    for (const Mode& m : modes_) s.add(m.weight);
    return s.value();
  }

 private:
  std::vector<Mode> modes_;
  double k_max_;
};

/// c_j = exp(-eps |k_j|^2 / 2) sqrt(w_j / (2 |k_j|)).
inline double mode_amplitude(const Mode& m, double eps) {
  const double r = norm(m.k);
  return std::exp(-0.5 * eps * r * r) * std::sqrt(m.weight / (2.0 * r));
}

/// Exact g^2 coefficient of the truncated model's ground energy:
/// a_2 = -sum_j c_j^2 / (|k_j| + |k_j|^2 / 2).
inline double second_order_coefficient(const MomentumGrid& grid, const ModelParams& params) {
  CompensatedSum s;
  for (const Mode& m : grid.modes()) {
    const double c = mode_amplitude(m, params.eps);
    s.add(-c * c * beta(norm(m.k)));
  }
  return s.value();
}

/// Occupation-number basis with at most n_max bosons in M modes. A state with
/// d bosons is stored as its non-decreasing list of mode indices; states are
/// ordered by d, then by combinatorial rank within the sector.
class TruncatedFockSpace {
 public:
  static constexpr std::uint64_t kMaxDimension = 5'000'000;

  TruncatedFockSpace(std::size_t n_modes, int n_max) : n_modes_(n_modes), n_max_(n_max) {
    if (n_modes == 0) throw std::invalid_argument("TruncatedFockSpace: no modes");
    if (n_max < 1) throw std::invalid_argument("TruncatedFockSpace: n_max must be >= 1");
    offsets_.push_back(0);
    for (int d = 0; d <= n_max; ++d) {
      const std::uint64_t size = binomial(n_modes + d - 1, static_cast<std::uint64_t>(d));
      if (size == 0) throw std::invalid_argument("TruncatedFockSpace: dimension overflow");
      offsets_.push_back(offsets_.back() + size);
      if (offsets_.back() > kMaxDimension) {
        throw std::invalid_argument("TruncatedFockSpace: dimension exceeds " + std::to_string(kMaxDimension));
      }
    }
  }

  /// sum_{d=0}^{n_max} C(M + d - 1, d), or 0 if it does not fit in 64 bits.
  static std::uint64_t dimension_for(std::size_t n_modes, int n_max) {
    std::uint64_t total = 0;
    for (int d = 0; d <= n_max; ++d) {
      const std::uint64_t b = binomial(n_modes + d - 1, static_cast<std::uint64_t>(d));
      if (b == 0 && n_modes > 0) return 0;
      total += b;
    }
    return total;
  }

  std::size_t n_modes() const { return n_modes_; }
  int n_max() const { return n_max_; }
  std::uint64_t dimension() const { return offsets_.back(); }
  std::uint64_t sector_offset(int d) const { return offsets_[static_cast<std::size_t>(d)]; }

  /// Index of the state whose sorted mode list is `modes`.
  std::uint64_t rank(const std::vector<std::uint32_t>& modes) const {
    const int d = static_cast<int>(modes.size());
    if (d > n_max_) throw std::out_of_range("TruncatedFockSpace: too many bosons");
    std::uint64_t r = 0;
    for (int i = 0; i < d; ++i) {
      // Non-decreasing a_i maps to strictly increasing a_i + i.
      r += binomial(modes[static_cast<std::size_t>(i)] + static_cast<std::uint64_t>(i),
                    static_cast<std::uint64_t>(i + 1));
    }
    return offsets_[static_cast<std::size_t>(d)] + r;
  }

  /// Inverse of rank.
  std::vector<std::uint32_t> unrank(std::uint64_t index) const {
    if (index >= dimension()) throw std::out_of_range("TruncatedFockSpace: index out of range");
    int d = 0;
    while (index >= offsets_[static_cast<std::size_t>(d) + 1]) ++d;
    std::uint64_t r = index - offsets_[static_cast<std::size_t>(d)];
    std::vector<std::uint32_t> modes(static_cast<std::size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
      // Largest b with C(b, i + 1) <= r.
      std::uint64_t lo = static_cast<std::uint64_t>(i);
      std::uint64_t hi = n_modes_ + static_cast<std::uint64_t>(i);
      while (hi - lo > 1) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (binomial(mid, static_cast<std::uint64_t>(i + 1)) <= r) lo = mid; else hi = mid;
      }
      r -= binomial(lo, static_cast<std::uint64_t>(i + 1));
      modes[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(lo - static_cast<std::uint64_t>(i));
    }
    return modes;
  }

  // C(n, k) with C(n, k) = 0 for k > n; 0 also signals overflow for large inputs.
  static std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
      r = r * (n - k + i) / i;
      if (r > std::numeric_limits<std::uint64_t>::max()) return 0;
    }
    return static_cast<std::uint64_t>(r);
  }

 private:
  std::size_t n_modes_;
  int n_max_;
  std::vector<std::uint64_t> offsets_;
};

/// Real symmetric sparse matrix in compressed-row form.
struct HamiltonianMatrix {
  std::int64_t dim = 0;
  std::vector<std::int64_t> row_start;
  std::vector<std::int32_t> col;
  std::vector<double> val;

  std::size_t nnz() const { return val.size(); }

  void multiply(const Eigen::VectorXd& x, Eigen::VectorXd& y, int workers = 1) const {
    y.resize(dim);
    const std::size_t chunk = 4096;
    const std::size_t n_chunks = (static_cast<std::size_t>(dim) + chunk - 1) / chunk;
    parallel_for(n_chunks, workers, [&](std::size_t c) {
      const std::int64_t end = std::min<std::int64_t>(dim, static_cast<std::int64_t>((c + 1) * chunk));
      for (std::int64_t r = static_cast<std::int64_t>(c * chunk); r < end; ++r) {
        double s = 0.0;
        for (std::int64_t p = row_start[static_cast<std::size_t>(r)]; p < row_start[static_cast<std::size_t>(r) + 1]; ++p) {
          s += val[static_cast<std::size_t>(p)] * x[col[static_cast<std::size_t>(p)]];
        }
        y[r] = s;
      }
    });
  }

  double entry(std::int64_t r, std::int64_t c) const {
    const auto b = col.begin() + row_start[static_cast<std::size_t>(r)];
    const auto e = col.begin() + row_start[static_cast<std::size_t>(r) + 1];
    const auto it = std::lower_bound(b, e, static_cast<std::int32_t>(c));
    return (it != e && *it == c) ? val[static_cast<std::size_t>(it - col.begin())] : 0.0;
  }

  /// Coordinate text format: a comment line, "dim dim nnz", then "row col value"
  /// lines with zero-based indices.
  void write_coordinate(std::ostream& os) const {
    os << "# row col value (zero-based)\n" << dim << ' ' << dim << ' ' << nnz() << '\n';
    char buf[64];
    for (std::int64_t r = 0; r < dim; ++r) {
      for (std::int64_t p = row_start[static_cast<std::size_t>(r)]; p < row_start[static_cast<std::size_t>(r) + 1]; ++p) {
        const int n = std::snprintf(buf, sizeof buf, "%.17g", val[static_cast<std::size_t>(p)]);
        os << r << ' ' << col[static_cast<std::size_t>(p)] << ' ' << std::string_view(buf, static_cast<std::size_t>(n)) << '\n';
      }
    }
  }
};

/// H = P_f^2 / 2 + H_f + g phi(0) on the truncated space. The field at the
/// origin has real mode amplitudes, so the matrix is real in the occupation
/// basis: <n + e_j| phi |n> = c_j sqrt(n_j + 1).
inline HamiltonianMatrix build_hamiltonian(const MomentumGrid& grid, const TruncatedFockSpace& space,
                                           const ModelParams& params, int workers = 1) {
  params.validate();
  if (grid.size() != space.n_modes()) throw std::invalid_argument("build_hamiltonian: mode count mismatch");
  const auto& modes = grid.modes();
  std::vector<double> amp(modes.size());
  for (std::size_t j = 0; j < modes.size(); ++j) amp[j] = params.g * mode_amplitude(modes[j], params.eps);
  const std::int64_t dim = static_cast<std::int64_t>(space.dimension());
  const bool interacting = params.g != 0.0;

  auto row_entries = [&](std::int64_t r, std::vector<std::pair<std::int32_t, double>>& out) {
    out.clear();
    std::vector<std::uint32_t> state = space.unrank(static_cast<std::uint64_t>(r));
    Vec3 p{};
    double hf = 0.0;
    for (std::uint32_t j : state) {
      for (int c = 0; c < 3; ++c) p[c] += modes[j].k[c];
      hf += norm(modes[j].k);
    }
    out.emplace_back(static_cast<std::int32_t>(r), 0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) + hf);
    if (!interacting) return;
    // Annihilation: remove one boson from each distinct occupied mode.
    for (std::size_t i = 0; i < state.size();) {
      std::size_t e = i;
      while (e < state.size() && state[e] == state[i]) ++e;
      const std::uint32_t j = state[i];
      std::vector<std::uint32_t> lower = state;
      lower.erase(lower.begin() + static_cast<std::ptrdiff_t>(i));
      out.emplace_back(static_cast<std::int32_t>(space.rank(lower)),
                       amp[j] * std::sqrt(static_cast<double>(e - i)));
      i = e;
    }
    // Creation into every mode.
    if (static_cast<int>(state.size()) < space.n_max()) {
      std::vector<std::uint32_t> upper(state.size() + 1);
      for (std::uint32_t j = 0; j < modes.size(); ++j) {
        const auto pos = std::upper_bound(state.begin(), state.end(), j);
        const auto n_j = static_cast<double>(pos - std::lower_bound(state.begin(), state.end(), j));
        std::copy(state.begin(), pos, upper.begin());
        upper[static_cast<std::size_t>(pos - state.begin())] = j;
        std::copy(pos, state.end(), upper.begin() + (pos - state.begin()) + 1);
        out.emplace_back(static_cast<std::int32_t>(space.rank(upper)), amp[j] * std::sqrt(n_j + 1.0));
      }
    }
    std::sort(out.begin(), out.end());
  };

  // Two passes over contiguous row blocks: count, then fill.
  const std::size_t block = 2048;
  const std::size_t n_blocks = (static_cast<std::size_t>(dim) + block - 1) / block;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(dim) + 1, 0);
  parallel_for(n_blocks, workers, [&](std::size_t b) {
    std::vector<std::pair<std::int32_t, double>> entries;
    const std::int64_t end = std::min<std::int64_t>(dim, static_cast<std::int64_t>((b + 1) * block));
    for (std::int64_t r = static_cast<std::int64_t>(b * block); r < end; ++r) {
      row_entries(r, entries);
      counts[static_cast<std::size_t>(r) + 1] = static_cast<std::int64_t>(entries.size());
    }
  });
  HamiltonianMatrix h;
  h.dim = dim;
  h.row_start.resize(counts.size());
  std::partial_sum(counts.begin(), counts.end(), h.row_start.begin());
  h.col.resize(static_cast<std::size_t>(h.row_start.back()));
  h.val.resize(h.col.size());
  parallel_for(n_blocks, workers, [&](std::size_t b) {
    std::vector<std::pair<std::int32_t, double>> entries;
    const std::int64_t end = std::min<std::int64_t>(dim, static_cast<std::int64_t>((b + 1) * block));
    for (std::int64_t r = static_cast<std::int64_t>(b * block); r < end; ++r) {
      row_entries(r, entries);
      auto p = static_cast<std::size_t>(h.row_start[static_cast<std::size_t>(r)]);
      for (const auto& [c, v] : entries) {
        h.col[p] = c;
        h.val[p] = v;
        ++p;
      }
    }
  });
  return h;
}

class EigensolverError : public std::runtime_error {
 public:
  EigensolverError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

struct LanczosOptions {
  int krylov_dim = 200;  ///< Lanczos steps per restart cycle
  int max_restarts = 50;
  double tolerance = 1e-9;  ///< target ||Hv - Ev|| for unit v
  int workers = 1;
};

struct GroundState {
  double energy = 0.0;
  double residual = 0.0;
  double vacuum_overlap = 0.0;  ///< |<vacuum|ground>| for the normalized ground vector
  int iterations = 0;           ///< total matrix-vector products
  Eigen::VectorXd vector;
};

/// Lowest eigenpair by explicitly restarted two-pass Lanczos started from the
/// vacuum. Pass one builds the tridiagonal matrix without storing the basis;
/// pass two regenerates the basis to assemble the Ritz vector, which becomes
/// the next start vector.
inline GroundState ground_energy(const HamiltonianMatrix& h, const LanczosOptions& opt = {}) {
  if (h.dim == 0) throw std::invalid_argument("ground_energy: empty matrix");
  if (h.dim == 1) {
    GroundState gs;
    gs.energy = h.entry(0, 0);
    gs.vacuum_overlap = 1.0;
    gs.vector = Eigen::VectorXd::Ones(1);
    return gs;
  }
  Eigen::VectorXd start = Eigen::VectorXd::Zero(h.dim);
  start[0] = 1.0;
  Eigen::VectorXd w(h.dim);
  Eigen::VectorXd v_prev(h.dim);
  Eigen::VectorXd v(h.dim);
  double scale = 0.0;
  for (double x : h.val) scale = std::max(scale, std::abs(x));
  GroundState gs;
  double residual = std::numeric_limits<double>::infinity();

  for (int cycle = 0; cycle <= opt.max_restarts; ++cycle) {
    const int m_max = static_cast<int>(std::min<std::int64_t>(opt.krylov_dim, h.dim));
    std::vector<double> alpha;
    std::vector<double> beta;  // beta[i] couples step i and i + 1
    // Pass one.
    v = start / start.norm();
    v_prev.setZero();
    double b_prev = 0.0;
    for (int i = 0; i < m_max; ++i) {
      h.multiply(v, w, opt.workers);
      ++gs.iterations;
      const double a = w.dot(v);
      w -= a * v + b_prev * v_prev;
      alpha.push_back(a);
      const double b = w.norm();
      if (i + 1 == m_max || b <= 1e-14 * std::max(scale, 1.0)) break;
      beta.push_back(b);
      v_prev = v;
      v = w / b;
      b_prev = b;
    }
    const Eigen::Index m = static_cast<Eigen::Index>(alpha.size());
    Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), m);
    Eigen::VectorXd sub = m > 1 ? Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(beta.data(), m - 1))
                                : Eigen::VectorXd(0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    const Eigen::VectorXd y = tri.eigenvectors().col(0);

    // Pass two: same recurrence, accumulating the Ritz vector.
    Eigen::VectorXd ritz = Eigen::VectorXd::Zero(h.dim);
    v = start / start.norm();
    v_prev.setZero();
    b_prev = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      ritz += y[i] * v;
      if (i + 1 == m) break;
      h.multiply(v, w, opt.workers);
      ++gs.iterations;
      w -= alpha[static_cast<std::size_t>(i)] * v + b_prev * v_prev;
      const double b = beta[static_cast<std::size_t>(i)];
      v_prev = v;
      v = w / b;
      b_prev = b;
    }
    ritz /= ritz.norm();
    h.multiply(ritz, w, opt.workers);
    ++gs.iterations;
    const double energy = ritz.dot(w);
    w -= energy * ritz;
    residual = w.norm();
    gs.energy = energy;
    gs.residual = residual;
    gs.vector = ritz;
    gs.vacuum_overlap = std::abs(ritz[0]);
    if (residual <= opt.tolerance) return gs;
    start = ritz;
  }
  throw EigensolverError("ground_energy: no convergence, residual " + std::to_string(residual), residual);
}

struct PerturbationRow {
  double g = 0.0;
  double energy = 0.0;
  double ratio = 0.0;  ///< energy / g^2
  double residual = 0.0;
  double vacuum_overlap = 0.0;
};

struct PerturbationCheck {
  std::vector<PerturbationRow> rows;
  double a2_grid = 0.0;        ///< exact sum on the grid
  double a2_fit = 0.0;         ///< from E / g^2 = a2 + a4 g^2
  double a4_fit = 0.0;
  double a2_pure = 0.0;        ///< from E = a2 g^2 alone
  double residual_pure = 0.0;  ///< RMS misfit of E / g^2 under each model
  double residual_quartic = 0.0;
};

inline PerturbationCheck perturbation_check(const MomentumGrid& grid, const TruncatedFockSpace& space,
                                            const ModelParams& params, const std::vector<double>& g_list,
                                            const LanczosOptions& opt = {}) {
  if (g_list.size() < 2) throw std::invalid_argument("perturbation_check: need at least two couplings");
  PerturbationCheck out;
  out.a2_grid = second_order_coefficient(grid, params);
  for (double g : g_list) {
    if (g == 0.0) throw std::invalid_argument("perturbation_check: couplings must be nonzero");
    ModelParams p = params;
    p.g = g;
    const HamiltonianMatrix h = build_hamiltonian(grid, space, p, opt.workers);
    const GroundState gs = ground_energy(h, opt);
    out.rows.push_back({g, gs.energy, gs.energy / (g * g), gs.residual, gs.vacuum_overlap});
  }
  // Least squares in r = E / g^2 against x = g^2: constant model, then line.
  const double n = static_cast<double>(out.rows.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& r : out.rows) {
    const double x = r.g * r.g;
    sx += x;
    sy += r.ratio;
    sxx += x * x;
    sxy += x * r.ratio;
  }
  out.a2_pure = sy / n;
  const double det = n * sxx - sx * sx;
  if (!(det > 0.0)) throw std::invalid_argument("perturbation_check: need two distinct |g| values");
  out.a2_fit = (sxx * sy - sx * sxy) / det;
  out.a4_fit = (n * sxy - sx * sy) / det;
  double rp = 0.0, rq = 0.0;
  for (const auto& r : out.rows) {
    const double x = r.g * r.g;
    rp += (r.ratio - out.a2_pure) * (r.ratio - out.a2_pure);
    rq += (r.ratio - out.a2_fit - out.a4_fit * x) * (r.ratio - out.a2_fit - out.a4_fit * x);
  }
  out.residual_pure = std::sqrt(rp / n);
  out.residual_quartic = std::sqrt(rq / n);
  return out;
}

}  // namespace nelson
