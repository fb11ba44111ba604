#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/kernels.hpp"
#include "nelson/parallel.hpp"
#include "nelson/paths.hpp"
#include "nelson/statistics.hpp"

namespace nelson {

/// Ensembles with fewer effective samples than this are flagged.
inline constexpr double kMinReliableEss = 10.0;
inline constexpr std::size_t kJackknifeBlocks = 50;
inline constexpr std::size_t kMinPaths = 100;

/// Sufficient per-path data for the energy estimators.
struct PathSample {
  double s = 0.0;              ///< S on the path
  Vec3 end_displacement{};     ///< B(T) - B(-T)
};

struct EnsembleSpec {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::size_t n_paths = 1000;
  int n_workers = 1;
};

/// S for paths 0..n_paths-1 of the given substream, in path-index order.
inline std::vector<PathSample> sample_ensemble(const PairKernelTable& table, const PathGrid& grid,
                                               const EnsembleSpec& spec) {
  std::vector<PathSample> out(spec.n_paths);
  parallel_for(spec.n_paths, spec.n_workers, [&](std::size_t p) {
    const BrownianPath path = sample_path(grid, {spec.seed, spec.stream, p});
    const Vec3& end = path.positions.back();
    out[p] = {s_full(path, table), end};
  });
  return out;
}

/// Monte Carlo estimate of the finite-horizon energy
///   E_T = -(1 / 2T) log E[exp(i P.(B_T - B_-T)) exp(g^2 S / 2)].
struct EnergyEstimate {
  double big_t = 0.0;
  double g = 0.0;
  double value = 0.0;
  double stderr = 0.0;
  std::size_t n_paths = 0;
  double ess = 0.0;
  double max_log_weight = 0.0;
  bool low_ess = false;
};

namespace detail {

// log of the mean of factor_i * exp(log_w_i); factors may be negative.
inline double log_mean_signed(std::span<const double> log_w, std::span<const double> factor) {
  std::vector<std::size_t> order(log_w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return log_w[a] < log_w[b]; });
  const double shift = log_w[order.back()];
  std::vector<double> terms(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    terms[i] = factor[order[i]] * std::exp(log_w[order[i]] - shift);
  }
  const double mean = pairwise_sum(terms) / static_cast<double>(terms.size());
  return mean > 0.0 ? shift + std::log(mean) : std::numeric_limits<double>::quiet_NaN();
}

template <class T>
std::vector<T> without_range(std::span<const T> x, std::size_t b, std::size_t e) {
  std::vector<T> out;
  out.reserve(x.size() - (e - b));
  out.insert(out.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(b));
  out.insert(out.end(), x.begin() + static_cast<std::ptrdiff_t>(e), x.end());
  return out;
}

}  // namespace detail

/// Energy estimate from precomputed path samples. `momentum` switches on the
/// phase factor of the nonzero-total-momentum fiber.
inline EnergyEstimate energy_from_samples(std::span<const PathSample> samples, double g, double big_t,
                                          const Vec3& momentum = {0.0, 0.0, 0.0}) {
  if (samples.size() < 2) throw std::invalid_argument("energy_from_samples: need at least two paths");
  const bool with_phase = momentum != Vec3{0.0, 0.0, 0.0};
  const double alpha = 0.5 * g * g;
  std::vector<double> log_w(samples.size());
  std::vector<double> phase(samples.size(), 1.0);
  for (std::size_t p = 0; p < samples.size(); ++p) {
    log_w[p] = alpha * samples[p].s;
    if (with_phase) {
      const Vec3& d = samples[p].end_displacement;
      phase[p] = std::cos(momentum[0] * d[0] + momentum[1] * d[1] + momentum[2] * d[2]);
    }
  }

  auto energy = [&](std::span<const double> lw, std::span<const double> ph) {
    const double lm = with_phase ? detail::log_mean_signed(lw, ph) : log_mean_exp(lw).log_mean;
    return 0.0 - lm / (2.0 * big_t);  // 0.0 - x keeps g = 0 at +0
  };

  const LogMeanExp lme = log_mean_exp(log_w);
  EnergyEstimate out;
  out.big_t = big_t;
  out.g = g;
  out.n_paths = samples.size();
  out.value = energy(log_w, phase);
  out.ess = lme.ess;
  out.max_log_weight = lme.max_log_weight;
  out.low_ess = lme.ess < kMinReliableEss;
  if (g != 0.0 || with_phase) {
    auto without = [&](std::size_t b, std::size_t e) {
      const auto lw = detail::without_range<double>(log_w, b, e);
      const auto ph = detail::without_range<double>(phase, b, e);
      return energy(lw, ph);
    };
    out.stderr = jackknife(samples.size(), kJackknifeBlocks, without).stderr;
  }
  return out;
}

struct EstimatorOptions {
  int n_workers = 1;
  std::uint64_t stream = 0;
  QuadratureConfig quad{};
  PairKernelTable::Options table{};
  Vec3 momentum{0.0, 0.0, 0.0};
};

/// Finite-horizon energy at horizon grid.big_t (params.big_t is ignored).
inline EnergyEstimate estimate_energy(const ModelParams& params, const PathGrid& grid, std::size_t n_paths,
                                      std::uint64_t seed, const EstimatorOptions& options = {}) {
  if (n_paths < kMinPaths) throw std::invalid_argument("estimate_energy: need at least 100 paths");
  grid.validate();
  ModelParams p = params;
  p.big_t = grid.big_t;
  p.tau = 0.5 * grid.big_t;
  const KernelEvaluator kernels(p, options.quad);
  PairKernelTable::Options topt = options.table;
  topt.with_rho = false;
  const PairKernelTable table(kernels, grid.dt(), grid.n_steps, topt);
  const auto samples = sample_ensemble(table, grid, {seed, options.stream, n_paths, options.n_workers});
  return energy_from_samples(samples, params.g, grid.big_t, options.momentum);
}

/// Weighted least-squares fit of E_T = E_inf + slope / T.
struct EnergyCurve {
  std::vector<EnergyEstimate> points;
  double extrapolated = 0.0;
  double extrapolated_stderr = 0.0;
  double slope = 0.0;
  double fit_residual = 0.0;  ///< RMS of E_T minus the fitted line
};

inline EnergyCurve extrapolate_energy(std::vector<EnergyEstimate> points) {
  if (points.size() < 3) throw std::domain_error("extrapolate_energy: need at least three horizons");
  std::sort(points.begin(), points.end(),
            [](const EnergyEstimate& a, const EnergyEstimate& b) { return a.big_t < b.big_t; });
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!std::isfinite(points[i].value) || !(points[i].big_t > 0.0)) {
      throw std::domain_error("extrapolate_energy: non-finite estimate or horizon");
    }
    if (i > 0 && !(points[i].big_t > points[i - 1].big_t)) {
      throw std::domain_error("extrapolate_energy: horizons must be distinct");
    }
  }
  const bool weighted = std::all_of(points.begin(), points.end(),
                                    [](const EnergyEstimate& e) { return e.stderr > 0.0; });
  double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& e : points) {
    const double w = weighted ? 1.0 / (e.stderr * e.stderr) : 1.0;
    const double x = 1.0 / e.big_t;
    sw += w;
    sx += w * x;
    sy += w * e.value;
    sxx += w * x * x;
    sxy += w * x * e.value;
  }
  const double det = sw * sxx - sx * sx;
  if (!(std::abs(det) > 1e-300)) throw std::domain_error("extrapolate_energy: singular fit");
  EnergyCurve curve;
  curve.extrapolated = (sxx * sy - sx * sxy) / det;
  curve.slope = (sw * sxy - sx * sy) / det;
  curve.extrapolated_stderr = weighted ? std::sqrt(sxx / det) : 0.0;
  double rss = 0.0;
  for (const auto& e : points) {
    const double r = e.value - (curve.extrapolated + curve.slope / e.big_t);
    rss += r * r;
  }
  curve.fit_residual = std::sqrt(rss / static_cast<double>(points.size()));
  curve.points = std::move(points);
  return curve;
}

/// Settings shared by the sweeps.
struct SweepSettings {
  std::vector<double> t_values{4.0, 8.0, 12.0};
  double dt = 0.05;
  /// When > 0 the time step is min(dt, dt_eps_ratio * eps).
  double dt_eps_ratio = 0.0;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 1;
  int n_workers = 1;
  QuadratureConfig quad{};
  PairKernelTable::Options table{};

  double step_for(double eps) const { return dt_eps_ratio > 0.0 ? std::min(dt, dt_eps_ratio * eps) : dt; }
};

/// One horizon-ensemble per T, shared by every coupling evaluated on it.
struct HorizonEnsembles {
  std::vector<PathGrid> grids;
  std::vector<std::vector<PathSample>> samples;
};

inline HorizonEnsembles sample_horizons(const ModelParams& params, const SweepSettings& settings) {
  const double dt = settings.step_for(params.eps);
  HorizonEnsembles out;
  double t_max = 0.0;
  for (double t : settings.t_values) {
    out.grids.push_back(PathGrid::with_spacing(t, dt));
    t_max = std::max(t_max, t);
  }
  if (out.grids.empty()) throw std::invalid_argument("sweep: empty T list");
  ModelParams p = params;
  p.big_t = t_max;
  p.tau = 0.5 * t_max;
  const KernelEvaluator kernels(p, settings.quad);
  PairKernelTable::Options topt = settings.table;
  topt.with_rho = false;
  int max_lag = 0;
  for (const auto& grid : out.grids) max_lag = std::max(max_lag, grid.n_steps);
  const double step = out.grids.front().dt();
  for (const auto& grid : out.grids) {
    if (std::abs(grid.dt() - step) > 1e-12 * step) {
      throw std::invalid_argument("sweep: every T must be a whole number of time steps");
    }
  }
  const PairKernelTable table(kernels, step, max_lag, topt);
  for (std::size_t i = 0; i < out.grids.size(); ++i) {
    out.samples.push_back(
        sample_ensemble(table, out.grids[i], {settings.seed, i + 1, settings.n_paths, settings.n_workers}));
  }
  return out;
}

struct SweepGRow {
  double g = 0.0;
  EnergyCurve curve;
  double e_ren = 0.0;           ///< coupling-free renormalization energy
  double ratio = 0.0;           ///< E_inf / g^2 (NaN for g = 0)
  double g2_e_ren = 0.0;
  double renormalized = 0.0;    ///< E_inf - g^2 E_ren
  double c_tau_quarter = 0.0;   ///< c(tau) / 4, the small-g residual bound
  std::string status = "ok";
};

inline std::vector<SweepGRow> sweep_g(const ModelParams& params, std::span<const double> g_list,
                                      const SweepSettings& settings) {
  const KernelEvaluator kernels(params, settings.quad);
  const double e_ren = kernels.renorm_energy().value;
  const double c_quarter = 0.25 * kernels.c_tau().value;
  const HorizonEnsembles ens = sample_horizons(params, settings);
  std::vector<SweepGRow> rows;
  for (double g : g_list) {
    SweepGRow row;
    row.g = g;
    row.e_ren = e_ren;
    row.c_tau_quarter = c_quarter;
    try {
      std::vector<EnergyEstimate> pts;
      for (std::size_t i = 0; i < ens.grids.size(); ++i) {
        pts.push_back(energy_from_samples(ens.samples[i], g, ens.grids[i].big_t));
      }
      row.curve = extrapolate_energy(std::move(pts));
      row.g2_e_ren = g * g * e_ren;
      row.renormalized = row.curve.extrapolated - row.g2_e_ren;
      row.ratio = g != 0.0 ? row.curve.extrapolated / (g * g) : std::numeric_limits<double>::quiet_NaN();
      if (std::any_of(row.curve.points.begin(), row.curve.points.end(),
                      [](const EnergyEstimate& e) { return e.low_ess; })) {
        row.status = "low_ess";
      }
    } catch (const std::exception& ex) {
      row.status = std::string("error: ") + ex.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct SweepEpsRow {
  double eps = 0.0;
  double dt = 0.0;
  double e_ren = 0.0;
  EnergyCurve curve;
  double g2_e_ren = 0.0;
  double renormalized = 0.0;
  std::string status = "ok";
};

inline std::vector<SweepEpsRow> sweep_eps(const ModelParams& params, std::span<const double> eps_list,
                                          const SweepSettings& settings) {
  std::vector<SweepEpsRow> rows;
  for (double eps : eps_list) {
    SweepEpsRow row;
    row.eps = eps;
    row.dt = settings.step_for(eps);
    try {
      ModelParams p = params;
      p.eps = eps;
      const KernelEvaluator kernels(p, settings.quad);
      row.e_ren = kernels.renorm_energy().value;
      row.g2_e_ren = p.g * p.g * row.e_ren;
      const HorizonEnsembles ens = sample_horizons(p, settings);
      std::vector<EnergyEstimate> pts;
      for (std::size_t i = 0; i < ens.grids.size(); ++i) {
        pts.push_back(energy_from_samples(ens.samples[i], p.g, ens.grids[i].big_t));
      }
      row.curve = extrapolate_energy(std::move(pts));
      row.renormalized = row.curve.extrapolated - row.g2_e_ren;
      if (std::any_of(row.curve.points.begin(), row.curve.points.end(),
                      [](const EnergyEstimate& e) { return e.low_ess; })) {
        row.status = "low_ess";
      }
    } catch (const std::exception& ex) {
      row.status = std::string("error: ") + ex.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Decomposition defect S - (S_ren + 4T rho(0,0)) on one ensemble of paths
/// observed at successively halved time steps.
struct RefinementLevel {
  double dt = 0.0;
  double defect_rms = 0.0;
  double defect_mean = 0.0;
  MeanEstimate y_ito;           ///< ensemble mean of the stochastic term
  double max_abs_z = 0.0;       ///< largest |Z| seen
  double z_bound = 0.0;         ///< deterministic bound on |Z|, see KernelEvaluator::boundary_bound
};

/// Samples paths at dt_coarse / 2^(levels - 1) and evaluates them on that grid
/// and on each coarsening by 2. Levels are returned coarsest first.
inline std::vector<RefinementLevel> decomposition_refinement(const ModelParams& params, double dt_coarse, int levels,
                                                             std::size_t n_paths, std::uint64_t seed,
                                                             const EstimatorOptions& options = {}) {
  params.validate();
  if (levels < 1) throw std::invalid_argument("decomposition_refinement: need at least one level");
  if (n_paths < 2) throw std::invalid_argument("decomposition_refinement: need at least two paths");
  const int factor = 1 << (levels - 1);
  const PathGrid coarse = PathGrid::with_spacing(params.big_t, dt_coarse);
  const PathGrid fine(params.big_t, coarse.n_steps * factor);
  const KernelEvaluator kernels(params, options.quad);
  const double rho00 = kernels.rho_kernel(0.0, 0.0).value;
  const double z_bound = kernels.boundary_bound(params.big_t, params.tau).value;

  std::vector<RefinementLevel> out;
  for (int l = 0; l < levels; ++l) {
    const int f = factor >> l;
    const PathGrid grid(params.big_t, fine.n_steps / f);
    const PairKernelTable table(kernels, grid.dt(), grid.n_steps, options.table);
    std::vector<double> defect(n_paths);
    std::vector<double> y(n_paths);
    std::vector<double> z(n_paths);
    parallel_for(n_paths, options.n_workers, [&](std::size_t p) {
      const BrownianPath path = sample_path(fine, {seed, options.stream, p}).coarsened(f);
      const PathFunctionals pf = s_decomposed(path, table, params.tau);
      defect[p] = pf.s_full - (pf.s_ren + 4.0 * params.big_t * rho00);
      y[p] = pf.y_ito;
      z[p] = pf.z_boundary;
    });
    RefinementLevel level;
    level.dt = grid.dt();
    std::vector<double> sq(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) sq[p] = defect[p] * defect[p];
    level.defect_rms = std::sqrt(pairwise_sum(sq) / static_cast<double>(n_paths));
    level.defect_mean = pairwise_sum(defect) / static_cast<double>(n_paths);
    level.y_ito = jackknife_mean(y, kJackknifeBlocks);
    for (double v : z) level.max_abs_z = std::max(level.max_abs_z, std::abs(v));
    level.z_bound = z_bound;
    out.push_back(level);
  }
  return out;
}

/// Overlap gamma(T) = E[exp(g^2 S_[0,T] / 2)]^2 / E[exp(g^2 S_[-T,T] / 2)]
/// with independent ensembles for numerator and denominator.
struct OverlapEstimate {
  double big_t = 0.0;
  double gamma = 1.0;
  double stderr = 0.0;
  double lower_bound = 1.0;  ///< exp(-g^2 I(eps, lambda))
  std::size_t n_paths = 0;
  double ess_numerator = 0.0;
  double ess_denominator = 0.0;
};

inline OverlapEstimate estimate_gamma(const ModelParams& params, double big_t, double dt, std::size_t n_paths,
                                      std::uint64_t seed, const EstimatorOptions& options = {}) {
  if (n_paths < kMinPaths) throw std::invalid_argument("estimate_gamma: need at least 100 paths");
  // A path on [0, T] has the same increments law as one on [-T/2, T/2].
  const PathGrid half = PathGrid::with_spacing(0.5 * big_t, dt);
  const PathGrid full = PathGrid::with_spacing(big_t, dt);
  if (std::abs(half.dt() - full.dt()) > 1e-12 * full.dt()) {
    throw std::invalid_argument("estimate_gamma: T/2 must be a whole number of steps");
  }
  ModelParams p = params;
  p.big_t = big_t;
  p.tau = 0.5 * big_t;
  const KernelEvaluator kernels(p, options.quad);
  PairKernelTable::Options topt = options.table;
  topt.with_rho = false;
  const PairKernelTable table(kernels, full.dt(), full.n_steps, topt);
  const auto num = sample_ensemble(table, half, {seed, 2 * options.stream + 1000, n_paths, options.n_workers});
  const auto den = sample_ensemble(table, full, {seed, 2 * options.stream + 1001, n_paths, options.n_workers});

  const double alpha = 0.5 * params.g * params.g;
  std::vector<double> lw_num(n_paths);
  std::vector<double> lw_den(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) {
    lw_num[i] = alpha * num[i].s;
    lw_den[i] = alpha * den[i].s;
  }
  auto gamma_of = [](std::span<const double> a, std::span<const double> b) {
    return std::exp(2.0 * log_mean_exp(a).log_mean - log_mean_exp(b).log_mean);
  };
  OverlapEstimate out;
  out.big_t = big_t;
  out.n_paths = n_paths;
  out.gamma = gamma_of(lw_num, lw_den);
  out.lower_bound = std::exp(-params.g * params.g * kernels.gamma_bound_exponent().value);
  out.ess_numerator = log_mean_exp(lw_num).ess;
  out.ess_denominator = log_mean_exp(lw_den).ess;
  if (params.g != 0.0) {
    auto without = [&](std::size_t b, std::size_t e) {
      return gamma_of(detail::without_range<double>(lw_num, b, e), detail::without_range<double>(lw_den, b, e));
    };
    out.stderr = jackknife(n_paths, kJackknifeBlocks, without).stderr;
  }
  return out;
}

}  // namespace nelson
