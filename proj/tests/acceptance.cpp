// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "nelson/commands.hpp"

#ifndef NELSON_LAB_EXE
#define NELSON_LAB_EXE "nelson_lab"
#endif

using namespace nelson;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const ModelParams kBase{0.1, 1.0, 0.0, 4.0, 2.0};
constexpr std::uint64_t kSeed = 20240611;

Outcome renormalization_identity() {
  double worst = 0.0;
  for (double eps : {0.2, 0.1, 0.05}) {
    for (double lam : {0.5, 1.0, 2.0}) {
      ModelParams p = kBase;
      p.eps = eps;
      p.lambda = lam;
      const KernelEvaluator k(p, {});
      const double radial = -k.rho_kernel(0.0, 0.0).value;
      const double cube = k.renorm_energy_3d().value;
      worst = std::max(worst, std::abs(cube / radial - 1.0));
    }
  }
  return {worst <= 1e-10, fmt("max rel diff %.3g (tol 1e-10)", worst)};
}

Outcome ito_decomposition() {
  const auto levels = decomposition_refinement(kBase, 0.1, 3, 1000, kSeed);
  bool ok = true;
  std::string d = "rms defect";
  for (const auto& l : levels) d += fmt(" dt=%g:%.4g", l.dt, l.defect_rms);
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const double r = levels[i].defect_rms / levels[i + 1].defect_rms;
    d += fmt("; ratio %.3f", r);
    ok = ok && r >= 1.25;
  }
  return {ok, d + " (need >= 1.25)"};
}

Outcome dyson_consistency() {
  const KernelEvaluator k(kBase, {});
  // Fine step: the trapezoid bias of S is second order in dt.
  const PathGrid grid = PathGrid::with_spacing(kBase.big_t, 0.0125);
  const PairKernelTable table(k, grid.dt(), grid.n_steps, {0.15, 8.0, false});
  const auto samples = sample_ensemble(table, grid, {kSeed, 1, 10000, 1});
  std::vector<double> s(samples.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = samples[i].s;
  const MeanEstimate m = jackknife_mean(s, kJackknifeBlocks);
  const double quad = k.mean_s_quadrature(kBase.big_t).value;
  const double dev = std::abs(m.mean - quad);
  return {dev <= 3.0 * m.stderr,
          fmt("MC %.5f +- %.5f vs quadrature %.5f, |diff| = %.2f stderr", m.mean, m.stderr, quad, dev / m.stderr)};
}

Outcome small_coupling_limit() {
  SweepSettings st;
  st.t_values = {4.0, 8.0, 12.0};
  st.dt = 0.05;
  st.n_paths = 10000;
  st.seed = kSeed;
  const std::vector<double> gs{0.4, 0.2, 0.1};
  const auto rows = sweep_g(kBase, gs, st);
  const double e_ren = rows.front().e_ren;
  std::vector<double> dist;
  std::string d = fmt("E_ren %.5f; E/g^2", e_ren);
  for (const auto& r : rows) {
    if (r.status.rfind("error", 0) == 0) return {false, "g=" + format_number(r.g) + " " + r.status};
    dist.push_back(std::abs(r.ratio - e_ren));
    d += fmt(" g=%g:%.5f", r.g, r.ratio);
  }
  bool monotone = true;
  for (std::size_t i = 0; i + 1 < dist.size(); ++i) monotone = monotone && dist[i + 1] < dist[i];
  const auto& last = rows.back();
  const double g2 = last.g * last.g;
  const double stat = 3.0 * last.curve.extrapolated_stderr / g2;
  const double sys = last.c_tau_quarter + last.curve.fit_residual / g2;
  const double tol = std::max(stat, sys);
  d += fmt("; monotone=%d; |E/g^2 - E_ren| at g=0.1 %.4f (tol %.4f)", monotone ? 1 : 0, dist.back(), tol);
  return {monotone && dist.back() <= tol, d};
}

Outcome cutoff_boundedness() {
  SweepSettings st;
  st.t_values = {4.0, 8.0, 12.0};
  st.dt = 0.05;
  st.dt_eps_ratio = 1.0;
  st.n_paths = 10000;
  st.seed = kSeed;
  ModelParams p = kBase;
  p.g = 0.3;
  const std::vector<double> eps{0.2, 0.1, 0.05, 0.02};
  const auto rows = sweep_eps(p, eps, st);
  double rmin = INFINITY, rmax = -INFINITY, dmin = INFINITY, dmax = -INFINITY;
  bool increasing = true;
  std::string d = "renormalized";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.status.rfind("error", 0) == 0) return {false, "eps=" + format_number(r.eps) + " " + r.status};
    rmin = std::min(rmin, r.renormalized);
    rmax = std::max(rmax, r.renormalized);
    dmin = std::min(dmin, std::abs(r.g2_e_ren));
    dmax = std::max(dmax, std::abs(r.g2_e_ren));
    if (i > 0) increasing = increasing && std::abs(r.e_ren) > std::abs(rows[i - 1].e_ren);
    d += fmt(" eps=%g:%.4f", r.eps, r.renormalized);
  }
  const double range = rmax - rmin;
  const double bound = 0.5 * (dmax - dmin);
  d += fmt("; range %.4f vs half-range of |g^2 E_ren| %.4f; |E_ren| increasing=%d", range, bound, increasing ? 1 : 0);
  return {range <= bound && increasing, d};
}

Outcome fock_bridge() {
  ModelParams p = kBase;
  const MomentumGrid grid = MomentumGrid::spherical(p, 2, 50);
  const TruncatedFockSpace space(grid.size(), 2);
  const PerturbationCheck pc = perturbation_check(grid, space, p, {0.05, 0.1, 0.2});
  const double e_ren = KernelEvaluator(p, {}).renorm_energy().value;
  const double rel_grid = std::abs(pc.a2_grid / e_ren - 1.0);
  const double rel_fit = std::abs(pc.a2_fit / pc.a2_grid - 1.0);
  return {rel_grid <= 0.02 && rel_fit <= 0.01,
          fmt("%zu modes, dim %llu: grid a2 rel %.3g (tol 0.02), fitted a2 rel %.3g (tol 0.01)", grid.size(),
              static_cast<unsigned long long>(space.dimension()), rel_grid, rel_fit)};
}

Outcome overlap_bound() {
  ModelParams p = kBase;
  p.g = 0.3;
  bool ok = true;
  std::string d;
  std::size_t i = 0;
  for (double t : {2.0, 4.0, 8.0}) {
    EstimatorOptions o;
    o.stream = i++;
    const OverlapEstimate e = estimate_gamma(p, t, 0.05, 10000, kSeed, o);
    ok = ok && e.gamma >= e.lower_bound - 3.0 * e.stderr && e.gamma <= 1.0 + 3.0 * e.stderr;
    d += fmt("T=%g: %.4f +- %.4f; ", t, e.gamma, e.stderr);
    if (t == 8.0) d += fmt("lower bound %.4f", e.lower_bound);
  }
  return {ok, d};
}

Outcome c_tau_limits() {
  const KernelEvaluator k(kBase, {});
  bool decreasing = true;
  double prev = INFINITY;
  for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    const double v = k.c_tau(tau).value;
    decreasing = decreasing && v < prev;
    prev = v;
  }
  const double ratio = k.c_tau(8.0).value / k.c_tau(1.0).value;
  ModelParams p = kBase;
  p.eps = 1e-12;
  const KernelEvaluator k0(p, {});
  double worst = 0.0;
  for (double tau : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double exact = 8.0 * std::numbers::pi * std::exp(-tau * p.lambda) / tau;
    worst = std::max(worst, std::abs(k0.c_tau(tau).value / exact - 1.0));
  }
  return {decreasing && ratio < 1e-2 && worst <= 1e-8,
          fmt("decreasing=%d, c(8)/c(1) = %.3g (< 1e-2), eps->0 max rel %.3g (tol 1e-8)", decreasing ? 1 : 0, ratio,
              worst)};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::current_path() / "acceptance_determinism";
  fs::remove_all(root);
  std::string contents[2];
  int codes[2];
  const int workers[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    const fs::path out = root / ("workers_" + std::to_string(workers[i]));
    const std::string cmd = std::string("\"") + NELSON_LAB_EXE + "\" verify --seed 1 --workers " +
                            std::to_string(workers[i]) + " --out \"" + out.string() + "\" > /dev/null";
    codes[i] = std::system(cmd.c_str());
    try {
      contents[i] = read_file(out / "verify" / "verify.csv");
    } catch (const std::exception& e) {
      return {false, e.what()};
    }
  }
  const bool same = contents[0] == contents[1];
  return {same && codes[0] == 0 && codes[1] == 0,
          fmt("verify.csv identical=%d (%zu bytes), exit codes %d/%d", same ? 1 : 0, contents[0].size(), codes[0],
              codes[1])};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"renormalization identity", renormalization_identity},
      {"Ito decomposition refinement", ito_decomposition},
      {"second-order mean of S", dyson_consistency},
      {"small-coupling limit", small_coupling_limit},
      {"boundedness as eps -> 0", cutoff_boundedness},
      {"Fock-space second-order coefficient", fock_bridge},
      {"overlap lower bound", overlap_bound},
      {"c(tau) limits", c_tau_limits},
      {"determinism across worker counts", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
