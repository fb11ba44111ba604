#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/config.hpp"
#include "nelson/estimator.hpp"
#include "nelson/fock.hpp"
#include "nelson/io.hpp"
#include "nelson/kernels.hpp"
#include "nelson/paths.hpp"

#ifndef NELSON_LAB_VERSION
#define NELSON_LAB_VERSION "0.1.0"
#endif

namespace nelson {

/// Output of one subcommand: named files plus pass/fail for verify.
struct CommandOutput {
  std::vector<std::pair<std::string, std::string>> files;
  bool ok = true;
};

/// Gnuplot-friendly two-column data block.
inline std::string plot_data(const std::string& x_name, const std::string& y_name,
                             const std::vector<std::pair<double, double>>& points) {
  std::string out = "# " + x_name + " " + y_name + "\n";
  for (const auto& [x, y] : points) out += format_number(x) + " " + format_number(y) + "\n";
  return out;
}

namespace detail {

inline EstimatorOptions estimator_options(const RunConfig& c) {
  EstimatorOptions o;
  o.n_workers = c.n_workers;
  o.quad = c.quad;
  return o;
}

inline SweepSettings sweep_settings(const RunConfig& c) {
  SweepSettings s;
  s.t_values = c.t_list;
  s.dt = c.dt;
  s.n_paths = c.n_paths;
  s.seed = c.seed;
  s.n_workers = c.n_workers;
  s.quad = c.quad;
  return s;
}

}  // namespace detail

inline CommandOutput cmd_kernels(const RunConfig& c) {
  const KernelEvaluator k(c.model, c.quad);
  CsvTable t("kernels at x = 0 versus time",
             {{"t", "time"}, {"w0", "energy"}, {"rho0", "1"}, {"half_exp_lambda_t", "1"}, {"wbar", "energy"}});
  t.note("half_exp_lambda_t = exp(-lambda t) / 2, for comparison with rho0 (not asserted)");
  std::vector<std::pair<double, double>> w_plot, rho_plot;
  for (int i = 0; i < c.kernels_t_points; ++i) {
    const double tt = c.kernels_t_max * i / (c.kernels_t_points - 1);
    const double w = k.w_kernel(0.0, tt).value;
    const double r = k.rho_kernel(0.0, tt).value;
    t.add_row().num(tt).num(w).num(r).num(0.5 * std::exp(-c.model.lambda * tt)).num(k.w_bar(tt).value);
    w_plot.emplace_back(tt, w);
    rho_plot.emplace_back(tt, r);
  }
  CsvTable ct("c(tau)", {{"tau", "time"}, {"c_tau", "energy"}});
  std::vector<std::pair<double, double>> c_plot;
  for (double tau : c.kernels_tau_list) {
    const double v = k.c_tau(tau).value;
    ct.add_row().num(tau).num(v);
    c_plot.emplace_back(tau, v);
  }
  CsvTable consts("scalar constants",
                  {{"eps", "length^2"}, {"lambda", "momentum"}, {"e_ren", "energy"}, {"e_ren_3d", "energy"},
                   {"gamma_bound_exponent", "1"}, {"c_tau_half_t", "energy"}});
  consts.note("e_ren is -rho(0,0) at unit coupling; multiply by g^2");
  consts.add_row()
      .num(c.model.eps)
      .num(c.model.lambda)
      .num(k.renorm_energy().value)
      .num(k.renorm_energy_3d().value)
      .num(k.gamma_bound_exponent().value)
      .num(k.c_tau(0.5 * c.model.big_t).value);
  return {{{"kernels.csv", t.str()},
           {"c_tau.csv", ct.str()},
           {"constants.csv", consts.str()},
           {"w0.dat", plot_data("t", "W(0,t)", w_plot)},
           {"rho0.dat", plot_data("t", "rho(0,t)", rho_plot)},
           {"c_tau.dat", plot_data("tau", "c(tau)", c_plot)}},
          true};
}

inline CommandOutput cmd_estimate(const RunConfig& c) {
  const PathGrid grid = PathGrid::with_spacing(c.model.big_t, c.dt);
  EstimatorOptions o = detail::estimator_options(c);
  o.momentum = {c.momentum[0], c.momentum[1], c.momentum[2]};
  const EnergyEstimate e = estimate_energy(c.model, grid, c.n_paths, c.seed, o);
  CsvTable t("finite-horizon energy",
             {{"big_t", "time"}, {"dt", "time"}, {"g", "1"}, {"n_paths", "1"}, {"energy", "energy"},
              {"stderr", "energy"}, {"ess", "1"}, {"max_log_weight", "1"}, {"low_ess", "1"}});
  t.note("total momentum = " + detail::format_list(c.momentum));
  t.add_row()
      .num(e.big_t)
      .num(grid.dt())
      .num(e.g)
      .integer(static_cast<long long>(e.n_paths))
      .num(e.value)
      .num(e.stderr)
      .num(e.ess)
      .num(e.max_log_weight)
      .integer(e.low_ess ? 1 : 0);
  return {{{"estimate.csv", t.str()}}, true};
}

inline CommandOutput cmd_sweep_g(const RunConfig& c) {
  const auto rows = sweep_g(c.model, c.g_list, detail::sweep_settings(c));
  CsvTable t("coupling sweep",
             {{"g", "1"}, {"e_inf", "energy"}, {"stderr", "energy"}, {"ratio", "energy"}, {"g2_e_ren", "energy"},
              {"renormalized", "energy"}, {"c_tau_quarter", "energy"}, {"fit_residual", "energy"}, {"status", ""}});
  t.note("ratio = e_inf / g^2; c_tau_quarter = c(model.tau) / 4");
  CsvTable pts("per-horizon estimates",
               {{"g", "1"}, {"big_t", "time"}, {"energy", "energy"}, {"stderr", "energy"}, {"ess", "1"},
                {"log_mgf_ren", "1"}});
  pts.note("log_mgf_ren = log E[exp(g^2 S_ren / 2)] = -2T (energy - g^2 e_ren)");
  std::vector<std::pair<double, double>> plot;
  for (const auto& r : rows) {
    const bool zero = r.g == 0.0;
    auto& row = t.add_row().num(r.g).num(r.curve.extrapolated).num(r.curve.extrapolated_stderr);
    if (zero) {
      row.text("").text("").text("");
    } else {
      row.num(r.ratio).num(r.g2_e_ren).num(r.renormalized);
      plot.emplace_back(r.g, r.ratio);
    }
    row.num(r.c_tau_quarter).num(r.curve.fit_residual).text(r.status);
    for (const auto& e : r.curve.points) {
      pts.add_row().num(r.g).num(e.big_t).num(e.value).num(e.stderr).num(e.ess).num(
          -2.0 * e.big_t * (e.value - r.g * r.g * r.e_ren));
    }
  }
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.status.rfind("error", 0) != 0;
  return {{{"sweep_g.csv", t.str()}, {"sweep_g_points.csv", pts.str()}, {"ratio.dat", plot_data("g", "E/g^2", plot)}},
          ok};
}

inline CommandOutput cmd_sweep_eps(const RunConfig& c) {
  SweepSettings s = detail::sweep_settings(c);
  s.dt_eps_ratio = c.dt_eps_ratio;
  const auto rows = sweep_eps(c.model, c.eps_list, s);
  CsvTable t("cutoff sweep",
             {{"eps", "length^2"}, {"dt", "time"}, {"e_ren", "energy"}, {"e_inf", "energy"}, {"stderr", "energy"},
              {"g2_e_ren", "energy"}, {"renormalized", "energy"}, {"fit_residual", "energy"}, {"status", ""}});
  t.note("g = " + format_number(c.model.g) + "; renormalized = e_inf - g^2 e_ren");
  std::vector<std::pair<double, double>> diverging, renormalized;
  bool ok = true;
  for (const auto& r : rows) {
    t.add_row()
        .num(r.eps)
        .num(r.dt)
        .num(r.e_ren)
        .num(r.curve.extrapolated)
        .num(r.curve.extrapolated_stderr)
        .num(r.g2_e_ren)
        .num(r.renormalized)
        .num(r.curve.fit_residual)
        .text(r.status);
    diverging.emplace_back(r.eps, r.g2_e_ren);
    renormalized.emplace_back(r.eps, r.renormalized);
    ok = ok && r.status.rfind("error", 0) != 0;
  }
  return {{{"sweep_eps.csv", t.str()},
           {"diverging.dat", plot_data("eps", "g^2 E_ren", diverging)},
           {"renormalized.dat", plot_data("eps", "E - g^2 E_ren", renormalized)}},
          ok};
}

inline CommandOutput cmd_gamma(const RunConfig& c) {
  CsvTable t("ground-state overlap",
             {{"big_t", "time"}, {"g", "1"}, {"gamma", "1"}, {"stderr", "1"}, {"lower_bound", "1"},
              {"ess_numerator", "1"}, {"ess_denominator", "1"}});
  std::vector<std::pair<double, double>> plot;
  for (std::size_t i = 0; i < c.gamma_t_list.size(); ++i) {
    EstimatorOptions o = detail::estimator_options(c);
    o.stream = i;
    const OverlapEstimate e = estimate_gamma(c.model, c.gamma_t_list[i], c.dt, c.n_paths, c.seed, o);
    t.add_row().num(e.big_t).num(c.model.g).num(e.gamma).num(e.stderr).num(e.lower_bound).num(e.ess_numerator).num(
        e.ess_denominator);
    plot.emplace_back(e.big_t, e.gamma);
  }
  return {{{"gamma.csv", t.str()}, {"gamma.dat", plot_data("T", "gamma", plot)}}, true};
}

inline CommandOutput cmd_fock(const RunConfig& c, bool export_matrix = false) {
  const MomentumGrid grid = MomentumGrid::spherical(c.model, c.fock_radial_panels, c.fock_n_half, c.fock_k_max);
  const TruncatedFockSpace space(grid.size(), c.fock_n_max);
  LanczosOptions lo;
  lo.workers = c.n_workers;
  const PerturbationCheck pc = perturbation_check(grid, space, c.model, c.fock_g_list, lo);
  const double e_ren = KernelEvaluator(c.model, c.quad).renorm_energy().value;
  CsvTable t("truncated Fock-space ground energies",
             {{"g", "1"}, {"energy", "energy"}, {"ratio", "energy"}, {"residual", "energy"}, {"vacuum_overlap", "1"}});
  std::vector<std::pair<double, double>> plot;
  for (const auto& r : pc.rows) {
    t.add_row().num(r.g).num(r.energy).num(r.ratio).num(r.residual).num(r.vacuum_overlap);
    plot.emplace_back(r.g, r.ratio);
  }
  CsvTable s("second-order coefficient",
             {{"modes", "1"}, {"k_max", "momentum"}, {"n_max", "1"}, {"dimension", "1"}, {"a2_grid", "energy"},
              {"e_ren", "energy"}, {"a2_fit", "energy"}, {"a4_fit", "energy"}, {"residual_g2", "energy"},
              {"residual_g2_g4", "energy"}});
  s.add_row()
      .integer(static_cast<long long>(grid.size()))
      .num(grid.k_max())
      .integer(c.fock_n_max)
      .integer(static_cast<long long>(space.dimension()))
      .num(pc.a2_grid)
      .num(e_ren)
      .num(pc.a2_fit)
      .num(pc.a4_fit)
      .num(pc.residual_pure)
      .num(pc.residual_quartic);
  CommandOutput out{{{"fock.csv", t.str()}, {"fock_summary.csv", s.str()}, {"ratio.dat", plot_data("g", "E/g^2", plot)}},
                    true};
  if (export_matrix) {
    ModelParams p = c.model;
    p.g = c.fock_g_list.front();
    std::ostringstream os;
    build_hamiltonian(grid, space, p, c.n_workers).write_coordinate(os);
    out.files.emplace_back("hamiltonian.coo", os.str());
  }
  return out;
}

/// One line of the verify table.
struct Check {
  std::string name;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Desk-scale cross-check suite. Every check is deterministic given the config.
inline std::vector<Check> run_checks(const RunConfig& c) {
  std::vector<Check> checks;
  const ModelParams& m = c.model;
  const KernelEvaluator k(m, c.quad);
  const double e_ren = k.renorm_energy().value;

  {
    double worst = 0.0;
    for (double eps : {0.2, 0.1, 0.05}) {
      for (double lam : {0.5, 1.0, 2.0}) {
        ModelParams p = m;
        p.eps = eps;
        p.lambda = lam;
        const KernelEvaluator kp(p, c.quad);
        const double a = kp.renorm_energy().value;
        const double b = kp.renorm_energy_3d().value;
        worst = std::max(worst, std::abs(a - b) / std::abs(a));
      }
    }
    checks.push_back({"dual_route_e_ren_max_rel", worst, 0.0, 1e-10, worst <= 1e-10});
  }

  {
    EstimatorOptions o = detail::estimator_options(c);
    o.stream = 100;
    const auto levels = decomposition_refinement(m, 2.0 * c.dt, 3, c.verify_ito_paths, c.seed, o);
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
      const double ratio = levels[i].defect_rms / levels[i + 1].defect_rms;
      checks.push_back({"ito_defect_rms_ratio_dt_" + format_number(levels[i].dt), ratio, 1.25, 0.0, ratio >= 1.25});
    }
    const auto& fine = levels.back();
    checks.push_back({"ito_mean_y", fine.y_ito.mean, 0.0, 3.0 * fine.y_ito.stderr,
                      std::abs(fine.y_ito.mean) <= 3.0 * fine.y_ito.stderr});
    checks.push_back({"boundary_term_bound", fine.max_abs_z, fine.z_bound, 0.0, fine.max_abs_z <= fine.z_bound});
  }

  {
    const PathGrid grid = PathGrid::with_spacing(m.big_t, c.verify_dyson_dt);
    const PairKernelTable table(k, grid.dt(), grid.n_steps, {0.15, 8.0, false});
    const auto samples = sample_ensemble(table, grid, {c.seed, 200, c.verify_dyson_paths, c.n_workers});
    std::vector<double> s(samples.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = samples[i].s;
    const MeanEstimate ms = jackknife_mean(s, kJackknifeBlocks);
    const double quad = k.mean_s_quadrature(m.big_t).value;
    checks.push_back({"dyson_mean_s", ms.mean, quad, 3.0 * ms.stderr, std::abs(ms.mean - quad) <= 3.0 * ms.stderr});
    const double g = 0.05;
    const EnergyEstimate e = energy_from_samples(samples, g, m.big_t);
    const double lin = -quad / (4.0 * m.big_t);
    const double tol = 3.0 * e.stderr / (g * g);
    checks.push_back({"small_g_linearization", e.value / (g * g), lin, tol, std::abs(e.value / (g * g) - lin) <= tol});
  }

  {
    const MomentumGrid grid = MomentumGrid::spherical(m, c.verify_fock_radial_panels, c.verify_fock_n_half);
    const TruncatedFockSpace space(grid.size(), 2);
    LanczosOptions lo;
    lo.workers = c.n_workers;
    const PerturbationCheck pc = perturbation_check(grid, space, m, {0.05, 0.1, 0.2}, lo);
    const double rel_grid = std::abs(pc.a2_grid / e_ren - 1.0);
    const double rel_fit = std::abs(pc.a2_fit / pc.a2_grid - 1.0);
    checks.push_back({"fock_a2_grid_vs_e_ren_rel", rel_grid, 0.0, 0.02, rel_grid <= 0.02});
    checks.push_back({"fock_a2_fit_vs_grid_rel", rel_fit, 0.0, 0.01, rel_fit <= 0.01});
  }

  {
    ModelParams p = m;
    p.g = c.verify_g;
    for (std::size_t i = 0; i < c.gamma_t_list.size(); ++i) {
      EstimatorOptions o = detail::estimator_options(c);
      o.stream = 300 + i;
      const OverlapEstimate e = estimate_gamma(p, c.gamma_t_list[i], c.dt, c.verify_gamma_paths, c.seed, o);
      const std::string t = format_number(e.big_t);
      checks.push_back({"gamma_lower_bound_T_" + t, e.gamma, e.lower_bound, 3.0 * e.stderr,
                        e.gamma >= e.lower_bound - 3.0 * e.stderr});
      checks.push_back({"gamma_upper_bound_T_" + t, e.gamma, 1.0, 3.0 * e.stderr, e.gamma <= 1.0 + 3.0 * e.stderr});
    }
  }

  {
    const double c1 = k.c_tau(1.0).value;
    const double c8 = k.c_tau(8.0).value;
    checks.push_back({"c_tau_ratio_8_1", c8 / c1, 0.0, 1e-2, c8 / c1 < 1e-2});
    ModelParams p = m;
    p.eps = 1e-12;
    const KernelEvaluator k0(p, c.quad);
    double worst = 0.0;
    for (double tau : {0.5, 1.0, 2.0, 4.0}) {
      const double exact = 8.0 * std::numbers::pi * std::exp(-tau * m.lambda) / tau;
      worst = std::max(worst, std::abs(k0.c_tau(tau).value / exact - 1.0));
    }
    checks.push_back({"c_tau_eps_to_zero_max_rel", worst, 0.0, 1e-8, worst <= 1e-8});
  }
  return checks;
}

inline CommandOutput cmd_verify(const RunConfig& c) {
  const auto checks = run_checks(c);
  CsvTable t("cross-check suite", {{"check", ""}, {"value", ""}, {"reference", ""}, {"tolerance", ""}, {"pass", "1"}});
  bool ok = true;
  for (const auto& ch : checks) {
    t.add_row().text(ch.name).num(ch.value).num(ch.reference).num(ch.tolerance).integer(ch.pass ? 1 : 0);
    ok = ok && ch.pass;
  }
  return {{{"verify.csv", t.str()}}, ok};
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"kernels", "estimate", "sweep-g", "sweep-eps", "gamma", "fock", "verify"};
  return names;
}

/// Runs one subcommand into <output.dir>/<name>/ and writes its manifest.
/// Returns the process exit code: 0 success, 1 failed verification, 2 error.
inline int run_command(const std::string& name, const RunConfig& c, std::ostream& log, bool export_matrix = false) {
  const fs::path dir = fs::path(c.output_dir) / name;
  ensure_writable_dir(dir);
  RunManifest manifest(name, emit_config(c), NELSON_LAB_VERSION);
  int code = 0;
  try {
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    CommandOutput out;
    if (name == "kernels") out = cmd_kernels(c);
    else if (name == "estimate") out = cmd_estimate(c);
    else if (name == "sweep-g") out = cmd_sweep_g(c);
    else if (name == "sweep-eps") out = cmd_sweep_eps(c);
    else if (name == "gamma") out = cmd_gamma(c);
    else if (name == "fock") out = cmd_fock(c, export_matrix);
    else if (name == "verify") out = cmd_verify(c);
    else throw std::invalid_argument("unknown command " + name);
    manifest.task(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    for (const auto& [file, content] : out.files) {
      manifest.output(dir, file, content);
      log << (dir / file).string() << "\n";
    }
    code = out.ok ? 0 : 1;
  } catch (const QuadratureError& e) {
    manifest.fail("quadrature", e.what());
    code = 2;
  } catch (const EigensolverError& e) {
    manifest.fail("eigensolver", e.what());
    code = 2;
  } catch (const std::invalid_argument& e) {
    manifest.fail("configuration", e.what());
    code = 2;
  } catch (const std::exception& e) {
    manifest.fail("runtime", e.what());
    code = 2;
  }
  manifest.finish(dir, code == 0);
  if (code == 2) log << "error: " << manifest.json()["error"]["message"].get<std::string>() << "\n";
  if (code == 1) log << name << ": one or more checks failed\n";
  return code;
}

}  // namespace nelson
