#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "nelson/kernels.hpp"
#include "nelson/quadrature.hpp"

namespace nelson {

/// Everything a run depends on. Text form is one `section.key = value` per
/// line; lists are comma-separated; '#' starts a comment.
struct RunConfig {
  ModelParams model{};
  double dt = 0.05;
  QuadratureConfig quad{};

  std::size_t n_paths = 10000;
  std::uint64_t seed = 1;
  int n_workers = 1;

  std::vector<double> g_list{0.4, 0.2, 0.1};
  std::vector<double> eps_list{0.2, 0.1, 0.05, 0.02};
  std::vector<double> t_list{4.0, 8.0, 12.0};
  double dt_eps_ratio = 1.0;  ///< sweep-eps uses dt = min(dt, ratio * eps); 0 disables
  std::vector<double> gamma_t_list{2.0, 4.0, 8.0};

  int fock_radial_panels = 2;
  int fock_n_half = 50;
  int fock_n_max = 2;
  double fock_k_max = 0.0;  ///< 0 picks exp(-eps k_max^2) = 1e-9
  std::vector<double> fock_g_list{0.05, 0.1, 0.2};

  double kernels_t_max = 4.0;
  int kernels_t_points = 41;
  std::vector<double> kernels_tau_list{0.5, 1.0, 2.0, 4.0, 8.0};

  std::size_t verify_ito_paths = 200;
  std::size_t verify_dyson_paths = 2000;
  double verify_dyson_dt = 0.0125;
  std::size_t verify_gamma_paths = 1000;
  double verify_g = 0.3;
  int verify_fock_radial_panels = 1;
  int verify_fock_n_half = 20;

  std::string output_dir = "out";

  /// Total momentum for `estimate`; nonzero switches on the phase-weighted estimator.
  std::vector<double> momentum{0.0, 0.0, 0.0};

  void validate() const {
    model.validate();
    quad.validate();
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("config: grid.dt must be > 0");
    if (n_paths < 100) throw std::invalid_argument("config: mc.n_paths must be >= 100");
    if (n_workers < 1) throw std::invalid_argument("config: mc.n_workers must be >= 1");
    if (!(dt_eps_ratio >= 0.0)) throw std::invalid_argument("config: sweep.dt_eps_ratio must be >= 0");
    if (fock_radial_panels < 1 || fock_n_half < 1 || fock_n_max < 1) {
      throw std::invalid_argument("config: fock grid sizes must be >= 1");
    }
    if (kernels_t_points < 2) throw std::invalid_argument("config: kernels.t_points must be >= 2");
    if (verify_ito_paths < 2 || verify_dyson_paths < 100 || verify_gamma_paths < 100) {
      throw std::invalid_argument("config: verify ensembles too small");
    }
    if (output_dir.empty()) throw std::invalid_argument("config: output.dir must be set");
    if (momentum.size() != 3) throw std::invalid_argument("config: advanced.momentum needs three components");
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
  }
  return v;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s;
}

// Binds every config key to its field, in emission order.
template <class Config, class Visitor>
void visit_fields(Config& c, Visitor&& v) {
  v("model.eps", c.model.eps);
  v("model.lambda", c.model.lambda);
  v("model.g", c.model.g);
  v("model.big_t", c.model.big_t);
  v("model.tau", c.model.tau);
  v("grid.dt", c.dt);
  v("quad.rel_tol", c.quad.rel_tol);
  v("quad.abs_tol", c.quad.abs_tol);
  v("quad.max_subdivisions", c.quad.max_subdivisions);
  v("quad.tail_cut", c.quad.tail_cut);
  v("mc.n_paths", c.n_paths);
  v("mc.seed", c.seed);
  v("mc.n_workers", c.n_workers);
  v("sweep.g", c.g_list);
  v("sweep.eps", c.eps_list);
  v("sweep.t", c.t_list);
  v("sweep.dt_eps_ratio", c.dt_eps_ratio);
  v("gamma.t", c.gamma_t_list);
  v("fock.radial_panels", c.fock_radial_panels);
  v("fock.n_half", c.fock_n_half);
  v("fock.n_max", c.fock_n_max);
  v("fock.k_max", c.fock_k_max);
  v("fock.g", c.fock_g_list);
  v("kernels.t_max", c.kernels_t_max);
  v("kernels.t_points", c.kernels_t_points);
  v("kernels.tau", c.kernels_tau_list);
  v("verify.ito_paths", c.verify_ito_paths);
  v("verify.dyson_paths", c.verify_dyson_paths);
  v("verify.dyson_dt", c.verify_dyson_dt);
  v("verify.gamma_paths", c.verify_gamma_paths);
  v("verify.g", c.verify_g);
  v("verify.fock_radial_panels", c.verify_fock_radial_panels);
  v("verify.fock_n_half", c.verify_fock_n_half);
  v("output.dir", c.output_dir);
  v("advanced.momentum", c.momentum);
}

template <class T>
std::string format_value(const T& x) {
  if constexpr (std::is_same_v<T, std::string>) {
    return x;
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    return format_list(x);
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(x);
  } else {
    return std::to_string(x);
  }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    out = parse_list(key, text);
  } else {
    out = parse_number<T>(key, text);
  }
}

}  // namespace detail

/// Applies one `key = value` assignment. Throws std::invalid_argument for
/// unknown keys or malformed values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  detail::visit_fields(c, [&](std::string_view name, auto& field) {
    if (name == key) {
      detail::parse_value(key, value, field);
      found = true;
    }
  });
  if (!found) throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Every key in the file is applied on top of `base`; mc.seed must be present.
inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
  std::string line;
  int line_no = 0;
  bool seen_seed = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    set_config_value(base, key, detail::trim(std::string_view(t).substr(eq + 1)));
    seen_seed = seen_seed || key == "mc.seed";
  }
  if (!seen_seed) throw std::invalid_argument("config: mc.seed is required");
  base.validate();
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  return parse_config(in, std::move(base));
}

inline std::string emit_config(const RunConfig& c) {
  std::string out;
  std::string section;
  detail::visit_fields(c, [&](std::string_view name, const auto& field) {
    const std::string_view sec = name.substr(0, name.find('.'));
    if (sec != section) {
      if (!section.empty()) out += '\n';
      section = std::string(sec);
    }
    out += std::string(name) + " = " + detail::format_value(field) + '\n';
  });
  return out;
}

}  // namespace nelson
