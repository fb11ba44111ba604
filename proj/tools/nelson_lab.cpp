#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nelson/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Path-integral and Fock-space numerics for the Nelson model"};
  app.require_subcommand(1, 1);
  app.fallthrough();  // parent options may follow the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  bool export_matrix = false;
  nelson::RunConfig cfg;

  app.add_option("-c,--config", config_path, "key = value config file (must set mc.seed)");
  app.add_option("-s,--set", overrides, "override a config key, e.g. --set model.g=0.2")->allow_extra_args(false);
  app.add_flag("--print-config", print_config, "print the effective config and exit");

  // Typed shortcuts; each one is an override of the named config key.
  struct Shortcut {
    const char* flag;
    const char* key;
    const char* help;
  };
  const std::vector<Shortcut> shortcuts{
      {"--seed", "mc.seed", "random seed"},
      {"--workers", "mc.n_workers", "worker threads (never changes results)"},
      {"--n-paths", "mc.n_paths", "paths per ensemble"},
      {"--eps", "model.eps", "UV regularization eps"},
      {"--lambda", "model.lambda", "infrared cutoff"},
      {"--g", "model.g", "coupling"},
      {"--big-t", "model.big_t", "horizon T"},
      {"--tau", "model.tau", "split tau"},
      {"--dt", "grid.dt", "time step"},
      {"--out", "output.dir", "output directory"},
  };
  std::vector<std::string> shortcut_values(shortcuts.size());
  for (std::size_t i = 0; i < shortcuts.size(); ++i) {
    app.add_option(shortcuts[i].flag, shortcut_values[i], std::string(shortcuts[i].help) + " (" + shortcuts[i].key + ")");
  }

  for (const auto& name : nelson::command_names()) {
    auto* sub = app.add_subcommand(name);
    if (name == "fock") sub->add_flag("--export-matrix", export_matrix, "also write the Hamiltonian in coordinate format");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) cfg = nelson::load_config(config_path);
    for (std::size_t i = 0; i < shortcuts.size(); ++i) {
      if (!shortcut_values[i].empty()) nelson::set_config_value(cfg, shortcuts[i].key, shortcut_values[i]);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      nelson::set_config_value(cfg, nelson::detail::trim(kv.substr(0, eq)), nelson::detail::trim(kv.substr(eq + 1)));
    }
    if (print_config) {
      std::cout << nelson::emit_config(cfg);
      return 0;
    }
    return nelson::run_command(app.get_subcommands().front()->get_name(), cfg, std::cout, export_matrix);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
