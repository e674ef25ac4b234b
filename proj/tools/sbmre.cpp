#include "sbmre/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

enum Exit { kPass = 0, kFail = 1, kConfig = 2 };

template <typename T>
void env_override(const char* name, T& value, bool set_on_command_line) {
  const char* raw = std::getenv(name);
  if (raw == nullptr || set_on_command_line) return;
  try {
    value = static_cast<T>(std::stoull(raw));
  } catch (const std::exception&) {
    throw sbmre::ConfigError(std::string(name) + " must be a non-negative integer");
  }
}

void print_summary(const sbmre::RunReport& report, std::ostream& os) {
  os << report.experiment << "  hash=" << report.config_hash << "  seed=" << report.seed << "  wall=" << report.wall_seconds
     << "s\n";
  for (const auto& row : report.rows) {
    os << "  [" << (row.pass ? "PASS" : "FAIL") << "] " << row.check << "  estimate=" << row.estimate
       << "  reference=" << row.reference << "  se=" << row.se << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and cross-check runner for super-Brownian motion in random environment"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "results", manifest_path;
  std::uint64_t seed = 0;
  unsigned workers = 0;

  for (const auto& name : sbmre::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "INI experiment file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "root seed (default: [experiment] seed, or SBMRE_SEED)");
    sub->add_option("--workers", workers, "worker threads (default: [experiment] workers, or SBMRE_WORKERS)");
    sub->add_option("--out", out_dir, "output directory");
  }
  auto* replay_cmd = app.add_subcommand("replay", "re-run a manifest and compare bytes");
  replay_cmd->add_option("--manifest", manifest_path, "manifest written by a prior run")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--workers", workers, "override the recorded worker count");
  auto* validate_cmd = app.add_subcommand("validate", "check a config file without running it");
  validate_cmd->add_option("--config", config_path, "INI experiment file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kConfig;
  }

  try {
    if (validate_cmd->parsed()) {
      sbmre::ExperimentConfig::load(config_path).validate();
      std::cout << "config ok: " << config_path << "\n";
      return kPass;
    }
    if (replay_cmd->parsed()) {
      std::optional<unsigned> override_workers;
      if (replay_cmd->count("--workers") > 0) override_workers = workers;
      const auto result = sbmre::replay(manifest_path, override_workers);
      std::cout << result.message << "\n";
      if (result.refused) return kConfig;
      print_summary(result.output.report, std::cout);
      return result.identical && result.output.report.all_pass() ? kPass : kFail;
    }

    CLI::App* sub = app.get_subcommands().front();
    const auto config = sbmre::ExperimentConfig::load(config_path);
    if (config.experiment() != sub->get_name())
      throw sbmre::ConfigError("config names experiment '" + config.experiment() + "' but '" + sub->get_name() +
                               "' was requested");
    sbmre::RunContext context;
    context.seed = config.seed();
    context.workers = config.workers();
    const bool seed_flag = sub->count("--seed") > 0, workers_flag = sub->count("--workers") > 0;
    env_override("SBMRE_SEED", context.seed, seed_flag);
    env_override("SBMRE_WORKERS", context.workers, workers_flag);
    if (seed_flag) context.seed = seed;
    if (workers_flag) context.workers = workers;
    if (context.workers < 1) throw sbmre::ConfigError("workers must be >= 1");
    if (sub->count("--out") == 0 && config.has("output.dir")) out_dir = config.text("output.dir");

    const auto output = sbmre::run_experiment(config, context);
    const auto written = sbmre::write_run(output, config, context, out_dir);
    print_summary(output.report, std::cout);
    std::cout << "wrote " << written.csv.string() << " and " << written.manifest.string() << "\n";
    return output.report.all_pass() ? kPass : kFail;
  } catch (const sbmre::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
}
