#include <CLI11.hpp>
#include <Eigen/Core>

#include "attnfactor/runner.hpp"

int main(int argc, char** argv) {
  // Eigen's own threading is pinned to one thread so numerical output is
  // identical at every worker count; parallelism happens at the
  // replication/model level.
  Eigen::setNbThreads(1);

  CLI::App app{"attnfactor: attention-weighted factor models and mixed-frequency forecasting"};
  app.require_subcommand(1);

  attnfactor::cli::RunOptions options;
  std::string config, out;
  std::int64_t seed = -1;
  int workers = 1;

  for (const std::string& name : {"sim", "mc", "empirical", "ablate", "heatmaps"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "run configuration file")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config file)");
    sub->add_option("--workers", workers, "worker count for replication-level parallelism");
    sub->callback([&options, name]() { options.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  options.config_path = config;
  options.out_dir = out;
  if (seed >= 0) options.seed = static_cast<std::uint64_t>(seed);
  options.workers = workers;
  return attnfactor::cli::run_command(options);
}
