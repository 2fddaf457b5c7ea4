#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "robustleak/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"membership-inference audits of adversarially trained classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;

  const std::pair<const char*, const char*> commands[] = {
      {"audit", "train one model per seed and write its full membership report"},
      {"sweep-eps", "audit a trained model across attack budgets"},
      {"sweep-temp", "audit a trained model across softmax temperatures"},
      {"sweep-capacity", "train and audit across hidden-layer scales"},
      {"sweep-budget", "train and audit one model per training budget"},
      {"sweep-ratio", "train and audit across adversarial-subset ratios"},
      {"sensitivity", "retrain without held-out groups and score their confidence change"},
      {"histogram", "bucket per-example losses, optionally split by attack outcome"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config's \"output\")");
    sub->add_option("--seed", seeds, "seed override, repeatable");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help exits 0; bad usage is a config problem
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    robustleak::ExperimentConfig cfg = robustleak::load_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    const std::string out = out_dir.empty() ? cfg.output : out_dir;
    if (out.empty())
      throw robustleak::ConfigError("no output directory: set \"output\" in the config or pass --out");
    robustleak::run_command(command, cfg, out);
  } catch (const robustleak::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
