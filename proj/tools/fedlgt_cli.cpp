#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedlgt/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedlgt;

namespace {

constexpr int kUsage = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> parallel;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config file");
  if (need_config) opt->required();
  cmd->add_option("--seed", c.seed, "seed for both data generation and training");
  cmd->add_option("--out", c.out, "output directory (overrides config and FEDLGT_OUT)");
  cmd->add_option("--parallel", c.parallel, "concurrent local updates per round")->check(CLI::PositiveNumber);
}

// Returns nullopt after printing the reason; the caller exits with kUsage.
std::optional<ExperimentConfig> resolve(const Common& c) {
  if (!fs::is_regular_file(c.config)) {
    std::cerr << "error: config file '" << c.config << "' not found\n";
    return std::nullopt;
  }
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(c.config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::nullopt;
  }
  if (c.seed) override_seed(cfg, *c.seed);
  if (const char* env = std::getenv("FEDLGT_OUT"); env && *env) cfg.output_dir = env;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.parallel) cfg.federation.parallel = *c.parallel;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-label training with universal label embeddings"};
  app.require_subcommand(1);

  Common gen, train, ablate;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic federated dataset");
  add_common(gen_cmd, gen, true);
  auto* train_cmd = app.add_subcommand("train", "run federated training");
  add_common(train_cmd, train, true);
  auto* ablate_cmd = app.add_subcommand("ablate", "run the four-arm ablation over several seeds");
  add_common(ablate_cmd, ablate, true);

  std::string checkpoint, data;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  if (*eval_cmd) {
    if (!fs::is_regular_file(checkpoint)) {
      std::cerr << "error: checkpoint '" << checkpoint << "' not found\n";
      return kUsage;
    }
    if (!fs::is_directory(data)) {
      std::cerr << "error: dataset directory '" << data << "' not found\n";
      return kUsage;
    }
    return cmd_eval(checkpoint, data, std::cout, std::cerr);
  }

  Common& c = *gen_cmd ? gen : *train_cmd ? train : ablate;
  auto cfg = resolve(c);
  if (!cfg) return kUsage;
  if (*gen_cmd) return cmd_gen_data(*cfg, std::cout, std::cerr);
  if (*train_cmd) return cmd_train(*cfg, std::cout, std::cerr);
  return cmd_ablate(*cfg, std::cout, std::cerr);
}
