#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "mutexmatch/config.hpp"

namespace cli = mutexmatch::cli;

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised training with true-positive and true-negative classifier heads"};
  app.require_subcommand(1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "Print every config key with its default and exit");

  cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train one run per seed");
  train_cmd->add_option("--config", train.config_path, "Config file (JSON object or key=value lines)");
  train_cmd->add_option("--manifest", train.manifest_path, "Re-run the configuration recorded in a manifest.json");
  train_cmd->add_option("--set", train.overrides, "Override a config key, KEY=VALUE (repeatable)");
  train_cmd->add_option("--seeds", train.seeds, "Number of consecutive seeds starting at config seed");
  train_cmd->add_option("--out", train.out, "Run directory")->capture_default_str();

  cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--config", eval.config_path, "Dataset config (defaults to the one stored in the checkpoint)");
  eval_cmd->add_option("--set", eval.overrides, "Override a config key, KEY=VALUE (repeatable)");
  eval_cmd->add_option("--out", eval.out, "Directory for eval.json and report tables");

  cli::AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run a grid of configurations over seeds");
  ablate_cmd->add_option("--config", ablate.config_path, "Base config file");
  ablate_cmd->add_option("--set", ablate.overrides, "Override a base config key, KEY=VALUE (repeatable)");
  ablate_cmd->add_option("--sweep", ablate.sweeps, "Sweep axis KEY=V1,V2,... (repeatable, crossed)");
  ablate_cmd->add_option("--preset", ablate.preset, "Named grid: tb_ab, k, tau, lr_schedule");
  ablate_cmd->add_option("--seeds", ablate.seeds, "Seeds per grid point");
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->capture_default_str();

  cli::ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Regenerate report tables from metric logs");
  report_cmd->add_option("runs", report.runs, "Run directories")->required();
  report_cmd->add_option("--out", report.out, "Destination directory");

  auto* keys_cmd = app.add_subcommand("keys", "Print every config key with its default value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*train_cmd) return cli::cmd_train(train, std::cout, std::cerr);
    if (*eval_cmd) return cli::cmd_eval(eval, std::cout, std::cerr);
    if (*ablate_cmd) return cli::cmd_ablate(ablate, std::cout, std::cerr);
    if (*report_cmd) return cli::cmd_report(report, std::cout, std::cerr);
    if (*keys_cmd || list_keys) {
      const mutexmatch::RunConfig defaults;
      for (const auto& key : mutexmatch::RunConfig::keys()) std::cout << key << '=' << defaults.get(key) << '\n';
      return cli::kOk;
    }
  } catch (...) {
    return cli::report_exception(std::cerr);
  }
  return cli::kUsage;
}
