#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distalign/commands.hpp"

namespace {

// Applies the global flags on top of the loaded config. --out remaps the
// three output directories under one root; --seed replaces the seed the
// subcommand draws from.
struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

distalign::RunConfig resolve_config(const GlobalOptions& options, const std::string& command) {
  distalign::RunConfig config;
  if (!options.config_path.empty()) {
    config = distalign::RunConfig::from_json_file(options.config_path);
  }
  for (const auto& assignment : options.overrides) config.apply_override(assignment);
  if (!options.out_dir.empty()) {
    const std::filesystem::path root(options.out_dir);
    config.corpus_dir = root / "corpus";
    config.checkpoint_dir = root / "checkpoints";
    config.report_dir = root / "reports";
  }
  if (options.seed) {
    if (command == "gen-corpus") {
      config.skew_seed = *options.seed;
    } else if (command == "pretrain") {
      config.pretrain_seed = *options.seed;
    } else if (command == "mitigate") {
      config.train.seeds = {*options.seed};
    } else if (command == "sweep") {
      config.train.seeds = {*options.seed};
    }
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gender-profession distribution alignment pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions options;
  app.add_option("--config", options.config_path, "JSON config file");
  app.add_option("--set", options.overrides, "override a config key (key=value); repeatable");
  app.add_option("--seed", options.seed, "override the seed the subcommand uses");
  app.add_option("--out", options.out_dir, "root directory for corpus/, checkpoints/, reports/");

  app.add_subcommand("gen-corpus", "generate the skewed synthetic corpus");
  app.add_subcommand("pretrain", "pretrain the toy model on the generated corpus");

  auto* detect = app.add_subcommand("detect", "score a checkpoint against the desired distribution");
  std::string detect_checkpoint;
  std::string detect_name = "base";
  detect->add_option("--checkpoint", detect_checkpoint, "model checkpoint")->required();
  detect->add_option("--name", detect_name, "report name prefix (default: base)");

  auto* mitigate = app.add_subcommand("mitigate", "fine-tune the checkpoint toward the target");
  std::string mitigate_checkpoint;
  mitigate->add_option("--checkpoint", mitigate_checkpoint, "base model checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "grid-search batch size, beta, and gamma");
  std::string sweep_checkpoint;
  sweep->add_option("--checkpoint", sweep_checkpoint, "base model checkpoint")->required();

  auto* report = app.add_subcommand("report", "merge bias reports into a summary table");
  std::vector<std::string> report_paths;
  std::string history_path;
  report->add_option("reports", report_paths, "bias report JSON files (base [tuned])")->required();
  report->add_option("--history", history_path, "history CSV to pivot into plot.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const distalign::RunConfig config = resolve_config(options, command);
    if (command == "gen-corpus") return distalign::cmd_gen_corpus(config);
    if (command == "pretrain") return distalign::cmd_pretrain(config);
    if (command == "detect") return distalign::cmd_detect(config, detect_checkpoint, detect_name);
    if (command == "mitigate") return distalign::cmd_mitigate(config, mitigate_checkpoint);
    if (command == "sweep") return distalign::cmd_sweep(config, sweep_checkpoint);
    if (command == "report") {
      std::vector<std::filesystem::path> paths(report_paths.begin(), report_paths.end());
      std::optional<std::filesystem::path> history;
      if (!history_path.empty()) history = history_path;
      return distalign::cmd_report(config, paths, history);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return distalign::exit_code::failure;
  }
  return distalign::exit_code::failure;
}
