// Command-line front end: experiment commands over JSON configs.

#include "blur/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", flags.out_dir, "output directory (overrides the config)");
  cmd->add_option("--seed", flags.seed, "global seed (overrides the config)");
  cmd->add_option("--threads", flags.threads, "worker threads (overrides the config)");
}

blur::ExperimentConfig resolve(const CommonFlags& flags) {
  blur::ExperimentConfig config = blur::load_config(flags.config_path);
  if (!flags.out_dir.empty()) config.output_dir = flags.out_dir;
  if (flags.seed >= 0) config.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.threads > 0) config.threads = flags.threads;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-state networks with learned bidirectional update rules"};
  app.require_subcommand(1);

  CommonFlags meta_flags, train_flags, eval_flags, sgd_flags, analyze_flags;
  std::string analyze_mode = "jacobian";

  CLI::App* meta = app.add_subcommand("meta-train", "evolve a genome with CMA-ES");
  add_common(meta, meta_flags);
  CLI::App* train = app.add_subcommand("train", "run inner-loop episodes with a genome");
  add_common(train, train_flags);
  CLI::App* eval = app.add_subcommand("eval", "accuracy-vs-unroll tables for a genome");
  add_common(eval, eval_flags);
  CLI::App* sgd = app.add_subcommand("baseline-sgd", "SGD reference learning-rate sweep");
  add_common(sgd, sgd_flags);
  CLI::App* analyze = app.add_subcommand("analyze", "update-rule analyses");
  add_common(analyze, analyze_flags);
  analyze->add_option("--mode", analyze_mode, "jacobian | metric")
      ->check(CLI::IsMember({"jacobian", "metric"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (meta->parsed()) return blur::cmd_meta_train(resolve(meta_flags));
    if (train->parsed()) return blur::cmd_train(resolve(train_flags));
    if (eval->parsed()) return blur::cmd_eval(resolve(eval_flags));
    if (sgd->parsed()) return blur::cmd_baseline_sgd(resolve(sgd_flags));
    if (analyze->parsed())
      return blur::cmd_analyze(resolve(analyze_flags), analyze_mode == "jacobian"
                                                           ? blur::AnalyzeMode::Jacobian
                                                           : blur::AnalyzeMode::Metric);
  } catch (const blur::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
