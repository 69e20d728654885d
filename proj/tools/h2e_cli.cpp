// Command-line entry point: generate | train | eval | report.

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "h2e/commands.hpp"

namespace {

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("H2E_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Noisy long-tailed classification lab (hard-to-easy noise identification)"};
  app.require_subcommand(1);

  h2e::cli::CommandOptions opts;
  std::string method;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "key = value config file (default: reference config)");
    sub->add_option("--out", opts.out, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "master seed override");
  };

  auto* generate = app.add_subcommand("generate", "manufacture a dataset bundle");
  common(generate);
  generate->add_flag("--dry-run", opts.dry_run, "validate the config only");

  auto* train = app.add_subcommand("train", "run H2E and baselines");
  common(train);
  train->add_option("--method", method, "run a single method")->check(CLI::IsMember({"h2e", "ce", "la", "smallloss"}));
  train->add_flag("--dry-run", opts.dry_run, "validate the config and print the stage schedule");

  auto* evaluate = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(evaluate);
  evaluate->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  evaluate->add_option("--data", opts.data_dir, "bundle directory (default: regenerate from config)");
  evaluate->add_option("--method", method, "la applies post-hoc logit adjustment")->check(CLI::IsMember({"plain", "la"}));

  auto* report = app.add_subcommand("report", "compare run directories");
  report->add_option("runs", opts.run_dirs, "run directories")->required();
  report->add_option("--csv", opts.csv_path, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);
  for (auto* sub : {generate, train, evaluate}) {
    if (sub->parsed() && sub->count("--seed")) opts.seed = seed;
  }
  if (!method.empty()) opts.method = method;

  if (generate->parsed()) return h2e::cli::cmd_generate(opts, std::cout, std::cerr);
  if (train->parsed()) return h2e::cli::cmd_train(opts, std::cout, std::cerr);
  if (evaluate->parsed()) return h2e::cli::cmd_eval(opts, std::cout, std::cerr);
  return h2e::cli::cmd_report(opts, std::cout, std::cerr);
}
