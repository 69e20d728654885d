#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace h2e::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitStage = 3;

struct CommandOptions {
  std::string config_path;              // empty: built-in reference config
  std::optional<std::string> out;       // overrides output.dir
  std::optional<std::uint64_t> seed;    // overrides seed
  std::optional<std::string> method;    // h2e | ce | la | smallloss
  bool dry_run = false;
  std::string checkpoint;               // eval
  std::string data_dir;                 // eval: bundle directory (default: regenerate)
  std::vector<std::string> run_dirs;    // report
  std::string csv_path;                 // report
};

// Writes train.csv, test.csv and meta.txt for the configured bundle.
int cmd_generate(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Runs H2E and the configured baselines on one bundle. Run directory:
//   config.echo, data/, checkpoints/, confidences/, report.json, log.txt
int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Evaluates a checkpoint on the test split and prints its metrics.
int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Comparison table over run directories.
int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace h2e::cli
