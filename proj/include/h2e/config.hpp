#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "h2e/eval.hpp"
#include "h2e/pipeline.hpp"
#include "h2e/synthdata.hpp"

namespace h2e::config {

// Every knob of one experiment. Files are plain `key = value` lines with `#`
// comments; unknown or repeated keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 1;

  // data
  int class_count = 10;
  int feature_dim = 32;
  int context_count = 6;
  int n_max = 500;
  double eta = 20.0;
  double rho = 0.3;
  double blue_fraction = 0.5;
  double signal_scale = 3.0;
  double context_scale = 2.0;
  double noise_scale = 1.0;
  double head_context_entropy = 0.9;
  double tail_context_entropy = 0.1;
  int test_per_class = 100;

  // train
  int epochs = 30;  // network epoch budget shared by every method
  int iterations = 2;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool cosine = false;
  std::vector<int> hidden{64, 64};
  int warmup_epochs = 6;
  int stage2_epochs = 6;
  double w_min = 0.2;
  bool density_weighting = true;
  double theta_floor = 0.1;
  double initial_w = 1.0;
  bool scalar_w = false;
  bool drop_flagged = false;

  // irm
  double irm_lambda = 10.0;
  int irm_warm_steps = 100;
  int irm_steps = 300;
  int irm_batch_size = 128;
  double irm_lr = 0.05;
  double irm_momentum = 0.9;

  // env
  int env_count = 3;
  std::vector<std::string> env_samplers;  // empty: defaults
  std::vector<std::string> env_aug_tiers;
  envs::TierParams tiers;

  // eval
  std::size_t flag_budget = 0;  // 0: true noise count
  std::optional<double> flag_threshold;
  std::vector<std::string> baselines{"ce", "la", "smallloss"};
  int smallloss_warmup_epochs = 6;
  std::optional<double> smallloss_drop_rate;  // unset: rho

  std::string output_dir = "runs/h2e";

  // Throws ConfigError naming the offending field.
  void validate() const;

  int mixup_epochs() const { return epochs - warmup_epochs - stage2_epochs; }

  data::GeneratorParams generator_params() const;
  data::BundleParams bundle_params() const;
  pipeline::H2EConfig h2e_config() const;
  eval::BaselineConfig baseline_config() const;

  // The reference setting used by the acceptance suite.
  static ExperimentConfig reference();
};

ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);

// Canonical key = value dump of every field; parse_config(echo(c)) == c.
std::string echo(const ExperimentConfig& cfg);

// Generative geometry for this config (stream "data.spec" of the seed) and the bundle.
data::GenerativeSpec make_spec(const ExperimentConfig& cfg);
data::DatasetBundle make_bundle(const ExperimentConfig& cfg);

}  // namespace h2e::config
