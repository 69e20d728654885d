#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h2e/envs.hpp"
#include "h2e/error.hpp"
#include "h2e/eval.hpp"
#include "h2e/identifier.hpp"
#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"
#include "h2e/train.hpp"
#include "h2e/warmup.hpp"

namespace h2e::pipeline {

// Failure inside one pipeline stage; what() is prefixed with the stage tag.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr double kConfidenceFloor = 1e-6;

// Mixture of batch rows i and j weighted by their relative confidence.
struct MixPair {
  int i = 0;
  int j = 0;
  double delta = 0.5;
  std::vector<double> x;
  std::vector<double> y;  // soft label over C classes
};

// Random perfect matching of the batch rows (with an odd batch the last row
// pairs with itself). delta = c_i / (c_i + c_j) with both confidences floored
// at kConfidenceFloor; x = delta x_i + (1 - delta) x_j and likewise for the
// one-hot labels.
std::vector<MixPair> commensurate_pairs(const nn::Batch& batch, std::span<const double> confidences,
                                        int class_count, Rng& rng);

struct MixupConfig {
  int epochs = 0;
  TrainOptions train;
};

// Fine-tunes backbone and head on commensurate mixtures with soft-label cross
// entropy. confidences is aligned with records.
void mixup_finetune(nn::Network& net, std::span<const data::SampleRecord> records,
                    std::span<const double> confidences, const MixupConfig& cfg, int first_epoch, Rng& rng,
                    const LogFn& log = {});

// theta = p(y|x) when the observed label is the row argmax, theta_floor otherwise.
std::vector<double> theta_weights(const nn::Matrix& probabilities, std::span<const int> labels,
                                  double theta_floor);

struct Stage2Config {
  int epochs = 5;
  double theta_floor = 0.1;
  TrainOptions train;
};

// Trains the head only with theta-weighted balanced softmax; the backbone is
// untouched. theta is recomputed at the start of every epoch from
// softmax(f(phi(x)) - w log prior) with the current head.
void stage2_train(nn::Network& net, const identifier::Identifier& ident,
                  std::span<const data::SampleRecord> records, const Stage2Config& cfg, int first_epoch,
                  Rng& rng, const LogFn& log = {});

struct H2EConfig {
  std::uint64_t seed = 0;
  int iterations = 1;  // T
  warmup::WarmupConfig warmup;
  int mixup_epochs = 20;  // shared equally across iterations
  identifier::IrmConfig irm;
  double initial_w = 1.0;
  bool scalar_w = false;
  Stage2Config stage2;
  TrainOptions train;  // batch size, optimizer and schedule for every network stage
  int env_count = 3;
  std::vector<envs::EnvSpec> env_specs;  // empty: defaults for env_count
  envs::TierParams tier_params;
  double noise_scale = 1.0;  // generator noise scale; tiers are relative to it
  bool drop_flagged = false;
  std::size_t flag_budget = 0;  // 0: number of noisy training samples
  std::optional<double> flag_threshold;  // when set, flag confidence < threshold instead

  int total_epochs() const { return warmup.epochs + mixup_epochs + stage2.epochs; }
  // Mixup epochs of iteration t (1-based): equal shares, remainder to the earliest.
  int mixup_epochs_for(int t) const;
  void validate() const;
};

struct IterationArtifacts {
  nn::Network net;
  identifier::Identifier ident;
  identifier::ConfidenceTable confidences;
};

struct H2EResult {
  nn::Network net;
  identifier::Identifier ident;
  identifier::ConfidenceTable final_confidences;
  eval::MetricsReport report;
  std::vector<std::string> warnings;
};

// One pass of stage 1: environments, identifier, confidences, mixup fine-tune.
// env_rngs holds one stream per environment; the streams persist across
// iterations. Samples marked in `excluded` stay out of the environment pools.
IterationArtifacts stage1_iteration(const nn::Network& net, const identifier::Identifier& ident,
                                    const data::DatasetBundle& bundle, const H2EConfig& cfg, int t,
                                    int first_epoch, std::span<Rng> env_rngs, Rng& mixup_rng,
                                    const std::vector<bool>& excluded = {}, const LogFn& log = {},
                                    std::vector<std::string>* warnings = nullptr);

// Warm-up, T stage-1 iterations, stage 2, evaluation. When run_dir is given,
// checkpoints/ and confidences/ are written under it as the run progresses.
H2EResult run_h2e(const data::DatasetBundle& bundle, const H2EConfig& cfg,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt, const LogFn& log = {});

}  // namespace h2e::pipeline
