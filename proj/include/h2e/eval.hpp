#pragma once

#include "json.hpp"
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/synthdata.hpp"
#include "h2e/train.hpp"

namespace h2e::eval {

enum class Shot { kMany, kMedium, kFew };
const char* to_string(Shot s);

// Classes ranked by training count (descending, ties by id): the first
// ceil(C/4) are many-shot, the last floor(C/4) few-shot, the rest medium.
// With fewer than four classes every class is many-shot and `degenerate` is set.
struct ShotSplit {
  std::vector<int> many, medium, few;
  std::vector<Shot> shot_of;  // per class
  bool degenerate = false;

  const std::vector<int>& classes(Shot s) const;
};

ShotSplit shot_split(std::span<const int> class_counts);

enum class LabelSource { kClean, kObserved };

double accuracy(std::span<const int> predicted, std::span<const int> labels);

// Top-1 accuracy of the network over records, optionally restricted to the
// classes of one split and with a per-class offset added to the logits.
double accuracy(const nn::Network& net, std::span<const data::SampleRecord> records,
                const ShotSplit* split = nullptr, std::optional<Shot> shot = std::nullopt,
                std::span<const double> logit_offset = {}, LabelSource source = LabelSource::kClean);

struct DetectionStats {
  std::optional<double> precision;  // nullopt when nothing is flagged
  std::optional<double> recall;     // nullopt when there is no noise
  std::size_t flagged = 0;
  std::size_t true_positive = 0;
  std::size_t noise = 0;
};

// flags aligned with records; a split restriction applies to the observed class.
DetectionStats noise_detection_pr(const std::vector<bool>& flags, std::span<const data::SampleRecord> records,
                                  const ShotSplit* split = nullptr, std::optional<Shot> shot = std::nullopt);

struct IterationRecord {
  int iteration = 0;
  std::size_t flagged = 0;
  std::size_t newly_flagged = 0;
  DetectionStats overall;
  DetectionStats few;
  double mean_w = 0.0;
};

struct MetricsReport {
  std::string method;
  std::uint64_t seed = 0;
  double top1_overall = 0.0;
  std::optional<double> top1_many, top1_medium, top1_few;
  bool has_detection = false;
  DetectionStats detection_overall, detection_many, detection_medium, detection_few;
  std::size_t flag_budget = 0;
  std::vector<IterationRecord> history;
  std::vector<std::string> notes;

  // Flat object, stable key order, one metric per line when pretty-printed.
  // Undefined metrics serialize as null.
  nlohmann::ordered_json to_json() const;
};

// Test accuracy (overall and per split, splits from training counts) and,
// when flags are given, train-set noise detection.
MetricsReport evaluate(const std::string& method, const nn::Network& net, const data::DatasetBundle& bundle,
                       const std::vector<bool>& flags = {}, std::span<const double> logit_offset = {});

struct BaselineConfig {
  int epochs = 30;
  std::vector<int> hidden{64, 64};
  TrainOptions train;
  int smallloss_warmup_epochs = 5;
  double drop_rate = 0.3;
  std::size_t flag_budget = 0;  // 0: number of noisy training samples
};

struct BaselineResult {
  nn::Network net;
  MetricsReport report;
};

// Plain ERM with cross entropy.
BaselineResult baseline_ce(const data::DatasetBundle& bundle, const BaselineConfig& cfg, std::uint64_t seed,
                           const LogFn& log = {});
// ERM, then -log(prior) added to the logits at inference.
BaselineResult baseline_la(const data::DatasetBundle& bundle, const BaselineConfig& cfg, std::uint64_t seed,
                           const LogFn& log = {});
// Post-hoc adjustment applied to an already-trained ERM network.
MetricsReport logit_adjusted_report(const nn::Network& net, const data::DatasetBundle& bundle, std::uint64_t seed);
// Warm-up, drop the drop_rate fraction of highest-loss samples globally, keep
// training on the rest for the remaining epochs. The flag_budget
// highest-loss samples after warm-up are reported as detected noise.
BaselineResult baseline_smallloss(const data::DatasetBundle& bundle, const BaselineConfig& cfg,
                                  std::uint64_t seed, const LogFn& log = {});

std::vector<double> neg_log_prior(std::span<const double> prior);

}  // namespace h2e::eval
