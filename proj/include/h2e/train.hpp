#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"

namespace h2e {

using LogFn = std::function<void(const std::string&)>;

struct TrainOptions {
  int batch_size = 64;
  nn::SgdConfig sgd;
  bool cosine = false;
  // Epoch span used by the cosine schedule; the trainer's epoch counter runs
  // across every stage that shares this budget.
  int budget_epochs = 1;
};

// Epoch-based minibatch training over an instance-balanced shuffled stream.
// Owns the optimizer state; the network is borrowed.
class EpochTrainer {
 public:
  EpochTrainer(nn::Network& net, TrainOptions options, int first_epoch = 0, LogFn log = {})
      : net_(net), options_(options), opt_(options.sgd), epoch_(first_epoch), log_(std::move(log)) {}

  // One pass of weighted cross entropy over `subset` (all records when empty).
  // `sample_weights`, when non-empty, is aligned with `records`.
  double ce_epoch(std::span<const data::SampleRecord> records, Rng& rng,
                  std::span<const double> sample_weights = {}, std::span<const std::size_t> subset = {},
                  const std::string& tag = "ce");

  double current_lr() const;
  int epoch() const { return epoch_; }
  nn::Sgd& optimizer() { return opt_; }
  nn::Network& net() { return net_; }
  const TrainOptions& options() const { return options_; }
  void finish_epoch(const std::string& tag, double loss);

 private:
  nn::Network& net_;
  TrainOptions options_;
  nn::Sgd opt_;
  int epoch_;
  LogFn log_;
};

// Shuffled index order over `subset` (or 0..n-1 when empty).
std::vector<std::size_t> shuffled_order(std::size_t n, std::span<const std::size_t> subset, Rng& rng);

nn::Batch gather_batch(std::span<const data::SampleRecord> records, std::span<const std::size_t> idx,
                       std::span<const double> sample_weights = {});

// argmax of each logit row (first index on ties).
std::vector<int> argmax_rows(const nn::Matrix& m);

// Per-record cross entropy on observed labels.
std::vector<double> per_sample_loss(const nn::Network& net, std::span<const data::SampleRecord> records);

}  // namespace h2e
