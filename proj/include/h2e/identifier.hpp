#pragma once

#include <span>
#include <string>
#include <vector>

#include "h2e/envs.hpp"
#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"

namespace h2e::identifier {

// g(x) = f(phi(x)) - w * log(prior). The network itself is passed alongside;
// this holds only the adjustment parameters.
struct Identifier {
  nn::Vector w;               // C entries; all equal in scalar mode
  std::vector<double> prior;  // C, strictly positive, sums to 1
  bool scalar_mode = false;

  static Identifier create(std::vector<double> prior, double initial_w, bool scalar_mode);
  int class_count() const { return static_cast<int>(prior.size()); }
  void validate() const;
};

struct IrmConfig {
  double lambda = 10.0;
  int lambda_warm_steps = 100;
  int steps = 300;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;

  void validate() const;
};

nn::Matrix adjusted_logits(const nn::Matrix& logits, const nn::Vector& w, std::span<const double> prior);

struct PenaltyResult {
  double penalty = 0.0;
  double scale_derivative = 0.0;  // dR/ds at s = 1
  nn::Matrix grad;                // dPenalty/dLogits
};

// IRMv1 scale penalty. With R(s) = mean_b CE(s * z_b, y_b):
//   D = dR/ds|_{s=1} = mean_b sum_c z_bc (p_bc - y_bc),   penalty = D^2
//   dD/dz_bk = (p_bk (1 + z_bk - <z_b, p_b>) - y_bk) / B
PenaltyResult irm_penalty(const nn::Matrix& logits, std::span<const int> labels);

struct TrainStats {
  std::vector<double> loss;                  // total objective per step
  std::vector<std::vector<double>> risk;     // [step][env] cross entropy
  std::vector<std::vector<double>> penalty;  // [step][env]
};

// Trains only w; the network is read-only. Each step draws one batch from
// every environment, with env_rngs[e] driving environment e, and minimizes
// sum_e [CE + lambda_t * penalty], lambda_t = 0 during the warm steps. Once
// lambda_t > 1 the gradient is scaled by 1 / lambda_t.
TrainStats train_identifier(std::span<const envs::Environment> envs,
                            std::span<const data::SampleRecord> records, const nn::Network& net,
                            Identifier& ident, const IrmConfig& cfg, std::span<Rng> env_rngs);

struct ConfidenceEntry {
  int sample_id = 0;
  double confidence = 0.0;
  bool flagged = false;
};

struct ConfidenceTable {
  std::vector<ConfidenceEntry> entries;  // aligned with the scored records

  std::size_t size() const { return entries.size(); }
  std::size_t flag_count() const;
  std::vector<bool> flags() const;
  std::vector<double> confidences() const;
};

// softmax(g(x_i))[observed_label_i]; flags unset.
ConfidenceTable score_confidences(const Identifier& ident, const nn::Network& net,
                                  std::span<const data::SampleRecord> records);

// Adjusted class probabilities for every record.
nn::Matrix adjusted_probabilities(const Identifier& ident, const nn::Network& net,
                                  std::span<const data::SampleRecord> records);

// Flags the `budget` lowest-confidence entries; ties go to the lower sample_id.
ConfidenceTable rank_noise(ConfidenceTable table, std::size_t budget);

// Flags every entry with confidence strictly below tau.
ConfidenceTable flag_below(ConfidenceTable table, double tau);

// Columns: sample_id,confidence,flagged
void write_confidences_csv(const ConfidenceTable& table, const std::string& path);

}  // namespace h2e::identifier
