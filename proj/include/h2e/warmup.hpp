#pragma once

#include <span>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"
#include "h2e/train.hpp"

namespace h2e::warmup {

struct ClassDensity {
  nn::Matrix similarity;  // n x n cosine similarities
  std::vector<double> density;  // row means of similarity
};

// Cosine similarity matrix over one class's embeddings and each sample's mean
// similarity to the class. Zero-norm rows are similar only to themselves.
ClassDensity class_density(const nn::Matrix& features);

// Min-max normalizes the densities to [0, 1] (constant input -> all 1) and maps
// them affinely onto [w_min, 1].
std::vector<double> initial_weights(std::span<const double> density, double w_min);

struct DensityRow {
  int sample_id = 0;
  int label = 0;
  double density = 0.0;
  double weight = 1.0;
};

struct DensityReport {
  std::vector<DensityRow> rows;  // aligned with the training records
};

// Embeds every record with the network backbone and computes per-class
// densities and weights, grouped by observed label.
DensityReport density_report(const nn::Network& net, std::span<const data::SampleRecord> records,
                             int class_count, double w_min);

// Columns: sample_id,class,density,weight
void write_density_csv(const DensityReport& report, const std::string& path);

struct WarmupConfig {
  int epochs = 5;
  std::vector<int> hidden{64, 64};
  TrainOptions train;
  double w_min = 0.2;
  // Recompute densities after epochs/2 and weight the remaining epochs.
  bool density_weighting = true;
};

struct WarmupResult {
  nn::Network net;
  DensityReport density;               // empty when density weighting is off
  std::vector<double> sample_weights;  // aligned with records; 1 when unweighted
  int epochs_run = 0;
};

// Fresh network trained with plain cross entropy on the raw instance stream.
WarmupResult warmup_train(std::span<const data::SampleRecord> records, int class_count,
                          const WarmupConfig& cfg, Rng& rng, const LogFn& log = {});

}  // namespace h2e::warmup
