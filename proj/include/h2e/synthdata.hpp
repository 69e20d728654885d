#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/rng.hpp"

namespace h2e::data {

// clean_label of a red (open-set) sample: its content belongs to no class.
inline constexpr int kOpenSetLabel = -1;

enum class NoiseKind { kNone, kBlue, kRed };

const char* to_string(NoiseKind k);
NoiseKind noise_kind_from_string(const std::string& s);

// Geometry of the generator. A class-c sample with context k is
//   signal_scale * class_dir[c] + context_scale * context_dir[k] + noise_scale * N(0, I)
// with k drawn from row c of context_affinity.
struct GenerativeSpec {
  int class_count = 0;
  int context_count = 0;
  int feature_dim = 0;
  nn::Matrix class_directions;    // C x d, unit rows
  nn::Matrix context_directions;  // K x d, unit rows
  nn::Matrix context_affinity;    // C x K, row-stochastic
  double signal_scale = 1.0;
  double context_scale = 1.0;
  double noise_scale = 1.0;
  double head_context_entropy = 1.0;
  double tail_context_entropy = 0.0;

  // Throws ConfigError when an invariant fails.
  void validate() const;
  // Most likely context for class c.
  int modal_context(int c) const;
};

struct GeneratorParams {
  int class_count = 10;
  int context_count = 6;
  int feature_dim = 32;
  double signal_scale = 1.0;
  double context_scale = 1.0;
  double noise_scale = 1.0;
  double head_context_entropy = 0.9;
  double tail_context_entropy = 0.1;
};

// Random directions for classes and contexts. When d >= C + K the context
// directions are orthogonal to the span of the class directions, so class
// and context attributes live in disjoint subspaces.
//
// Affinity row c mixes a one-hot on the modal context (c mod K) with the
// uniform row: row = e_c * uniform + (1 - e_c) * onehot, where the knob e_c
// interpolates linearly from head_context_entropy (class 0) to
// tail_context_entropy (class C-1). 1 gives a uniform row, 0 a one-hot.
GenerativeSpec make_generative_spec(const GeneratorParams& params, Rng& rng);

struct SampleRecord {
  std::vector<double> features;
  int observed_label = 0;
  int clean_label = 0;
  bool is_noise = false;
  NoiseKind noise_kind = NoiseKind::kNone;
  int context_id = 0;
  int sample_id = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct BundleMeta {
  int class_count = 0;
  int feature_dim = 0;
  int context_count = 0;
  int n_max = 0;
  double eta = 1.0;
  double rho = 0.0;
  double blue_fraction = 1.0;
  int test_per_class = 0;
  std::uint64_t seed = 0;
  std::vector<int> clean_counts;  // per-class size before noise injection
};

struct DatasetBundle {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::vector<int> class_counts;  // from observed training labels
  std::vector<double> prior;      // class_counts / sum
  BundleMeta meta;

  int class_count() const { return static_cast<int>(class_counts.size()); }
  int feature_dim() const;
  std::size_t noise_count() const;
  // Recomputes class_counts and prior from observed training labels.
  void refresh_counts();
};

// n_c = round(n_max * eta^(-(c-1)/(C-1))), c = 1..C.
std::vector<int> longtail_counts(int class_count, int n_max, double eta);

std::vector<SampleRecord> sample_clean(const GenerativeSpec& spec, std::span<const int> counts,
                                       Rng& rng, int first_id = 0);

// Per class c (by clean label), floor(rho * n_c) currently-clean samples
// get a label drawn uniformly from the other classes.
void inject_blue_noise(std::vector<SampleRecord>& records, int class_count, double rho, Rng& rng);

// Per class c, floor(rho * n_c) currently-clean samples are replaced by
// open-set samples: a per-class out-of-taxonomy direction orthogonal to every
// class direction, plus the class's modal context. The observed label stays c.
void inject_red_noise(const GenerativeSpec& spec, std::vector<SampleRecord>& records, double rho,
                      Rng& rng);

struct BundleParams {
  double eta = 20.0;
  int n_max = 500;
  double rho = 0.3;
  double blue_fraction = 0.5;
  int test_per_class = 100;
};

// Clean long-tailed sampling, then blue noise at blue_fraction * rho, then red
// noise at (1 - blue_fraction) * rho. The test split is clean and balanced.
DatasetBundle build_bundle(const GenerativeSpec& spec, const BundleParams& params,
                           std::uint64_t seed);

// CSV columns: sample_id,observed_label,clean_label,is_noise,noise_kind,context_id,f0..f{d-1}
// An optional first line "# class_count=C" declares the label range.
void write_csv(std::span<const SampleRecord> records, int class_count, const std::string& path);

struct CsvData {
  std::vector<SampleRecord> records;
  int class_count = 0;
  int feature_dim = 0;
};

// Also accepts external files whose only non-feature column is "label" (or
// "observed_label"); clean_label then defaults to the label and is_noise to false.
CsvData read_csv(const std::string& path);

// Bundle directory: train.csv, test.csv and meta.txt (key=value sidecar).
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle read_bundle(const std::filesystem::path& dir);

std::string format_meta(const DatasetBundle& bundle);

nn::Matrix feature_matrix(std::span<const SampleRecord> records);

}  // namespace h2e::data
