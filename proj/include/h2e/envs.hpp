#pragma once

#include <span>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"

namespace h2e::envs {

enum class SamplerKind { kInstanceBalanced, kClassBalanced, kClassReversed };
enum class TierKind { kOff, kSimple, kStrong };

const char* to_string(SamplerKind k);
const char* to_string(TierKind k);
SamplerKind sampler_from_string(const std::string& s);
TierKind tier_from_string(const std::string& s);

// Feature-space augmentation tier.
struct AugmentTier {
  TierKind kind = TierKind::kOff;
  double jitter_sigma = 0.0;
  double dropout_prob = 0.0;
  double scale_lo = 1.0;
  double scale_hi = 1.0;

  // Throws ConfigError on invalid parameters.
  void validate() const;
};

struct TierParams {
  double simple_jitter = 0.5;  // multiples of the generator noise scale
  double strong_jitter = 1.0;
  double strong_dropout = 0.2;
  double strong_scale_lo = 0.8;
  double strong_scale_hi = 1.2;
};

AugmentTier make_tier(TierKind kind, double noise_scale, const TierParams& params = {});

struct Environment {
  SamplerKind sampler = SamplerKind::kInstanceBalanced;
  AugmentTier augment;
  std::vector<double> class_weights;            // C, sums to 1
  std::vector<std::vector<std::size_t>> pools;  // per class, indices into the record set
};

struct EnvSpec {
  SamplerKind sampler;
  TierKind tier;
};

// e1 instance-balanced/Off, e2 class-balanced/Simple, e3 class-reversed/Strong,
// and for a fourth environment instance-balanced/Strong.
std::vector<EnvSpec> default_env_specs(int count);

struct EnvironmentSet {
  std::vector<Environment> envs;
  std::vector<std::string> warnings;
};

// Class weights over observed labels: e1 ~ n_c, e2 ~ 1, e3 ~ 1/n_c. Empty
// classes get zero weight and a warning. Records whose index appears in
// `excluded` are left out of the pools.
EnvironmentSet build_environments(std::span<const data::SampleRecord> records, int class_count,
                                  std::span<const EnvSpec> specs, double noise_scale,
                                  const TierParams& tier_params = {},
                                  const std::vector<bool>& excluded = {});

std::vector<double> sampler_weights(SamplerKind kind, std::span<const int> counts);

// Class from class_weights, instance uniform within the class (with
// replacement), features passed through augment().
nn::Batch draw_batch(const Environment& env, std::span<const data::SampleRecord> records, int batch_size,
                     Rng& rng);

std::vector<double> augment(std::span<const double> x, const AugmentTier& tier, Rng& rng);

}  // namespace h2e::envs
