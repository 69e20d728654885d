#include "h2e/envs.hpp"

#include <cmath>

#include "h2e/error.hpp"

namespace h2e::envs {

const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kInstanceBalanced: return "instance";
    case SamplerKind::kClassBalanced: return "class";
    case SamplerKind::kClassReversed: return "reversed";
  }
  return "instance";
}

const char* to_string(TierKind k) {
  switch (k) {
    case TierKind::kOff: return "off";
    case TierKind::kSimple: return "simple";
    case TierKind::kStrong: return "strong";
  }
  return "off";
}

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "instance") return SamplerKind::kInstanceBalanced;
  if (s == "class") return SamplerKind::kClassBalanced;
  if (s == "reversed") return SamplerKind::kClassReversed;
  throw ConfigError("unknown sampler '" + s + "' (expected instance|class|reversed)");
}

TierKind tier_from_string(const std::string& s) {
  if (s == "off") return TierKind::kOff;
  if (s == "simple") return TierKind::kSimple;
  if (s == "strong") return TierKind::kStrong;
  throw ConfigError("unknown augmentation tier '" + s + "' (expected off|simple|strong)");
}

void AugmentTier::validate() const {
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma))
    throw ConfigError("augment: jitter_sigma must be finite and non-negative");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
    throw ConfigError("augment: dropout_prob must lie in [0, 1)");
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi) || !std::isfinite(scale_hi))
    throw ConfigError("augment: scale range must satisfy 0 < lo <= hi");
  if (kind == TierKind::kOff && (jitter_sigma != 0.0 || dropout_prob != 0.0 || scale_lo != 1.0 || scale_hi != 1.0))
    throw ConfigError("augment: the off tier takes no parameters");
}

AugmentTier make_tier(TierKind kind, double noise_scale, const TierParams& p) {
  AugmentTier t;
  t.kind = kind;
  if (kind == TierKind::kSimple) {
    t.jitter_sigma = p.simple_jitter * noise_scale;
  } else if (kind == TierKind::kStrong) {
    t.jitter_sigma = p.strong_jitter * noise_scale;
    t.dropout_prob = p.strong_dropout;
    t.scale_lo = p.strong_scale_lo;
    t.scale_hi = p.strong_scale_hi;
  }
  t.validate();
  return t;
}

std::vector<EnvSpec> default_env_specs(int count) {
  if (count < 2 || count > 4) throw ConfigError("environment count must be between 2 and 4");
  std::vector<EnvSpec> all{{SamplerKind::kInstanceBalanced, TierKind::kOff},
                           {SamplerKind::kClassBalanced, TierKind::kSimple},
                           {SamplerKind::kClassReversed, TierKind::kStrong},
                           {SamplerKind::kInstanceBalanced, TierKind::kStrong}};
  all.resize(count);
  return all;
}

std::vector<double> sampler_weights(SamplerKind kind, std::span<const int> counts) {
  std::vector<double> w(counts.size(), 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= 0) continue;
    switch (kind) {
      case SamplerKind::kInstanceBalanced: w[c] = counts[c]; break;
      case SamplerKind::kClassBalanced: w[c] = 1.0; break;
      case SamplerKind::kClassReversed: w[c] = 1.0 / counts[c]; break;
    }
    total += w[c];
  }
  if (total <= 0.0) throw DomainError("sampler_weights: every class is empty");
  for (double& x : w) x /= total;
  return w;
}

EnvironmentSet build_environments(std::span<const data::SampleRecord> records, int class_count,
                                  std::span<const EnvSpec> specs, double noise_scale,
                                  const TierParams& tier_params, const std::vector<bool>& excluded) {
  if (records.empty()) throw DomainError("build_environments: no records");
  if (!excluded.empty() && excluded.size() != records.size())
    throw ShapeError("build_environments: exclusion mask length mismatch");
  EnvironmentSet out;
  std::vector<std::vector<std::size_t>> pools(class_count);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!excluded.empty() && excluded[i]) continue;
    const int y = records[i].observed_label;
    if (y < 0 || y >= class_count) throw DomainError("build_environments: label out of range");
    pools[y].push_back(i);
  }
  std::vector<int> counts(class_count);
  for (int c = 0; c < class_count; ++c) {
    counts[c] = static_cast<int>(pools[c].size());
    if (counts[c] == 0) out.warnings.push_back("class " + std::to_string(c) + " is empty; dropped from every environment");
  }
  for (const EnvSpec& s : specs) {
    Environment e;
    e.sampler = s.sampler;
    e.augment = make_tier(s.tier, noise_scale, tier_params);
    e.class_weights = sampler_weights(s.sampler, counts);
    e.pools = pools;
    out.envs.push_back(std::move(e));
  }
  return out;
}

std::vector<double> augment(std::span<const double> x, const AugmentTier& tier, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  switch (tier.kind) {
    case TierKind::kOff:
      return out;
    case TierKind::kSimple:
      break;
    case TierKind::kStrong: {
      if (tier.dropout_prob > 0.0)
        for (double& v : out)
          if (rng.uniform() < tier.dropout_prob) v = 0.0;
      const double s = tier.scale_lo == tier.scale_hi ? tier.scale_lo : rng.uniform(tier.scale_lo, tier.scale_hi);
      for (double& v : out) v *= s;
      break;
    }
  }
  if (tier.jitter_sigma > 0.0)
    for (double& v : out) v += tier.jitter_sigma * rng.normal();
  return out;
}

nn::Batch draw_batch(const Environment& env, std::span<const data::SampleRecord> records, int batch_size,
                     Rng& rng) {
  if (batch_size < 1) throw DomainError("draw_batch: batch size must be positive");
  if (records.empty()) throw DomainError("draw_batch: no records");
  const auto d = static_cast<Eigen::Index>(records.front().features.size());
  nn::Batch b;
  b.features.resize(batch_size, d);
  b.labels.resize(batch_size);
  b.weights.assign(batch_size, 1.0);
  b.index.resize(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t c = rng.categorical(env.class_weights);
    const auto& pool = env.pools[c];
    const std::size_t idx = pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))];
    const auto x = augment(records[idx].features, env.augment, rng);
    b.features.row(i) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), d);
    b.labels[i] = records[idx].observed_label;
    b.index[i] = idx;
  }
  return b;
}

}  // namespace h2e::envs
