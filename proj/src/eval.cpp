#include "h2e/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "h2e/error.hpp"

namespace h2e::eval {

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::vector<int> labels_of(std::span<const data::SampleRecord> records, LabelSource source) {
  std::vector<int> y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    y[i] = source == LabelSource::kClean ? records[i].clean_label : records[i].observed_label;
  return y;
}

std::size_t default_budget(const data::DatasetBundle& b, std::size_t budget) {
  return budget > 0 ? std::min(budget, b.train.size()) : b.noise_count();
}

}  // namespace

const char* to_string(Shot s) {
  switch (s) {
    case Shot::kMany: return "many";
    case Shot::kMedium: return "medium";
    case Shot::kFew: return "few";
  }
  return "many";
}

const std::vector<int>& ShotSplit::classes(Shot s) const {
  switch (s) {
    case Shot::kMany: return many;
    case Shot::kMedium: return medium;
    case Shot::kFew: return few;
  }
  return many;
}

ShotSplit shot_split(std::span<const int> counts) {
  const int C = static_cast<int>(counts.size());
  ShotSplit s;
  s.shot_of.assign(C, Shot::kMany);
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  if (C < 4) {
    s.degenerate = true;
    s.many = order;
    return s;
  }
  const int n_many = (C + 3) / 4;
  const int n_few = C / 4;
  for (int r = 0; r < C; ++r) {
    const int c = order[r];
    if (r < n_many) {
      s.many.push_back(c);
    } else if (r >= C - n_few) {
      s.few.push_back(c);
      s.shot_of[c] = Shot::kFew;
    } else {
      s.medium.push_back(c);
      s.shot_of[c] = Shot::kMedium;
    }
  }
  return s;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw ShapeError("accuracy: prediction/label length mismatch");
  if (predicted.empty()) throw UndefinedMetricError("accuracy: empty evaluation set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double accuracy(const nn::Network& net, std::span<const data::SampleRecord> records, const ShotSplit* split,
                std::optional<Shot> shot, std::span<const double> logit_offset, LabelSource source) {
  std::vector<data::SampleRecord> kept;
  std::span<const data::SampleRecord> view = records;
  const auto labels_all = labels_of(records, source);
  if (split && shot) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const int y = labels_all[i];
      if (y >= 0 && split->shot_of[y] == *shot) kept.push_back(records[i]);
    }
    view = kept;
  }
  if (view.empty()) throw UndefinedMetricError("accuracy: empty evaluation set");
  nn::Matrix logits = nn::forward(net, data::feature_matrix(view));
  if (!logit_offset.empty()) {
    if (static_cast<Eigen::Index>(logit_offset.size()) != logits.cols())
      throw ShapeError("accuracy: logit offset length mismatch");
    for (Eigen::Index c = 0; c < logits.cols(); ++c) logits.col(c).array() += logit_offset[c];
  }
  return accuracy(argmax_rows(logits), labels_of(view, source));
}

DetectionStats noise_detection_pr(const std::vector<bool>& flags, std::span<const data::SampleRecord> records,
                                  const ShotSplit* split, std::optional<Shot> shot) {
  if (flags.size() != records.size()) throw ShapeError("noise_detection_pr: flags not aligned with records");
  DetectionStats s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (split && shot && split->shot_of[records[i].observed_label] != *shot) continue;
    const bool noisy = records[i].is_noise;
    s.noise += noisy;
    s.flagged += flags[i];
    s.true_positive += flags[i] && noisy;
  }
  if (s.flagged > 0) s.precision = static_cast<double>(s.true_positive) / static_cast<double>(s.flagged);
  if (s.noise > 0) s.recall = static_cast<double>(s.true_positive) / static_cast<double>(s.noise);
  return s;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["seed"] = seed;
  j["top1.overall"] = top1_overall;
  j["top1.many"] = opt(top1_many);
  j["top1.medium"] = opt(top1_medium);
  j["top1.few"] = opt(top1_few);
  if (has_detection) {
    j["noise.budget"] = flag_budget;
    const std::pair<const char*, const DetectionStats*> parts[] = {{"overall", &detection_overall},
                                                                   {"many", &detection_many},
                                                                   {"medium", &detection_medium},
                                                                   {"few", &detection_few}};
    for (const auto& [name, d] : parts) j[std::string("noise.precision.") + name] = opt(d->precision);
    for (const auto& [name, d] : parts) j[std::string("noise.recall.") + name] = opt(d->recall);
  }
  if (!history.empty()) {
    nlohmann::ordered_json h = nlohmann::ordered_json::array();
    for (const auto& it : history) {
      nlohmann::ordered_json r;
      r["iteration"] = it.iteration;
      r["flagged"] = it.flagged;
      r["newly_flagged"] = it.newly_flagged;
      r["precision"] = opt(it.overall.precision);
      r["recall"] = opt(it.overall.recall);
      r["precision.few"] = opt(it.few.precision);
      r["mean_w"] = it.mean_w;
      h.push_back(std::move(r));
    }
    j["history"] = std::move(h);
  }
  if (!notes.empty()) j["notes"] = notes;
  return j;
}

MetricsReport evaluate(const std::string& method, const nn::Network& net, const data::DatasetBundle& bundle,
                       const std::vector<bool>& flags, std::span<const double> logit_offset) {
  MetricsReport r;
  r.method = method;
  r.seed = bundle.meta.seed;
  const ShotSplit split = shot_split(bundle.class_counts);
  if (split.degenerate) r.notes.push_back("fewer than four classes: every class reported as many-shot");
  r.top1_overall = accuracy(net, bundle.test, nullptr, std::nullopt, logit_offset);
  auto split_acc = [&](Shot s) -> std::optional<double> {
    if (split.classes(s).empty()) return std::nullopt;
    return accuracy(net, bundle.test, &split, s, logit_offset);
  };
  r.top1_many = split_acc(Shot::kMany);
  r.top1_medium = split_acc(Shot::kMedium);
  r.top1_few = split_acc(Shot::kFew);
  if (!flags.empty()) {
    r.has_detection = true;
    r.flag_budget = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    r.detection_overall = noise_detection_pr(flags, bundle.train);
    r.detection_many = noise_detection_pr(flags, bundle.train, &split, Shot::kMany);
    r.detection_medium = noise_detection_pr(flags, bundle.train, &split, Shot::kMedium);
    r.detection_few = noise_detection_pr(flags, bundle.train, &split, Shot::kFew);
  }
  return r;
}

std::vector<double> neg_log_prior(std::span<const double> prior) {
  std::vector<double> out(prior.size());
  for (std::size_t c = 0; c < prior.size(); ++c) {
    if (!(prior[c] > 0.0)) throw DomainError("logit adjustment needs a strictly positive prior");
    out[c] = -std::log(prior[c]);
  }
  return out;
}

BaselineResult baseline_ce(const data::DatasetBundle& bundle, const BaselineConfig& cfg, std::uint64_t seed,
                           const LogFn& log) {
  if (cfg.epochs < 1) throw ConfigError("baseline: epochs must be >= 1");
  Rng rng = Rng::stream(seed, "baseline");
  BaselineResult out;
  out.net = nn::Network::create(bundle.feature_dim(), cfg.hidden, bundle.class_count(), rng);
  TrainOptions opts = cfg.train;
  opts.budget_epochs = cfg.epochs;
  EpochTrainer trainer(out.net, opts, 0, log);
  for (int e = 0; e < cfg.epochs; ++e) trainer.ce_epoch(bundle.train, rng, {}, {}, "ce");
  out.report = evaluate("ce", out.net, bundle);
  out.report.seed = seed;
  return out;
}

MetricsReport logit_adjusted_report(const nn::Network& net, const data::DatasetBundle& bundle, std::uint64_t seed) {
  const auto offset = neg_log_prior(bundle.prior);
  MetricsReport r = evaluate("la", net, bundle, {}, offset);
  r.seed = seed;
  return r;
}

BaselineResult baseline_la(const data::DatasetBundle& bundle, const BaselineConfig& cfg, std::uint64_t seed,
                           const LogFn& log) {
  BaselineResult out = baseline_ce(bundle, cfg, seed, log);
  out.report = logit_adjusted_report(out.net, bundle, seed);
  return out;
}

BaselineResult baseline_smallloss(const data::DatasetBundle& bundle, const BaselineConfig& cfg,
                                  std::uint64_t seed, const LogFn& log) {
  if (cfg.epochs < 1) throw ConfigError("baseline: epochs must be >= 1");
  if (cfg.smallloss_warmup_epochs < 0 || cfg.smallloss_warmup_epochs > cfg.epochs)
    throw ConfigError("smallloss: warm-up epochs must lie in [0, epochs]");
  if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) throw ConfigError("smallloss: drop_rate must lie in [0, 1)");
  Rng rng = Rng::stream(seed, "baseline");
  BaselineResult out;
  out.net = nn::Network::create(bundle.feature_dim(), cfg.hidden, bundle.class_count(), rng);
  TrainOptions opts = cfg.train;
  opts.budget_epochs = cfg.epochs;
  EpochTrainer trainer(out.net, opts, 0, log);
  for (int e = 0; e < cfg.smallloss_warmup_epochs; ++e) trainer.ce_epoch(bundle.train, rng, {}, {}, "smallloss.warmup");

  const auto losses = per_sample_loss(out.net, bundle.train);
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  // Highest loss first; ties by sample id.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (losses[a] != losses[b]) return losses[a] > losses[b];
    return bundle.train[a].sample_id < bundle.train[b].sample_id;
  });
  const std::size_t budget = default_budget(bundle, cfg.flag_budget);
  std::vector<bool> flags(losses.size(), false);
  for (std::size_t k = 0; k < budget; ++k) flags[order[k]] = true;

  const auto n_drop = static_cast<std::size_t>(std::floor(cfg.drop_rate * static_cast<double>(losses.size())));
  std::vector<bool> dropped(losses.size(), false);
  for (std::size_t k = 0; k < n_drop; ++k) dropped[order[k]] = true;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (!dropped[i]) keep.push_back(i);

  for (int e = cfg.smallloss_warmup_epochs; e < cfg.epochs; ++e) {
    if (n_drop == 0) {
      trainer.ce_epoch(bundle.train, rng, {}, {}, "smallloss");
    } else {
      trainer.ce_epoch(bundle.train, rng, {}, keep, "smallloss");
    }
  }
  out.report = evaluate("smallloss", out.net, bundle, flags);
  out.report.seed = seed;
  out.report.notes.push_back("detected noise: the noise.budget highest-loss samples after warm-up");
  return out;
}

}  // namespace h2e::eval
