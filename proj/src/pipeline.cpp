#include "h2e/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "h2e/error.hpp"

namespace h2e::pipeline {

namespace {

template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

identifier::ConfidenceTable flag(const identifier::ConfidenceTable& table, const H2EConfig& cfg,
                                 const data::DatasetBundle& bundle) {
  if (cfg.flag_threshold) return identifier::flag_below(table, *cfg.flag_threshold);
  const std::size_t budget = cfg.flag_budget > 0 ? std::min(cfg.flag_budget, table.size()) : bundle.noise_count();
  return identifier::rank_noise(table, budget);
}

}  // namespace

std::vector<MixPair> commensurate_pairs(const nn::Batch& batch, std::span<const double> confidences,
                                        int class_count, Rng& rng) {
  const int B = batch.size();
  if (static_cast<int>(confidences.size()) != B)
    throw ShapeError("commensurate_pairs: one confidence per batch row required");
  std::vector<int> order(B);
  for (int i = 0; i < B; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<MixPair> pairs;
  pairs.reserve((B + 1) / 2);
  for (int k = 0; k < B; k += 2) {
    MixPair p;
    p.i = order[k];
    p.j = k + 1 < B ? order[k + 1] : order[k];
    const double ci = std::max(confidences[p.i], kConfidenceFloor);
    const double cj = std::max(confidences[p.j], kConfidenceFloor);
    p.delta = ci / (ci + cj);
    const auto xi = batch.features.row(p.i);
    const auto xj = batch.features.row(p.j);
    p.x.resize(static_cast<std::size_t>(batch.features.cols()));
    for (Eigen::Index f = 0; f < batch.features.cols(); ++f)
      p.x[static_cast<std::size_t>(f)] = p.delta * xi(f) + (1.0 - p.delta) * xj(f);
    p.y.assign(class_count, 0.0);
    p.y[batch.labels[p.i]] += p.delta;
    p.y[batch.labels[p.j]] += 1.0 - p.delta;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void mixup_finetune(nn::Network& net, std::span<const data::SampleRecord> records,
                    std::span<const double> confidences, const MixupConfig& cfg, int first_epoch, Rng& rng,
                    const LogFn& log) {
  if (cfg.epochs <= 0) return;
  if (confidences.size() != records.size()) throw ShapeError("mixup_finetune: confidences not aligned with records");
  const int C = net.class_count();
  EpochTrainer trainer(net, cfg.train, first_epoch, log);
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
  nn::ForwardCache cache;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = shuffled_order(records.size(), {}, rng);
    const double lr = trainer.current_lr();
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const nn::Batch batch = gather_batch(records, idx);
      std::vector<double> conf(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) conf[k] = confidences[idx[k]];
      const auto pairs = commensurate_pairs(batch, conf, C, rng);

      const auto P = static_cast<Eigen::Index>(pairs.size());
      nn::Matrix x(P, batch.features.cols());
      nn::Matrix y(P, C);
      for (Eigen::Index p = 0; p < P; ++p) {
        x.row(p) = Eigen::Map<const Eigen::RowVectorXd>(pairs[p].x.data(), x.cols());
        y.row(p) = Eigen::Map<const Eigen::RowVectorXd>(pairs[p].y.data(), C);
      }
      const std::vector<double> w(pairs.size(), 1.0);
      const nn::Matrix logits = nn::forward(net, x, &cache);
      const nn::LossResult loss = nn::soft_cross_entropy(logits, y, w);
      if (!std::isfinite(loss.loss)) trainer.finish_epoch("mixup", loss.loss);
      trainer.optimizer().step(net, nn::backward(net, cache, loss.grad), lr);
      total += loss.loss * static_cast<double>(P);
      seen += static_cast<std::size_t>(P);
    }
    trainer.finish_epoch("mixup", seen ? total / static_cast<double>(seen) : 0.0);
  }
}

std::vector<double> theta_weights(const nn::Matrix& probabilities, std::span<const int> labels,
                                  double theta_floor) {
  if (static_cast<Eigen::Index>(labels.size()) != probabilities.rows())
    throw ShapeError("theta_weights: label count mismatch");
  std::vector<double> theta(labels.size());
  for (Eigen::Index b = 0; b < probabilities.rows(); ++b) {
    const double p = probabilities(b, labels[b]);
    theta[b] = p >= probabilities.row(b).maxCoeff() ? p : theta_floor;
  }
  return theta;
}

void stage2_train(nn::Network& net, const identifier::Identifier& ident,
                  std::span<const data::SampleRecord> records, const Stage2Config& cfg, int first_epoch,
                  Rng& rng, const LogFn& log) {
  if (!(cfg.theta_floor > 0.0 && cfg.theta_floor < 1.0)) throw ConfigError("stage2: theta_floor must lie in (0, 1)");
  if (cfg.epochs <= 0) return;
  if (records.empty()) throw DomainError("stage2: no training records");
  ident.validate();
  const nn::Matrix emb = nn::embed(net, data::feature_matrix(records));
  std::vector<int> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) labels[i] = records[i].observed_label;

  EpochTrainer trainer(net, cfg.train, first_epoch, log);
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);
  nn::Matrix dweight;
  nn::Vector dbias;
  for (int e = 0; e < cfg.epochs; ++e) {
    const nn::Matrix probs = nn::softmax(identifier::adjusted_logits(nn::head_forward(net, emb), ident.w, ident.prior));
    const auto theta = theta_weights(probs, labels, cfg.theta_floor);
    const auto order = shuffled_order(records.size(), {}, rng);
    const double lr = trainer.current_lr();
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const auto n = static_cast<Eigen::Index>(end - start);
      nn::Matrix z(n, emb.cols());
      std::vector<int> y(static_cast<std::size_t>(n));
      std::vector<double> w(static_cast<std::size_t>(n));
      for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = order[start + static_cast<std::size_t>(k)];
        z.row(k) = emb.row(static_cast<Eigen::Index>(i));
        y[static_cast<std::size_t>(k)] = labels[i];
        w[static_cast<std::size_t>(k)] = theta[i];
      }
      const nn::LossResult loss = nn::balanced_softmax_loss(nn::head_forward(net, z), y, ident.prior, w);
      if (!std::isfinite(loss.loss)) trainer.finish_epoch("stage2", loss.loss);
      nn::head_backward(z, loss.grad, dweight, dbias);
      trainer.optimizer().step_head(net, dweight, dbias, lr);
      total += loss.loss * static_cast<double>(n);
    }
    trainer.finish_epoch("stage2", total / static_cast<double>(records.size()));
  }
}

int H2EConfig::mixup_epochs_for(int t) const {
  const int base = mixup_epochs / iterations;
  const int extra = mixup_epochs % iterations;
  return base + (t <= extra ? 1 : 0);
}

void H2EConfig::validate() const {
  if (iterations < 1) throw ConfigError("h2e: iterations (T) must be >= 1");
  if (warmup.epochs < 1) throw ConfigError("h2e: warm-up epochs must be >= 1");
  if (mixup_epochs < 0) throw ConfigError("h2e: mixup epochs must be >= 0");
  if (stage2.epochs < 0) throw ConfigError("h2e: stage-2 epochs must be >= 0");
  if (!(stage2.theta_floor > 0.0 && stage2.theta_floor < 1.0))
    throw ConfigError("h2e: theta_floor must lie in (0, 1)");
  if (train.batch_size < 1) throw ConfigError("h2e: batch size must be positive");
  if (!(train.sgd.lr > 0.0)) throw ConfigError("h2e: learning rate must be positive");
  if (!(train.sgd.momentum >= 0.0 && train.sgd.momentum < 1.0)) throw ConfigError("h2e: momentum must lie in [0, 1)");
  if (!(train.sgd.weight_decay >= 0.0)) throw ConfigError("h2e: weight decay must be >= 0");
  if (env_specs.empty() && (env_count < 2 || env_count > 4)) throw ConfigError("h2e: env count must be 2-4");
  if (!env_specs.empty() && (env_specs.size() < 2 || env_specs.size() > 4))
    throw ConfigError("h2e: env count must be 2-4");
  irm.validate();
}

IterationArtifacts stage1_iteration(const nn::Network& net, const identifier::Identifier& ident,
                                    const data::DatasetBundle& bundle, const H2EConfig& cfg, int t,
                                    int first_epoch, std::span<Rng> env_rngs, Rng& mixup_rng,
                                    const std::vector<bool>& excluded, const LogFn& log,
                                    std::vector<std::string>* warnings) {
  const std::string tag = "stage1_" + std::to_string(t);
  IterationArtifacts out{net, ident, {}};
  const auto specs = cfg.env_specs.empty() ? envs::default_env_specs(cfg.env_count) : cfg.env_specs;
  const envs::EnvironmentSet env_set = in_stage(tag + ".environments", [&] {
    return envs::build_environments(bundle.train, bundle.class_count(), specs, cfg.noise_scale, cfg.tier_params,
                                    excluded);
  });
  if (warnings) warnings->insert(warnings->end(), env_set.warnings.begin(), env_set.warnings.end());

  in_stage(tag + ".identifier", [&] {
    const auto stats = identifier::train_identifier(env_set.envs, bundle.train, out.net, out.ident, cfg.irm, env_rngs);
    if (log && !stats.loss.empty()) {
      std::ostringstream line;
      line.precision(8);
      line << "stage=" << tag << ".identifier steps=" << stats.loss.size() << " final_loss=" << stats.loss.back()
           << " mean_w=" << out.ident.w.mean();
      log(line.str());
    }
    return 0;
  });

  out.confidences = in_stage(tag + ".score", [&] {
    return identifier::score_confidences(out.ident, out.net, bundle.train);
  });

  in_stage(tag + ".mixup", [&] {
    MixupConfig mc{cfg.mixup_epochs_for(t), cfg.train};
    const auto conf = out.confidences.confidences();
    mixup_finetune(out.net, bundle.train, conf, mc, first_epoch, mixup_rng, log);
    return 0;
  });
  return out;
}

H2EResult run_h2e(const data::DatasetBundle& bundle, const H2EConfig& cfg,
                  const std::optional<std::filesystem::path>& run_dir, const LogFn& log) {
  cfg.validate();
  if (bundle.train.empty() || bundle.test.empty()) throw StageError("setup", "bundle needs train and test records");
  if (run_dir) {
    std::filesystem::create_directories(*run_dir / "checkpoints");
    std::filesystem::create_directories(*run_dir / "confidences");
  }
  auto checkpoint = [&](const nn::Network& net, const std::string& name) {
    if (run_dir) nn::save_checkpoint(net, (*run_dir / "checkpoints" / (name + ".txt")).string());
  };

  TrainOptions opts = cfg.train;
  opts.budget_epochs = cfg.total_epochs();

  Rng warmup_rng = Rng::stream(cfg.seed, "warmup");
  warmup::WarmupConfig wc = cfg.warmup;
  wc.train = opts;
  const warmup::WarmupResult warm = in_stage("stage0", [&] {
    return warmup::warmup_train(bundle.train, bundle.class_count(), wc, warmup_rng, log);
  });
  checkpoint(warm.net, "stage0");

  H2EResult result{warm.net, identifier::Identifier::create(bundle.prior, cfg.initial_w, cfg.scalar_w), {}, {}, {}};
  const auto specs = cfg.env_specs.empty() ? envs::default_env_specs(cfg.env_count) : cfg.env_specs;
  std::vector<Rng> env_rngs;
  for (std::size_t e = 0; e < specs.size(); ++e) env_rngs.push_back(Rng::stream(cfg.seed, "env-e" + std::to_string(e + 1)));
  Rng mixup_rng = Rng::stream(cfg.seed, "mixup");
  Rng stage2_rng = Rng::stream(cfg.seed, "stage2");

  H2EConfig iter_cfg = cfg;
  iter_cfg.train = opts;
  const eval::ShotSplit split = eval::shot_split(bundle.class_counts);
  std::vector<bool> prev_flags(bundle.train.size(), false);
  std::vector<eval::IterationRecord> history;
  int epoch = cfg.warmup.epochs;
  for (int t = 1; t <= cfg.iterations; ++t) {
    std::vector<bool> excluded;
    if (cfg.drop_flagged && t > 1) excluded = prev_flags;
    IterationArtifacts it = stage1_iteration(result.net, result.ident, bundle, iter_cfg, t, epoch, env_rngs, mixup_rng,
                                             excluded, log, &result.warnings);
    epoch += cfg.mixup_epochs_for(t);
    it.confidences = flag(it.confidences, cfg, bundle);
    const auto flags = it.confidences.flags();

    eval::IterationRecord rec;
    rec.iteration = t;
    rec.flagged = it.confidences.flag_count();
    for (std::size_t i = 0; i < flags.size(); ++i) rec.newly_flagged += flags[i] && !prev_flags[i];
    rec.overall = eval::noise_detection_pr(flags, bundle.train);
    rec.few = eval::noise_detection_pr(flags, bundle.train, &split, eval::Shot::kFew);
    rec.mean_w = it.ident.w.mean();
    history.push_back(rec);
    if (log) {
      std::ostringstream line;
      line.precision(8);
      line << "iteration=" << t << " flagged=" << rec.flagged << " newly_flagged=" << rec.newly_flagged
           << " precision=" << rec.overall.precision.value_or(-1.0);
      log(line.str());
    }

    checkpoint(it.net, "stage1_" + std::to_string(t));
    if (run_dir)
      identifier::write_confidences_csv(it.confidences,
                                        (*run_dir / "confidences" / ("iter_" + std::to_string(t) + ".csv")).string());
    result.net = std::move(it.net);
    result.ident = std::move(it.ident);
    result.final_confidences = std::move(it.confidences);
    prev_flags = flags;
  }

  Stage2Config s2 = cfg.stage2;
  s2.train = opts;
  in_stage("stage2", [&] {
    stage2_train(result.net, result.ident, bundle.train, s2, epoch, stage2_rng, log);
    return 0;
  });
  checkpoint(result.net, "stage2");

  result.report = in_stage("eval", [&] {
    return eval::evaluate("h2e", result.net, bundle, result.final_confidences.flags());
  });
  result.report.seed = cfg.seed;
  result.report.history = std::move(history);
  for (const auto& w : result.warnings) result.report.notes.push_back(w);
  return result;
}

}  // namespace h2e::pipeline
