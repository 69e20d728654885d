#include "h2e/warmup.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

#include "h2e/error.hpp"

namespace h2e::warmup {

ClassDensity class_density(const nn::Matrix& features) {
  const Eigen::Index n = features.rows();
  if (n < 1) throw DomainError("class_density: no features");
  nn::Matrix unit = features;
  std::vector<bool> zero(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = features.row(i).norm();
    if (norm > 0.0) {
      unit.row(i) /= norm;
    } else {
      zero[static_cast<std::size_t>(i)] = true;
      unit.row(i).setZero();
    }
  }
  ClassDensity out;
  out.similarity = unit * unit.transpose();
  for (Eigen::Index i = 0; i < n; ++i) out.similarity(i, i) = 1.0;
  // Symmetrize exactly; the product above can differ in the last bit.
  out.similarity = 0.5 * (out.similarity + out.similarity.transpose()).eval();
  out.density.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.density[static_cast<std::size_t>(i)] = out.similarity.row(i).mean();
  return out;
}

std::vector<double> initial_weights(std::span<const double> density, double w_min) {
  if (density.empty()) throw DomainError("initial_weights: no densities");
  if (!(w_min >= 0.0 && w_min <= 1.0)) throw ConfigError("initial_weights: w_min must lie in [0, 1]");
  const auto [lo, hi] = std::minmax_element(density.begin(), density.end());
  std::vector<double> w(density.size(), 1.0);
  if (*hi == *lo) return w;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double t = (density[i] - *lo) / (*hi - *lo);
    w[i] = w_min + (1.0 - w_min) * t;
  }
  return w;
}

DensityReport density_report(const nn::Network& net, std::span<const data::SampleRecord> records,
                             int class_count, double w_min) {
  DensityReport report;
  report.rows.resize(records.size());
  if (records.empty()) return report;
  const nn::Matrix emb = nn::embed(net, data::feature_matrix(records));
  std::vector<std::vector<std::size_t>> members(class_count);
  for (std::size_t i = 0; i < records.size(); ++i) members[records[i].observed_label].push_back(i);
  for (int c = 0; c < class_count; ++c) {
    const auto& idx = members[c];
    if (idx.empty()) continue;
    nn::Matrix feats(static_cast<Eigen::Index>(idx.size()), emb.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) feats.row(static_cast<Eigen::Index>(k)) = emb.row(static_cast<Eigen::Index>(idx[k]));
    const ClassDensity cd = class_density(feats);
    const auto weights = initial_weights(cd.density, w_min);
    for (std::size_t k = 0; k < idx.size(); ++k)
      report.rows[idx[k]] = {records[idx[k]].sample_id, c, cd.density[k], weights[k]};
  }
  return report;
}

void write_density_csv(const DensityReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "sample_id,class,density,weight\n" << std::setprecision(17);
  for (const auto& r : report.rows) out << r.sample_id << ',' << r.label << ',' << r.density << ',' << r.weight << '\n';
}

WarmupResult warmup_train(std::span<const data::SampleRecord> records, int class_count,
                          const WarmupConfig& cfg, Rng& rng, const LogFn& log) {
  if (cfg.epochs < 1) throw ConfigError("warmup: epochs must be >= 1");
  if (records.empty()) throw DomainError("warmup: no training records");
  WarmupResult out;
  const int d = static_cast<int>(records.front().features.size());
  out.net = nn::Network::create(d, cfg.hidden, class_count, rng);
  out.sample_weights.assign(records.size(), 1.0);

  EpochTrainer trainer(out.net, cfg.train, 0, log);
  const int density_epoch = cfg.density_weighting && cfg.epochs >= 2 ? cfg.epochs / 2 : -1;
  for (int e = 0; e < cfg.epochs; ++e) {
    if (e == density_epoch) {
      out.density = density_report(out.net, records, class_count, cfg.w_min);
      for (std::size_t i = 0; i < records.size(); ++i) out.sample_weights[i] = out.density.rows[i].weight;
    }
    trainer.ce_epoch(records, rng, out.sample_weights, {}, "warmup");
  }
  out.epochs_run = cfg.epochs;
  return out;
}

}  // namespace h2e::warmup
