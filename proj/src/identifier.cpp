#include "h2e/identifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "h2e/error.hpp"

namespace h2e::identifier {

Identifier Identifier::create(std::vector<double> prior, double initial_w, bool scalar_mode) {
  Identifier id;
  id.prior = std::move(prior);
  id.w = nn::Vector::Constant(static_cast<Eigen::Index>(id.prior.size()), initial_w);
  id.scalar_mode = scalar_mode;
  id.validate();
  return id;
}

void Identifier::validate() const {
  nn::validate_prior(prior, static_cast<int>(prior.size()));
  if (w.size() != static_cast<Eigen::Index>(prior.size())) throw ShapeError("identifier: w length mismatch");
  if (!w.allFinite()) throw NumericError("identifier: w is not finite");
}

void IrmConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("irm: lambda must be finite and >= 0");
  if (lambda_warm_steps < 0) throw ConfigError("irm: lambda_warm_steps must be >= 0");
  if (steps < 0) throw ConfigError("irm: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("irm: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("irm: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("irm: momentum must lie in [0, 1)");
}

nn::Matrix adjusted_logits(const nn::Matrix& logits, const nn::Vector& w, std::span<const double> prior) {
  if (w.size() != logits.cols() || static_cast<Eigen::Index>(prior.size()) != logits.cols())
    throw ShapeError("adjusted_logits: w/prior length does not match logit width");
  nn::Matrix out = logits;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double shift = w(c) * std::log(prior[c]);
    if (shift != 0.0) out.col(c).array() -= shift;
  }
  return out;
}

PenaltyResult irm_penalty(const nn::Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw ShapeError("irm_penalty: label count does not match logit rows");
  const nn::Matrix p = nn::softmax(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  PenaltyResult r;
  r.grad.resize(logits.rows(), logits.cols());
  double d = 0.0;
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const int y = labels[b];
    if (y < 0 || y >= logits.cols()) throw DomainError("irm_penalty: label out of range");
    const double zbar = logits.row(b).dot(p.row(b));
    d += zbar - logits(b, y);
    r.grad.row(b) = (p.row(b).array() * (1.0 + logits.row(b).array() - zbar)).matrix();
    r.grad(b, y) -= 1.0;
  }
  d *= inv_b;
  r.scale_derivative = d;
  r.penalty = d * d;
  r.grad *= 2.0 * d * inv_b;
  return r;
}

TrainStats train_identifier(std::span<const envs::Environment> envs,
                            std::span<const data::SampleRecord> records, const nn::Network& net,
                            Identifier& ident, const IrmConfig& cfg, std::span<Rng> env_rngs) {
  cfg.validate();
  ident.validate();
  if (envs.empty()) throw DomainError("train_identifier: no environments");
  if (env_rngs.size() != envs.size()) throw ShapeError("train_identifier: one rng per environment required");
  const int C = ident.class_count();
  if (net.class_count() != C) throw ShapeError("train_identifier: network class count mismatch");

  nn::Vector neg_log_prior(C);
  for (int c = 0; c < C; ++c) neg_log_prior(c) = -std::log(ident.prior[c]);

  const nn::Sgd opt({cfg.lr, cfg.momentum, 0.0});
  nn::Vector velocity = nn::Vector::Zero(C);
  TrainStats stats;
  for (int step = 0; step < cfg.steps; ++step) {
    const double lambda_t = step < cfg.lambda_warm_steps ? 0.0 : cfg.lambda;
    nn::Vector grad_w = nn::Vector::Zero(C);
    double total = 0.0;
    std::vector<double> risks, penalties;
    for (std::size_t e = 0; e < envs.size(); ++e) {
      const nn::Batch batch = envs::draw_batch(envs[e], records, cfg.batch_size, env_rngs[e]);
      const nn::Matrix g = adjusted_logits(nn::forward(net, batch.features), ident.w, ident.prior);
      nn::LossResult ce = nn::cross_entropy(g, batch.labels, batch.weights);
      const PenaltyResult pen = irm_penalty(g, batch.labels);
      const double loss = ce.loss + lambda_t * pen.penalty;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train_identifier: non-finite loss at step " << step << ", environment e" << (e + 1)
            << ", lambda_t " << lambda_t;
        throw NumericError(msg.str());
      }
      // g = z - w .* log(prior), so dL/dw_c = sum_b dL/dg_bc * (-log prior_c).
      const nn::Matrix dg = ce.grad + lambda_t * pen.grad;
      grad_w += (dg.colwise().sum().transpose().array() * neg_log_prior.array()).matrix();
      total += loss;
      risks.push_back(ce.loss);
      penalties.push_back(pen.penalty);
    }
    // Past the warm ramp the objective is divided by lambda (when > 1) so the
    // step size stays comparable to the unpenalized phase.
    if (lambda_t > 1.0) grad_w /= lambda_t;
    if (ident.scalar_mode) grad_w.setConstant(grad_w.sum());
    opt.step_vector(ident.w, grad_w, velocity, cfg.lr);
    if (!ident.w.allFinite()) {
      std::ostringstream msg;
      msg << "train_identifier: w diverged at step " << step << ", lambda_t " << lambda_t;
      throw NumericError(msg.str());
    }
    stats.loss.push_back(total);
    stats.risk.push_back(std::move(risks));
    stats.penalty.push_back(std::move(penalties));
  }
  return stats;
}

std::size_t ConfidenceTable::flag_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const ConfidenceEntry& e) { return e.flagged; }));
}

std::vector<bool> ConfidenceTable::flags() const {
  std::vector<bool> f(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) f[i] = entries[i].flagged;
  return f;
}

std::vector<double> ConfidenceTable::confidences() const {
  std::vector<double> c(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) c[i] = entries[i].confidence;
  return c;
}

nn::Matrix adjusted_probabilities(const Identifier& ident, const nn::Network& net,
                                  std::span<const data::SampleRecord> records) {
  if (records.empty()) return nn::Matrix(0, ident.class_count());
  const nn::Matrix logits = nn::forward(net, data::feature_matrix(records));
  return nn::softmax(adjusted_logits(logits, ident.w, ident.prior));
}

ConfidenceTable score_confidences(const Identifier& ident, const nn::Network& net,
                                  std::span<const data::SampleRecord> records) {
  const nn::Matrix p = adjusted_probabilities(ident, net, records);
  ConfidenceTable t;
  t.entries.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double c = p(static_cast<Eigen::Index>(i), records[i].observed_label);
    t.entries.push_back({records[i].sample_id, std::max(c, std::numeric_limits<double>::min()), false});
  }
  return t;
}

ConfidenceTable rank_noise(ConfidenceTable table, std::size_t budget) {
  if (budget > table.entries.size())
    throw DomainError("rank_noise: budget " + std::to_string(budget) + " exceeds table size " +
                      std::to_string(table.entries.size()));
  std::vector<std::size_t> order(table.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = table.entries[a];
    const auto& eb = table.entries[b];
    if (ea.confidence != eb.confidence) return ea.confidence < eb.confidence;
    return ea.sample_id < eb.sample_id;
  });
  for (auto& e : table.entries) e.flagged = false;
  for (std::size_t k = 0; k < budget; ++k) table.entries[order[k]].flagged = true;
  return table;
}

ConfidenceTable flag_below(ConfidenceTable table, double tau) {
  for (auto& e : table.entries) e.flagged = e.confidence < tau;
  return table;
}

void write_confidences_csv(const ConfidenceTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "sample_id,confidence,flagged\n" << std::setprecision(17);
  for (const auto& e : table.entries) out << e.sample_id << ',' << e.confidence << ',' << (e.flagged ? 1 : 0) << '\n';
}

}  // namespace h2e::identifier
