#include "h2e/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "h2e/error.hpp"

namespace h2e {

std::vector<std::size_t> shuffled_order(std::size_t n, std::span<const std::size_t> subset, Rng& rng) {
  std::vector<std::size_t> order;
  if (subset.empty()) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
  } else {
    order.assign(subset.begin(), subset.end());
  }
  rng.shuffle(order);
  return order;
}

nn::Batch gather_batch(std::span<const data::SampleRecord> records, std::span<const std::size_t> idx,
                       std::span<const double> sample_weights) {
  nn::Batch b;
  const auto d = static_cast<Eigen::Index>(records.front().features.size());
  b.features.resize(static_cast<Eigen::Index>(idx.size()), d);
  b.labels.resize(idx.size());
  b.weights.resize(idx.size());
  b.index.assign(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& r = records[idx[i]];
    b.features.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(r.features.data(), d);
    b.labels[i] = r.observed_label;
    b.weights[i] = sample_weights.empty() ? 1.0 : sample_weights[idx[i]];
  }
  return b;
}

double EpochTrainer::current_lr() const {
  return nn::scheduled_lr(options_.sgd.lr, options_.cosine, epoch_, options_.budget_epochs);
}

void EpochTrainer::finish_epoch(const std::string& tag, double loss) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << tag << ": non-finite loss at epoch " << epoch_ << " (lr " << current_lr()
        << "); training diverged, lower the learning rate";
    throw NumericError(msg.str());
  }
  if (log_) {
    std::ostringstream line;
    line.precision(8);
    line << "epoch=" << epoch_ << " stage=" << tag << " lr=" << current_lr() << " loss=" << loss;
    log_(line.str());
  }
  ++epoch_;
}

double EpochTrainer::ce_epoch(std::span<const data::SampleRecord> records, Rng& rng,
                              std::span<const double> sample_weights, std::span<const std::size_t> subset,
                              const std::string& tag) {
  if (records.empty()) throw DomainError(tag + ": no training records");
  const auto order = shuffled_order(records.size(), subset, rng);
  const double lr = current_lr();
  const std::size_t bs = static_cast<std::size_t>(options_.batch_size);
  double total = 0.0;
  std::size_t seen = 0;
  nn::ForwardCache cache;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const nn::Batch batch = gather_batch(records, idx, sample_weights);
    const nn::Matrix logits = nn::forward(net_, batch.features, &cache);
    const nn::LossResult loss = nn::cross_entropy(logits, batch.labels, batch.weights);
    if (!std::isfinite(loss.loss)) {
      finish_epoch(tag, loss.loss);
    }
    opt_.step(net_, nn::backward(net_, cache, loss.grad), lr);
    total += loss.loss * static_cast<double>(idx.size());
    seen += idx.size();
  }
  const double mean = seen ? total / static_cast<double>(seen) : 0.0;
  finish_epoch(tag, mean);
  return mean;
}

std::vector<int> argmax_rows(const nn::Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index b = 0; b < m.rows(); ++b) {
    Eigen::Index k = 0;
    m.row(b).maxCoeff(&k);
    out[static_cast<std::size_t>(b)] = static_cast<int>(k);
  }
  return out;
}

std::vector<double> per_sample_loss(const nn::Network& net, std::span<const data::SampleRecord> records) {
  if (records.empty()) return {};
  const nn::Matrix logp = nn::log_softmax(nn::forward(net, data::feature_matrix(records)));
  std::vector<double> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    out[i] = -logp(static_cast<Eigen::Index>(i), records[i].observed_label);
  return out;
}

}  // namespace h2e
