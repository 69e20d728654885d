#include "h2e/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>

#include "h2e/error.hpp"

namespace h2e::nn {

namespace {

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void apply_activation(Matrix& z, Activation a) {
  if (a == Activation::kRelu) z = z.cwiseMax(0.0);
}

void check_labels(std::span<const int> labels, std::span<const double> weights, Eigen::Index rows,
                  Eigen::Index cols) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " logit rows");
  if (static_cast<Eigen::Index>(weights.size()) != rows)
    throw ShapeError("loss: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(rows) + " logit rows");
  for (int y : labels)
    if (y < 0 || y >= cols) throw DomainError("loss: label " + std::to_string(y) + " out of range");
}

void hash_bytes(std::uint64_t& h, const double* data, std::size_t n) {
  const auto* p = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n * sizeof(double); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

void Network::validate() const {
  if (layers_.empty()) throw ShapeError("network has no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    if (l.bias.size() != l.weight.rows())
      throw ShapeError("layer " + std::to_string(k) + ": bias length does not match output width");
    if (k + 1 < layers_.size() && layers_[k + 1].in_dim() != l.out_dim())
      throw ShapeError("layer " + std::to_string(k + 1) + ": input width " +
                       std::to_string(layers_[k + 1].in_dim()) + " does not chain from " +
                       std::to_string(l.out_dim()));
  }
  if (layers_.back().activation != Activation::kIdentity)
    throw ShapeError("the head layer must be linear");
}

Network Network::create(int feature_dim, std::span<const int> hidden, int class_count, Rng& rng) {
  if (feature_dim < 1 || class_count < 1) throw ShapeError("network dimensions must be positive");
  std::vector<int> widths{feature_dim};
  for (int h : hidden) {
    if (h < 1) throw ShapeError("hidden width must be positive");
    widths.push_back(h);
  }
  widths.push_back(class_count);

  std::vector<Layer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int in = widths[k];
    const int out = widths[k + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    Layer l;
    l.weight.resize(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) l.weight(i, j) = rng.uniform(-bound, bound);
    l.bias = Vector::Zero(out);
    l.activation = (k + 2 < widths.size()) ? Activation::kRelu : Activation::kIdentity;
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers));
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool Network::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

std::uint64_t Network::backbone_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    hash_bytes(h, layers_[k].weight.data(), layers_[k].weight.size());
    hash_bytes(h, layers_[k].bias.data(), layers_[k].bias.size());
  }
  return h;
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

bool Gradients::congruent_with(const Network& net) const {
  if (weight.size() != net.layer_count() || bias.size() != net.layer_count()) return false;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    const Layer& l = net.layers()[k];
    if (weight[k].rows() != l.weight.rows() || weight[k].cols() != l.weight.cols()) return false;
    if (bias[k].size() != l.bias.size()) return false;
  }
  return true;
}

bool Gradients::all_finite() const {
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (!weight[k].allFinite() || !bias[k].allFinite()) return false;
  return true;
}

void Batch::validate(int feature_dim, int class_count) const {
  if (features.rows() < 1) throw ShapeError("batch is empty");
  if (features.cols() != feature_dim)
    throw ShapeError("batch feature width " + std::to_string(features.cols()) +
                     " does not match network input " + std::to_string(feature_dim));
  if (static_cast<Eigen::Index>(labels.size()) != features.rows() ||
      static_cast<Eigen::Index>(weights.size()) != features.rows())
    throw ShapeError("batch labels/weights length does not match row count");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw DomainError("batch label " + std::to_string(y) + " out of range");
  for (double w : weights)
    if (!std::isfinite(w) || w < 0.0) throw DomainError("batch weights must be finite and non-negative");
}

Matrix forward(const Network& net, const Matrix& features, ForwardCache* cache) {
  if (features.cols() != net.feature_dim())
    throw ShapeError("forward: input " + dims(features.rows(), features.cols()) +
                     " does not match feature_dim " + std::to_string(net.feature_dim()));
  if (cache) cache->clear();
  Matrix x = features;
  for (const Layer& l : net.layers()) {
    Matrix z = x * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(z);
    }
    apply_activation(z, l.activation);
    x = std::move(z);
  }
  return x;
}

Matrix forward(const Network& net, const Batch& batch, ForwardCache* cache) {
  return forward(net, batch.features, cache);
}

Matrix embed(const Network& net, const Matrix& features) {
  if (features.cols() != net.feature_dim())
    throw ShapeError("embed: input " + dims(features.rows(), features.cols()) +
                     " does not match feature_dim " + std::to_string(net.feature_dim()));
  Matrix x = features;
  const auto& layers = net.layers();
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    Matrix z = x * layers[k].weight.transpose();
    z.rowwise() += layers[k].bias.transpose();
    apply_activation(z, layers[k].activation);
    x = std::move(z);
  }
  return x;
}

Matrix head_forward(const Network& net, const Matrix& embedding) {
  const Layer& h = net.head();
  if (embedding.cols() != h.in_dim()) throw ShapeError("head_forward: embedding width mismatch");
  Matrix z = embedding * h.weight.transpose();
  z.rowwise() += h.bias.transpose();
  return z;
}

Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& dlogits) {
  const std::size_t n = net.layer_count();
  if (cache.inputs.size() != n || cache.pre.size() != n)
    throw StateError("backward: no activation cache for this network; run forward first");
  if (dlogits.rows() != cache.pre.back().rows() || dlogits.cols() != net.class_count())
    throw ShapeError("backward: upstream gradient " + dims(dlogits.rows(), dlogits.cols()) +
                     " does not match cached logits " +
                     dims(cache.pre.back().rows(), cache.pre.back().cols()));

  Gradients g;
  g.weight.resize(n);
  g.bias.resize(n);
  Matrix dz = dlogits;
  for (std::size_t k = n; k-- > 0;) {
    const Layer& l = net.layers()[k];
    g.weight[k] = dz.transpose() * cache.inputs[k];
    g.bias[k] = dz.colwise().sum().transpose();
    if (k == 0) break;
    Matrix dx = dz * l.weight;
    if (net.layers()[k - 1].activation == Activation::kRelu)
      dx = dx.cwiseProduct((cache.pre[k - 1].array() > 0.0).cast<double>().matrix());
    dz = std::move(dx);
  }
  return g;
}

void head_backward(const Matrix& embedding, const Matrix& dlogits, Matrix& dweight, Vector& dbias) {
  if (embedding.rows() != dlogits.rows()) throw ShapeError("head_backward: row mismatch");
  dweight = dlogits.transpose() * embedding;
  dbias = dlogits.colwise().sum().transpose();
}

Matrix log_softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double m = logits.row(b).maxCoeff();
    const double lse = m + std::log((logits.row(b).array() - m).exp().sum());
    out.row(b) = logits.row(b).array() - lse;
  }
  return out;
}

Matrix softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double m = logits.row(b).maxCoeff();
    auto e = (logits.row(b).array() - m).exp();
    out.row(b) = e / e.sum();
  }
  return out;
}

LossResult cross_entropy(const Matrix& logits, std::span<const int> labels,
                         std::span<const double> weights) {
  check_labels(labels, weights, logits.rows(), logits.cols());
  const Matrix logp = log_softmax(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  LossResult r;
  r.grad = logp.array().exp();
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double w = weights[b];
    if (w != 0.0) r.loss -= w * logp(b, labels[b]);
    r.grad(b, labels[b]) -= 1.0;
    r.grad.row(b) *= w * inv_b;
  }
  r.loss *= inv_b;
  return r;
}

void validate_prior(std::span<const double> prior, int class_count) {
  if (static_cast<int>(prior.size()) != class_count)
    throw ShapeError("prior length " + std::to_string(prior.size()) + " does not match " +
                     std::to_string(class_count) + " classes");
  double sum = 0.0;
  for (double p : prior) {
    if (!(p > 0.0) || !std::isfinite(p))
      throw DomainError("prior entries must be strictly positive and finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("prior must sum to 1");
}

LossResult balanced_softmax_loss(const Matrix& logits, std::span<const int> labels,
                                 std::span<const double> prior, std::span<const double> weights) {
  validate_prior(prior, static_cast<int>(logits.cols()));
  Matrix shifted = logits;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) shifted.col(c).array() += std::log(prior[c]);
  return cross_entropy(shifted, labels, weights);
}

LossResult soft_cross_entropy(const Matrix& logits, const Matrix& targets,
                              std::span<const double> weights) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw ShapeError("soft_cross_entropy: targets " + dims(targets.rows(), targets.cols()) +
                     " vs logits " + dims(logits.rows(), logits.cols()));
  if (static_cast<Eigen::Index>(weights.size()) != logits.rows())
    throw ShapeError("soft_cross_entropy: weights length mismatch");
  const Matrix logp = log_softmax(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    const double w = weights[b];
    const double mass = targets.row(b).sum();
    r.loss -= w * targets.row(b).dot(logp.row(b));
    r.grad.row(b) = (w * inv_b) * (logp.row(b).array().exp() * mass - targets.row(b).array()).matrix();
  }
  r.loss *= inv_b;
  return r;
}

void Sgd::step(Network& net, const Gradients& grads, double lr) {
  if (!grads.congruent_with(net)) throw ShapeError("sgd: gradients are not congruent with network");
  if (!velocity_.congruent_with(net)) velocity_ = Gradients::zeros_like(net);
  auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    velocity_.weight[k] = config_.momentum * velocity_.weight[k] + grads.weight[k] +
                          config_.weight_decay * layers[k].weight;
    velocity_.bias[k] = config_.momentum * velocity_.bias[k] + grads.bias[k] +
                        config_.weight_decay * layers[k].bias;
    layers[k].weight -= lr * velocity_.weight[k];
    layers[k].bias -= lr * velocity_.bias[k];
  }
}

void Sgd::step_head(Network& net, const Matrix& dweight, const Vector& dbias, double lr) {
  if (!velocity_.congruent_with(net)) velocity_ = Gradients::zeros_like(net);
  Layer& h = net.head();
  if (dweight.rows() != h.weight.rows() || dweight.cols() != h.weight.cols() ||
      dbias.size() != h.bias.size())
    throw ShapeError("sgd: head gradient shape mismatch");
  const std::size_t k = net.layer_count() - 1;
  velocity_.weight[k] = config_.momentum * velocity_.weight[k] + dweight + config_.weight_decay * h.weight;
  velocity_.bias[k] = config_.momentum * velocity_.bias[k] + dbias + config_.weight_decay * h.bias;
  h.weight -= lr * velocity_.weight[k];
  h.bias -= lr * velocity_.bias[k];
}

void Sgd::step_vector(Vector& param, const Vector& grad, Vector& velocity, double lr) const {
  if (grad.size() != param.size()) throw ShapeError("sgd: vector gradient shape mismatch");
  if (velocity.size() != param.size()) velocity = Vector::Zero(param.size());
  velocity = config_.momentum * velocity + grad + config_.weight_decay * param;
  param -= lr * velocity;
}

double scheduled_lr(double base_lr, bool cosine, long step, long total_steps) {
  if (!cosine || total_steps <= 0) return base_lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

void save_checkpoint(const Network& net, std::ostream& out) {
  out << std::setprecision(17);
  out << "h2e-mlp " << net.layer_count() << ' ' << net.feature_dim();
  for (const auto& l : net.layers()) out << ' ' << l.out_dim();
  out << '\n';
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    const Layer& l = net.layers()[k];
    out << "layer " << k << ' ' << l.out_dim() << ' ' << l.in_dim() << ' '
        << (l.activation == Activation::kRelu ? "relu" : "identity") << '\n';
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out << (j ? " " : "") << l.weight(i, j);
      out << '\n';
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out << (i ? " " : "") << l.bias(i);
    out << '\n';
  }
}

Network load_checkpoint(std::istream& in) {
  std::string magic;
  std::size_t count = 0;
  if (!(in >> magic >> count) || magic != "h2e-mlp" || count == 0)
    throw ParseError("checkpoint: bad header");
  std::vector<int> widths(count + 1);
  for (auto& w : widths)
    if (!(in >> w) || w < 1) throw ParseError("checkpoint: bad layer width in header");

  std::vector<Layer> layers;
  for (std::size_t k = 0; k < count; ++k) {
    std::string tag, act;
    std::size_t idx = 0;
    int out = 0, inw = 0;
    if (!(in >> tag >> idx >> out >> inw >> act) || tag != "layer" || idx != k)
      throw ParseError("checkpoint: bad layer record " + std::to_string(k));
    if (out != widths[k + 1] || inw != widths[k])
      throw ParseError("checkpoint: layer " + std::to_string(k) + " dims disagree with header");
    Layer l;
    if (act == "relu") l.activation = Activation::kRelu;
    else if (act == "identity") l.activation = Activation::kIdentity;
    else throw ParseError("checkpoint: unknown activation '" + act + "'");
    l.weight.resize(out, inw);
    l.bias.resize(out);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < inw; ++j)
        if (!(in >> l.weight(i, j))) throw ParseError("checkpoint: truncated weights in layer " + std::to_string(k));
    for (int i = 0; i < out; ++i)
      if (!(in >> l.bias(i))) throw ParseError("checkpoint: truncated bias in layer " + std::to_string(k));
    layers.push_back(std::move(l));
  }
  Network net(std::move(layers));
  if (!net.all_finite()) throw ParseError("checkpoint: non-finite parameter");
  return net;
}

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(net, out);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace h2e::nn
