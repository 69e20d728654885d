#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <span>
#include <vector>

#include "h2e/rng.hpp"

namespace h2e::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { kIdentity, kRelu };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

// Multilayer perceptron. All layers but the last form the backbone; the last
// layer is the linear classification head and never has an activation.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers);

  // Glorot-uniform weights, zero biases, ReLU on every hidden layer.
  static Network create(int feature_dim, std::span<const int> hidden, int class_count, Rng& rng);

  int feature_dim() const { return layers_.front().in_dim(); }
  int class_count() const { return layers_.back().out_dim(); }
  // Width of the backbone output (the head's input).
  int embedding_dim() const { return layers_.back().in_dim(); }

  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Layer& head() const { return layers_.back(); }
  Layer& head() { return layers_.back(); }

  std::size_t parameter_count() const;
  bool all_finite() const;
  // FNV-1a over the raw bytes of the backbone parameters.
  std::uint64_t backbone_checksum() const;

 private:
  void validate() const;

  std::vector<Layer> layers_;
};

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static Gradients zeros_like(const Network& net);
  bool congruent_with(const Network& net) const;
  bool all_finite() const;
};

struct Batch {
  Matrix features;                 // B x d
  std::vector<int> labels;         // B
  std::vector<double> weights;     // B, non-negative
  std::vector<std::size_t> index;  // optional provenance (row in the source dataset)

  int size() const { return static_cast<int>(features.rows()); }
  // Throws ShapeError / DomainError if the batch contract is violated.
  void validate(int feature_dim, int class_count) const;
};

// Activations kept by forward() for the backward pass. inputs[k] is the input
// to layer k; pre[k] its pre-activation output.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;

  bool empty() const { return inputs.empty(); }
  void clear() {
    inputs.clear();
    pre.clear();
  }
};

Matrix forward(const Network& net, const Matrix& features, ForwardCache* cache = nullptr);
Matrix forward(const Network& net, const Batch& batch, ForwardCache* cache = nullptr);

// Backbone output (input to the head) for every row.
Matrix embed(const Network& net, const Matrix& features);
// Head applied to backbone output.
Matrix head_forward(const Network& net, const Matrix& embedding);

// Gradients of a scalar loss with respect to every parameter, given the
// loss gradient with respect to the logits of the cached forward pass.
Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& dlogits);

// Gradient of the head parameters only, from backbone output.
void head_backward(const Matrix& embedding, const Matrix& dlogits, Matrix& dweight, Vector& dbias);

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // dLoss/dLogits, B x C
};

// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);

// (1/B) * sum_b weight_b * -log softmax(logits_b)[label_b].
LossResult cross_entropy(const Matrix& logits, std::span<const int> labels,
                         std::span<const double> weights);

// Cross entropy of logits + log(prior).
LossResult balanced_softmax_loss(const Matrix& logits, std::span<const int> labels,
                                 std::span<const double> prior, std::span<const double> weights);

// Soft-target cross entropy: (1/B) * sum_b weight_b * -sum_c target_bc log softmax_bc.
LossResult soft_cross_entropy(const Matrix& logits, const Matrix& targets,
                              std::span<const double> weights);

void validate_prior(std::span<const double> prior, int class_count);

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Heavy-ball momentum with velocity accumulation:
//   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  const SgdConfig& config() const { return config_; }

  void step(Network& net, const Gradients& grads, double lr);
  void step(Network& net, const Gradients& grads) { step(net, grads, config_.lr); }
  // Updates the head only; dweight/dbias are head gradients.
  void step_head(Network& net, const Matrix& dweight, const Vector& dbias, double lr);
  // Generic single-tensor update, used for non-network parameters.
  void step_vector(Vector& param, const Vector& grad, Vector& velocity, double lr) const;

 private:
  SgdConfig config_;
  Gradients velocity_;
};

// Learning rate for a step under optional cosine annealing to zero.
double scheduled_lr(double base_lr, bool cosine, long step, long total_steps);

// Plain-text checkpoint. Layout:
//   h2e-mlp <layer_count> <d> <width_1> ... <C>
//   layer <k> <out> <in> <relu|identity>
//   <out rows of in values>
//   <one row of out bias values>
// Values are printed with 17 significant digits, so load(save(net)) is exact.
void save_checkpoint(const Network& net, std::ostream& out);
Network load_checkpoint(std::istream& in);
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace h2e::nn
