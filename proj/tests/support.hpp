#pragma once

// Generators and independent oracles shared by the unit tests and the
// acceptance binary. The oracles are written with plain loops over
// std::vector so they share no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "h2e/nn.hpp"
#include "h2e/rng.hpp"
#include "h2e/synthdata.hpp"

namespace h2e::testing {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const nn::Matrix& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  return g;
}

inline nn::Matrix from_grid(const Grid& g) {
  nn::Matrix m(static_cast<Eigen::Index>(g.size()), g.empty() ? 0 : static_cast<Eigen::Index>(g[0].size()));
  for (std::size_t r = 0; r < g.size(); ++r)
    for (std::size_t c = 0; c < g[r].size(); ++c) m(r, c) = g[r][c];
  return m;
}

// Straight-line MLP evaluation: y = act(W x + b) layer by layer.
inline Grid oracle_forward(const nn::Network& net, const Grid& x) {
  Grid cur = x;
  for (const auto& layer : net.layers()) {
    Grid next(cur.size(), std::vector<double>(static_cast<std::size_t>(layer.out_dim()), 0.0));
    for (std::size_t b = 0; b < cur.size(); ++b) {
      for (int o = 0; o < layer.out_dim(); ++o) {
        double s = layer.bias(o);
        for (int i = 0; i < layer.in_dim(); ++i) s += layer.weight(o, i) * cur[b][i];
        if (layer.activation == nn::Activation::kRelu && s < 0.0) s = 0.0;
        next[b][o] = s;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

// Weighted mean of -log p[label], computed from exp/sum without the library.
inline double oracle_cross_entropy(const Grid& logits, const std::vector<int>& labels,
                                   const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    double m = *std::max_element(logits[b].begin(), logits[b].end());
    double z = 0.0;
    for (double v : logits[b]) z += std::exp(v - m);
    total += weights[b] * -((logits[b][labels[b]] - m) - std::log(z));
  }
  return total / static_cast<double>(logits.size());
}

// IRMv1 penalty by definition: R(s) = mean CE(s z), penalty = (dR/ds at 1)^2,
// with the derivative itself taken by central differences in s.
inline double oracle_irm_penalty(const Grid& logits, const std::vector<int>& labels) {
  std::vector<double> ones(labels.size(), 1.0);
  auto risk = [&](double s) {
    Grid scaled = logits;
    for (auto& row : scaled)
      for (double& v : row) v *= s;
    return oracle_cross_entropy(scaled, labels, ones);
  };
  const double h = 1e-5;
  double d = (risk(1.0 + h) - risk(1.0 - h)) / (2.0 * h);
  return d * d;
}

inline std::vector<double> oracle_softmax_row(const std::vector<double>& z) {
  double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= s;
  return p;
}

// Element-wise relative error with a floor on the denominator, so entries
// where both gradients vanish are compared in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Random network with non-zero biases.
inline nn::Network random_network(Rng& rng, int d, const std::vector<int>& hidden, int c) {
  nn::Network net = nn::Network::create(d, hidden, c, rng);
  for (auto& layer : net.layers())
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-0.3, 0.3);
  return net;
}

inline nn::Batch random_batch(Rng& rng, int b, int d, int c) {
  nn::Batch batch;
  batch.features.resize(b, d);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < d; ++j) batch.features(i, j) = rng.normal();
    batch.labels.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(c))));
    batch.weights.push_back(rng.uniform(0.5, 1.5));
  }
  return batch;
}

// Smallest |pre-activation| over every ReLU unit. Finite differences are
// only meaningful when no unit sits within the step of its kink.
inline double relu_margin(const nn::Network& net, const nn::Matrix& x) {
  double margin = INFINITY;
  nn::Matrix cur = x;
  for (const auto& layer : net.layers()) {
    nn::Matrix pre = (cur * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (layer.activation == nn::Activation::kRelu) {
      margin = std::min(margin, pre.cwiseAbs().minCoeff());
      cur = pre.cwiseMax(0.0);
    } else {
      cur = pre;
    }
  }
  return margin;
}

// Central-difference derivative of f over every parameter of the network,
// laid out like nn::Gradients.
inline nn::Gradients numeric_gradients(nn::Network net, const std::function<double(const nn::Network&)>& f,
                                       double h = 1e-4) {
  nn::Gradients g = nn::Gradients::zeros_like(net);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    auto& layer = net.layers()[k];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      double& p = layer.weight.data()[i];
      const double saved = p;
      p = saved + h;
      double up = f(net);
      p = saved - h;
      double down = f(net);
      p = saved;
      g.weight[k].data()[i] = (up - down) / (2.0 * h);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      double& p = layer.bias(i);
      const double saved = p;
      p = saved + h;
      double up = f(net);
      p = saved - h;
      double down = f(net);
      p = saved;
      g.bias[k](i) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

inline double max_relative_error(const nn::Gradients& a, const nn::Gradients& n) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.weight.size(); ++k) {
    for (Eigen::Index i = 0; i < a.weight[k].size(); ++i)
      worst = std::max(worst, relative_error(a.weight[k].data()[i], n.weight[k].data()[i]));
    for (Eigen::Index i = 0; i < a.bias[k].size(); ++i)
      worst = std::max(worst, relative_error(a.bias[k](i), n.bias[k](i)));
  }
  return worst;
}

// Cosine similarity and mean-similarity density by direct pairwise loops.
inline std::vector<double> oracle_density(const Grid& x, Grid* similarity = nullptr) {
  const std::size_t n = x.size();
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : x[i]) norm[i] += v * v;
    norm[i] = std::sqrt(norm[i]);
  }
  Grid m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (norm[i] == 0.0 || norm[j] == 0.0) {
        m[i][j] = (i == j) ? 1.0 : 0.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) dot += x[i][k] * x[j][k];
      m[i][j] = dot / (norm[i] * norm[j]);
    }
  }
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : m[i]) d[i] += v;
    d[i] /= static_cast<double>(n);
  }
  if (similarity) *similarity = std::move(m);
  return d;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("h2e-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small record set with the given observed labels and random features.
inline std::vector<data::SampleRecord> toy_records(Rng& rng, const std::vector<int>& labels, int d) {
  std::vector<data::SampleRecord> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    data::SampleRecord r;
    r.features.resize(static_cast<std::size_t>(d));
    for (double& v : r.features) v = rng.normal();
    r.observed_label = r.clean_label = labels[i];
    r.sample_id = static_cast<int>(i);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace h2e::testing
