#pragma once

// Fully connected classifiers with a softmax or softRmax head, trained by
// mini-batch SGD with momentum. Gradients are hand-derived backprop.

#include <polyclass/activations.hpp>
#include <polyclass/data.hpp>
#include <polyclass/errors.hpp>
#include <polyclass/numcore.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace polyclass {

enum class Nonlinearity : std::uint8_t { none = 0, relu = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Nonlinearity act = Nonlinearity::none;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

struct NeuralModel {
  std::vector<DenseLayer> layers;
  Head head = Head::softmax;
  int k = 0;

  std::size_t input_dim() const noexcept { return layers.empty() ? 0 : layers.front().in(); }
  bool operator==(const NeuralModel&) const = default;
};

inline void validate(const NeuralModel& m) {
  if (m.layers.empty()) throw DimensionError("models", "model has no layers");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    if (layer.bias.size() != layer.out()) throw DimensionError("models", "bias width mismatch in layer " + std::to_string(l));
    if (l > 0 && m.layers[l - 1].out() != layer.in()) {
      throw DimensionError("models", "layer " + std::to_string(l) + " input does not match previous output");
    }
  }
  if (m.layers.back().out() != static_cast<std::size_t>(m.k)) {
    throw DimensionError("models", "final layer width " + std::to_string(m.layers.back().out()) + " != k=" +
                                       std::to_string(m.k));
  }
}

enum class InitScheme : std::uint8_t {
  // Fan-in scaled uniform everywhere; final layer shrunk and biased to the
  // simplex barycenter (1/k, ..., 1/k) so training starts at uniform posteriors.
  barycenter = 0,
  // Fan-in scaled uniform everywhere, including the final layer.
  fan_in_uniform = 1,
};

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 7;
  InitScheme init_scheme = InitScheme::barycenter;
  double grad_clip = 0.0;  // max global L2 norm of the mean batch gradient; 0 disables
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("models", "learning_rate must be positive");
  if (cfg.batch_size < 1) throw ConfigError("models", "batch_size must be at least 1");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("models", "momentum must be in [0, 1)");
  if (cfg.epochs < 0) throw ConfigError("models", "epochs must be non-negative");
  if (!(cfg.grad_clip >= 0.0)) throw ConfigError("models", "grad_clip must be non-negative");
}

/// Builds a network with layer widths {input, hidden..., k}; hidden layers use
/// ReLU, the final layer is linear.
inline NeuralModel make_model(std::span<const std::size_t> widths, Head head, InitScheme scheme, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("models", "need at least input and output widths");
  Rng rng(seed);
  NeuralModel m;
  m.head = head;
  m.k = static_cast<int>(widths.back());
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const bool last = l + 2 == widths.size();
    DenseLayer layer{Matrix(out, in), Vector(out, 0.0), last ? Nonlinearity::none : Nonlinearity::relu};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double wscale = (last && scheme == InitScheme::barycenter) ? 0.1 : 1.0;
    for (double& w : layer.weight.data()) w = wscale * rng.uniform(-bound, bound);
    for (double& b : layer.bias) {
      b = (last && scheme == InitScheme::barycenter) ? 1.0 / static_cast<double>(out) : rng.uniform(-bound, bound);
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

inline NeuralModel make_model(std::initializer_list<std::size_t> widths, Head head,
                              InitScheme scheme = InitScheme::barycenter, std::uint64_t seed = 7) {
  std::vector<std::size_t> w(widths);
  return make_model(std::span<const std::size_t>(w), head, scheme, seed);
}

// ---------------------------------------------------------------------------
// Forward and backward passes
// ---------------------------------------------------------------------------

/// Per-layer inputs and pre-activations recorded by a forward pass.
struct Tape {
  std::vector<Vector> inputs;
  std::vector<Vector> pre;
};

inline Vector forward_latent(const NeuralModel& m, std::span<const double> x, Tape* tape = nullptr) {
  if (x.size() != m.input_dim()) {
    throw DimensionError("models", "input width " + std::to_string(x.size()) + " != model input " +
                                       std::to_string(m.input_dim()));
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Vector a(x.begin(), x.end());
  for (const auto& layer : m.layers) {
    Vector u = matvec(layer.weight, a);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += layer.bias[i];
    if (tape) {
      tape->inputs.push_back(std::move(a));
      tape->pre.push_back(u);
    }
    if (layer.act == Nonlinearity::relu) {
      for (double& v : u) v = v > 0.0 ? v : 0.0;
    }
    a = std::move(u);
  }
  return a;
}

struct ForwardResult {
  Vector z;
  Vector posterior;
};

inline ForwardResult forward(const NeuralModel& m, std::span<const double> x) {
  ForwardResult r;
  r.z = forward_latent(m, x);
  r.posterior = activate(m.head, r.z);
  return r;
}

inline int predict(const NeuralModel& m, std::span<const double> x) {
  return static_cast<int>(argmax(forward_latent(m, x)));
}

/// Parameter gradients with the same shapes as the model's layers.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  explicit Gradients(const NeuralModel& m) {
    for (const auto& l : m.layers) {
      weight.emplace_back(l.out(), l.in());
      bias.emplace_back(l.out(), 0.0);
    }
  }

  void zero() {
    for (auto& w : weight) std::fill(w.data().begin(), w.data().end(), 0.0);
    for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
  }
};

/// Backpropagates dL/dz through the recorded pass. Accumulates parameter
/// gradients into `grads` when given and returns dL/dx.
inline Vector backward(const NeuralModel& m, const Tape& tape, std::span<const double> dz, Gradients* grads = nullptr) {
  Vector delta(dz.begin(), dz.end());
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const auto& layer = m.layers[l];
    if (layer.act == Nonlinearity::relu) {
      for (std::size_t i = 0; i < delta.size(); ++i)
        if (!(tape.pre[l][i] > 0.0)) delta[i] = 0.0;
    }
    if (grads) {
      const Vector& a = tape.inputs[l];
      for (std::size_t i = 0; i < layer.out(); ++i) {
        const double di = delta[i];
        grads->bias[l][i] += di;
        if (di == 0.0) continue;
        auto row = grads->weight[l].row(i);
        for (std::size_t j = 0; j < a.size(); ++j) row[j] += di * a[j];
      }
    }
    delta = matvec_transposed(layer.weight, delta);
  }
  return delta;
}

/// Gradient of the negative log posterior of class y with respect to the input.
inline Vector input_gradient(const NeuralModel& m, std::span<const double> x, std::size_t y) {
  Tape tape;
  const Vector z = forward_latent(m, x, &tape);
  const LossResult loss = nll_loss(m.head, z, y);
  return backward(m, tape, loss.grad_z);
}

/// Gradient of c^T z with respect to the input.
inline Vector latent_input_gradient(const NeuralModel& m, std::span<const double> x, std::span<const double> c) {
  Tape tape;
  forward_latent(m, x, &tape);
  return backward(m, tape, c);
}

/// Loss at (x, y); adds the parameter gradient into `grads`.
inline double accumulate_gradients(const NeuralModel& m, std::span<const double> x, std::size_t y, Gradients& grads) {
  Tape tape;
  const Vector z = forward_latent(m, x, &tape);
  const LossResult loss = nll_loss(m.head, z, y);
  backward(m, tape, loss.grad_z, &grads);
  return loss.loss;
}

inline double accuracy(const NeuralModel& m, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predict(m, data.sample(i)) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  NeuralModel model;
  std::vector<double> epoch_loss;        // mean training loss per epoch
  std::vector<double> final_layer_norm;  // Frobenius norm of the final weight matrix after each epoch
};

/// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(int, const NeuralModel&)>;

inline TrainResult train(NeuralModel m, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  validate(m);
  validate(cfg);
  validate(data);
  if (data.dim() != m.input_dim()) throw DimensionError("models", "dataset width does not match model input");
  if (data.k > m.k) throw DimensionError("models", "dataset has more classes than the model outputs");

  TrainResult result;
  Rng rng = Rng(cfg.seed).split(0x7472);  // shuffling stream, independent of initialization
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Gradients grads(m), velocity(m);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grads.zero();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        loss_sum += accumulate_gradients(m, data.sample(i), static_cast<std::size_t>(data.labels[i]), grads);
      }
      double scale = 1.0 / static_cast<double>(end - start);
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
          for (double g : grads.weight[l].data()) sq += g * g;
          for (double g : grads.bias[l]) sq += g * g;
        }
        const double norm = scale * std::sqrt(sq);
        if (norm > cfg.grad_clip) scale *= cfg.grad_clip / norm;
      }
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto w = m.layers[l].weight.data();
        auto gw = grads.weight[l].data();
        auto vw = velocity.weight[l].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
          vw[j] = cfg.momentum * vw[j] - cfg.learning_rate * scale * gw[j];
          w[j] += vw[j];
        }
        auto& bb = m.layers[l].bias;
        for (std::size_t j = 0; j < bb.size(); ++j) {
          velocity.bias[l][j] = cfg.momentum * velocity.bias[l][j] - cfg.learning_rate * scale * grads.bias[l][j];
          bb[j] += velocity.bias[l][j];
        }
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(data.size());
    if (!std::isfinite(mean_loss)) throw DivergenceError("models", epoch, "training loss is not finite");
    for (const auto& layer : m.layers) {
      if (!all_finite(layer.weight.data()) || !all_finite(layer.bias)) {
        throw DivergenceError("models", epoch, "parameters became non-finite");
      }
    }
    result.epoch_loss.push_back(mean_loss);
    result.final_layer_norm.push_back(frobenius_norm(m.layers.back().weight));
    if (on_epoch) on_epoch(epoch, m);
  }
  result.model = std::move(m);
  return result;
}

/// Final-layer Frobenius norm after each completed epoch.
inline const std::vector<double>& weight_norm_trace(const TrainResult& run) { return run.final_layer_norm; }

}  // namespace polyclass
