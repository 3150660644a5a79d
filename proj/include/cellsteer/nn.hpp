#pragma once

// Dense feed-forward regression network with inverted dropout, trained by
// mini-batch gradient descent on a PF-weighted MSE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellsteer/error.hpp"
#include "cellsteer/matrix.hpp"
#include "cellsteer/rng.hpp"
#include "cellsteer/sim_oracle.hpp"

namespace cellsteer {

enum class Activation { relu, identity };

inline const char *to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu")
    return Activation::relu;
  if (s == "identity")
    return Activation::identity;
  fail(ErrorKind::corrupt_file, "unknown activation '" + std::string(s) + "'");
}

struct Layer {
  MatrixR weights; ///< out x in
  std::vector<double> bias;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;

  std::size_t inputs() const noexcept { return weights.cols(); }
  std::size_t outputs() const noexcept { return weights.rows(); }

  friend bool operator==(const Layer &, const Layer &) = default;
};

/// Layer widths and the dropout rate applied to each layer's output.
struct Architecture {
  std::vector<std::size_t> widths;
  std::vector<double> dropout; ///< one per layer (widths.size() - 1)
  std::string name;

  /// 35 -> 1024 -> 800 -> 500 -> 400, dropout 0.3 on H0 and H1.
  static Architecture paper() {
    return {{kNumParams, 1024, 800, 500, kNumCells}, {0.3, 0.3, 0.0, 0.0}, "paper"};
  }
  /// 35 -> 256 -> 128 -> 400, dropout 0.3 on both hidden layers.
  static Architecture desk() {
    return {{kNumParams, 256, 128, kNumCells}, {0.3, 0.3, 0.0}, "desk"};
  }
  static Architecture preset(std::string_view name) {
    if (name == "paper")
      return paper();
    if (name == "desk")
      return desk();
    fail(ErrorKind::invalid_argument, "unknown preset '" + std::string(name) + "'", "preset");
  }
};

class SurrogateModel {
public:
  SurrogateModel() = default;
  explicit SurrogateModel(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  /// He-style uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
  /// Hidden layers use relu, the output layer identity.
  static SurrogateModel initialized(const Architecture &arch, std::uint64_t seed) {
    if (arch.widths.size() < 2 || arch.dropout.size() + 1 != arch.widths.size())
      fail(ErrorKind::invalid_argument, "architecture needs >= 2 widths and one dropout per layer",
           "architecture");
    Rng rng(seed);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l) {
      const std::size_t in = arch.widths[l], out = arch.widths[l + 1];
      Layer layer;
      layer.weights = MatrixR(out, in);
      const double limit = std::sqrt(6.0 / static_cast<double>(in));
      for (auto &w : layer.weights.data())
        w = rng.uniform(-limit, limit);
      layer.bias.assign(out, 0.0);
      layer.activation = (l + 2 == arch.widths.size()) ? Activation::identity : Activation::relu;
      layer.dropout_rate = arch.dropout[l];
      layers.push_back(std::move(layer));
    }
    return SurrogateModel(std::move(layers));
  }

  const std::vector<Layer> &layers() const noexcept { return layers_; }
  std::vector<Layer> &mutable_layers() noexcept { return layers_; }
  const Layer &layer(std::size_t i) const { return layers_.at(i); }
  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t input_width() const { return layers_.front().inputs(); }
  std::size_t output_width() const { return layers_.back().outputs(); }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w;
    if (layers_.empty())
      return w;
    w.push_back(input_width());
    for (const auto &l : layers_)
      w.push_back(l.outputs());
    return w;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers_)
      n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers_.empty())
      fail(ErrorKind::shape_mismatch, "model has no layers", "model");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto &layer = layers_[l];
      const std::string where = "layer " + std::to_string(l);
      if (layer.weights.rows() == 0 || layer.weights.cols() == 0)
        fail(ErrorKind::shape_mismatch, where + " has an empty weight matrix", where);
      if (layer.bias.size() != layer.outputs())
        fail(ErrorKind::shape_mismatch,
             where + " bias length " + std::to_string(layer.bias.size()) + " != " +
                 std::to_string(layer.outputs()),
             where);
      if (l > 0 && layer.inputs() != layers_[l - 1].outputs())
        fail(ErrorKind::shape_mismatch,
             where + " expects " + std::to_string(layer.inputs()) + " inputs but layer " +
                 std::to_string(l - 1) + " emits " + std::to_string(layers_[l - 1].outputs()),
             where);
      if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0))
        fail(ErrorKind::invalid_argument, where + " dropout rate outside [0, 1)", where);
    }
  }

  friend bool operator==(const SurrogateModel &, const SurrogateModel &) = default;

private:
  std::vector<Layer> layers_;
};

/// Deterministic mode disables dropout; stochastic mode samples inverted
/// dropout masks from the seed.
struct ForwardMode {
  std::optional<std::uint64_t> dropout_seed;

  static ForwardMode deterministic() { return {}; }
  static ForwardMode stochastic(std::uint64_t seed) { return {seed}; }
  bool is_stochastic() const noexcept { return dropout_seed.has_value(); }
};

struct LayerTrace {
  MatrixR pre;  ///< B x out, before activation
  MatrixR post; ///< B x out, after activation and dropout
  MatrixR mask; ///< B x out, 0 or 1/(1-rate); empty when no dropout applied
};

struct ForwardTrace {
  MatrixR input;
  std::vector<LayerTrace> layers;

  const MatrixR &output() const { return layers.back().post; }
};

inline ForwardTrace forward_batch(const SurrogateModel &model, const MatrixR &inputs,
                                  ForwardMode mode = ForwardMode::deterministic()) {
  if (inputs.cols() != model.input_width())
    fail(ErrorKind::shape_mismatch,
         "input width " + std::to_string(inputs.cols()) + " != model input " +
             std::to_string(model.input_width()),
         "config");
  ForwardTrace trace;
  trace.input = inputs;
  trace.layers.resize(model.depth());
  std::optional<Rng> rng;
  if (mode.dropout_seed)
    rng.emplace(*mode.dropout_seed);

  const MatrixR *x = &trace.input;
  for (std::size_t l = 0; l < model.depth(); ++l) {
    const Layer &layer = model.layer(l);
    LayerTrace &lt = trace.layers[l];
    kernels::affine(*x, layer.weights, layer.bias, lt.pre);
    lt.post = lt.pre;
    if (layer.activation == Activation::relu)
      for (auto &v : lt.post.data())
        v = v > 0.0 ? v : 0.0;
    if (rng && layer.dropout_rate > 0.0) {
      const double keep_scale = 1.0 / (1.0 - layer.dropout_rate);
      lt.mask = MatrixR(lt.post.rows(), lt.post.cols());
      auto &m = lt.mask.data();
      auto &p = lt.post.data();
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = rng->uniform() >= layer.dropout_rate ? keep_scale : 0.0;
        p[i] *= m[i];
      }
    }
    x = &lt.post;
  }
  return trace;
}

struct ForwardResult {
  std::vector<double> output;
  ForwardTrace trace;
};

inline ForwardResult forward(const SurrogateModel &model, std::span<const double> input,
                             ForwardMode mode = ForwardMode::deterministic()) {
  MatrixR x(1, input.size(), std::vector<double>(input.begin(), input.end()));
  ForwardResult r;
  r.trace = forward_batch(model, x, mode);
  const auto out = r.trace.output().row(0);
  r.output.assign(out.begin(), out.end());
  return r;
}

/// Deterministic prediction of a 400-cell profile.
inline ConcentrationProfile predict(const SurrogateModel &model, const ParameterConfig &config) {
  if (model.output_width() != kNumCells)
    fail(ErrorKind::shape_mismatch, "model does not emit a 400-cell profile", "model");
  const auto r = forward(model, config);
  ConcentrationProfile p{};
  std::copy(r.output.begin(), r.output.end(), p.begin());
  return p;
}

struct Gradients {
  std::vector<MatrixR> weights;
  std::vector<std::vector<double>> biases;
  MatrixR input; ///< B x in
};

inline void check_trace(const SurrogateModel &model, const ForwardTrace &trace) {
  bool ok = trace.layers.size() == model.depth() && trace.input.cols() == model.input_width();
  for (std::size_t l = 0; ok && l < model.depth(); ++l) {
    const auto &lt = trace.layers[l];
    ok = lt.pre.cols() == model.layer(l).outputs() && lt.pre.rows() == trace.input.rows() &&
         lt.post.rows() == lt.pre.rows() && lt.post.cols() == lt.pre.cols();
  }
  if (!ok)
    fail(ErrorKind::shape_mismatch, "forward trace does not match the model", "trace");
}

/// Backpropagates d(objective)/d(post-activation of layer `from_layer`)
/// through layers from_layer..0. Weight gradients are summed over the batch.
inline Gradients backward_from(const SurrogateModel &model, const ForwardTrace &trace,
                               std::size_t from_layer, const MatrixR &d_post,
                               bool want_weight_grads = true) {
  check_trace(model, trace);
  if (from_layer >= model.depth())
    fail(ErrorKind::invalid_argument, "layer index out of range", "layer");
  const auto &top = trace.layers[from_layer].post;
  if (d_post.rows() != top.rows() || d_post.cols() != top.cols())
    fail(ErrorKind::shape_mismatch, "upstream gradient shape does not match the trace", "gradient");

  Gradients g;
  if (want_weight_grads) {
    for (std::size_t l = 0; l < model.depth(); ++l) {
      g.weights.emplace_back(model.layer(l).outputs(), model.layer(l).inputs());
      g.biases.emplace_back(model.layer(l).outputs(), 0.0);
    }
  }
  MatrixR delta = d_post;
  for (std::size_t l = from_layer + 1; l-- > 0;) {
    const Layer &layer = model.layer(l);
    const LayerTrace &lt = trace.layers[l];
    auto &d = delta.data();
    if (lt.mask.size() != 0)
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] *= lt.mask.data()[i];
    if (layer.activation == Activation::relu)
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(lt.pre.data()[i] > 0.0))
          d[i] = 0.0;
    const MatrixR &below = l == 0 ? trace.input : trace.layers[l - 1].post;
    if (want_weight_grads)
      kernels::accumulate_weight_grad(delta, below, g.weights[l], g.biases[l]);
    MatrixR next;
    kernels::propagate(delta, layer.weights, next);
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

inline Gradients backward(const SurrogateModel &model, const ForwardTrace &trace,
                          const MatrixR &d_output, bool want_weight_grads = true) {
  return backward_from(model, trace, model.depth() - 1, d_output, want_weight_grads);
}

inline Gradients backward(const SurrogateModel &model, const ForwardTrace &trace,
                          std::span<const double> d_output) {
  return backward(model, trace,
                  MatrixR(1, d_output.size(), std::vector<double>(d_output.begin(), d_output.end())));
}

/// Input gradients of K scalar objectives at one sample: row k of `upstream`
/// is d(objective k)/d(post-activation of `from_layer`). The trace must hold a
/// single row; its relu pattern and dropout mask apply to every objective.
/// Returns K x input_width.
inline MatrixR input_gradients(const SurrogateModel &model, const ForwardTrace &trace,
                               std::size_t from_layer, MatrixR upstream) {
  check_trace(model, trace);
  if (trace.input.rows() != 1)
    fail(ErrorKind::shape_mismatch, "input_gradients needs a single-sample trace", "trace");
  if (from_layer >= model.depth())
    fail(ErrorKind::invalid_argument, "layer index out of range", "layer");
  if (upstream.cols() != model.layer(from_layer).outputs())
    fail(ErrorKind::shape_mismatch, "upstream gradient width does not match layer", "gradient");
  MatrixR delta = std::move(upstream);
  for (std::size_t l = from_layer + 1; l-- > 0;) {
    const Layer &layer = model.layer(l);
    const LayerTrace &lt = trace.layers[l];
    const std::size_t width = layer.outputs();
    std::vector<double> gate(width, 1.0);
    if (lt.mask.size() != 0)
      for (std::size_t i = 0; i < width; ++i)
        gate[i] = lt.mask(0, i);
    if (layer.activation == Activation::relu)
      for (std::size_t i = 0; i < width; ++i)
        if (!(lt.pre(0, i) > 0.0))
          gate[i] = 0.0;
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t i = 0; i < width; ++i)
        row[i] *= gate[i];
    }
    MatrixR next;
    kernels::propagate(delta, layer.weights, next);
    delta = std::move(next);
  }
  return delta;
}

// ---- loss -------------------------------------------------------------------

inline double mse(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size() || predicted.empty())
    fail(ErrorKind::shape_mismatch, "prediction and target lengths differ", "target");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - target[i];
    s += e * e;
  }
  return s / static_cast<double>(predicted.size());
}

/// Sample weight for PF-weighted training: 1 + beta * pf.
inline double pf_weight(double sample_pf, double beta) { return 1.0 + beta * sample_pf; }

inline double loss(std::span<const double> predicted, std::span<const double> target,
                   double sample_pf, double beta) {
  return pf_weight(sample_pf, beta) * mse(predicted, target);
}

// ---- training ---------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 5000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  double pf_weight_beta = 4.0;
  std::uint64_t rng_seed = 0;
  /// Fraction of the training data held out when no validation set is given.
  double validation_fraction = 0.0;
  /// Start output biases at the per-cell mean target.
  bool init_output_bias_from_data = true;

  void validate() const {
    if (epochs < 1)
      fail(ErrorKind::invalid_argument, "epochs must be >= 1", "epochs");
    if (batch_size < 1)
      fail(ErrorKind::invalid_argument, "batch size must be >= 1", "batch_size");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      fail(ErrorKind::invalid_argument, "learning rate must be finite and >= 0", "learning_rate");
    if (!(pf_weight_beta >= 0.0))
      fail(ErrorKind::invalid_argument, "beta must be >= 0", "beta");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      fail(ErrorKind::invalid_argument, "validation fraction outside [0, 1)", "validation_fraction");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  /// NaN for epochs without a validation set.
  std::vector<double> validation_accuracy;
};

struct TrainResult {
  SurrogateModel model;
  TrainHistory history;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, double accuracy)>;

inline void check_dataset_fits(const SurrogateModel &model, const Dataset &data) {
  data.validate();
  if (data.empty())
    fail(ErrorKind::invalid_argument, "dataset is empty", "dataset");
  if (model.input_width() != kNumParams || model.output_width() != kNumCells)
    fail(ErrorKind::shape_mismatch, "model must map 35 parameters to 400 cells", "model");
}

/// 100 * (1 - RMSE / (max - min of all targets)), clamped to [0, 100].
inline double rmse_accuracy(const SurrogateModel &model, const Dataset &validation) {
  check_dataset_fits(model, validation);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto &p : validation.profiles)
    for (double v : p) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo))
    fail(ErrorKind::invalid_argument, "validation targets have zero range", "validation");
  double sq = 0.0;
  constexpr std::size_t chunk = 64;
  for (std::size_t first = 0; first < validation.size(); first += chunk) {
    const std::size_t n = std::min(chunk, validation.size() - first);
    MatrixR x(n, kNumParams);
    for (std::size_t r = 0; r < n; ++r)
      std::copy(validation.configs[first + r].begin(), validation.configs[first + r].end(),
                x.row(r).begin());
    const auto trace = forward_batch(model, x);
    for (std::size_t r = 0; r < n; ++r) {
      const auto out = trace.output().row(r);
      const auto &t = validation.profiles[first + r];
      for (std::size_t i = 0; i < kNumCells; ++i) {
        const double e = out[i] - t[i];
        sq += e * e;
      }
    }
  }
  const double rmse = std::sqrt(sq / static_cast<double>(validation.size() * kNumCells));
  return std::clamp(100.0 * (1.0 - rmse / (hi - lo)), 0.0, 100.0);
}

namespace detail {

class Optimizer {
public:
  Optimizer(const SurrogateModel &model, const TrainConfig &cfg) : cfg_(cfg) {
    if (cfg.optimizer.kind == OptimizerKind::adam)
      for (const auto &l : model.layers()) {
        m_.emplace_back(l.weights.size() + l.bias.size(), 0.0);
        v_.emplace_back(l.weights.size() + l.bias.size(), 0.0);
      }
  }

  void step(SurrogateModel &model, const Gradients &g) {
    ++t_;
    auto &layers = model.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto &w = layers[l].weights.data();
      auto &b = layers[l].bias;
      const auto &gw = g.weights[l].data();
      const auto &gb = g.biases[l];
      if (cfg_.optimizer.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i)
          w[i] -= cfg_.learning_rate * gw[i];
        for (std::size_t i = 0; i < b.size(); ++i)
          b[i] -= cfg_.learning_rate * gb[i];
        continue;
      }
      const auto &o = cfg_.optimizer;
      const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
      const double lr = cfg_.learning_rate * std::sqrt(c2) / c1;
      auto &m = m_[l];
      auto &v = v_[l];
      auto update = [&](double &param, double grad, std::size_t k) {
        m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * grad;
        v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * grad * grad;
        param -= lr * m[k] / (std::sqrt(v[k]) + o.epsilon);
      };
      for (std::size_t i = 0; i < w.size(); ++i)
        update(w[i], gw[i], i);
      for (std::size_t i = 0; i < b.size(); ++i)
        update(b[i], gb[i], w.size() + i);
    }
  }

private:
  const TrainConfig &cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

} // namespace detail

/// Mini-batch training with dropout active. Each sample's loss is
/// (1 + beta * pf) * MSE; a batch's objective is the mean sample loss.
inline TrainResult train(SurrogateModel model, const Dataset &train_data, const TrainConfig &cfg,
                         const Dataset *validation = nullptr, const EpochCallback &on_epoch = {}) {
  cfg.validate();
  check_dataset_fits(model, train_data);

  Dataset fit = train_data;
  Dataset held_out;
  if (!validation && cfg.validation_fraction > 0.0) {
    const auto n_val = static_cast<std::size_t>(
        std::floor(cfg.validation_fraction * static_cast<double>(train_data.size())));
    if (n_val > 0 && n_val < train_data.size()) {
      fit = train_data.slice(0, train_data.size() - n_val);
      held_out = train_data.slice(train_data.size() - n_val, n_val);
      validation = &held_out;
    }
  }

  if (cfg.init_output_bias_from_data) {
    auto &bias = model.mutable_layers().back().bias;
    std::fill(bias.begin(), bias.end(), 0.0);
    for (const auto &p : fit.profiles)
      for (std::size_t i = 0; i < kNumCells; ++i)
        bias[i] += p[i];
    for (auto &b : bias)
      b /= static_cast<double>(fit.size());
  }

  TrainResult result;
  detail::Optimizer opt(model, cfg);
  Rng shuffler(mix_seed(cfg.rng_seed, 0x5eed));
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      MatrixR x(n, kNumParams);
      for (std::size_t r = 0; r < n; ++r) {
        const auto &c = fit.configs[order[first + r]];
        std::copy(c.begin(), c.end(), x.row(r).begin());
      }
      const auto trace =
          forward_batch(model, x, ForwardMode::stochastic(mix_seed(cfg.rng_seed, ++step)));
      MatrixR d_out(n, kNumCells);
      double batch_loss = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t idx = order[first + r];
        const auto out = trace.output().row(r);
        const auto &t = fit.profiles[idx];
        const double w = pf_weight(fit.pf[idx], cfg.pf_weight_beta);
        const double scale = 2.0 * w / static_cast<double>(kNumCells * n);
        double sq = 0.0;
        auto d = d_out.row(r);
        for (std::size_t i = 0; i < kNumCells; ++i) {
          const double e = out[i] - t[i];
          sq += e * e;
          d[i] = scale * e;
        }
        batch_loss += w * sq / static_cast<double>(kNumCells);
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::non_finite, "non-finite loss at epoch " + std::to_string(epoch) +
                                        ", batch starting at sample " + std::to_string(first),
             "loss");
      epoch_loss += batch_loss;
      opt.step(model, backward(model, trace, d_out));
    }
    epoch_loss /= static_cast<double>(fit.size());
    const double acc = validation ? rmse_accuracy(model, *validation)
                                  : std::numeric_limits<double>::quiet_NaN();
    result.history.train_loss.push_back(epoch_loss);
    result.history.validation_accuracy.push_back(acc);
    if (on_epoch)
      on_epoch(epoch, epoch_loss, acc);
  }
  result.model = std::move(model);
  return result;
}

} // namespace cellsteer
