#pragma once

// Post-hoc analyses of a trained surrogate: MC-dropout uncertainty, squared
// input sensitivities, hidden-neuron sensitivities, activation maximization /
// minimization, and weight-matrix queries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cellsteer/error.hpp"
#include "cellsteer/matrix.hpp"
#include "cellsteer/nn.hpp"

namespace cellsteer {

struct UncertaintyEstimate {
  std::vector<double> mean;
  std::vector<double> std; ///< sample standard deviation (T - 1 denominator)
  std::size_t samples = 0;
};

/// T stochastic forward passes with inverted-dropout masks drawn from `seed`.
inline UncertaintyEstimate mc_dropout_predict(const SurrogateModel &model,
                                              std::span<const double> config, long long samples,
                                              std::uint64_t seed) {
  if (samples <= 0)
    fail(ErrorKind::invalid_argument, "sample count T must be >= 1", "T");
  if (config.size() != model.input_width())
    fail(ErrorKind::shape_mismatch, "config width does not match model input", "config");
  const auto t = static_cast<std::size_t>(samples);
  MatrixR x(t, config.size());
  for (std::size_t r = 0; r < t; ++r)
    std::copy(config.begin(), config.end(), x.row(r).begin());
  const auto trace = forward_batch(model, x, ForwardMode::stochastic(seed));
  const MatrixR &y = trace.output();

  UncertaintyEstimate est;
  est.samples = t;
  est.mean.assign(y.cols(), 0.0);
  est.std.assign(y.cols(), 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t i = 0; i < y.cols(); ++i)
      est.mean[i] += y(r, i);
  for (auto &m : est.mean)
    m /= static_cast<double>(t);
  if (t > 1) {
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t i = 0; i < y.cols(); ++i) {
        const double e = y(r, i) - est.mean[i];
        est.std[i] += e * e;
      }
    for (auto &s : est.std)
      s = std::sqrt(s / static_cast<double>(t - 1));
  }
  return est;
}

/// values(i, j) = (d f_i / d x_j)^2; rows are outputs, columns inputs.
struct SensitivityMap {
  MatrixR values;
};

/// Jacobian d f / d x (outputs x inputs) of the deterministic network.
inline MatrixR jacobian(const SurrogateModel &model, std::span<const double> config) {
  const auto fwd = forward(model, config);
  const std::size_t n_out = model.output_width();
  MatrixR seed(n_out, n_out);
  for (std::size_t i = 0; i < n_out; ++i)
    seed(i, i) = 1.0;
  return input_gradients(model, fwd.trace, model.depth() - 1, std::move(seed));
}

inline SensitivityMap sensitivity(const SurrogateModel &model, std::span<const double> config) {
  SensitivityMap map{jacobian(model, config)};
  for (auto &v : map.values.data())
    v *= v;
  return map;
}

/// Selection of output cells.
struct RegionMask {
  std::vector<bool> selected;

  static RegionMask none(std::size_t n = kNumCells) { return {std::vector<bool>(n, false)}; }
  static RegionMask all(std::size_t n = kNumCells) { return {std::vector<bool>(n, true)}; }

  static RegionMask from_indices(std::span<const std::size_t> indices, std::size_t n = kNumCells) {
    RegionMask m = none(n);
    for (auto i : indices) {
      if (i >= n)
        fail(ErrorKind::invalid_argument,
             "mask index " + std::to_string(i) + " outside 0.." + std::to_string(n - 1), "mask");
      m.selected[i] = true;
    }
    return m;
  }

  /// Inclusive circular range of cells; first > last wraps past the end.
  static RegionMask cell_range(std::size_t first, std::size_t last, std::size_t n = kNumCells) {
    if (first >= n || last >= n)
      fail(ErrorKind::invalid_argument, "cell range outside the grid", "mask");
    RegionMask m = none(n);
    for (std::size_t i = first;; i = (i + 1) % n) {
      m.selected[i] = true;
      if (i == last)
        break;
    }
    return m;
  }

  /// Cell of an angle in degrees: floor(angle * n / 360) mod n.
  static std::size_t cell_of_degrees(double degrees, std::size_t n = kNumCells) {
    if (!std::isfinite(degrees))
      fail(ErrorKind::non_finite, "angle is not finite", "range");
    const auto cell = static_cast<long long>(std::floor(degrees * static_cast<double>(n) / 360.0));
    const auto nn = static_cast<long long>(n);
    return static_cast<std::size_t>(((cell % nn) + nn) % nn);
  }

  /// Circular degree interval [start, end]; start > end wraps through 0.
  static RegionMask degree_range(double start, double end, std::size_t n = kNumCells) {
    return cell_range(cell_of_degrees(start, n), cell_of_degrees(end, n), n);
  }

  RegionMask complement() const {
    RegionMask m = *this;
    m.selected.flip();
    return m;
  }

  std::size_t size() const noexcept { return selected.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true)); }
  bool empty() const { return count() == 0; }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (selected[i])
        out.push_back(i);
    return out;
  }

  bool overlaps(const RegionMask &other) const {
    for (std::size_t i = 0; i < std::min(size(), other.size()); ++i)
      if (selected[i] && other.selected[i])
        return true;
    return false;
  }
};

/// Per-parameter mean of the selected rows.
inline std::vector<double> avg_sensitivity(const SensitivityMap &map, const RegionMask &mask) {
  const auto &v = map.values;
  if (mask.size() != v.rows())
    fail(ErrorKind::shape_mismatch, "mask length does not match the sensitivity map", "mask");
  const std::size_t n = mask.count();
  if (n == 0)
    fail(ErrorKind::invalid_argument, "mask selects no locations", "mask");
  std::vector<double> avg(v.cols(), 0.0);
  for (std::size_t i = 0; i < v.rows(); ++i)
    if (mask.selected[i])
      for (std::size_t j = 0; j < v.cols(); ++j)
        avg[j] += v(i, j);
  for (auto &a : avg)
    a /= static_cast<double>(n);
  return avg;
}

/// Squared gradient of the mean post-activation of `neurons` in layer
/// `layer_index` (a hidden layer) with respect to each input.
inline std::vector<double> hidden_sensitivity(const SurrogateModel &model,
                                              std::span<const double> config,
                                              std::size_t layer_index,
                                              std::span<const std::size_t> neurons) {
  if (layer_index + 1 >= model.depth())
    fail(ErrorKind::invalid_argument,
         "layer " + std::to_string(layer_index) + " is not a hidden layer", "layer");
  const std::size_t width = model.layer(layer_index).outputs();
  if (neurons.empty())
    fail(ErrorKind::invalid_argument, "no neurons selected", "neurons");
  MatrixR upstream(1, width);
  for (auto n : neurons) {
    if (n >= width)
      fail(ErrorKind::invalid_argument,
           "neuron " + std::to_string(n) + " outside layer of width " + std::to_string(width),
           "neurons");
    upstream(0, n) += 1.0 / static_cast<double>(neurons.size());
  }
  const auto fwd = forward(model, config);
  const MatrixR g = input_gradients(model, fwd.trace, layer_index, std::move(upstream));
  std::vector<double> out(g.row(0).begin(), g.row(0).end());
  for (auto &v : out)
    v *= v;
  return out;
}

struct OptimizationRequest {
  RegionMask max_mask;
  RegionMask min_mask;
  std::vector<double> anchor;
  double lambda = 0.1;
  std::size_t steps = 500;
  double step_size = 0.01;
};

struct OptimizationResult {
  std::vector<double> optimum;
  /// Objective after each update.
  std::vector<double> trajectory;
  double best_objective = 0.0;
  std::vector<double> profile;
};

enum class Origin { manual, max, min, maxmin };

inline const char *to_string(Origin o) {
  switch (o) {
  case Origin::manual: return "manual";
  case Origin::max: return "max";
  case Origin::min: return "min";
  case Origin::maxmin: return "maxmin";
  }
  return "manual";
}

inline Origin origin_from_string(std::string_view s) {
  if (s == "manual") return Origin::manual;
  if (s == "max") return Origin::max;
  if (s == "min") return Origin::min;
  if (s == "maxmin") return Origin::maxmin;
  fail(ErrorKind::invalid_argument, "unknown origin '" + std::string(s) + "'", "origin");
}

inline Origin origin_of(const OptimizationRequest &req) {
  const bool mx = !req.max_mask.empty(), mn = !req.min_mask.empty();
  return mx && mn ? Origin::maxmin : (mx ? Origin::max : Origin::min);
}

/// Projected gradient ascent on
///   J(x) = mean_{max} f(x) - mean_{min} f(x) - lambda * |x - anchor|^2
/// from the anchor, clamping to [-1, 1] after every step. Returns the best
/// iterate seen (the anchor included).
inline OptimizationResult activation_optimize(const SurrogateModel &model,
                                              const OptimizationRequest &req) {
  const std::size_t n_out = model.output_width(), n_in = model.input_width();
  if (req.max_mask.size() != n_out || req.min_mask.size() != n_out)
    fail(ErrorKind::shape_mismatch, "mask length does not match model output", "mask");
  if (req.max_mask.empty() && req.min_mask.empty())
    fail(ErrorKind::invalid_argument, "both masks are empty", "mask");
  if (req.max_mask.overlaps(req.min_mask))
    fail(ErrorKind::invalid_argument, "maximize and minimize regions overlap", "mask");
  if (req.anchor.size() != n_in)
    fail(ErrorKind::shape_mismatch, "anchor width does not match model input", "anchor");
  if (req.steps < 1)
    fail(ErrorKind::invalid_argument, "steps must be >= 1", "steps");
  if (!(req.step_size > 0.0) || !std::isfinite(req.step_size))
    fail(ErrorKind::invalid_argument, "step size must be > 0", "step_size");
  if (!(req.lambda >= 0.0) || !std::isfinite(req.lambda))
    fail(ErrorKind::invalid_argument, "lambda must be >= 0", "lambda");

  MatrixR upstream(1, n_out);
  const double w_max = req.max_mask.empty() ? 0.0 : 1.0 / static_cast<double>(req.max_mask.count());
  const double w_min = req.min_mask.empty() ? 0.0 : 1.0 / static_cast<double>(req.min_mask.count());
  for (std::size_t i = 0; i < n_out; ++i)
    upstream(0, i) = req.max_mask.selected[i] ? w_max : (req.min_mask.selected[i] ? -w_min : 0.0);

  struct Eval {
    double objective;
    std::vector<double> gradient;
    std::vector<double> output;
  };
  auto evaluate = [&](const std::vector<double> &x) {
    auto fwd = forward(model, x);
    double j = 0.0;
    for (std::size_t i = 0; i < n_out; ++i)
      j += upstream(0, i) * fwd.output[i];
    const MatrixR g = input_gradients(model, fwd.trace, model.depth() - 1, upstream);
    Eval e{j, std::vector<double>(n_in), std::move(fwd.output)};
    for (std::size_t k = 0; k < n_in; ++k) {
      const double d = x[k] - req.anchor[k];
      e.objective -= req.lambda * d * d;
      e.gradient[k] = g(0, k) - 2.0 * req.lambda * d;
    }
    return e;
  };

  std::vector<double> x = req.anchor;
  Eval cur = evaluate(x);
  if (!std::isfinite(cur.objective))
    fail(ErrorKind::non_finite, "objective is not finite at the anchor", "anchor");
  OptimizationResult res;
  res.optimum = x;
  res.best_objective = cur.objective;
  res.profile = cur.output;
  res.trajectory.reserve(req.steps);
  for (std::size_t s = 0; s < req.steps; ++s) {
    for (std::size_t k = 0; k < n_in; ++k)
      x[k] = std::clamp(x[k] + req.step_size * cur.gradient[k], -1.0, 1.0);
    cur = evaluate(x);
    if (!std::isfinite(cur.objective))
      fail(ErrorKind::non_finite, "objective became non-finite at step " + std::to_string(s + 1),
           "objective");
    res.trajectory.push_back(cur.objective);
    if (cur.objective > res.best_objective) {
      res.best_objective = cur.objective;
      res.optimum = x;
      res.profile = cur.output;
    }
  }
  return res;
}

// ---- weight matrices --------------------------------------------------------

/// Weights of `layer_index` oriented inputs x outputs (the first matrix is
/// parameters x H0 neurons, the last is penultimate neurons x output cells).
inline MatrixR weight_matrix(const SurrogateModel &model, std::size_t layer_index) {
  if (layer_index >= model.depth())
    fail(ErrorKind::not_found, "no weight matrix " + std::to_string(layer_index), "layer");
  return model.layer(layer_index).weights.transposed();
}

inline MatrixR sort_rows(MatrixR m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::sort(row.begin(), row.end());
  }
  return m;
}

/// Linear-interpolation quantile (q in [0, 1]) of unsorted values.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty())
    fail(ErrorKind::invalid_argument, "quantile of an empty set", "values");
  if (!(q >= 0.0 && q <= 1.0))
    fail(ErrorKind::invalid_argument, "quantile outside [0, 1]", "quantile");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Inclusive circular column window.
struct ColumnWindow {
  std::size_t first = 0;
  std::size_t last = 0;
};

/// Rows whose mean over the column window is strictly above the q-quantile of
/// all rows' window means, ascending.
inline std::vector<std::size_t> row_pattern_query(const MatrixR &m, ColumnWindow window,
                                                  double q = 0.81) {
  if (m.cols() == 0 || m.rows() == 0)
    fail(ErrorKind::invalid_argument, "empty matrix", "matrix");
  if (window.first >= m.cols() || window.last >= m.cols())
    fail(ErrorKind::invalid_argument, "window outside the matrix columns", "window");
  std::vector<std::size_t> cols;
  for (std::size_t c = window.first;; c = (c + 1) % m.cols()) {
    cols.push_back(c);
    if (c == window.last)
      break;
  }
  std::vector<double> means(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (auto c : cols)
      means[r] += m(r, c);
    means[r] /= static_cast<double>(cols.size());
  }
  const double threshold = quantile(means, q);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < m.rows(); ++r)
    if (means[r] > threshold)
      out.push_back(r);
  return out;
}

/// Flags rows whose largest |weight| exceeds mean + 2 std (population) of
/// every row's largest |weight|.
inline std::vector<bool> parameter_range_flags(const MatrixR &first_matrix) {
  const std::size_t n = first_matrix.rows();
  if (n == 0)
    return {};
  std::vector<double> peak(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (double w : first_matrix.row(r))
      peak[r] = std::max(peak[r], std::abs(w));
  const double mean = std::accumulate(peak.begin(), peak.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double p : peak)
    var += (p - mean) * (p - mean);
  const double threshold = mean + 2.0 * std::sqrt(var / static_cast<double>(n));
  std::vector<bool> flags(n);
  for (std::size_t r = 0; r < n; ++r)
    flags[r] = peak[r] > threshold;
  return flags;
}

} // namespace cellsteer
