#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cellsteer/error.hpp"

namespace cellsteer {

/// Dense row-major matrix of doubles.
class MatrixR {
public:
  MatrixR() = default;
  MatrixR(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  MatrixR(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      fail(ErrorKind::shape_mismatch,
           "matrix data length " + std::to_string(data_.size()) + " != " +
               std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double> &data() noexcept { return data_; }
  const std::vector<double> &data() const noexcept { return data_; }

  MatrixR transposed() const {
    MatrixR t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c)
        t.data_[c * rows_ + r] = data_[r * cols_ + c];
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const MatrixR &, const MatrixR &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace kernels {

// y += a * x
inline void axpy(double a, const double *x, double *y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    y[i] += a * x[i];
}

/// out (B x O) = in (B x I) * w^T + bias, with w stored O x I.
/// Accumulation order per output element is fixed (k ascending) and does not
/// depend on B, so batched and single-row results agree bit for bit.
inline void affine(const MatrixR &in, const MatrixR &w, std::span<const double> bias,
                   MatrixR &out) {
  const std::size_t batch = in.rows(), n_in = w.cols(), n_out = w.rows();
  const MatrixR wt = w.transposed();
  out = MatrixR(batch, n_out);
  for (std::size_t b = 0; b < batch; ++b) {
    double *o = out.row(b).data();
    std::copy(bias.begin(), bias.end(), o);
    const double *x = in.row(b).data();
    for (std::size_t k = 0; k < n_in; ++k)
      if (x[k] != 0.0)
        axpy(x[k], wt.row(k).data(), o, n_out);
  }
}

/// grad_w (O x I) += dz^T (O x B) * in (B x I); grad_b += column sums of dz.
inline void accumulate_weight_grad(const MatrixR &dz, const MatrixR &in, MatrixR &grad_w,
                                   std::span<double> grad_b) {
  const std::size_t batch = dz.rows(), n_out = dz.cols(), n_in = in.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    const double *d = dz.row(b).data();
    const double *x = in.row(b).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      if (d[o] == 0.0)
        continue;
      axpy(d[o], x, grad_w.row(o).data(), n_in);
      grad_b[o] += d[o];
    }
  }
}

/// dx (B x I) = dz (B x O) * w (O x I).
inline void propagate(const MatrixR &dz, const MatrixR &w, MatrixR &dx) {
  const std::size_t batch = dz.rows(), n_out = w.rows(), n_in = w.cols();
  dx = MatrixR(batch, n_in);
  for (std::size_t b = 0; b < batch; ++b) {
    const double *d = dz.row(b).data();
    double *x = dx.row(b).data();
    for (std::size_t o = 0; o < n_out; ++o)
      if (d[o] != 0.0)
        axpy(d[o], w.row(o).data(), x, n_in);
  }
}

} // namespace kernels

} // namespace cellsteer
