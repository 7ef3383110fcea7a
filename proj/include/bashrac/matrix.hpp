#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace bashrac {

/// Row-major dense matrix with a fixed column count.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T(0)) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T* row_ptr(std::size_t r) noexcept { return data_.data() + r * cols_; }
  const T* row_ptr(std::size_t r) const noexcept { return data_.data() + r * cols_; }

  std::span<T> row(std::size_t r) noexcept { return {row_ptr(r), cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {row_ptr(r), cols_}; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace kernels {

// All kernels process rows independently and in a fixed order, so a row's
// result is bit-identical whether it is computed alone or inside a larger
// block. Incremental decoding relies on this.

/// out[r] = bias + in[r] * W for r in [r0, r1). W is in_dim x out_dim.
template <class T>
void linear_rows(const T* in, std::size_t in_dim, const T* __restrict w, const T* bias, std::size_t out_dim,
                 T* out, std::size_t r0, std::size_t r1) {
  for (std::size_t r = r0; r < r1; ++r) {
    const T* x = in + r * in_dim;
    T* __restrict o = out + r * out_dim;
    if (bias) {
      for (std::size_t j = 0; j < out_dim; ++j) o[j] = bias[j];
    } else {
      for (std::size_t j = 0; j < out_dim; ++j) o[j] = T(0);
    }
    for (std::size_t k = 0; k < in_dim; ++k) {
      const T a = x[k];
      const T* __restrict wk = w + k * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += a * wk[j];
    }
  }
}

/// dW += in^T * dout and dbias += column sums of dout, over rows [0, n).
template <class T>
void linear_weight_grad(const T* in, std::size_t in_dim, const T* dout, std::size_t out_dim, std::size_t n,
                        T* __restrict dw, T* __restrict dbias) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = in + r * in_dim;
    const T* __restrict g = dout + r * out_dim;
    for (std::size_t k = 0; k < in_dim; ++k) {
      const T a = x[k];
      T* __restrict dwk = dw + k * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) dwk[j] += a * g[j];
    }
    if (dbias) {
      for (std::size_t j = 0; j < out_dim; ++j) dbias[j] += g[j];
    }
  }
}

/// din[r] = dout[r] * Wt over rows [0, n), where Wt is W transposed
/// (out_dim x in_dim).
template <class T>
void linear_input_grad(const T* dout, std::size_t out_dim, const T* __restrict wt, std::size_t in_dim, T* din,
                       std::size_t n) {
  linear_rows(dout, out_dim, wt, static_cast<const T*>(nullptr), in_dim, din, 0, n);
}

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace kernels

}  // namespace bashrac
