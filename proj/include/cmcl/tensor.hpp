#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "cmcl/error.hpp"

namespace cmcl {

// Dense row-major array with a lazily materialized gradient buffer of the
// same shape. Rank-1 tensors are treated as a single row.
template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_, std::string name_ = {})
      : name(std::move(name_)), shape(std::move(shape_)), value(count(shape), T(0)) {}

  static Tensor matrix(std::size_t rows, std::size_t cols, std::string name = {}) {
    return Tensor({rows, cols}, std::move(name));
  }
  static Tensor vector(std::size_t n, std::string name = {}) { return Tensor({n}, std::move(name)); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return value.size(); }
  bool empty() const { return value.empty(); }
  std::size_t rows() const { return shape.size() < 2 ? 1 : shape[0]; }
  std::size_t cols() const { return shape.empty() ? 0 : (shape.size() < 2 ? shape[0] : size() / shape[0]); }

  T& operator()(std::size_t r, std::size_t c) { return value[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return value[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {value.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {value.data() + r * cols(), cols()}; }

  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
  std::span<T> grad_row(std::size_t r) {
    ensure_grad();
    return {grad.data() + r * cols(), cols()};
  }
};

namespace kernel {

// Dot product over eight lanes (GCC/Clang vector extension for float and
// double); the lane layout and final reduction order are fixed, so results
// are reproducible.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  std::size_t i = 0;
  T lanes[8] = {};
  if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
    typedef T V __attribute__((vector_size(8 * sizeof(T))));
    V acc = {};
    for (; i + 8 <= n; i += 8) {
      V va, vb;
      std::memcpy(&va, a + i, sizeof(V));
      std::memcpy(&vb, b + i, sizeof(V));
      acc += va * vb;
    }
    for (std::size_t k = 0; k < 8; ++k) lanes[k] = acc[k];
  } else {
    for (; i + 8 <= n; i += 8) {
      for (std::size_t k = 0; k < 8; ++k) lanes[k] += a[i + k] * b[i + k];
    }
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// y += alpha * x
template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y = W x + b for row-major W (rows x cols); b may be null.
template <typename T>
inline void matvec(const T* w, const T* b, const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = (b ? b[r] : T(0)) + dot(w + r * cols, x, cols);
}

// y += W x
template <typename T>
inline void matvec_acc(const T* w, const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot(w + r * cols, x, cols);
}

// x_grad += W^T dy
template <typename T>
inline void matvec_t_acc(const T* w, const T* dy, T* dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] != T(0)) axpy(dy[r], w + r * cols, dx, cols);
  }
}

// W_grad += dy x^T
template <typename T>
inline void outer_acc(const T* dy, const T* x, T* dw, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] != T(0)) axpy(dy[r], x, dw + r * cols, cols);
  }
}

// Sequence forms over n rows of X (n x cols) and Y / dY (n x rows). Each
// weight row is visited once per call.

// Y[t] = W X[t] + b
template <typename T>
inline void matmul_nt(const T* w, const T* b, const T* x, T* y, std::size_t n, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* wr = w + r * cols;
    const T br = b ? b[r] : T(0);
    for (std::size_t t = 0; t < n; ++t) y[t * rows + r] = br + dot(wr, x + t * cols, cols);
  }
}

// dW += sum_t dY[t] X[t]^T
template <typename T>
inline void outer_acc_seq(const T* dy, const T* x, T* dw, std::size_t n, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* dwr = dw + r * cols;
    for (std::size_t t = 0; t < n; ++t) {
      const T g = dy[t * rows + r];
      if (g != T(0)) axpy(g, x + t * cols, dwr, cols);
    }
  }
}

// dX[t] += W^T dY[t]
template <typename T>
inline void matmul_t_acc(const T* w, const T* dy, T* dx, std::size_t n, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* wr = w + r * cols;
    for (std::size_t t = 0; t < n; ++t) {
      const T g = dy[t * rows + r];
      if (g != T(0)) axpy(g, wr, dx + t * cols, cols);
    }
  }
}

}  // namespace kernel

}  // namespace cmcl
