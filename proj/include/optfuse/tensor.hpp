/*
Copyright 2026 The OptFuse Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "optfuse/errors.hpp"

namespace optfuse {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    oss << (i ? "," : "") << shape[i];
  }
  oss << ']';
  return oss.str();
}

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

// How a freshly created tensor is filled.
struct Fill {
  enum class Kind { kZeros, kConstant, kUniform };

  Kind kind = Kind::kZeros;
  double value = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  std::uint64_t seed = 0;

  static Fill zeros() { return {}; }
  static Fill constant(double c) { return {Kind::kConstant, c}; }
  static Fill uniform(double lo, double hi, std::uint64_t seed) {
    return {Kind::kUniform, 0.0, lo, hi, seed};
  }
};

// Dense row-major tensor. No strides or views: one tensor is one contiguous
// region, which is also the unit the memory-transaction trace accounts in.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, const Fill& fill = Fill::zeros())
      : shape_(std::move(shape)) {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto extent : shape_) {
      if (extent == 0) throw ShapeError("zero extent in shape " + to_string(shape_));
    }
    data_.assign(num_elements(shape_), T(0));
    switch (fill.kind) {
      case Fill::Kind::kZeros:
        break;
      case Fill::Kind::kConstant:
        std::fill(data_.begin(), data_.end(), static_cast<T>(fill.value));
        break;
      case Fill::Kind::kUniform: {
        // The engine output is portable; std::uniform_real_distribution is
        // not, so map the top 53 bits to [0,1) by hand.
        std::mt19937_64 engine(fill.seed);
        for (auto& x : data_) {
          const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
          x = static_cast<T>(fill.lo + (fill.hi - fill.lo) * u);
        }
        break;
      }
    }
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto extent : shape_) {
      if (extent == 0) throw ShapeError("zero extent in shape " + to_string(shape_));
    }
    if (num_elements(shape_) != data_.size()) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D element access, row-major.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> create(Shape shape, const Fill& fill = Fill::zeros()) {
  return Tensor<T>(std::move(shape), fill);
}

// [m,k] x [k,n] -> [m,n]. Accumulates over k in increasing order.
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

// a^T x b for a [k,m], b [k,n] -> [m,n]; avoids materializing the transpose.
template <std::floating_point T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul_tn: inner extents differ " + to_string(a.shape()) + "^T x " +
                     to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(p, i) * b.at(p, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

// a x b^T for a [m,k], b [n,k] -> [m,n].
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      out.at(i, j) = acc;
    }
  }
  return out;
}

enum class Elementwise { kAdd, kSub, kMul, kScale, kRelu };

template <std::floating_point T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>* b = nullptr,
                      T scale = T(1)) {
  const bool binary = kind == Elementwise::kAdd || kind == Elementwise::kSub ||
                      kind == Elementwise::kMul;
  if (binary) {
    if (b == nullptr) throw ShapeError("elementwise: binary kind needs two operands");
    detail::require_same_shape(a, *b, "elementwise");
  }
  Tensor<T> out = a;
  auto dst = out.data();
  switch (kind) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*b)[i];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= (*b)[i];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= (*b)[i];
      break;
    case Elementwise::kScale:
      for (auto& x : dst) x *= scale;
      break;
    case Elementwise::kRelu:
      for (auto& x : dst) x = x > T(0) ? x : T(0);
      break;
  }
  return out;
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::kAdd, a, &b); }
template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::kSub, a, &b); }
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Elementwise::kMul, a, &b); }
template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T c) { return elementwise(Elementwise::kScale, a, static_cast<const Tensor<T>*>(nullptr), c); }
template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise(Elementwise::kRelu, a); }

// target <- target + alpha * x, in place. alpha == 0 is a no-op so the
// target stays bitwise identical (including -0.0 and NaN payloads).
template <std::floating_point T>
void axpy_inplace(Tensor<T>& target, T alpha, const Tensor<T>& x) {
  detail::require_same_shape(target, x, "axpy_inplace");
  if (alpha == T(0)) return;
  auto dst = target.data();
  auto src = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

// Sum of all elements, accumulated in double in storage order.
template <std::floating_point T>
double sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T x : a.data()) acc += static_cast<double>(x);
  return acc;
}

template <std::floating_point T>
double squared_norm(const Tensor<T>& a) {
  double acc = 0.0;
  for (T x : a.data()) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

template <std::floating_point T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T x) { return std::isfinite(x); });
}

}  // namespace optfuse
