#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <vector>

#include "csg/errors.hpp"

namespace csg {

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Vectorised reductions start at the first aligned element, so storage
// alignment must not vary between runs for results to be reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

using MatrixF = MatrixX<float>;
using MatrixD = MatrixX<double>;

// Dense 4-d tensor in N x C x H x W order.
template <typename T>
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  std::size_t offset(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
  T& operator()(int b, int ch, int y, int x) { return data[offset(b, ch, y, x)]; }
  const T& operator()(int b, int ch, int y, int x) const {
    return data[offset(b, ch, y, x)];
  }

  T* sample(int b) { return data.data() + b * sample_size(); }
  const T* sample(int b) const { return data.data() + b * sample_size(); }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string shape_string() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  // Copies samples [first, first + count) into a new tensor.
  Tensor4 slice(int first, int count) const {
    Tensor4 out(count, c, h, w);
    std::copy(sample(first), sample(first) + count * sample_size(), out.data.begin());
    return out;
  }

  // Gathers the listed samples in order.
  Tensor4 gather(const std::vector<int>& indices) const {
    Tensor4 out(static_cast<int>(indices.size()), c, h, w);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= n) {
        throw IndexError("sample index out of range: " + std::to_string(indices[i]),
                         indices[i]);
      }
      std::copy(sample(indices[i]), sample(indices[i]) + sample_size(),
                out.sample(static_cast<int>(i)));
    }
    return out;
  }
};

using TensorF = Tensor4<float>;
using TensorD = Tensor4<double>;

}  // namespace csg
