#pragma once

#include <Eigen/Core>

#include <array>
#include <ostream>

#include "cysgan/grid.hpp"

namespace cysgan::nn {

/// (N, C, Z, Y, X); convolution weights reuse it as (Cout, Cin, kz, ky, kx).
using Shape5 = std::array<Index, 5>;

inline Index numel(const Shape5& s) { return s[0] * s[1] * s[2] * s[3] * s[4]; }

inline std::ostream& operator<<(std::ostream& os, const Shape5& s) {
  return os << "(" << s[0] << ", " << s[1] << ", " << s[2] << ", " << s[3] << ", " << s[4] << ")";
}

/// Dense 5D tensor, x fastest, zero-initialized on construction.
template <typename S>
struct Tensor {
  using Scalar = S;
  using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  Shape5 shape{0, 0, 0, 0, 0};
  Vector data;

  Tensor() = default;
  explicit Tensor(const Shape5& s) : shape(s), data(Vector::Zero(nn::numel(s))) {}
  Tensor(const Shape5& s, S fill) : shape(s), data(Vector::Constant(nn::numel(s), fill)) {}

  static Tensor scalar(S v) { return Tensor({1, 1, 1, 1, 1}, v); }

  Index numel() const { return data.size(); }
  bool empty() const { return data.size() == 0; }
  Index batch() const { return shape[0]; }
  Index channels() const { return shape[1]; }
  Index spatial() const { return shape[2] * shape[3] * shape[4]; }
  Shape3 spatial_shape() const { return {shape[2], shape[3], shape[4]}; }

  S* channel_ptr(Index n, Index c) { return data.data() + (n * shape[1] + c) * spatial(); }
  const S* channel_ptr(Index n, Index c) const { return data.data() + (n * shape[1] + c) * spatial(); }

  S& at(Index n, Index c, Index z, Index y, Index x) {
    return data[(((n * shape[1] + c) * shape[2] + z) * shape[3] + y) * shape[4] + x];
  }
  S at(Index n, Index c, Index z, Index y, Index x) const {
    return data[(((n * shape[1] + c) * shape[2] + z) * shape[3] + y) * shape[4] + x];
  }
  S item() const { return data[0]; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data = data.template cast<U>();
    return out;
  }
};

/// Packs single-channel grids into an (N, 1, Z, Y, X) tensor, applying v * scale + offset.
template <typename S, typename T>
Tensor<S> stack_grids(const std::vector<const Grid3<T>*>& grids, double scale = 1.0, double offset = 0.0) {
  if (grids.empty()) return {};
  const Shape3 s = grids.front()->shape();
  Tensor<S> t({static_cast<Index>(grids.size()), 1, s.z, s.y, s.x});
  for (std::size_t n = 0; n < grids.size(); ++n) {
    if (grids[n]->shape() != s) throw ValidationError("batch", "patches in a batch must share a shape");
    S* dst = t.channel_ptr(static_cast<Index>(n), 0);
    for (Index i = 0; i < s.size(); ++i) dst[i] = static_cast<S>((*grids[n])[i] * scale + offset);
  }
  return t;
}

/// One channel of one batch item as a grid, applying v * scale + offset.
template <typename S>
Grid3<float> channel_grid(const Tensor<S>& t, Index n, Index c, double scale = 1.0, double offset = 0.0) {
  Grid3<float> g(t.spatial_shape());
  const S* src = t.channel_ptr(n, c);
  for (Index i = 0; i < g.size(); ++i) g[i] = static_cast<float>(src[i] * scale + offset);
  return g;
}

}  // namespace cysgan::nn
