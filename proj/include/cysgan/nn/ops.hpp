#pragma once

#include <array>
#include <optional>
#include <vector>

#include "cysgan/nn/autograd.hpp"

namespace cysgan::nn {

struct ConvGeometry {
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> padding{0, 0, 0};
};

/// Output spatial extent of a convolution; throws if it would be empty.
Shape3 conv_output_shape(Shape3 in, std::array<Index, 3> kernel, const ConvGeometry& g);

/// 3D cross-correlation. x: (N, Cin, Z, Y, X); weight: (Cout, Cin, kz, ky, kx);
/// bias: (1, Cout, 1, 1, 1) or undefined.
template <typename S>
Var<S> conv3d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, const ConvGeometry& g);

/// Zero-mean unit-variance normalization per (n, c) over space, or per c over
/// (n, space) when `across_batch` is set. No affine parameters.
template <typename S>
Var<S> normalize(const Var<S>& x, bool across_batch, S eps = S(1e-5));

template <typename S>
Var<S> relu(const Var<S>& x);
template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope);
template <typename S>
Var<S> tanh(const Var<S>& x);
template <typename S>
Var<S> sigmoid(const Var<S>& x);

enum class Activation { identity, tanh, sigmoid };

/// Applies one activation per channel.
template <typename S>
Var<S> channel_activation(const Var<S>& x, const std::vector<Activation>& per_channel);

/// 2x2x2 max pooling with stride 2; spatial extents must be even.
template <typename S>
Var<S> max_pool2(const Var<S>& x);

/// Trilinear 2x upsampling with half-pixel centers and clamped borders.
template <typename S>
Var<S> upsample2(const Var<S>& x);

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b);

template <typename S>
Var<S> scale(const Var<S>& a, S factor);

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts);

template <typename S>
Var<S> slice_channels(const Var<S>& x, Index begin, Index count);

// Scalar-valued reductions used by the losses. Shapes must match exactly.

template <typename S>
Var<S> mean_abs_error(const Var<S>& a, const Var<S>& b);

template <typename S>
Var<S> mean_squared_error(const Var<S>& a, const Var<S>& b);

/// mean((a - c)^2)
template <typename S>
Var<S> mean_squared_to_constant(const Var<S>& a, S c);

/// mean(-t log p - (1 - t) log(1 - p)) with p clamped to [eps, 1 - eps]; the
/// clamped entries receive no gradient. Gradient flows to `p` only.
template <typename S>
Var<S> binary_cross_entropy(const Var<S>& p, const Var<S>& t, S eps, Index* clamped = nullptr);

/// mean(softplus(sign * a))
template <typename S>
Var<S> mean_softplus(const Var<S>& a, S sign);

}  // namespace cysgan::nn
