#include "cysgan/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cysgan::nn {
namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

struct ConvPlan {
  Shape3 in;
  Shape3 out;
  std::array<Index, 3> k;
  ConvGeometry g;
  Index cin;
};

// Unfolds one batch item (Cin x in) into a (Cin*kz*ky*kx) x out.size() row-major matrix.
template <typename S>
void im2col(const S* x, S* cols, const ConvPlan& p) {
  const Index P = p.out.size(), plane = p.in.size();
  const Index sz = p.g.stride[0], sy = p.g.stride[1], sx = p.g.stride[2];
  const Index pz = p.g.padding[0], py = p.g.padding[1], px = p.g.padding[2];
  Index row = 0;
  for (Index c = 0; c < p.cin; ++c)
    for (Index kz = 0; kz < p.k[0]; ++kz)
      for (Index ky = 0; ky < p.k[1]; ++ky)
        for (Index kx = 0; kx < p.k[2]; ++kx, ++row) {
          S* dst = cols + row * P;
          const S* src_c = x + c * plane;
          for (Index oz = 0; oz < p.out.z; ++oz) {
            const Index iz = oz * sz - pz + kz;
            S* dz = dst + oz * p.out.y * p.out.x;
            if (iz < 0 || iz >= p.in.z) {
              std::fill(dz, dz + p.out.y * p.out.x, S(0));
              continue;
            }
            for (Index oy = 0; oy < p.out.y; ++oy) {
              const Index iy = oy * sy - py + ky;
              S* d = dz + oy * p.out.x;
              if (iy < 0 || iy >= p.in.y) {
                std::fill(d, d + p.out.x, S(0));
                continue;
              }
              const S* s = src_c + (iz * p.in.y + iy) * p.in.x;
              if (sx == 1) {
                const Index lo = std::clamp<Index>(px - kx, 0, p.out.x);
                const Index hi = std::clamp<Index>(p.in.x + px - kx, lo, p.out.x);
                std::fill(d, d + lo, S(0));
                std::copy(s + lo - px + kx, s + hi - px + kx, d + lo);
                std::fill(d + hi, d + p.out.x, S(0));
              } else {
                for (Index ox = 0; ox < p.out.x; ++ox) {
                  const Index ix = ox * sx - px + kx;
                  d[ox] = (ix >= 0 && ix < p.in.x) ? s[ix] : S(0);
                }
              }
            }
          }
        }
}

// Adjoint of im2col: scatters column gradients back onto the input grid.
template <typename S>
void col2im_add(const S* cols, S* dx, const ConvPlan& p) {
  const Index P = p.out.size(), plane = p.in.size();
  const Index sz = p.g.stride[0], sy = p.g.stride[1], sx = p.g.stride[2];
  const Index pz = p.g.padding[0], py = p.g.padding[1], px = p.g.padding[2];
  Index row = 0;
  for (Index c = 0; c < p.cin; ++c)
    for (Index kz = 0; kz < p.k[0]; ++kz)
      for (Index ky = 0; ky < p.k[1]; ++ky)
        for (Index kx = 0; kx < p.k[2]; ++kx, ++row) {
          const S* src = cols + row * P;
          S* dst_c = dx + c * plane;
          for (Index oz = 0; oz < p.out.z; ++oz) {
            const Index iz = oz * sz - pz + kz;
            if (iz < 0 || iz >= p.in.z) continue;
            for (Index oy = 0; oy < p.out.y; ++oy) {
              const Index iy = oy * sy - py + ky;
              if (iy < 0 || iy >= p.in.y) continue;
              const S* s = src + (oz * p.out.y + oy) * p.out.x;
              S* d = dst_c + (iz * p.in.y + iy) * p.in.x;
              if (sx == 1) {
                const Index lo = std::clamp<Index>(px - kx, 0, p.out.x);
                const Index hi = std::clamp<Index>(p.in.x + px - kx, lo, p.out.x);
                for (Index ox = lo; ox < hi; ++ox) d[ox - px + kx] += s[ox];
              } else {
                for (Index ox = 0; ox < p.out.x; ++ox) {
                  const Index ix = ox * sx - px + kx;
                  if (ix >= 0 && ix < p.in.x) d[ix] += s[ox];
                }
              }
            }
          }
        }
}

void require_same_shape(const Shape5& a, const Shape5& b, const char* op) {
  if (a != b) throw ValidationError(op, "shape mismatch");
}

template <typename S>
void accumulate(Node<S>& parent, const typename Tensor<S>::Vector& g) {
  if (parent.requires_grad) parent.ensure_grad().data += g;
}

template <typename S, typename Fwd, typename Bwd>
Var<S> unary(const Var<S>& x, Fwd fwd, Bwd dfdy) {
  Tensor<S> y(x.shape());
  y.data = x.value().data.unaryExpr(fwd);
  return Var<S>::make(std::move(y), {x}, [dfdy](Node<S>& n) {
    Node<S>& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad().data.array() += n.grad.data.array() * n.value.data.array().unaryExpr(dfdy);
  });
}

}  // namespace

Shape3 conv_output_shape(Shape3 in, std::array<Index, 3> kernel, const ConvGeometry& g) {
  Shape3 out;
  for (int a = 0; a < 3; ++a) {
    if (g.stride[a] < 1) throw ValidationError("conv3d", "stride must be positive");
    const Index span = in[a] + 2 * g.padding[a] - kernel[a];
    if (span < 0) throw ValidationError("conv3d", "input smaller than kernel along axis " + std::to_string(a));
    out[a] = span / g.stride[a] + 1;
  }
  return out;
}

template <typename S>
Var<S> conv3d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, const ConvGeometry& g) {
  const Shape5& xs = x.shape();
  const Shape5& ws = weight.shape();
  if (xs[1] != ws[1])
    throw ValidationError("conv3d", "expected " + std::to_string(ws[1]) + " input channels, got " + std::to_string(xs[1]));
  ConvPlan p{{xs[2], xs[3], xs[4]}, {}, {ws[2], ws[3], ws[4]}, g, xs[1]};
  p.out = conv_output_shape(p.in, p.k, g);
  const Index N = xs[0], cout = ws[0], K = p.cin * p.k[0] * p.k[1] * p.k[2], P = p.out.size(), Pin = p.in.size();
  const bool pointwise = K == p.cin && g.stride == std::array<Index, 3>{1, 1, 1} && g.padding == std::array<Index, 3>{0, 0, 0};
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().numel() != cout) throw ValidationError("conv3d", "bias size mismatch");

  Tensor<S> y({N, cout, p.out.z, p.out.y, p.out.x});
  RowMat<S> cols;
  if (!pointwise) cols.resize(K, P);
  CMapMat<S> W(weight.value().data.data(), cout, K);
  for (Index n = 0; n < N; ++n) {
    CMapMat<S> X(x.value().channel_ptr(n, 0), p.cin, Pin);
    MapMat<S> Y(y.channel_ptr(n, 0), cout, P);
    if (pointwise) {
      Y.noalias() = W * X;
    } else {
      im2col(x.value().channel_ptr(n, 0), cols.data(), p);
      Y.noalias() = W * cols;
    }
    if (has_bias) Y.colwise() += bias.value().data;
  }

  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Var<S>::make(std::move(y), std::move(inputs), [p, N, cout, K, P, Pin, pointwise, has_bias](Node<S>& node) {
    Node<S>& xn = *node.parents[0];
    Node<S>& wn = *node.parents[1];
    Node<S>* bn = has_bias ? node.parents[2].get() : nullptr;
    CMapMat<S> W(wn.value.data.data(), cout, K);
    RowMat<S> cols, dcols;
    if (!pointwise) cols.resize(K, P);
    for (Index n = 0; n < N; ++n) {
      CMapMat<S> dY(node.grad.channel_ptr(n, 0), cout, P);
      CMapMat<S> X(xn.value.channel_ptr(n, 0), p.cin, Pin);
      if (wn.requires_grad) {
        MapMat<S> dW(wn.ensure_grad().data.data(), cout, K);
        if (pointwise) {
          dW.noalias() += dY * X.transpose();
        } else {
          im2col(xn.value.channel_ptr(n, 0), cols.data(), p);
          dW.noalias() += dY * cols.transpose();
        }
      }
      if (bn && bn->requires_grad) bn->ensure_grad().data += dY.rowwise().sum();
      if (xn.requires_grad) {
        MapMat<S> dX(xn.ensure_grad().channel_ptr(n, 0), p.cin, Pin);
        if (pointwise) {
          dX.noalias() += W.transpose() * dY;
        } else {
          dcols.noalias() = W.transpose() * dY;
          col2im_add(dcols.data(), dX.data(), p);
        }
      }
    }
  });
}

template <typename S>
Var<S> normalize(const Var<S>& x, bool across_batch, S eps) {
  const Shape5& s = x.shape();
  const Index N = s[0], C = s[1], L = x.value().spatial();
  const Index groups = across_batch ? C : N * C;
  const Index seg_per_group = across_batch ? N : 1;
  // Segment j of group gi starts at this flat offset.
  const auto offset = [=](Index gi, Index j) {
    return across_batch ? (j * C + gi) * L : gi * L;
  };
  Tensor<S> y(s);
  std::vector<S> inv_std(static_cast<std::size_t>(groups));
  const double count = static_cast<double>(seg_per_group * L);
  for (Index gi = 0; gi < groups; ++gi) {
    double sum = 0, sq = 0;
    for (Index j = 0; j < seg_per_group; ++j) {
      const S* v = x.value().data.data() + offset(gi, j);
      for (Index i = 0; i < L; ++i) sum += v[i];
    }
    const double mean = sum / count;
    for (Index j = 0; j < seg_per_group; ++j) {
      const S* v = x.value().data.data() + offset(gi, j);
      for (Index i = 0; i < L; ++i) sq += (v[i] - mean) * (v[i] - mean);
    }
    const double is = 1.0 / std::sqrt(sq / count + static_cast<double>(eps));
    inv_std[static_cast<std::size_t>(gi)] = static_cast<S>(is);
    for (Index j = 0; j < seg_per_group; ++j) {
      const S* v = x.value().data.data() + offset(gi, j);
      S* o = y.data.data() + offset(gi, j);
      for (Index i = 0; i < L; ++i) o[i] = static_cast<S>((v[i] - mean) * is);
    }
  }
  return Var<S>::make(std::move(y), {x}, [inv_std, groups, seg_per_group, L, offset, count](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    S* dx = p.ensure_grad().data.data();
    for (Index gi = 0; gi < groups; ++gi) {
      double mg = 0, mgx = 0;
      for (Index j = 0; j < seg_per_group; ++j) {
        const S* g = node.grad.data.data() + offset(gi, j);
        const S* xh = node.value.data.data() + offset(gi, j);
        for (Index i = 0; i < L; ++i) {
          mg += g[i];
          mgx += g[i] * xh[i];
        }
      }
      mg /= count;
      mgx /= count;
      const double is = inv_std[static_cast<std::size_t>(gi)];
      for (Index j = 0; j < seg_per_group; ++j) {
        const S* g = node.grad.data.data() + offset(gi, j);
        const S* xh = node.value.data.data() + offset(gi, j);
        S* d = dx + offset(gi, j);
        for (Index i = 0; i < L; ++i) d[i] += static_cast<S>(is * (g[i] - mg - xh[i] * mgx));
      }
    }
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  return unary(x, [](S v) { return v > S(0) ? v : S(0); }, [](S y) { return y > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  return unary(x, [slope](S v) { return v > S(0) ? v : slope * v; },
               [slope](S y) { return y > S(0) ? S(1) : slope; });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  return unary(x, [](S v) { return std::tanh(v); }, [](S y) { return S(1) - y * y; });
}

namespace {
template <typename S>
S logistic(S v) {
  return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
}
}  // namespace

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return unary(x, [](S v) { return logistic(v); }, [](S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> channel_activation(const Var<S>& x, const std::vector<Activation>& per_channel) {
  const Shape5& s = x.shape();
  if (static_cast<Index>(per_channel.size()) != s[1]) throw ValidationError("channel_activation", "one activation per channel");
  const Index L = x.value().spatial();
  Tensor<S> y(s);
  for (Index n = 0; n < s[0]; ++n)
    for (Index c = 0; c < s[1]; ++c) {
      const S* v = x.value().channel_ptr(n, c);
      S* o = y.channel_ptr(n, c);
      switch (per_channel[static_cast<std::size_t>(c)]) {
        case Activation::identity: std::copy(v, v + L, o); break;
        case Activation::tanh:
          for (Index i = 0; i < L; ++i) o[i] = std::tanh(v[i]);
          break;
        case Activation::sigmoid:
          for (Index i = 0; i < L; ++i) o[i] = logistic(v[i]);
          break;
      }
    }
  return Var<S>::make(std::move(y), {x}, [per_channel, L](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    Tensor<S>& dx = p.ensure_grad();
    const Shape5& s = node.value.shape;
    for (Index n = 0; n < s[0]; ++n)
      for (Index c = 0; c < s[1]; ++c) {
        const S* g = node.grad.channel_ptr(n, c);
        const S* y = node.value.channel_ptr(n, c);
        S* d = dx.channel_ptr(n, c);
        switch (per_channel[static_cast<std::size_t>(c)]) {
          case Activation::identity:
            for (Index i = 0; i < L; ++i) d[i] += g[i];
            break;
          case Activation::tanh:
            for (Index i = 0; i < L; ++i) d[i] += g[i] * (S(1) - y[i] * y[i]);
            break;
          case Activation::sigmoid:
            for (Index i = 0; i < L; ++i) d[i] += g[i] * y[i] * (S(1) - y[i]);
            break;
        }
      }
  });
}

template <typename S>
Var<S> max_pool2(const Var<S>& x) {
  const Shape5& s = x.shape();
  if (s[2] % 2 || s[3] % 2 || s[4] % 2) throw ValidationError("max_pool2", "spatial extents must be even");
  const Shape5 os{s[0], s[1], s[2] / 2, s[3] / 2, s[4] / 2};
  Tensor<S> y(os);
  std::vector<Index> arg(static_cast<std::size_t>(numel(os)));
  const Index Y = s[3], X = s[4];
  Index o = 0;
  for (Index nc = 0; nc < s[0] * s[1]; ++nc) {
    const Index base = nc * s[2] * Y * X;
    for (Index z = 0; z < os[2]; ++z)
      for (Index yy = 0; yy < os[3]; ++yy)
        for (Index xx = 0; xx < os[4]; ++xx, ++o) {
          Index best = base + ((2 * z) * Y + 2 * yy) * X + 2 * xx;
          S bv = x.value().data[best];
          for (Index dz = 0; dz < 2; ++dz)
            for (Index dy = 0; dy < 2; ++dy)
              for (Index dx = 0; dx < 2; ++dx) {
                const Index i = base + ((2 * z + dz) * Y + 2 * yy + dy) * X + 2 * xx + dx;
                if (x.value().data[i] > bv) {
                  bv = x.value().data[i];
                  best = i;
                }
              }
          y.data[o] = bv;
          arg[static_cast<std::size_t>(o)] = best;
        }
  }
  return Var<S>::make(std::move(y), {x}, [arg](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    Tensor<S>& dx = p.ensure_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) dx.data[arg[o]] += node.grad.data[static_cast<Index>(o)];
  });
}

namespace {

// One axis of the 2x linear upsampling; `in` is (outer, L, inner).
template <typename S>
void upsample_axis(const S* in, S* out, Index outer, Index L, Index inner) {
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < L; ++i) {
      const S* a = in + (o * L + i) * inner;
      const S* lo = in + (o * L + std::max<Index>(i - 1, 0)) * inner;
      const S* hi = in + (o * L + std::min<Index>(i + 1, L - 1)) * inner;
      S* d0 = out + (o * 2 * L + 2 * i) * inner;
      S* d1 = d0 + inner;
      for (Index k = 0; k < inner; ++k) {
        d0[k] = S(0.75) * a[k] + S(0.25) * lo[k];
        d1[k] = S(0.75) * a[k] + S(0.25) * hi[k];
      }
    }
}

template <typename S>
void upsample_axis_adjoint(const S* gout, S* gin, Index outer, Index L, Index inner) {
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < L; ++i) {
      S* a = gin + (o * L + i) * inner;
      S* lo = gin + (o * L + std::max<Index>(i - 1, 0)) * inner;
      S* hi = gin + (o * L + std::min<Index>(i + 1, L - 1)) * inner;
      const S* g0 = gout + (o * 2 * L + 2 * i) * inner;
      const S* g1 = g0 + inner;
      for (Index k = 0; k < inner; ++k) {
        a[k] += S(0.75) * (g0[k] + g1[k]);
        lo[k] += S(0.25) * g0[k];
        hi[k] += S(0.25) * g1[k];
      }
    }
}

}  // namespace

template <typename S>
Var<S> upsample2(const Var<S>& x) {
  const Shape5 s = x.shape();
  const Index NC = s[0] * s[1], Z = s[2], Y = s[3], X = s[4];
  std::vector<S> t1(static_cast<std::size_t>(NC * Z * Y * 2 * X)), t2(static_cast<std::size_t>(NC * Z * 2 * Y * 2 * X));
  Tensor<S> y({s[0], s[1], 2 * Z, 2 * Y, 2 * X});
  upsample_axis(x.value().data.data(), t1.data(), NC * Z * Y, X, 1);
  upsample_axis(t1.data(), t2.data(), NC * Z, Y, 2 * X);
  upsample_axis(t2.data(), y.data.data(), NC, Z, 4 * X * Y);
  return Var<S>::make(std::move(y), {x}, [NC, Z, Y, X](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    std::vector<S> g2(static_cast<std::size_t>(NC * Z * 2 * Y * 2 * X), S(0)), g1(static_cast<std::size_t>(NC * Z * Y * 2 * X), S(0));
    upsample_axis_adjoint(node.grad.data.data(), g2.data(), NC, Z, 4 * X * Y);
    upsample_axis_adjoint(g2.data(), g1.data(), NC * Z, Y, 2 * X);
    upsample_axis_adjoint(g1.data(), p.ensure_grad().data.data(), NC * Z * Y, X, 1);
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<S> y(a.shape());
  y.data = a.value().data + b.value().data;
  return Var<S>::make(std::move(y), {a, b}, [](Node<S>& n) {
    accumulate(*n.parents[0], n.grad.data);
    accumulate(*n.parents[1], n.grad.data);
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> y(a.shape());
  y.data = a.value().data * factor;
  return Var<S>::make(std::move(y), {a}, [factor](Node<S>& n) {
    Node<S>& p = *n.parents[0];
    if (p.requires_grad) p.ensure_grad().data += n.grad.data * factor;
  });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ValidationError("concat_channels", "nothing to concatenate");
  Shape5 s = parts.front().shape();
  Index total = 0;
  for (const Var<S>& v : parts) {
    const Shape5& t = v.shape();
    if (t[0] != s[0] || t[2] != s[2] || t[3] != s[3] || t[4] != s[4])
      throw ValidationError("concat_channels", "batch or spatial shape mismatch");
    total += t[1];
  }
  s[1] = total;
  Tensor<S> y(s);
  const Index L = y.spatial();
  std::vector<Index> channels;
  for (Index n = 0; n < s[0]; ++n) {
    Index c0 = 0;
    for (const Var<S>& v : parts) {
      const Index c = v.shape()[1];
      std::copy(v.value().channel_ptr(n, 0), v.value().channel_ptr(n, 0) + c * L, y.channel_ptr(n, c0));
      c0 += c;
    }
  }
  for (const Var<S>& v : parts) channels.push_back(v.shape()[1]);
  return Var<S>::make(std::move(y), parts, [channels, L](Node<S>& node) {
    const Index N = node.value.shape[0];
    for (Index n = 0; n < N; ++n) {
      Index c0 = 0;
      for (std::size_t k = 0; k < channels.size(); ++k) {
        Node<S>& p = *node.parents[k];
        if (p.requires_grad) {
          const S* g = node.grad.channel_ptr(n, c0);
          S* d = p.ensure_grad().channel_ptr(n, 0);
          for (Index i = 0; i < channels[k] * L; ++i) d[i] += g[i];
        }
        c0 += channels[k];
      }
    }
  });
}

template <typename S>
Var<S> slice_channels(const Var<S>& x, Index begin, Index count) {
  Shape5 s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s[1]) throw ValidationError("slice_channels", "channel range out of bounds");
  s[1] = count;
  Tensor<S> y(s);
  const Index L = y.spatial();
  for (Index n = 0; n < s[0]; ++n)
    std::copy(x.value().channel_ptr(n, begin), x.value().channel_ptr(n, begin) + count * L, y.channel_ptr(n, 0));
  return Var<S>::make(std::move(y), {x}, [begin, count, L](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    Tensor<S>& dx = p.ensure_grad();
    for (Index n = 0; n < node.value.shape[0]; ++n) {
      const S* g = node.grad.channel_ptr(n, 0);
      S* d = dx.channel_ptr(n, begin);
      for (Index i = 0; i < count * L; ++i) d[i] += g[i];
    }
  });
}

namespace {

template <typename S>
void require_nonempty(const Var<S>& a, const char* op) {
  if (a.value().numel() == 0) throw ValidationError(op, "empty input");
}

}  // namespace

template <typename S>
Var<S> mean_abs_error(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs_error");
  require_nonempty(a, "mean_abs_error");
  const Index n = a.value().numel();
  double sum = 0;
  for (Index i = 0; i < n; ++i) sum += std::abs(static_cast<double>(a.value().data[i]) - b.value().data[i]);
  return Var<S>::make(Tensor<S>::scalar(static_cast<S>(sum / n)), {a, b}, [n](Node<S>& node) {
    const S g = node.grad.item() / static_cast<S>(n);
    Node<S>& pa = *node.parents[0];
    Node<S>& pb = *node.parents[1];
    const auto diff = (pa.value.data - pb.value.data).array();
    const auto sgn = diff.sign();
    if (pa.requires_grad) pa.ensure_grad().data.array() += g * sgn;
    if (pb.requires_grad) pb.ensure_grad().data.array() -= g * sgn;
  });
}

template <typename S>
Var<S> mean_squared_error(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_squared_error");
  require_nonempty(a, "mean_squared_error");
  const Index n = a.value().numel();
  double sum = 0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value().data[i]) - b.value().data[i];
    sum += d * d;
  }
  return Var<S>::make(Tensor<S>::scalar(static_cast<S>(sum / n)), {a, b}, [n](Node<S>& node) {
    const S g = S(2) * node.grad.item() / static_cast<S>(n);
    Node<S>& pa = *node.parents[0];
    Node<S>& pb = *node.parents[1];
    const auto diff = (pa.value.data - pb.value.data).array();
    if (pa.requires_grad) pa.ensure_grad().data.array() += g * diff;
    if (pb.requires_grad) pb.ensure_grad().data.array() -= g * diff;
  });
}

template <typename S>
Var<S> mean_squared_to_constant(const Var<S>& a, S c) {
  require_nonempty(a, "mean_squared_to_constant");
  const Index n = a.value().numel();
  double sum = 0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value().data[i]) - c;
    sum += d * d;
  }
  return Var<S>::make(Tensor<S>::scalar(static_cast<S>(sum / n)), {a}, [n, c](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    const S g = S(2) * node.grad.item() / static_cast<S>(n);
    p.ensure_grad().data.array() += g * (p.value.data.array() - c);
  });
}

template <typename S>
Var<S> binary_cross_entropy(const Var<S>& p, const Var<S>& t, S eps, Index* clamped) {
  require_same_shape(p.shape(), t.shape(), "binary_cross_entropy");
  require_nonempty(p, "binary_cross_entropy");
  const Index n = p.value().numel();
  double sum = 0;
  Index clipped = 0;
  for (Index i = 0; i < n; ++i) {
    const double raw = p.value().data[i];
    const double q = std::clamp(raw, static_cast<double>(eps), 1.0 - static_cast<double>(eps));
    clipped += q != raw;
    const double tv = t.value().data[i];
    sum -= tv * std::log(q) + (1.0 - tv) * std::log1p(-q);
  }
  if (clamped) *clamped = clipped;
  return Var<S>::make(Tensor<S>::scalar(static_cast<S>(sum / n)), {p, t}, [n, eps](Node<S>& node) {
    Node<S>& pp = *node.parents[0];
    const Node<S>& pt = *node.parents[1];
    if (!pp.requires_grad) return;
    const S g = node.grad.item() / static_cast<S>(n);
    Tensor<S>& d = pp.ensure_grad();
    for (Index i = 0; i < n; ++i) {
      const S q = pp.value.data[i];
      if (q < eps || q > S(1) - eps) continue;
      const S tv = pt.value.data[i];
      d.data[i] += g * (-tv / q + (S(1) - tv) / (S(1) - q));
    }
  });
}

template <typename S>
Var<S> mean_softplus(const Var<S>& a, S sign) {
  require_nonempty(a, "mean_softplus");
  const Index n = a.value().numel();
  double sum = 0;
  for (Index i = 0; i < n; ++i) {
    const double z = sign * static_cast<double>(a.value().data[i]);
    sum += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  }
  return Var<S>::make(Tensor<S>::scalar(static_cast<S>(sum / n)), {a}, [n, sign](Node<S>& node) {
    Node<S>& p = *node.parents[0];
    if (!p.requires_grad) return;
    const S g = node.grad.item() / static_cast<S>(n);
    Tensor<S>& d = p.ensure_grad();
    for (Index i = 0; i < n; ++i) d.data[i] += g * sign * logistic(sign * p.value.data[i]);
  });
}

#define CYSGAN_INSTANTIATE_OPS(S)                                                                   \
  template Var<S> conv3d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvGeometry&);         \
  template Var<S> normalize(const Var<S>&, bool, S);                                                \
  template Var<S> relu(const Var<S>&);                                                              \
  template Var<S> leaky_relu(const Var<S>&, S);                                                     \
  template Var<S> tanh(const Var<S>&);                                                              \
  template Var<S> sigmoid(const Var<S>&);                                                           \
  template Var<S> channel_activation(const Var<S>&, const std::vector<Activation>&);                \
  template Var<S> max_pool2(const Var<S>&);                                                         \
  template Var<S> upsample2(const Var<S>&);                                                         \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                \
  template Var<S> scale(const Var<S>&, S);                                                          \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                      \
  template Var<S> slice_channels(const Var<S>&, Index, Index);                                      \
  template Var<S> mean_abs_error(const Var<S>&, const Var<S>&);                                     \
  template Var<S> mean_squared_error(const Var<S>&, const Var<S>&);                                 \
  template Var<S> mean_squared_to_constant(const Var<S>&, S);                                       \
  template Var<S> binary_cross_entropy(const Var<S>&, const Var<S>&, S, Index*);                    \
  template Var<S> mean_softplus(const Var<S>&, S);

CYSGAN_INSTANTIATE_OPS(float)
CYSGAN_INSTANTIATE_OPS(double)

}  // namespace cysgan::nn
