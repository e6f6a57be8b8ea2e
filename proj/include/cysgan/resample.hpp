#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <type_traits>

#include "cysgan/volume.hpp"

namespace cysgan {

/// Exact positive scale factor num/den.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  constexpr double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  constexpr Rational inverse() const { return {den, num}; }
};

using ScaleFactors = std::array<Rational, 3>;

enum class Interpolation { nearest, trilinear };

/// round(extent * factor), computed exactly; at least 1.
inline Index scaled_extent(Index extent, Rational f) {
  const std::int64_t n = extent * f.num;
  const Index out = static_cast<Index>((2 * n + f.den) / (2 * f.den));
  return std::max<Index>(out, 1);
}

inline Shape3 scaled_shape(Shape3 s, const ScaleFactors& f) {
  return {scaled_extent(s.z, f[0]), scaled_extent(s.y, f[1]), scaled_extent(s.x, f[2])};
}

namespace detail {

/// Source index of output sample `o` under nearest-neighbour sampling of voxel centers.
inline Index nearest_source(Index o, Rational f, Index extent) {
  const std::int64_t src = ((2 * o + 1) * f.den) / (2 * f.num);
  return std::clamp<Index>(src, 0, extent - 1);
}

struct LinearTap {
  Index lo = 0;
  Index hi = 0;
  double w = 0;  // weight of `hi`
};

inline LinearTap linear_source(Index o, Rational f, Index extent) {
  const double pos = (static_cast<double>(o) + 0.5) / f.value() - 0.5;
  const double c = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
  const Index lo = static_cast<Index>(std::floor(c));
  const Index hi = std::min<Index>(lo + 1, extent - 1);
  return {lo, hi, c - static_cast<double>(lo)};
}

template <typename T>
Grid3<T> resample_nearest(const Grid3<T>& in, const ScaleFactors& f) {
  const Shape3 is = in.shape();
  const Shape3 os = scaled_shape(is, f);
  Grid3<T> out(os);
  std::vector<Index> sx(static_cast<std::size_t>(os.x));
  for (Index x = 0; x < os.x; ++x) sx[static_cast<std::size_t>(x)] = nearest_source(x, f[2], is.x);
  for (Index z = 0; z < os.z; ++z) {
    const Index zz = nearest_source(z, f[0], is.z);
    for (Index y = 0; y < os.y; ++y) {
      const T* row = &in(zz, nearest_source(y, f[1], is.y), 0);
      T* dst = &out(z, y, 0);
      for (Index x = 0; x < os.x; ++x) dst[x] = row[sx[static_cast<std::size_t>(x)]];
    }
  }
  return out;
}

template <typename T>
Grid3<T> resample_trilinear(const Grid3<T>& in, const ScaleFactors& f) {
  const Shape3 is = in.shape();
  const Shape3 os = scaled_shape(is, f);
  Grid3<T> out(os);
  std::vector<LinearTap> tx(static_cast<std::size_t>(os.x));
  for (Index x = 0; x < os.x; ++x) tx[static_cast<std::size_t>(x)] = linear_source(x, f[2], is.x);
  const auto at = [&](Index z, Index y, Index x) { return static_cast<double>(in(z, y, x)); };
  for (Index z = 0; z < os.z; ++z) {
    const LinearTap tz = linear_source(z, f[0], is.z);
    for (Index y = 0; y < os.y; ++y) {
      const LinearTap ty = linear_source(y, f[1], is.y);
      for (Index x = 0; x < os.x; ++x) {
        const LinearTap& t = tx[static_cast<std::size_t>(x)];
        const auto plane = [&](Index zz) {
          const double a = at(zz, ty.lo, t.lo) * (1 - t.w) + at(zz, ty.lo, t.hi) * t.w;
          const double b = at(zz, ty.hi, t.lo) * (1 - t.w) + at(zz, ty.hi, t.hi) * t.w;
          return a * (1 - ty.w) + b * ty.w;
        };
        const double v = plane(tz.lo) * (1 - tz.w) + plane(tz.hi) * tz.w;
        if constexpr (std::is_integral_v<T>) out(z, y, x) = static_cast<T>(std::lround(v));
        else out(z, y, x) = static_cast<T>(v);
      }
    }
  }
  return out;
}

inline void check_factors(const ScaleFactors& f) {
  for (const auto& r : f)
    if (r.num <= 0 || r.den <= 0) throw ValidationError("factors", "resample factors must be positive");
}

}  // namespace detail

/// Rescales an intensity volume; output dims are round(input dims * factors).
template <typename S>
BasicIntensityVolume<S> resample(const BasicIntensityVolume<S>& vol, const ScaleFactors& f, Interpolation order) {
  detail::check_factors(f);
  BasicIntensityVolume<S> out;
  out.data = order == Interpolation::nearest ? detail::resample_nearest(vol.data, f)
                                             : detail::resample_trilinear(vol.data, f);
  out.voxel_size = {vol.voxel_size.z / f[0].value(), vol.voxel_size.y / f[1].value(),
                    vol.voxel_size.x / f[2].value()};
  return out;
}

/// Rescales a label volume. Only nearest sampling is defined for labels, so no
/// new ids can appear.
template <typename Id>
BasicLabelVolume<Id> resample(const BasicLabelVolume<Id>& vol, const ScaleFactors& f, Interpolation order) {
  detail::check_factors(f);
  if (order != Interpolation::nearest)
    throw ValidationError("order", "label volumes can only be resampled with nearest interpolation");
  BasicLabelVolume<Id> out;
  out.data = detail::resample_nearest(vol.data, f);
  out.voxel_size = {vol.voxel_size.z / f[0].value(), vol.voxel_size.y / f[1].value(),
                    vol.voxel_size.x / f[2].value()};
  return out;
}

}  // namespace cysgan
