#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <ostream>
#include <span>

#include "cysgan/error.hpp"

namespace cysgan {

using Index = std::int64_t;

/// Extent of a dense 3D grid in (z, y, x) order.
struct Shape3 {
  Index z = 0;
  Index y = 0;
  Index x = 0;

  constexpr Index size() const noexcept { return z * y * x; }
  constexpr Index operator[](int axis) const noexcept { return axis == 0 ? z : (axis == 1 ? y : x); }
  constexpr Index& operator[](int axis) noexcept { return axis == 0 ? z : (axis == 1 ? y : x); }
  constexpr bool operator==(const Shape3&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape3& s) {
  return os << "(" << s.z << ", " << s.y << ", " << s.x << ")";
}

/// Dense scalar grid stored contiguously with x fastest. Backed by an Eigen
/// column array so whole-grid arithmetic can use Eigen expressions via array().
template <typename T>
class Grid3 {
 public:
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Grid3() = default;
  explicit Grid3(Shape3 shape) : shape_(shape), data_(shape.size()) {}
  Grid3(Shape3 shape, T fill) : shape_(shape), data_(Storage::Constant(shape.size(), fill)) {}

  const Shape3& shape() const noexcept { return shape_; }
  Index size() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return size() == 0; }

  Index index(Index z, Index y, Index x) const noexcept { return (z * shape_.y + y) * shape_.x + x; }
  bool contains(Index z, Index y, Index x) const noexcept {
    return z >= 0 && y >= 0 && x >= 0 && z < shape_.z && y < shape_.y && x < shape_.x;
  }

  T& operator()(Index z, Index y, Index x) noexcept { return data_[index(z, y, x)]; }
  const T& operator()(Index z, Index y, Index x) const noexcept { return data_[index(z, y, x)]; }
  T& operator[](Index i) noexcept { return data_[i]; }
  const T& operator[](Index i) const noexcept { return data_[i]; }

  Storage& array() noexcept { return data_; }
  const Storage& array() const noexcept { return data_; }
  std::span<T> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const T> values() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v) { data_.setConstant(v); }

  bool operator==(const Grid3& other) const {
    return shape_ == other.shape_ && (data_ == other.data_).all();
  }

  template <typename U>
  Grid3<U> cast() const {
    Grid3<U> out(shape_);
    out.array() = data_.template cast<U>();
    return out;
  }

 private:
  Shape3 shape_{};
  Storage data_;
};

/// Copies the box [origin, origin + extent) out of `src`.
template <typename T>
Grid3<T> crop(const Grid3<T>& src, const std::array<Index, 3>& origin, Shape3 extent) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + extent[a] > src.shape()[a]) throw Error("crop: box outside grid");
  }
  Grid3<T> out(extent);
  for (Index z = 0; z < extent.z; ++z)
    for (Index y = 0; y < extent.y; ++y) {
      const T* row = &src(origin[0] + z, origin[1] + y, origin[2]);
      std::copy(row, row + extent.x, &out(z, y, 0));
    }
  return out;
}

}  // namespace cysgan
