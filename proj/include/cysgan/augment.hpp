#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "cysgan/grid.hpp"
#include "cysgan/volume.hpp"

namespace cysgan {

struct AugmentConfig {
  double p_missing_section = 0.3;
  double p_blur_region = 0.3;
  double p_noise_region = 0.3;
  double max_region_fraction = 0.25;  ///< upper bound on a corrupted box's share of the patch volume
  std::array<double, 2> blur_sigma_range{1.0, 2.5};
  std::array<double, 2> noise_sigma_range{0.05, 0.15};
  bool enable_flips_rotations = true;

  void validate() const;
};

/// Grid-preserving transform: optional flips per axis followed by `rot90`
/// quarter turns in the y/x plane.
struct SpatialTransform {
  bool flip_z = false;
  bool flip_y = false;
  bool flip_x = false;
  int rot90 = 0;

  bool is_identity() const { return !flip_z && !flip_y && !flip_x && rot90 % 4 == 0; }
  /// Draws a transform from `seed`. Odd quarter turns are only drawn when the
  /// y and x extents match, so the patch shape is preserved.
  static SpatialTransform random(std::uint64_t seed, Shape3 shape);
};

/// Applies `t` to a grid. Odd quarter turns on a non-square plane throw.
template <typename T>
Grid3<T> apply_transform(const Grid3<T>& in, const SpatialTransform& t) {
  const Shape3 s = in.shape();
  const int r = ((t.rot90 % 4) + 4) % 4;
  if ((r % 2) && s.y != s.x) throw ValidationError("rot90", "quarter turn needs a square y/x plane");
  Grid3<T> out(s);
  for (Index z = 0; z < s.z; ++z)
    for (Index y = 0; y < s.y; ++y)
      for (Index x = 0; x < s.x; ++x) {
        // Source of output voxel (z, y, x): undo the rotation, then the flips.
        Index sy = y, sx = x;
        switch (r) {
          case 1: sy = x; sx = s.x - 1 - y; break;
          case 2: sy = s.y - 1 - y; sx = s.x - 1 - x; break;
          case 3: sy = s.y - 1 - x; sx = y; break;
          default: break;
        }
        const Index fz = t.flip_z ? s.z - 1 - z : z;
        if (t.flip_y) sy = s.y - 1 - sy;
        if (t.flip_x) sx = s.x - 1 - sx;
        out(z, y, x) = in(fz, sy, sx);
      }
  return out;
}

struct SpatialResult {
  Grid3<float> image;
  std::optional<Grid3<LabelId>> labels;
};

/// Same random flip/rotation applied to the image and (optionally) labels.
SpatialResult spatial_augment(const Grid3<float>& image, const std::optional<Grid3<LabelId>>& labels,
                              std::uint64_t seed);

struct PatchPair {
  Grid3<float> augmented;
  Grid3<float> clean;
  Grid3<std::uint8_t> corruption_mask;
  std::optional<Grid3<LabelId>> labels;
};

/// Photometric corruption of a clean [0, 1] patch: missing z-sections, a
/// blurred box and a noisy box, each drawn with its own probability.
PatchPair corrupt(const Grid3<float>& clean, const AugmentConfig& config, std::uint64_t seed);

}  // namespace cysgan
