#pragma once

#include <array>
#include <cstdint>

#include "cysgan/volume.hpp"

namespace cysgan {

/// Per-voxel instance representation: foreground (B), contour (C) and signed
/// distance (D), all on the grid of the label volume they describe.
struct BcdTriple {
  Grid3<float> b;
  Grid3<float> c;
  Grid3<float> d;

  const Shape3& shape() const noexcept { return b.shape(); }
  bool aligned() const noexcept { return b.shape() == c.shape() && b.shape() == d.shape(); }
};

enum class Connectivity : int { face = 6, full = 26 };

struct SeedThresholds {
  float b_min = 0.85f;
  float c_max = 0.15f;
  float d_min = 0.30f;
};

struct CodecParams {
  /// Ellipsoidal contour neighbourhood, voxels in (z, y, x). A zero radius
  /// disables that axis.
  std::array<double, 3> contour_radius{0.0, 1.0, 1.0};
  double d_clip_bg = 8.0;
  SeedThresholds seeds{};
  float mask_threshold = 0.40f;
  Index min_instance_size = 64;
  Connectivity connectivity = Connectivity::face;

  void validate() const;
};

/// Squared Euclidean distance (voxel units) from every voxel to the nearest
/// voxel where `feature` is true; +inf where no feature voxel exists.
Grid3<double> squared_edt(const Grid3<std::uint8_t>& feature);

/// Distance (voxels) from each instance voxel to the nearest voxel carrying a
/// different label; 0 on background.
Grid3<double> instance_distance(const Grid3<LabelId>& labels);

/// D channel: inside instance i the distance to the nearest non-i voxel divided
/// by the instance's maximum (so in (0, 1]); on background minus the distance to
/// the nearest foreground voxel, clipped at d_clip_bg and scaled into [-1, 0).
Grid3<float> signed_distance(const LabelVolume& labels, double d_clip_bg);

BcdTriple encode_bcd(const LabelVolume& labels, const CodecParams& params = {});

/// Maximal components of `mask`, labelled 1..K in raster order of first voxel.
LabelVolume connected_components(const Grid3<std::uint8_t>& mask, Connectivity connectivity);

/// Marker-controlled watershed decoding of a (predicted) triple into instances.
LabelVolume decode_bcd(const BcdTriple& triple, const CodecParams& params = {});

/// Neighbour offsets (dz, dy, dx) for a connectivity.
std::span<const std::array<int, 3>> neighbour_offsets(Connectivity connectivity);

}  // namespace cysgan
