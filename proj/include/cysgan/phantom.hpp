#pragma once

#include <array>
#include <cstdint>

#include "cysgan/volume.hpp"

namespace cysgan {

/// Monotone transfer from normalized interior depth t in [0, 1] to intensity:
/// background + (foreground - background) * t^gamma.
struct ToneCurve {
  float background = 0.3f;
  float foreground = 0.7f;
  float gamma = 1.0f;

  float operator()(float t) const;
};

struct RenderStyle {
  ToneCurve tone{};
  float texture_amplitude = 0.0f;     ///< fine multiplicative-free texture inside nuclei
  float background_texture = 0.0f;    ///< same texture field, outside nuclei
  float rim_width = 0.0f;             ///< voxels of darkened rim just inside each nucleus
  float rim_depth = 0.0f;             ///< intensity subtracted on the rim
  float halo_width = 0.0f;            ///< decay length (voxels) of the glow around nuclei
  float halo_strength = 0.0f;
  std::array<double, 3> blur_sigma{0.0, 0.0, 0.0};
  float noise_sigma = 0.0f;

  /// Bright interior, dark rim, fine texture, sharp (EM-like).
  static RenderStyle electron_like();
  /// Dimmer nuclei with a halo, anisotropic blur and more noise (ExM-like).
  static RenderStyle expansion_like();
};

struct PhantomConfig {
  Shape3 shape{32, 64, 64};
  int n_instances = 20;
  std::array<double, 2> radius_range{3.5, 6.0};
  double z_radius_scale = 1.0;
  bool allow_touching = false;
  double touch_fraction = 0.0;
  RenderStyle style_a = RenderStyle::electron_like();
  RenderStyle style_b = RenderStyle::expansion_like();
  std::uint64_t seed = 0;
  VoxelSize voxel_size{};

  void validate() const;
};

struct Phantom {
  LabelVolume labels;
  IntensityVolume domain_a;
  IntensityVolume domain_b;
};

/// Random ellipsoidal nuclei rendered in two styles over one shared geometry.
/// Throws Error when the instances cannot be packed.
Phantom make_phantom(const PhantomConfig& config);

/// Renders an existing label geometry in `style`; `seed` drives texture and noise.
IntensityVolume render(const LabelVolume& labels, const RenderStyle& style, std::uint64_t seed);

/// Number of instances sharing at least one face with a different instance.
int count_touching(const LabelVolume& labels);

}  // namespace cysgan
