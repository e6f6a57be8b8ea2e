#pragma once

#include <array>

#include "cysgan/grid.hpp"

namespace cysgan {

/// Separable Gaussian smoothing with per-axis sigma (voxels, z/y/x); a zero
/// sigma leaves that axis untouched. Borders are mirrored.
Grid3<float> gaussian_blur(const Grid3<float>& in, const std::array<double, 3>& sigma);

}  // namespace cysgan
