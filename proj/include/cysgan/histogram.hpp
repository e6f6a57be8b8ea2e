#pragma once

#include "cysgan/volume.hpp"

namespace cysgan {

/// Classical CDF matching: every source value v maps to the smallest reference
/// value r with F_ref(r) >= F_src(v). Monotone; the output lies in [0, 1].
IntensityVolume histogram_match(const IntensityVolume& source, const IntensityVolume& reference);

/// Kolmogorov-Smirnov distance between two value distributions after binning
/// [0, 1] into `bins` equal bins (max |CDF_a - CDF_b| over bin edges).
double ks_statistic(const Grid3<float>& a, const Grid3<float>& b, int bins = 256);

}  // namespace cysgan
