#include "cysgan/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cysgan {

IntensityVolume histogram_match(const IntensityVolume& source, const IntensityVolume& reference) {
  if (source.data.empty() || reference.data.empty())
    throw ValidationError("histogram_match", "volumes must be non-empty");
  std::vector<float> ref(reference.data.values().begin(), reference.data.values().end());
  std::sort(ref.begin(), ref.end());
  std::vector<float> src(source.data.values().begin(), source.data.values().end());
  std::sort(src.begin(), src.end());

  const auto n_src = static_cast<double>(src.size());
  const auto n_ref = static_cast<double>(ref.size());
  IntensityVolume out{Grid3<float>(source.shape()), source.voxel_size};
  // Walk the distinct source values in order; each maps through ref_CDF^-1(src_CDF(v)).
  std::vector<std::pair<float, float>> table;
  for (std::size_t i = 0; i < src.size();) {
    std::size_t j = i;
    while (j < src.size() && src[j] == src[i]) ++j;
    const double level = static_cast<double>(j) / n_src;  // F_src(v) = #(<= v) / N
    // Smallest k with (k + 1) / N_ref >= level.
    auto k = static_cast<std::size_t>(std::ceil(level * n_ref - 1e-9));
    k = std::clamp<std::size_t>(k, 1, ref.size()) - 1;
    table.emplace_back(src[i], ref[k]);
    i = j;
  }
  for (Index i = 0; i < out.data.size(); ++i) {
    const float v = source.data[i];
    const auto it = std::lower_bound(table.begin(), table.end(), v,
                                     [](const auto& e, float x) { return e.first < x; });
    out.data[i] = std::clamp(it->second, 0.f, 1.f);
  }
  return out;
}

double ks_statistic(const Grid3<float>& a, const Grid3<float>& b, int bins) {
  const auto histogram = [bins](const Grid3<float>& g) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (const float v : g.values()) {
      const int k = std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
      h[static_cast<std::size_t>(k)] += 1.0;
    }
    for (double& x : h) x /= static_cast<double>(g.size());
    return h;
  };
  const auto ha = histogram(a), hb = histogram(b);
  double ca = 0, cb = 0, worst = 0;
  for (int k = 0; k < bins; ++k) {
    ca += ha[static_cast<std::size_t>(k)];
    cb += hb[static_cast<std::size_t>(k)];
    worst = std::max(worst, std::abs(ca - cb));
  }
  return worst;
}

}  // namespace cysgan
