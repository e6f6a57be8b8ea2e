#include "cysgan/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cysgan/filters.hpp"

namespace cysgan {

void AugmentConfig::validate() const {
  const auto prob = [](const char* name, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string("AugmentConfig.") + name, "must lie in [0, 1]");
  };
  prob("p_missing_section", p_missing_section);
  prob("p_blur_region", p_blur_region);
  prob("p_noise_region", p_noise_region);
  if (!(max_region_fraction > 0.0 && max_region_fraction <= 1.0))
    throw ValidationError("AugmentConfig.max_region_fraction", "must lie in (0, 1]");
  const auto range = [](const char* name, const std::array<double, 2>& r) {
    if (!(r[0] >= 0.0 && r[1] >= r[0])) throw ValidationError(std::string("AugmentConfig.") + name, "needs 0 <= lo <= hi");
  };
  range("blur_sigma_range", blur_sigma_range);
  range("noise_sigma_range", noise_sigma_range);
}

SpatialTransform SpatialTransform::random(std::uint64_t seed, Shape3 shape) {
  std::mt19937_64 rng(seed);
  SpatialTransform t;
  t.flip_z = rng() & 1u;
  t.flip_y = rng() & 1u;
  t.flip_x = rng() & 1u;
  t.rot90 = static_cast<int>(rng() % 4);
  if (shape.y != shape.x) t.rot90 &= 2;
  return t;
}

SpatialResult spatial_augment(const Grid3<float>& image, const std::optional<Grid3<LabelId>>& labels,
                              std::uint64_t seed) {
  if (labels && labels->shape() != image.shape())
    throw ValidationError("labels", "label patch shape differs from image patch");
  const SpatialTransform t = SpatialTransform::random(seed, image.shape());
  SpatialResult r{apply_transform(image, t), std::nullopt};
  if (labels) r.labels = apply_transform(*labels, t);
  return r;
}

namespace {

struct Box {
  std::array<Index, 3> lo;
  std::array<Index, 3> hi;
};

Box random_box(Shape3 s, double fraction, std::mt19937_64& rng) {
  const double side = std::cbrt(fraction);
  Box b{};
  for (int a = 0; a < 3; ++a) {
    const Index max_ext = std::max<Index>(1, static_cast<Index>(std::floor(side * static_cast<double>(s[a]))));
    const Index ext = 1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(max_ext));
    b.lo[a] = static_cast<Index>(rng() % static_cast<std::uint64_t>(s[a] - ext + 1));
    b.hi[a] = b.lo[a] + ext;
  }
  return b;
}

template <typename F>
void for_box(const Box& b, F&& f) {
  for (Index z = b.lo[0]; z < b.hi[0]; ++z)
    for (Index y = b.lo[1]; y < b.hi[1]; ++y)
      for (Index x = b.lo[2]; x < b.hi[2]; ++x) f(z, y, x);
}

double uniform(std::mt19937_64& rng, const std::array<double, 2>& r) {
  return std::uniform_real_distribution<double>(r[0], r[1])(rng);
}

}  // namespace

PatchPair corrupt(const Grid3<float>& clean, const AugmentConfig& config, std::uint64_t seed) {
  config.validate();
  const Shape3 s = clean.shape();
  PatchPair out{clean, clean, Grid3<std::uint8_t>(s, 0), std::nullopt};
  if (clean.empty()) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  // Draws happen unconditionally so each corruption's randomness does not
  // depend on whether the others fired.
  const bool missing = coin(rng) < config.p_missing_section;
  const Index section = static_cast<Index>(rng() % static_cast<std::uint64_t>(s.z));
  const bool blur = coin(rng) < config.p_blur_region;
  const Box blur_box = random_box(s, config.max_region_fraction, rng);
  const double blur_sigma = uniform(rng, config.blur_sigma_range);
  const bool noise = coin(rng) < config.p_noise_region;
  const Box noise_box = random_box(s, config.max_region_fraction, rng);
  const double noise_sigma = uniform(rng, config.noise_sigma_range);
  const std::uint64_t noise_seed = rng();

  Grid3<float>& img = out.augmented;
  if (missing) {
    for (Index y = 0; y < s.y; ++y)
      for (Index x = 0; x < s.x; ++x) {
        img(section, y, x) = 0.f;
        out.corruption_mask(section, y, x) = 1;
      }
  }
  if (blur && blur_sigma > 0) {
    const Grid3<float> smooth = gaussian_blur(img, {blur_sigma, blur_sigma, blur_sigma});
    for_box(blur_box, [&](Index z, Index y, Index x) {
      img(z, y, x) = smooth(z, y, x);
      out.corruption_mask(z, y, x) = 1;
    });
  }
  if (noise) {
    std::mt19937_64 nrng(noise_seed);
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for_box(noise_box, [&](Index z, Index y, Index x) {
      img(z, y, x) = static_cast<float>(std::clamp(img(z, y, x) + gauss(nrng), 0.0, 1.0));
      out.corruption_mask(z, y, x) = 1;
    });
  }
  return out;
}

}  // namespace cysgan
