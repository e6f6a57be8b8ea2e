#include "cysgan/phantom.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "cysgan/bcd.hpp"
#include "cysgan/filters.hpp"

namespace cysgan {
namespace {

struct Ellipsoid {
  Eigen::Vector3d center;
  Eigen::Vector3d radii;
  Eigen::Matrix3d rotation;  // columns are the principal axes

  /// Distance from the center to the surface along unit direction u.
  double extent(const Eigen::Vector3d& u) const {
    const Eigen::Vector3d local = rotation.transpose() * u;
    return 1.0 / std::sqrt((local.array() / radii.array()).square().sum());
  }
  bool contains(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d local = rotation.transpose() * (p - center);
    return (local.array() / radii.array()).square().sum() <= 1.0;
  }
};

std::vector<Index> rasterize(const Ellipsoid& e, Shape3 s) {
  const double r = e.radii.maxCoeff();
  std::vector<Index> out;
  for (Index z = static_cast<Index>(std::floor(e.center[0] - r)); z <= static_cast<Index>(std::ceil(e.center[0] + r)); ++z)
    for (Index y = static_cast<Index>(std::floor(e.center[1] - r)); y <= static_cast<Index>(std::ceil(e.center[1] + r)); ++y)
      for (Index x = static_cast<Index>(std::floor(e.center[2] - r)); x <= static_cast<Index>(std::ceil(e.center[2] + r)); ++x) {
        if (z < 0 || y < 0 || x < 0 || z >= s.z || y >= s.y || x >= s.x) continue;
        if (e.contains(Eigen::Vector3d(double(z), double(y), double(x)))) out.push_back((z * s.y + y) * s.x + x);
      }
  return out;
}

bool six_connected(const std::vector<Index>& voxels, Shape3 s) {
  if (voxels.empty()) return false;
  std::set<Index> remaining(voxels.begin(), voxels.end());
  std::vector<Index> stack{voxels.front()};
  remaining.erase(voxels.front());
  while (!stack.empty()) {
    const Index i = stack.back();
    stack.pop_back();
    const Index z = i / (s.y * s.x), y = (i / s.x) % s.y, x = i % s.x;
    for (const auto& o : neighbour_offsets(Connectivity::face)) {
      const Index zz = z + o[0], yy = y + o[1], xx = x + o[2];
      if (zz < 0 || yy < 0 || xx < 0 || zz >= s.z || yy >= s.y || xx >= s.x) continue;
      const auto it = remaining.find((zz * s.y + yy) * s.x + xx);
      if (it != remaining.end()) {
        stack.push_back(*it);
        remaining.erase(it);
      }
    }
  }
  return remaining.empty();
}

class Packer {
 public:
  Packer(const PhantomConfig& cfg) : cfg_(cfg), labels_(cfg.shape, 0), rng_(cfg.seed) {}

  LabelVolume run() {
    const int target_touching = cfg_.allow_touching
                                    ? static_cast<int>(std::lround(cfg_.touch_fraction * cfg_.n_instances))
                                    : 0;
    for (int k = 0; k < cfg_.n_instances; ++k) {
      const LabelId id = static_cast<LabelId>(k + 1);
      const int touching = static_cast<int>(touching_.size());
      const int remaining = cfg_.n_instances - k;
      bool placed = false;
      // A pair of new contacts costs one placement against an isolated partner;
      // a single missing contact joins an already touching instance.
      const int missing = target_touching - touching;
      if (missing >= 2 || (missing == 1 && !touching_.empty()) || (missing > 0 && remaining <= missing)) {
        placed = place_touching(id, missing >= 2 || touching_.empty());
      }
      if (!placed) placed = place_isolated(id);
      if (!placed) throw Error("make_phantom: infeasible packing, could not place instance " + std::to_string(id));
    }
    LabelVolume out{std::move(labels_), cfg_.voxel_size};
    return out;
  }

 private:
  Ellipsoid random_ellipsoid() {
    std::uniform_real_distribution<double> radius(cfg_.radius_range[0], cfg_.radius_range[1]);
    std::normal_distribution<double> gauss;
    Ellipsoid e;
    e.radii = {radius(rng_) * cfg_.z_radius_scale, radius(rng_), radius(rng_)};
    Eigen::Quaterniond q(gauss(rng_), gauss(rng_), gauss(rng_), gauss(rng_));
    q.normalize();
    e.rotation = q.toRotationMatrix();
    return e;
  }

  Eigen::Vector3d random_center(double margin) {
    Eigen::Vector3d c;
    for (int a = 0; a < 3; ++a) {
      std::uniform_real_distribution<double> u(margin, static_cast<double>(cfg_.shape[a]) - 1 - margin);
      c[a] = u(rng_);
    }
    return c;
  }

  bool inside_volume(const Ellipsoid& e) const {
    const double r = e.radii.maxCoeff();
    for (int a = 0; a < 3; ++a)
      if (e.center[a] - r < 0 || e.center[a] + r > static_cast<double>(cfg_.shape[a] - 1)) return false;
    return true;
  }

  /// Labels of foreground voxels within the 26-neighbourhood of `voxels` (or on them).
  std::set<LabelId> nearby_labels(const std::vector<Index>& voxels) const {
    const Shape3 s = cfg_.shape;
    std::set<LabelId> found;
    for (const Index i : voxels) {
      const Index z = i / (s.y * s.x), y = (i / s.x) % s.y, x = i % s.x;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            if (labels_.contains(z + dz, y + dy, x + dx) && labels_(z + dz, y + dy, x + dx) != 0)
              found.insert(labels_(z + dz, y + dy, x + dx));
    }
    return found;
  }

  bool place_isolated(LabelId id) {
    for (int attempt = 0; attempt < 4000; ++attempt) {
      Ellipsoid e = random_ellipsoid();
      const double r = e.radii.maxCoeff();
      bool fits = true;
      for (int a = 0; a < 3; ++a) fits &= static_cast<double>(cfg_.shape[a]) - 1 - 2 * r > 0;
      if (!fits) return false;
      e.center = random_center(r);
      const auto voxels = rasterize(e, cfg_.shape);
      if (!nearby_labels(voxels).empty() || !six_connected(voxels, cfg_.shape)) continue;
      commit(id, e, voxels);
      return true;
    }
    return false;
  }

  bool place_touching(LabelId id, bool isolated_partner) {
    std::vector<LabelId> partners;
    for (LabelId p = 1; p < id; ++p)
      if (touching_.contains(p) != isolated_partner) partners.push_back(p);
    if (partners.empty()) return false;
    std::normal_distribution<double> gauss;
    for (int attempt = 0; attempt < 4000; ++attempt) {
      const LabelId partner = partners[rng_() % partners.size()];
      const Ellipsoid& pe = shapes_[partner - 1];
      Ellipsoid e = random_ellipsoid();
      Eigen::Vector3d u(gauss(rng_), gauss(rng_), gauss(rng_));
      u.normalize();
      e.center = pe.center + u * (pe.extent(u) + e.extent(-u) - 1.0);
      if (!inside_volume(e)) continue;
      std::vector<Index> voxels;
      for (const Index i : rasterize(e, cfg_.shape))
        if (labels_[i] != partner) voxels.push_back(i);
      if (voxels.size() < 8) continue;
      const auto near = nearby_labels(voxels);
      if (near != std::set<LabelId>{partner} || !six_connected(voxels, cfg_.shape)) continue;
      if (!shares_face(voxels, partner)) continue;
      // Avoid thin slivers that the contour channel would swallow entirely.
      if (voxels.size() < rasterize(e, cfg_.shape).size() * 6 / 10) continue;
      commit(id, e, voxels);
      touching_.insert(id);
      touching_.insert(partner);
      return true;
    }
    return false;
  }

  bool shares_face(const std::vector<Index>& voxels, LabelId other) const {
    const Shape3 s = cfg_.shape;
    for (const Index i : voxels) {
      const Index z = i / (s.y * s.x), y = (i / s.x) % s.y, x = i % s.x;
      for (const auto& o : neighbour_offsets(Connectivity::face))
        if (labels_.contains(z + o[0], y + o[1], x + o[2]) && labels_(z + o[0], y + o[1], x + o[2]) == other)
          return true;
    }
    return false;
  }

  void commit(LabelId id, const Ellipsoid& e, const std::vector<Index>& voxels) {
    for (const Index i : voxels) labels_[i] = id;
    shapes_.push_back(e);
  }

  const PhantomConfig& cfg_;
  Grid3<LabelId> labels_;
  std::mt19937_64 rng_;
  std::vector<Ellipsoid> shapes_;
  std::set<LabelId> touching_;
};

Grid3<float> texture_field(Shape3 s, std::mt19937_64& rng) {
  std::normal_distribution<float> gauss;
  Grid3<float> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = gauss(rng);
  t = gaussian_blur(t, {0.7, 0.7, 0.7});
  const double sd = std::sqrt(t.array().square().mean());
  if (sd > 0) t.array() /= static_cast<float>(sd);
  return t;
}

}  // namespace

float ToneCurve::operator()(float t) const {
  return background + (foreground - background) * std::pow(std::clamp(t, 0.f, 1.f), gamma);
}

RenderStyle RenderStyle::electron_like() {
  RenderStyle s;
  s.tone = {0.45f, 0.80f, 0.5f};
  s.texture_amplitude = 0.05f;
  s.background_texture = 0.05f;
  s.rim_width = 1.0f;
  s.rim_depth = 0.45f;
  s.blur_sigma = {0.4, 0.4, 0.4};
  s.noise_sigma = 0.02f;
  return s;
}

RenderStyle RenderStyle::expansion_like() {
  RenderStyle s;
  s.tone = {0.15f, 0.65f, 1.0f};
  s.texture_amplitude = 0.02f;
  s.halo_width = 2.0f;
  s.halo_strength = 0.15f;
  s.blur_sigma = {1.2, 0.7, 0.7};
  s.noise_sigma = 0.05f;
  return s;
}

void PhantomConfig::validate() const {
  if (shape.z < 1 || shape.y < 1 || shape.x < 1) throw ValidationError("phantom.shape", "all dims must be >= 1");
  if (n_instances < 0) throw ValidationError("phantom.n_instances", "must be >= 0");
  if (!(radius_range[0] > 0 && radius_range[0] <= radius_range[1]))
    throw ValidationError("phantom.radius_range", "need 0 < min <= max");
  if (!(z_radius_scale > 0)) throw ValidationError("phantom.z_radius_scale", "must be positive");
  const double r = radius_range[1] * std::max(1.0, z_radius_scale);
  for (int a = 0; a < 3; ++a)
    if (n_instances > 0 && 2 * r + 1 > static_cast<double>(shape[a]))
      throw ValidationError("phantom.radius_range", "radii do not fit inside the shape");
  if (touch_fraction < 0 || touch_fraction > 1) throw ValidationError("phantom.touch_fraction", "must lie in [0, 1]");
  if (!allow_touching && touch_fraction != 0)
    throw ValidationError("phantom.touch_fraction", "must be 0 when allow_touching is false");
}

IntensityVolume render(const LabelVolume& labels, const RenderStyle& style, std::uint64_t seed) {
  const Shape3 s = labels.shape();
  std::mt19937_64 rng(seed);
  const Grid3<double> inner = instance_distance(labels.data);
  const Grid3<float> depth = signed_distance(labels, std::max<double>(1.0, 4.0 * style.halo_width));
  Grid3<std::uint8_t> fg(s);
  for (Index i = 0; i < fg.size(); ++i) fg[i] = labels.data[i] != 0;
  const Grid3<double> outer = squared_edt(fg);
  const Grid3<float> texture = texture_field(s, rng);

  Grid3<float> img(s);
  for (Index i = 0; i < img.size(); ++i) {
    float v;
    if (labels.data[i] != 0) {
      v = style.tone(depth[i]) + style.texture_amplitude * texture[i];
      if (inner[i] <= style.rim_width) v -= style.rim_depth;
    } else {
      v = style.tone.background + style.background_texture * texture[i];
      if (style.halo_width > 0)
        v += style.halo_strength * static_cast<float>(std::exp(-(std::sqrt(outer[i]) - 1.0) / style.halo_width));
    }
    img[i] = v;
  }
  img = gaussian_blur(img, style.blur_sigma);
  std::normal_distribution<float> noise(0.f, 1.f);
  for (Index i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] + style.noise_sigma * noise(rng), 0.f, 1.f);
  return {std::move(img), labels.voxel_size};
}

Phantom make_phantom(const PhantomConfig& config) {
  config.validate();
  Packer packer(config);
  Phantom p;
  p.labels = packer.run();
  p.domain_a = render(p.labels, config.style_a, config.seed * 2654435761ull + 1);
  p.domain_b = render(p.labels, config.style_b, config.seed * 2654435761ull + 2);
  return p;
}

int count_touching(const LabelVolume& labels) {
  const auto& lab = labels.data;
  const Shape3 s = lab.shape();
  std::set<LabelId> touching;
  for (Index z = 0; z < s.z; ++z)
    for (Index y = 0; y < s.y; ++y)
      for (Index x = 0; x < s.x; ++x) {
        const LabelId a = lab(z, y, x);
        if (a == 0) continue;
        const Index nb[3][3] = {{z + 1, y, x}, {z, y + 1, x}, {z, y, x + 1}};
        for (const auto& n : nb) {
          if (!lab.contains(n[0], n[1], n[2])) continue;
          const LabelId b = lab(n[0], n[1], n[2]);
          if (b != 0 && b != a) {
            touching.insert(a);
            touching.insert(b);
          }
        }
      }
  return static_cast<int>(touching.size());
}

}  // namespace cysgan
