#include "cysgan/bcd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <vector>

namespace cysgan {
namespace {

constexpr double kFar = 1e30;

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), skipping
/// infinite sites. `f` and `out` have `n` entries at stride `stride`.
void edt_1d(double* f, Index n, Index stride, std::vector<double>& buf, std::vector<Index>& v,
            std::vector<double>& z) {
  buf.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = f[i * stride];
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    const double fq = buf[static_cast<std::size_t>(q)];
    if (fq >= kFar) continue;
    const double dq = static_cast<double>(q);
    while (k >= 0) {
      const Index p = v[static_cast<std::size_t>(k)];
      const double dp = static_cast<double>(p);
      const double s = ((fq + dq * dq) - (buf[static_cast<std::size_t>(p)] + dp * dp)) / (2 * dq - 2 * dp);
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kFar;
    }
  }
  if (k < 0) return;  // no finite site on this line
  z[static_cast<std::size_t>(k) + 1] = kFar;
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    const double d = static_cast<double>(q - p);
    f[q * stride] = d * d + buf[static_cast<std::size_t>(p)];
  }
}

void edt_inplace(Grid3<double>& g) {
  const Shape3 s = g.shape();
  std::vector<double> buf, z;
  std::vector<Index> v;
  for (Index zz = 0; zz < s.z; ++zz)
    for (Index y = 0; y < s.y; ++y) edt_1d(&g(zz, y, 0), s.x, 1, buf, v, z);
  for (Index zz = 0; zz < s.z; ++zz)
    for (Index x = 0; x < s.x; ++x) edt_1d(&g(zz, 0, x), s.y, s.x, buf, v, z);
  for (Index y = 0; y < s.y; ++y)
    for (Index x = 0; x < s.x; ++x) edt_1d(&g(0, y, x), s.z, s.y * s.x, buf, v, z);
}

struct Box {
  std::array<Index, 3> lo{std::numeric_limits<Index>::max(), std::numeric_limits<Index>::max(),
                          std::numeric_limits<Index>::max()};
  std::array<Index, 3> hi{-1, -1, -1};  // inclusive
};

std::map<LabelId, Box> instance_boxes(const Grid3<LabelId>& labels) {
  std::map<LabelId, Box> boxes;
  const Shape3 s = labels.shape();
  for (Index z = 0; z < s.z; ++z)
    for (Index y = 0; y < s.y; ++y)
      for (Index x = 0; x < s.x; ++x) {
        const LabelId id = labels(z, y, x);
        if (id == 0) continue;
        Box& b = boxes[id];
        const Index c[3] = {z, y, x};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = std::min(b.lo[a], c[a]);
          b.hi[a] = std::max(b.hi[a], c[a]);
        }
      }
  return boxes;
}

constexpr std::array<std::array<int, 3>, 6> kFace{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

constexpr std::array<std::array<int, 3>, 26> make_full() {
  std::array<std::array<int, 3>, 26> out{};
  int n = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (dz || dy || dx) out[static_cast<std::size_t>(n++)] = {dz, dy, dx};
  return out;
}
constexpr auto kFull = make_full();

std::vector<std::array<int, 3>> ellipsoid_offsets(const std::array<double, 3>& r) {
  std::vector<std::array<int, 3>> out;
  const int ext[3] = {static_cast<int>(std::floor(r[0])), static_cast<int>(std::floor(r[1])),
                      static_cast<int>(std::floor(r[2]))};
  for (int dz = -ext[0]; dz <= ext[0]; ++dz)
    for (int dy = -ext[1]; dy <= ext[1]; ++dy)
      for (int dx = -ext[2]; dx <= ext[2]; ++dx) {
        if (!dz && !dy && !dx) continue;
        const int d[3] = {dz, dy, dx};
        double q = 0;
        for (int a = 0; a < 3; ++a)
          if (d[a]) q += (d[a] / r[a]) * (d[a] / r[a]);
        if (q <= 1.0 + 1e-12) out.push_back({dz, dy, dx});
      }
  return out;
}

}  // namespace

void CodecParams::validate() const {
  for (double r : contour_radius)
    if (r < 0) throw ValidationError("codec.contour_radius", "radii must be non-negative");
  if (!(d_clip_bg > 0)) throw ValidationError("codec.d_clip_bg", "must be positive");
  if (!(mask_threshold > 0 && mask_threshold <= seeds.b_min && seeds.b_min <= 1))
    throw ValidationError("codec.mask_threshold", "require 0 < b_mask <= b_min <= 1");
  if (!(seeds.c_max > 0 && seeds.c_max < 1)) throw ValidationError("codec.seeds.c_max", "must lie in (0, 1)");
  if (!(seeds.d_min > -1 && seeds.d_min < 1)) throw ValidationError("codec.seeds.d_min", "must lie in (-1, 1)");
  if (min_instance_size < 0) throw ValidationError("codec.min_instance_size", "must be non-negative");
}

std::span<const std::array<int, 3>> neighbour_offsets(Connectivity connectivity) {
  if (connectivity == Connectivity::face) return kFace;
  return kFull;
}

Grid3<double> squared_edt(const Grid3<std::uint8_t>& feature) {
  Grid3<double> g(feature.shape());
  for (Index i = 0; i < g.size(); ++i) g[i] = feature[i] ? 0.0 : kFar;
  edt_inplace(g);
  for (Index i = 0; i < g.size(); ++i)
    if (g[i] >= kFar) g[i] = std::numeric_limits<double>::infinity();
  return g;
}

Grid3<double> instance_distance(const Grid3<LabelId>& lab) {
  const Shape3 s = lab.shape();
  Grid3<double> out(s, 0.0);
  // The nearest non-i voxel of any voxel in instance i lies inside i's bounding
  // box grown by one voxel, so each instance is transformed on that box alone.
  for (const auto& [id, box] : instance_boxes(lab)) {
    std::array<Index, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<Index>(box.lo[a] - 1, 0);
      hi[a] = std::min<Index>(box.hi[a] + 1, s[a] - 1);
    }
    const Shape3 bs{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    Grid3<std::uint8_t> other(bs);
    for (Index z = 0; z < bs.z; ++z)
      for (Index y = 0; y < bs.y; ++y)
        for (Index x = 0; x < bs.x; ++x) other(z, y, x) = lab(lo[0] + z, lo[1] + y, lo[2] + x) != id;
    const Grid3<double> sq = squared_edt(other);
    for (Index z = 0; z < bs.z; ++z)
      for (Index y = 0; y < bs.y; ++y)
        for (Index x = 0; x < bs.x; ++x)
          if (!other(z, y, x)) out(lo[0] + z, lo[1] + y, lo[2] + x) = std::sqrt(sq(z, y, x));
  }
  return out;
}

Grid3<float> signed_distance(const LabelVolume& labels, double d_clip_bg) {
  const Grid3<LabelId>& lab = labels.data;
  const Shape3 s = lab.shape();
  Grid3<float> out(s);

  Grid3<std::uint8_t> fg(s);
  for (Index i = 0; i < lab.size(); ++i) fg[i] = lab[i] != 0;
  const Grid3<double> bg_sq = squared_edt(fg);
  const Grid3<double> inner = instance_distance(lab);
  std::map<LabelId, double> max_d;
  for (Index i = 0; i < lab.size(); ++i)
    if (lab[i] != 0) max_d[lab[i]] = std::max(max_d[lab[i]], inner[i]);
  for (Index i = 0; i < lab.size(); ++i) {
    if (lab[i] == 0) {
      out[i] = static_cast<float>(-std::min(std::sqrt(bg_sq[i]), d_clip_bg) / d_clip_bg);
    } else {
      const double m = max_d[lab[i]];
      // An instance covering the whole volume has no boundary; treat it as all interior.
      out[i] = std::isinf(m) ? 1.0f : static_cast<float>(inner[i] / m);
    }
  }
  return out;
}

BcdTriple encode_bcd(const LabelVolume& labels, const CodecParams& params) {
  const Grid3<LabelId>& lab = labels.data;
  const Shape3 s = lab.shape();
  BcdTriple t{Grid3<float>(s, 0.f), Grid3<float>(s, 0.f), signed_distance(labels, params.d_clip_bg)};
  const auto offsets = ellipsoid_offsets(params.contour_radius);
  for (Index z = 0; z < s.z; ++z)
    for (Index y = 0; y < s.y; ++y)
      for (Index x = 0; x < s.x; ++x) {
        const LabelId id = lab(z, y, x);
        t.b(z, y, x) = id != 0 ? 1.f : 0.f;
        for (const auto& o : offsets) {
          const Index zz = z + o[0], yy = y + o[1], xx = x + o[2];
          if (lab.contains(zz, yy, xx) && lab(zz, yy, xx) != id) {
            t.c(z, y, x) = 1.f;
            break;
          }
        }
      }
  return t;
}

LabelVolume connected_components(const Grid3<std::uint8_t>& mask, Connectivity connectivity) {
  const Shape3 s = mask.shape();
  LabelVolume out{Grid3<LabelId>(s, 0), {}};
  const auto nbrs = neighbour_offsets(connectivity);
  std::vector<Index> stack;
  LabelId next = 0;
  for (Index start = 0; start < mask.size(); ++start) {
    if (!mask[start] || out.data[start] != 0) continue;
    ++next;
    out.data[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index i = stack.back();
      stack.pop_back();
      const Index z = i / (s.y * s.x), y = (i / s.x) % s.y, x = i % s.x;
      for (const auto& o : nbrs) {
        const Index zz = z + o[0], yy = y + o[1], xx = x + o[2];
        if (!mask.contains(zz, yy, xx)) continue;
        const Index j = mask.index(zz, yy, xx);
        if (mask[j] && out.data[j] == 0) {
          out.data[j] = next;
          stack.push_back(j);
        }
      }
    }
  }
  return out;
}

LabelVolume decode_bcd(const BcdTriple& triple, const CodecParams& params) {
  params.validate();
  if (!triple.aligned()) throw ValidationError("triple", "B, C and D channels must share one shape");
  const Shape3 s = triple.shape();
  const Index n = s.size();

  Grid3<std::uint8_t> seed_mask(s);
  for (Index i = 0; i < n; ++i)
    seed_mask[i] = triple.b[i] > params.seeds.b_min && triple.c[i] < params.seeds.c_max &&
                   triple.d[i] > params.seeds.d_min && triple.b[i] > params.mask_threshold;
  LabelVolume out = connected_components(seed_mask, params.connectivity);

  // Flood -D from the markers. Ties on D resolve by raster index, then by push order.
  struct Entry {
    float d;
    Index idx;
    std::uint64_t age;
    LabelId label;
  };
  const auto later = [](const Entry& a, const Entry& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.idx != b.idx) return a.idx > b.idx;
    return a.age > b.age;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(later)> queue(later);
  std::uint64_t age = 0;
  Grid3<LabelId> grown(s, 0);
  for (Index i = 0; i < n; ++i)
    if (out.data[i] != 0) queue.push({triple.d[i], i, age++, out.data[i]});

  const auto nbrs = neighbour_offsets(params.connectivity);
  while (!queue.empty()) {
    const Entry e = queue.top();
    queue.pop();
    if (grown[e.idx] != 0) continue;
    grown[e.idx] = e.label;
    const Index z = e.idx / (s.y * s.x), y = (e.idx / s.x) % s.y, x = e.idx % s.x;
    for (const auto& o : nbrs) {
      const Index zz = z + o[0], yy = y + o[1], xx = x + o[2];
      if (!grown.contains(zz, yy, xx)) continue;
      const Index j = grown.index(zz, yy, xx);
      if (grown[j] == 0 && triple.b[j] > params.mask_threshold) queue.push({triple.d[j], j, age++, e.label});
    }
  }

  std::vector<Index> sizes;
  for (Index i = 0; i < n; ++i) {
    const LabelId id = grown[i];
    if (id == 0) continue;
    if (sizes.size() <= id) sizes.resize(id + 1, 0);
    ++sizes[id];
  }
  std::vector<LabelId> remap(std::max<std::size_t>(sizes.size(), 1), 0);
  LabelId next = 0;
  for (std::size_t id = 1; id < sizes.size(); ++id)
    if (sizes[id] > 0 && sizes[id] >= params.min_instance_size) remap[id] = ++next;
  for (Index i = 0; i < n; ++i) grown[i] = remap[grown[i]];
  out.data = std::move(grown);
  return out;
}

}  // namespace cysgan
