#include "cysgan/filters.hpp"

#include <cmath>
#include <vector>

namespace cysgan {
namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Index mirror(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void blur_axis(Grid3<float>& g, int axis, double sigma) {
  if (sigma <= 0) return;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const Shape3 s = g.shape();
  const Index n = s[axis];
  const Index stride = axis == 0 ? s.y * s.x : (axis == 1 ? s.x : 1);
  std::vector<double> line(static_cast<std::size_t>(n));
  const Index lines = s.size() / n;
  for (Index l = 0; l < lines; ++l) {
    // Decompose the line number into the base offset of the line.
    Index base;
    if (axis == 0) base = l;
    else if (axis == 1) base = (l / s.x) * s.y * s.x + (l % s.x);
    else base = l * s.x;
    for (Index i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = g[base + i * stride];
    for (Index i = 0; i < n; ++i) {
      double acc = 0;
      for (int t = -radius; t <= radius; ++t)
        acc += k[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(mirror(i + t, n))];
      g[base + i * stride] = static_cast<float>(acc);
    }
  }
}

}  // namespace

Grid3<float> gaussian_blur(const Grid3<float>& in, const std::array<double, 3>& sigma) {
  Grid3<float> out = in;
  for (int a = 0; a < 3; ++a) blur_axis(out, a, sigma[static_cast<std::size_t>(a)]);
  return out;
}

}  // namespace cysgan
