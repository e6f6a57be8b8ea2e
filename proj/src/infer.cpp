#include "cysgan/infer.hpp"

#include <algorithm>
#include <cmath>

namespace cysgan {

Blend blend_from_string(const std::string& s) {
  if (s == "gaussian") return Blend::gaussian;
  if (s == "uniform") return Blend::uniform;
  throw ValidationError("InferConfig.blend", "expected gaussian or uniform, got '" + s + "'");
}

std::string to_string(Blend b) { return b == Blend::gaussian ? "gaussian" : "uniform"; }

Direction direction_from_string(const std::string& s) {
  if (s == "Y_to_X") return Direction::Y_to_X;
  if (s == "X_to_Y") return Direction::X_to_Y;
  throw ValidationError("InferConfig.direction", "expected Y_to_X or X_to_Y, got '" + s + "'");
}

std::string to_string(Direction d) { return d == Direction::Y_to_X ? "Y_to_X" : "X_to_Y"; }

void InferConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (patch_size[a] < 1) throw ValidationError("InferConfig.patch_size", "extents must be positive");
    if (stride[a] < 1 || stride[a] > patch_size[a])
      throw ValidationError("InferConfig.stride", "must lie in [1, patch_size] on every axis");
  }
}

std::vector<Index> window_starts(Index extent, Index patch, Index stride) {
  if (extent < patch) throw ValidationError("InferConfig.patch_size", "volume smaller than the patch");
  std::vector<Index> out;
  for (Index s = 0;; s += stride) {
    if (s + patch >= extent) {
      out.push_back(extent - patch);
      break;
    }
    out.push_back(s);
  }
  return out;
}

Grid3<float> blend_weights(Shape3 patch, Blend blend) {
  Grid3<float> w(patch, 1.f);
  if (blend == Blend::uniform) return w;
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const double sigma = patch[a] / 8.0, c = (patch[a] - 1) / 2.0;
    for (Index i = 0; i < patch[a]; ++i) {
      const double d = (i - c) / sigma;
      axis[a].push_back(std::exp(-0.5 * d * d));
    }
  }
  for (Index z = 0; z < patch.z; ++z)
    for (Index y = 0; y < patch.y; ++y)
      for (Index x = 0; x < patch.x; ++x)
        w(z, y, x) = static_cast<float>(std::max(axis[0][z] * axis[1][y] * axis[2][x], 1e-6));
  return w;
}

VolumePrediction sliding_window_predict(const PatchPredictor& predict, const IntensityVolume& volume,
                                        const InferConfig& config) {
  config.validate();
  const Shape3 vs = volume.shape(), ps = config.patch_size;
  std::array<std::vector<Index>, 3> starts;
  for (int a = 0; a < 3; ++a) starts[a] = window_starts(vs[a], ps[a], config.stride[a]);
  const Grid3<float> w = blend_weights(ps, config.blend);

  std::array<Grid3<double>, 4> acc{Grid3<double>(vs, 0.0), Grid3<double>(vs, 0.0), Grid3<double>(vs, 0.0),
                                   Grid3<double>(vs, 0.0)};
  Grid3<double> wsum(vs, 0.0);
  nn::Tensor<float> patch({1, 1, ps.z, ps.y, ps.x});
  for (Index z0 : starts[0])
    for (Index y0 : starts[1])
      for (Index x0 : starts[2]) {
        const std::array<Index, 3> origin{z0, y0, x0};
        const Grid3<float> crop_in = crop(volume.data, origin, ps);
        for (Index i = 0; i < crop_in.size(); ++i) patch.data[i] = 2.f * crop_in[i] - 1.f;
        const nn::Tensor<float> out = predict(patch, origin);
        if (out.shape != nn::Shape5{1, 4, ps.z, ps.y, ps.x}) throw Error("patch predictor returned the wrong shape");
        for (Index z = 0; z < ps.z; ++z)
          for (Index y = 0; y < ps.y; ++y)
            for (Index x = 0; x < ps.x; ++x) {
              const double wv = w(z, y, x);
              const Index vi = wsum.index(z0 + z, y0 + y, x0 + x), pi = w.index(z, y, x);
              wsum[vi] += wv;
              for (Index c = 0; c < 4; ++c) acc[static_cast<std::size_t>(c)][vi] += wv * out.channel_ptr(0, c)[pi];
            }
      }
  VolumePrediction r{Grid3<float>(vs), {Grid3<float>(vs), Grid3<float>(vs), Grid3<float>(vs)}};
  for (Index i = 0; i < wsum.size(); ++i) {
    const double n = wsum[i];
    r.image[i] = static_cast<float>(std::clamp((acc[0][i] / n + 1.0) / 2.0, 0.0, 1.0));
    r.seg.b[i] = static_cast<float>(acc[1][i] / n);
    r.seg.c[i] = static_cast<float>(acc[2][i] / n);
    r.seg.d[i] = static_cast<float>(acc[3][i] / n);
  }
  return r;
}

VolumePrediction sliding_window_predict(const nn::Generator<float>& generator, const IntensityVolume& volume,
                                        const InferConfig& config) {
  return sliding_window_predict(
      [&generator](const nn::Tensor<float>& patch, const std::array<Index, 3>&) {
        nn::NoGradGuard guard;
        return generator.forward(nn::Var<float>(patch)).value();
      },
      volume, config);
}

const nn::Generator<float>& pick_generator(const Networks& nets, Direction d) {
  return d == Direction::Y_to_X ? *nets.B : *nets.F;
}

SegmentResult segment_volume(const PatchPredictor& predict, const IntensityVolume& volume, const InferConfig& config,
                             const CodecParams& codec, const LabelVolume* gt) {
  SegmentResult r;
  r.prediction = sliding_window_predict(predict, volume, config);
  r.labels = decode_bcd(r.prediction.seg, codec);
  r.labels.voxel_size = volume.voxel_size;
  if (gt) r.report = evaluate_ap50(r.labels, *gt, mean_foreground_scores(r.labels, r.prediction.seg.b));
  return r;
}

SegmentResult segment_volume(const nn::Generator<float>& generator, const IntensityVolume& volume,
                             const InferConfig& config, const CodecParams& codec, const LabelVolume* gt) {
  return segment_volume(
      [&generator](const nn::Tensor<float>& patch, const std::array<Index, 3>&) {
        nn::NoGradGuard guard;
        return generator.forward(nn::Var<float>(patch)).value();
      },
      volume, config, codec, gt);
}

}  // namespace cysgan
