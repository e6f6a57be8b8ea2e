#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cysgan/bcd.hpp"
#include "cysgan/metrics.hpp"
#include "cysgan/nn/nets.hpp"
#include "cysgan/trainer.hpp"

namespace cysgan {

enum class Blend { gaussian, uniform };
enum class Direction { Y_to_X, X_to_Y };

Blend blend_from_string(const std::string& s);
std::string to_string(Blend b);
Direction direction_from_string(const std::string& s);
std::string to_string(Direction d);

struct InferConfig {
  Shape3 patch_size{16, 64, 64};
  Shape3 stride{8, 32, 32};
  Blend blend = Blend::gaussian;
  Direction direction = Direction::Y_to_X;

  void validate() const;
};

/// Window origins along one axis: every `stride`, with the last window moved
/// back so it ends on the border.
std::vector<Index> window_starts(Index extent, Index patch, Index stride);

/// Per-voxel blending weight inside one window (sigma = patch / 8 per axis for
/// the Gaussian).
Grid3<float> blend_weights(Shape3 patch, Blend blend);

/// Maps a (1, 1, pz, py, px) patch in [-1, 1] taken at `origin` to a
/// (1, 4, pz, py, px) output (image, B, C, D).
using PatchPredictor = std::function<nn::Tensor<float>(const nn::Tensor<float>& patch, const std::array<Index, 3>& origin)>;

struct VolumePrediction {
  Grid3<float> image;  ///< translated image mapped back to [0, 1]
  BcdTriple seg;
};

VolumePrediction sliding_window_predict(const PatchPredictor& predict, const IntensityVolume& volume, const InferConfig& config);
VolumePrediction sliding_window_predict(const nn::Generator<float>& generator, const IntensityVolume& volume,
                                        const InferConfig& config);

/// B for Y_to_X, F for X_to_Y.
const nn::Generator<float>& pick_generator(const Networks& nets, Direction d);

struct SegmentResult {
  LabelVolume labels;
  std::optional<APReport> report;
  VolumePrediction prediction;
};

/// Sliding-window prediction, BCD decoding, and AP-50 against `gt` when given.
/// Instance confidence is the mean predicted B over the instance.
SegmentResult segment_volume(const PatchPredictor& predict, const IntensityVolume& volume, const InferConfig& config,
                             const CodecParams& codec, const LabelVolume* gt = nullptr);
SegmentResult segment_volume(const nn::Generator<float>& generator, const IntensityVolume& volume,
                             const InferConfig& config, const CodecParams& codec, const LabelVolume* gt = nullptr);

}  // namespace cysgan
