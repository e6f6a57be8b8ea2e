#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "cysgan/infer.hpp"
#include "cysgan/phantom.hpp"
#include "cysgan/trainer.hpp"

namespace cysgan {

/// Unpaired two-domain data: X is rendered in style A from one geometry, Y in
/// style B from an independent geometry drawn with a derived seed.
struct PhantomPair {
  IntensityVolume x_image;
  LabelVolume x_labels;
  IntensityVolume y_image;
  LabelVolume y_labels;
};
PhantomPair make_phantom_pair(const PhantomConfig& config);

/// Supervised-only segmentation network: a generator whose seg channels are
/// trained with the supervised segmentation loss on (augmented image, BCD)
/// patches. The image channel is left untrained.
std::shared_ptr<nn::UNetGenerator<float>> train_segmenter(const SourceDomain& data, const nn::GeneratorConfig& generator,
                                                          const TrainConfig& train, const AugmentConfig& augment,
                                                          std::ostream* log = nullptr);

/// Whole-volume translation through a generator's image channel, in [0, 1].
IntensityVolume translate_volume(const nn::Generator<float>& generator, const IntensityVolume& volume,
                                 const InferConfig& infer);

enum class BenchMethod {
  histogram_x_to_y,   ///< X matched to Y's histogram, segmenter trained on it, applied to Y
  histogram_y_to_x,   ///< segmenter trained on X, applied to Y matched to X's histogram
  cyclegan_segm,      ///< translation_only run, segmenter trained on F(X), applied to Y
  cysgan_no_augment,
  cysgan_no_semi_sup,
  cysgan,
};

BenchMethod bench_method_from_string(const std::string& s);
std::string to_string(BenchMethod m);
/// Row label in the results table.
std::string display_name(BenchMethod m);

struct BenchConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  CodecParams codec;
  InferConfig infer;
  std::vector<BenchMethod> methods{BenchMethod::histogram_x_to_y, BenchMethod::histogram_y_to_x, BenchMethod::cyclegan_segm,
                                   BenchMethod::cysgan_no_augment, BenchMethod::cysgan_no_semi_sup, BenchMethod::cysgan};
};

struct BenchRow {
  BenchMethod method;
  APReport report;
  double seconds = 0;
};

/// Trains and scores every configured method on Y; per-method logs and
/// predictions go under `workdir` when given.
std::vector<BenchRow> run_bench(const SourceDomain& x, const TargetDomain& y, const LabelVolume& y_labels,
                                const BenchConfig& config, const std::filesystem::path* workdir = nullptr,
                                std::ostream* progress = nullptr);

/// Markdown table with one AP-50 row per method.
std::string bench_markdown(const std::vector<BenchRow>& rows);

}  // namespace cysgan
