#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "cysgan/augment.hpp"
#include "cysgan/bcd.hpp"
#include "cysgan/losses.hpp"
#include "cysgan/nn/adam.hpp"
#include "cysgan/nn/nets.hpp"

namespace cysgan {

struct TrainConfig {
  Shape3 patch_size{16, 64, 64};
  int batch_size = 1;
  long long iterations = 2000;
  nn::AdamConfig optimizer{};
  Ablation ablation = Ablation::full;
  int image_pool_size = 0;  ///< 0 disables the pool
  std::uint64_t seed = 0;
  long long checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  long long eval_every = 0;
  GanMode gan_mode = GanMode::lsgan;
};

struct ModelConfig {
  nn::GeneratorConfig generator{};
  nn::DiscriminatorConfig image_discriminator{};
  nn::DiscriminatorConfig seg_discriminator{3, 3, 32, nn::Norm::instance, 0.2};
};

/// Cross-field checks: patch divisibility, discriminator receptive field
/// against the in-plane patch extent, channel counts, optimizer ranges.
void validate(const ModelConfig& model, const TrainConfig& train);

/// Labeled source domain X with its whole-volume BCD encoding.
struct SourceDomain {
  IntensityVolume image;
  LabelVolume labels;
  BcdTriple bcd;
};

SourceDomain make_source_domain(IntensityVolume image, LabelVolume labels, const CodecParams& codec = {});

/// Unlabeled target domain Y.
struct TargetDomain {
  IntensityVolume image;
};

/// Image tensors are (N, 1, ...) in [-1, 1]; `bcd` is (N, 3, ...) as B, C, D.
struct Batch {
  nn::Tensor<float> augmented;
  nn::Tensor<float> clean;
  std::optional<nn::Tensor<float>> bcd;
  std::vector<Grid3<LabelId>> labels;
  std::vector<Grid3<std::uint8_t>> corruption_masks;
  std::vector<std::array<Index, 3>> origins;
};

/// Uniformly placed patches; one spatial transform per patch shared by image,
/// labels and BCD; corruption on the image copy only (skipped under
/// no_augment, flips are kept).
Batch sample_batch(const SourceDomain& x, Shape3 patch, int batch_size, const AugmentConfig& augment, Ablation ablation,
                   std::mt19937_64& rng);
Batch sample_batch(const TargetDomain& y, Shape3 patch, int batch_size, const AugmentConfig& augment, Ablation ablation,
                   std::mt19937_64& rng);

/// Historical buffer of generated samples for the discriminators.
class ImagePool {
 public:
  explicit ImagePool(int capacity = 0) : capacity_(capacity) {}

  nn::Tensor<float> query(const nn::Tensor<float>& fake, std::mt19937_64& rng);
  int capacity() const { return capacity_; }
  std::vector<nn::Tensor<float>>& images() { return images_; }
  const std::vector<nn::Tensor<float>>& images() const { return images_; }

 private:
  int capacity_;
  std::vector<nn::Tensor<float>> images_;
};

struct Networks {
  std::shared_ptr<nn::Generator<float>> F;  ///< X -> (Y image, X seg)
  std::shared_ptr<nn::Generator<float>> B;  ///< Y -> (X image, Y seg)
  std::shared_ptr<nn::PatchDiscriminator<float>> DXI;
  std::shared_ptr<nn::PatchDiscriminator<float>> DYI;
  std::shared_ptr<nn::PatchDiscriminator<float>> DXS;

  static Networks build(const ModelConfig& model, std::uint64_t seed);
};

/// Every tensor the generator objective is built from. Inactive terms are
/// left undefined.
struct GeneratorGraph {
  std::array<nn::Var<float>, 8> terms;
  nn::Var<float> total;
  nn::Var<float> y_hat;      ///< F(x)_[I]
  nn::Var<float> x_hat;      ///< B(y)_[I]
  nn::Var<float> ys_direct;  ///< B(y)_[S]
  nn::Var<float> ys_round;   ///< F(B(y)_[I])_[S]

  nn::Var<float>& operator[](LossTerm t) { return terms[static_cast<std::size_t>(t)]; }
  const nn::Var<float>& operator[](LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
};

struct StepResult {
  LossBreakdown losses;
  std::optional<double> d_X_img;
  std::optional<double> d_Y_img;
  std::optional<double> d_X_seg;
  double wall_time = 0;  ///< seconds spent in the step
};

class Trainer {
 public:
  using EvalHook = std::function<void(const Trainer&, long long iteration)>;

  Trainer(const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment);
  /// Uses the given networks instead of building them (e.g. stubs).
  Trainer(Networks nets, const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment);

  /// Builds the generator objective without updating anything.
  GeneratorGraph generator_graph(const Batch& x, const Batch& y) const;

  /// One joint generator update, then one update per active discriminator.
  StepResult train_step(const Batch& x, const Batch& y);

  /// Runs until `iterations`, resuming from the current iteration. Writes one
  /// JSON line per step to `log` and checkpoints into `checkpoint_dir`.
  void train(const SourceDomain& x, const TargetDomain& y, std::ostream* log = nullptr,
             const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt, const EvalHook& on_eval = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments, pools, iteration and RNG state.
  /// Throws Error when the file was written under a different configuration.
  void load_checkpoint(const std::filesystem::path& path);

  long long iteration() const { return iteration_; }
  std::mt19937_64& rng() { return rng_; }
  const Networks& networks() const { return nets_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const AugmentConfig& augment_config() const { return augment_; }
  std::uint64_t config_hash() const;

 private:
  void init_optimizers();

  ModelConfig model_;
  TrainConfig train_;
  AugmentConfig augment_;
  Networks nets_;
  nn::Adam<float> opt_gen_, opt_dxi_, opt_dyi_, opt_dxs_;
  ImagePool pool_x_, pool_y_, pool_seg_;
  std::mt19937_64 rng_;
  long long iteration_ = 0;
};

/// One JSON object (single line) for a training step; absent terms are null.
std::string log_line(long long iteration, const StepResult& r);

/// Deterministic 64-bit seed derived from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace cysgan
