#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cysgan/nn/ops.hpp"

namespace cysgan::nn {

enum class Norm { instance, batch, none };

Norm norm_from_string(const std::string& s);
std::string to_string(Norm n);

struct GeneratorConfig {
  int depth = 4;
  std::vector<int> channels{16, 32, 48, 64};  ///< one width per level
  Norm norm = Norm::instance;
  int in_channels = 1;
  int out_channels = 4;  ///< image, B, C, D

  void validate() const;
  Index stride_product() const { return Index{1} << (depth - 1); }
  /// Throws ValidationError naming `field` unless every extent divides by stride_product().
  void check_patch(Shape3 patch, const std::string& field = "patch_size") const;
};

struct DiscriminatorConfig {
  int in_channels = 1;
  int n_layers = 3;
  int base_channels = 32;  ///< doubles at each strided layer
  Norm norm = Norm::instance;
  double leaky_slope = 0.2;

  void validate() const;
  Index total_stride() const { return Index{1} << n_layers; }
  /// Voxel extent of the input region seen by one output score.
  Index receptive_field() const;
};

template <typename S>
struct NamedParameter {
  std::string name;
  Var<S> var;
};

template <typename S>
class Module {
 public:
  virtual ~Module() = default;
  virtual std::vector<NamedParameter<S>> named_parameters() const = 0;

  std::vector<Var<S>> parameters() const {
    std::vector<Var<S>> out;
    for (const auto& p : named_parameters()) out.push_back(p.var);
    return out;
  }
  void zero_grad() const {
    for (auto& p : named_parameters()) {
      Var<S> v = p.var;
      v.zero_grad();
    }
  }
  /// Freezes (false) or unfreezes every parameter.
  void set_requires_grad(bool r) const {
    for (auto& p : named_parameters()) {
      Var<S> v = p.var;
      v.set_requires_grad(r);
    }
  }
  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : named_parameters()) n += p.var.value().numel();
    return n;
  }
};

/// Maps a 1-channel image in [-1, 1] to 4 channels: translated image and D in
/// (-1, 1), B and C in (0, 1).
template <typename S>
class Generator : public Module<S> {
 public:
  virtual Var<S> forward(const Var<S>& x) const = 0;
};

template <typename S>
struct GeneratorOutput {
  Var<S> image;  ///< (N, 1, ...)
  Var<S> seg;    ///< (N, 3, ...) as B, C, D

  static GeneratorOutput split(const Var<S>& y) { return {slice_channels(y, 0, 1), slice_channels(y, 1, 3)}; }
};

template <typename S>
struct ConvLayer {
  Var<S> weight;
  Var<S> bias;  ///< may be undefined
  ConvGeometry geometry;

  Var<S> operator()(const Var<S>& x) const { return conv3d(x, weight, bias, geometry); }
};

template <typename S>
class UNetGenerator final : public Generator<S> {
 public:
  UNetGenerator(const GeneratorConfig& config, std::uint64_t seed);

  Var<S> forward(const Var<S>& x) const override;
  std::vector<NamedParameter<S>> named_parameters() const override;
  const GeneratorConfig& config() const { return config_; }

 private:
  Var<S> norm_act(const Var<S>& x) const;

  GeneratorConfig config_;
  std::vector<std::array<ConvLayer<S>, 2>> encoder_;
  std::vector<std::array<ConvLayer<S>, 2>> decoder_;  ///< decoder_[l] produces level l
  ConvLayer<S> head_;
};

template <typename S>
class PatchDiscriminator final : public Module<S> {
 public:
  PatchDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed);

  /// Unbounded score map; throws ValidationError on a channel mismatch.
  Var<S> forward(const Var<S>& x) const;
  std::vector<NamedParameter<S>> named_parameters() const override;
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<ConvLayer<S>> layers_;
};

extern template class UNetGenerator<float>;
extern template class UNetGenerator<double>;
extern template class PatchDiscriminator<float>;
extern template class PatchDiscriminator<double>;

}  // namespace cysgan::nn
