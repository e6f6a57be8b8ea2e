#include "cysgan/nn/nets.hpp"

#include <cmath>

namespace cysgan::nn {

Norm norm_from_string(const std::string& s) {
  if (s == "instance") return Norm::instance;
  if (s == "batch") return Norm::batch;
  if (s == "none") return Norm::none;
  throw ValidationError("norm", "expected instance, batch or none, got '" + s + "'");
}

std::string to_string(Norm n) {
  switch (n) {
    case Norm::instance: return "instance";
    case Norm::batch: return "batch";
    case Norm::none: return "none";
  }
  return "none";
}

void GeneratorConfig::validate() const {
  if (depth < 1 || depth > 8) throw ValidationError("GeneratorConfig.depth", "must be in [1, 8]");
  if (static_cast<int>(channels.size()) != depth)
    throw ValidationError("GeneratorConfig.channels", "needs one width per level (" + std::to_string(depth) + ")");
  for (int c : channels)
    if (c < 1) throw ValidationError("GeneratorConfig.channels", "widths must be positive");
  if (in_channels != 1) throw ValidationError("GeneratorConfig.in_channels", "must be 1");
  if (out_channels != 4) throw ValidationError("GeneratorConfig.out_channels", "must be 4 (image, B, C, D)");
}

void GeneratorConfig::check_patch(Shape3 patch, const std::string& field) const {
  const Index m = stride_product();
  for (int a = 0; a < 3; ++a)
    if (patch[a] < 1 || patch[a] % m != 0)
      throw ValidationError(field, "every extent must be a positive multiple of " + std::to_string(m));
}

void DiscriminatorConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) throw ValidationError("DiscriminatorConfig.in_channels", "must be 1 or 3");
  if (n_layers < 1 || n_layers > 6) throw ValidationError("DiscriminatorConfig.n_layers", "must be in [1, 6]");
  if (base_channels < 1) throw ValidationError("DiscriminatorConfig.base_channels", "must be positive");
  if (!(leaky_slope >= 0 && leaky_slope < 1)) throw ValidationError("DiscriminatorConfig.leaky_slope", "must be in [0, 1)");
}

Index DiscriminatorConfig::receptive_field() const {
  // k4 s2 layers followed by one k3 s1 layer.
  Index rf = 1, jump = 1;
  for (int i = 0; i < n_layers; ++i) {
    rf += 3 * jump;
    jump *= 2;
  }
  return rf + 2 * jump;
}

namespace {

template <typename S>
ConvLayer<S> make_conv(Index cin, Index cout, Index k, Index stride, Index pad, bool bias, double std_dev,
                       std::mt19937_64& rng) {
  Tensor<S> w({cout, cin, k, k, k});
  std::normal_distribution<double> gauss(0.0, std_dev);
  for (Index i = 0; i < w.numel(); ++i) w.data[i] = static_cast<S>(gauss(rng));
  ConvLayer<S> layer{Var<S>(std::move(w), true), Var<S>(), {{stride, stride, stride}, {pad, pad, pad}}};
  if (bias) layer.bias = Var<S>(Tensor<S>({1, cout, 1, 1, 1}), true);
  return layer;
}

double he_std(Index cin, Index k) { return std::sqrt(2.0 / static_cast<double>(cin * k * k * k)); }

template <typename S>
void push(std::vector<NamedParameter<S>>& out, const std::string& name, const ConvLayer<S>& c) {
  out.push_back({name + ".weight", c.weight});
  if (c.bias.defined()) out.push_back({name + ".bias", c.bias});
}

}  // namespace

template <typename S>
UNetGenerator<S>::UNetGenerator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const bool bias = config_.norm == Norm::none;
  const auto& ch = config_.channels;
  Index cin = config_.in_channels;
  for (int l = 0; l < config_.depth; ++l) {
    const Index c = ch[static_cast<std::size_t>(l)];
    encoder_.push_back({make_conv<S>(cin, c, 3, 1, 1, bias, he_std(cin, 3), rng),
                        make_conv<S>(c, c, 3, 1, 1, bias, he_std(c, 3), rng)});
    cin = c;
  }
  decoder_.resize(static_cast<std::size_t>(config_.depth - 1));
  for (int l = config_.depth - 2; l >= 0; --l) {
    const Index up = ch[static_cast<std::size_t>(l + 1)], c = ch[static_cast<std::size_t>(l)];
    decoder_[static_cast<std::size_t>(l)] = {make_conv<S>(up, c, 3, 1, 1, bias, he_std(up, 3), rng),
                                             make_conv<S>(c, c, 3, 1, 1, bias, he_std(c, 3), rng)};
  }
  head_ = make_conv<S>(ch.front(), config_.out_channels, 1, 1, 0, true, std::sqrt(1.0 / static_cast<double>(ch.front())), rng);
}

template <typename S>
Var<S> UNetGenerator<S>::norm_act(const Var<S>& x) const {
  switch (config_.norm) {
    case Norm::instance: return relu(normalize(x, false));
    case Norm::batch: return relu(normalize(x, true));
    case Norm::none: return relu(x);
  }
  return relu(x);
}

template <typename S>
Var<S> UNetGenerator<S>::forward(const Var<S>& x) const {
  if (x.shape()[1] != config_.in_channels) throw ValidationError("generator", "expected a single-channel input");
  config_.check_patch({x.shape()[2], x.shape()[3], x.shape()[4]}, "generator input");
  std::vector<Var<S>> skips;
  Var<S> h = x;
  for (int l = 0; l < config_.depth; ++l) {
    const auto& block = encoder_[static_cast<std::size_t>(l)];
    h = norm_act(block[1](norm_act(block[0](h))));
    if (l + 1 < config_.depth) {
      skips.push_back(h);
      h = max_pool2(h);
    }
  }
  for (int l = config_.depth - 2; l >= 0; --l) {
    const auto& block = decoder_[static_cast<std::size_t>(l)];
    h = add(norm_act(block[0](upsample2(h))), skips[static_cast<std::size_t>(l)]);
    h = norm_act(block[1](h));
  }
  return channel_activation(head_(h), {Activation::tanh, Activation::sigmoid, Activation::sigmoid, Activation::tanh});
}

template <typename S>
std::vector<NamedParameter<S>> UNetGenerator<S>::named_parameters() const {
  std::vector<NamedParameter<S>> out;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    push(out, "enc" + std::to_string(l) + ".conv0", encoder_[l][0]);
    push(out, "enc" + std::to_string(l) + ".conv1", encoder_[l][1]);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    push(out, "dec" + std::to_string(l) + ".conv0", decoder_[l][0]);
    push(out, "dec" + std::to_string(l) + ".conv1", decoder_[l][1]);
  }
  push(out, "head", head_);
  return out;
}

template <typename S>
PatchDiscriminator<S>::PatchDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  Index cin = config_.in_channels;
  for (int i = 0; i < config_.n_layers; ++i) {
    const Index c = Index{config_.base_channels} << i;
    const bool normed = i > 0 && config_.norm != Norm::none;
    layers_.push_back(make_conv<S>(cin, c, 4, 2, 1, !normed, he_std(cin, 4), rng));
    cin = c;
  }
  layers_.push_back(make_conv<S>(cin, 1, 3, 1, 1, true, std::sqrt(1.0 / static_cast<double>(cin * 27)), rng));
}

template <typename S>
Var<S> PatchDiscriminator<S>::forward(const Var<S>& x) const {
  if (x.shape()[1] != config_.in_channels)
    throw ValidationError("discriminator", "expected " + std::to_string(config_.in_channels) + " input channels, got " +
                                               std::to_string(x.shape()[1]));
  Var<S> h = x;
  const S slope = static_cast<S>(config_.leaky_slope);
  for (int i = 0; i < config_.n_layers; ++i) {
    h = layers_[static_cast<std::size_t>(i)](h);
    if (i > 0 && config_.norm != Norm::none) h = normalize(h, config_.norm == Norm::batch);
    h = leaky_relu(h, slope);
  }
  return layers_.back()(h);
}

template <typename S>
std::vector<NamedParameter<S>> PatchDiscriminator<S>::named_parameters() const {
  std::vector<NamedParameter<S>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) push(out, "layer" + std::to_string(i), layers_[i]);
  return out;
}

template class UNetGenerator<float>;
template class UNetGenerator<double>;
template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;

}  // namespace cysgan::nn
