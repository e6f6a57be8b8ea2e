#pragma once

#include <limits>

#include "cysgan/nn/nets.hpp"

namespace cysgan::test {

/// Parameter-free generator: the image channel is the input, the segmentation
/// channels are constants.
class IdentityGenerator final : public nn::Generator<float> {
 public:
  explicit IdentityGenerator(float b = 0.5f, float c = 0.5f, float d = 0.f) : b_(b), c_(c), d_(d) {}

  nn::Var<float> forward(const nn::Var<float>& x) const override {
    nn::Shape5 s = x.shape();
    s[1] = 1;
    return nn::concat_channels<float>({x, nn::Var<float>(nn::Tensor<float>(s, b_)), nn::Var<float>(nn::Tensor<float>(s, c_)),
                                       nn::Var<float>(nn::Tensor<float>(s, d_))});
  }
  std::vector<nn::NamedParameter<float>> named_parameters() const override { return {}; }

 private:
  float b_, c_, d_;
};

/// Like IdentityGenerator but with a NaN foreground channel.
inline IdentityGenerator nan_generator() { return IdentityGenerator(std::numeric_limits<float>::quiet_NaN()); }

}  // namespace cysgan::test
