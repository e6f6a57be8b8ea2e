#pragma once

#include <array>
#include <optional>
#include <string>

#include "cysgan/nn/ops.hpp"

namespace cysgan {

enum class Ablation { full, no_augment, no_semi_sup, translation_only };

Ablation ablation_from_string(const std::string& s);
std::string to_string(Ablation a);

enum class LossTerm {
  gan_F_img,
  gan_B_img,
  cycle,
  seg_F_sup,
  seg_B_sup,
  struct_consistency,
  gan_B_seg,
  gan_F_seg,
};

inline constexpr std::array<LossTerm, 8> kAllTerms{LossTerm::gan_F_img, LossTerm::gan_B_img,          LossTerm::cycle,
                                                   LossTerm::seg_F_sup, LossTerm::seg_B_sup,          LossTerm::struct_consistency,
                                                   LossTerm::gan_B_seg, LossTerm::gan_F_seg};

const char* term_name(LossTerm t);

/// Whether `t` contributes to the objective under `a`.
bool term_active(LossTerm t, Ablation a);

struct LossBreakdown {
  std::array<std::optional<double>, 8> terms;  ///< indexed by LossTerm; empty when ablated
  double total = 0;

  std::optional<double>& operator[](LossTerm t) { return terms[static_cast<std::size_t>(t)]; }
  const std::optional<double>& operator[](LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
};

/// Unweighted sum of the terms active under `ablation`. Throws Error naming
/// the first non-finite active term.
LossBreakdown total_objective(const std::array<double, 8>& parts, Ablation ablation = Ablation::full);

enum class GanMode { lsgan, log };

/// Adversarial loss for the generator: mean((s - 1)^2), or mean(softplus(-s))
/// in the log form.
template <typename S>
nn::Var<S> gan_generator_loss(const nn::Var<S>& fake_scores, GanMode mode = GanMode::lsgan) {
  if (mode == GanMode::log) return nn::mean_softplus(fake_scores, S(-1));
  return nn::mean_squared_to_constant(fake_scores, S(1));
}

/// 0.5 mean((real - 1)^2) + 0.5 mean(fake^2), or the log form
/// 0.5 mean(softplus(-real)) + 0.5 mean(softplus(fake)).
template <typename S>
nn::Var<S> gan_discriminator_loss(const nn::Var<S>& real_scores, const nn::Var<S>& fake_scores,
                                  GanMode mode = GanMode::lsgan) {
  if (mode == GanMode::log)
    return nn::scale(nn::add(nn::mean_softplus(real_scores, S(-1)), nn::mean_softplus(fake_scores, S(1))), S(0.5));
  return nn::scale(nn::add(nn::mean_squared_to_constant(real_scores, S(1)), nn::mean_squared_to_constant(fake_scores, S(0))),
                   S(0.5));
}

template <typename S>
nn::Var<S> cycle_loss(const nn::Var<S>& reconstructed, const nn::Var<S>& clean_target) {
  return nn::mean_abs_error(reconstructed, clean_target);
}

inline constexpr double kBceEps = 1e-7;

/// BCE on B, BCE on C and MSE on D, each voxel-averaged. Inputs are
/// (N, 3, ...) stacks ordered B, C, D. `clamped` receives the number of
/// probabilities that hit the epsilon clamp.
template <typename S>
nn::Var<S> supervised_seg_loss(const nn::Var<S>& pred, const nn::Var<S>& target, Index* clamped = nullptr) {
  if (pred.shape()[1] != 3 || target.shape() != pred.shape())
    throw ValidationError("supervised_seg_loss", "expected aligned 3-channel B, C, D stacks");
  Index cb = 0, cc = 0;
  const S eps = static_cast<S>(kBceEps);
  const nn::Var<S> b = nn::binary_cross_entropy(nn::slice_channels(pred, 0, 1), nn::slice_channels(target, 0, 1), eps, &cb);
  const nn::Var<S> c = nn::binary_cross_entropy(nn::slice_channels(pred, 1, 1), nn::slice_channels(target, 1, 1), eps, &cc);
  const nn::Var<S> d = nn::mean_squared_error(nn::slice_channels(pred, 2, 1), nn::slice_channels(target, 2, 1));
  if (clamped) *clamped = cb + cc;
  return nn::add(nn::add(b, c), d);
}

template <typename S>
nn::Var<S> structural_consistency_loss(const nn::Var<S>& seg_direct, const nn::Var<S>& seg_roundtrip) {
  return nn::mean_abs_error(seg_direct, seg_roundtrip);
}

}  // namespace cysgan
