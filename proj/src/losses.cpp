#include "cysgan/losses.hpp"

#include <cmath>

namespace cysgan {

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_augment") return Ablation::no_augment;
  if (s == "no_semi_sup") return Ablation::no_semi_sup;
  if (s == "translation_only") return Ablation::translation_only;
  throw ValidationError("ablation", "expected full, no_augment, no_semi_sup or translation_only, got '" + s + "'");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_augment: return "no_augment";
    case Ablation::no_semi_sup: return "no_semi_sup";
    case Ablation::translation_only: return "translation_only";
  }
  return "full";
}

const char* term_name(LossTerm t) {
  switch (t) {
    case LossTerm::gan_F_img: return "gan_F_img";
    case LossTerm::gan_B_img: return "gan_B_img";
    case LossTerm::cycle: return "cycle";
    case LossTerm::seg_F_sup: return "seg_F_sup";
    case LossTerm::seg_B_sup: return "seg_B_sup";
    case LossTerm::struct_consistency: return "struct_consistency";
    case LossTerm::gan_B_seg: return "gan_B_seg";
    case LossTerm::gan_F_seg: return "gan_F_seg";
  }
  return "?";
}

bool term_active(LossTerm t, Ablation a) {
  const bool semi = t == LossTerm::struct_consistency || t == LossTerm::gan_B_seg || t == LossTerm::gan_F_seg;
  const bool sup = t == LossTerm::seg_F_sup || t == LossTerm::seg_B_sup;
  switch (a) {
    case Ablation::full:
    case Ablation::no_augment: return true;
    case Ablation::no_semi_sup: return !semi;
    case Ablation::translation_only: return !semi && !sup;
  }
  return true;
}

LossBreakdown total_objective(const std::array<double, 8>& parts, Ablation ablation) {
  LossBreakdown out;
  for (LossTerm t : kAllTerms) {
    if (!term_active(t, ablation)) continue;
    const double v = parts[static_cast<std::size_t>(t)];
    if (!std::isfinite(v)) throw Error(std::string("non-finite loss term ") + term_name(t));
    out[t] = v;
    out.total += v;
  }
  return out;
}

}  // namespace cysgan
