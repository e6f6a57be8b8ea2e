#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "support/oracles.hpp"

namespace cysgan::test {

struct OracleResult {
  Index tp = 0, fp = 0, fn = 0;
  double ap = 0;
  bool has_exact_half = false;  ///< an IoU of exactly 0.5 makes the matching ambiguous
};

/// Exhaustive matcher: IoUs by per-pair voxel counting, every partial injective
/// assignment enumerated, the one with the lexicographically best TP pattern in
/// confidence order kept; AP as the mean interpolated precision over gt.
inline OracleResult brute_force_ap50(const Grid3<LabelId>& pred, const Grid3<LabelId>& gt,
                                     const std::map<LabelId, double>& scores) {
  std::vector<LabelId> p_ids, g_ids;
  for (LabelId id : label_ids(pred))
    if (id) p_ids.push_back(id);
  for (LabelId id : label_ids(gt))
    if (id) g_ids.push_back(id);
  std::stable_sort(p_ids.begin(), p_ids.end(), [&](LabelId a, LabelId b) { return scores.at(a) > scores.at(b); });

  OracleResult r;
  std::vector<std::vector<bool>> ok(p_ids.size(), std::vector<bool>(g_ids.size()));
  for (std::size_t i = 0; i < p_ids.size(); ++i)
    for (std::size_t j = 0; j < g_ids.size(); ++j) {
      const double v = voxel_iou(pred, p_ids[i], gt, g_ids[j]);
      ok[i][j] = v >= 0.5;
      r.has_exact_half |= v == 0.5;
    }

  std::vector<bool> best(p_ids.size(), false), cur(p_ids.size(), false);
  std::vector<bool> used(g_ids.size(), false);
  std::function<void(std::size_t)> go = [&](std::size_t i) {
    if (i == p_ids.size()) {
      if (std::lexicographical_compare(best.begin(), best.end(), cur.begin(), cur.end())) best = cur;
      return;
    }
    cur[i] = false;
    go(i + 1);
    for (std::size_t j = 0; j < g_ids.size(); ++j) {
      if (!ok[i][j] || used[j]) continue;
      used[j] = true;
      cur[i] = true;
      go(i + 1);
      cur[i] = false;
      used[j] = false;
    }
  };
  go(0);

  std::vector<double> precision;
  Index tp = 0;
  for (std::size_t k = 0; k < best.size(); ++k) {
    tp += best[k];
    precision.push_back(double(tp) / double(k + 1));
  }
  r.tp = tp;
  r.fp = static_cast<Index>(p_ids.size()) - tp;
  r.fn = static_cast<Index>(g_ids.size()) - tp;
  if (g_ids.empty()) {
    r.ap = p_ids.empty() ? 1.0 : 0.0;
    return r;
  }
  for (std::size_t k = 0; k < best.size(); ++k) {
    if (!best[k]) continue;
    double interp = 0;
    for (std::size_t j = k; j < precision.size(); ++j) interp = std::max(interp, precision[j]);
    r.ap += interp / double(g_ids.size());
  }
  return r;
}

}  // namespace cysgan::test
