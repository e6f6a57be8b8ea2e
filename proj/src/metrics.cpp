#include "cysgan/metrics.hpp"

#include <algorithm>
#include <unordered_map>

namespace cysgan {
namespace {

constexpr double kIouThreshold = 0.5;

std::map<LabelId, Index> sizes(const Grid3<LabelId>& lab) {
  std::map<LabelId, Index> out;
  for (const LabelId v : lab.values())
    if (v != 0) ++out[v];
  return out;
}

}  // namespace

IouMatrix iou_matrix(const LabelVolume& pred, const LabelVolume& gt) {
  if (pred.shape() != gt.shape()) throw ValidationError("iou_matrix", "prediction and ground truth shapes differ");
  std::unordered_map<std::uint64_t, Index> joint;
  std::unordered_map<LabelId, Index> ps, gs;
  for (Index i = 0; i < pred.data.size(); ++i) {
    const LabelId p = pred.data[i], g = gt.data[i];
    if (p) ++ps[p];
    if (g) ++gs[g];
    if (p && g) ++joint[(std::uint64_t(p) << 32) | g];
  }
  IouMatrix out;
  for (const auto& [key, inter] : joint) {
    const LabelId p = static_cast<LabelId>(key >> 32), g = static_cast<LabelId>(key & 0xffffffffu);
    out[{p, g}] = static_cast<double>(inter) / static_cast<double>(ps[p] + gs[g] - inter);
  }
  return out;
}

double average_precision(const std::vector<PrPoint>& curve) {
  // Precision envelope: at each rank, the best precision at this or any later rank.
  std::vector<double> env(curve.size());
  double best = 0;
  for (std::size_t k = curve.size(); k-- > 0;) {
    best = std::max(best, curve[k].precision);
    env[k] = best;
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    ap += (curve[k].recall - prev_recall) * env[k];
    prev_recall = curve[k].recall;
  }
  return ap;
}

APReport evaluate_ap50(const LabelVolume& pred, const LabelVolume& gt, const ScoreMap& scores) {
  const IouMatrix iou = iou_matrix(pred, gt);
  const auto pred_sizes = sizes(pred.data);
  const auto gt_sizes = sizes(gt.data);

  struct Ranked {
    LabelId id;
    double score;
  };
  std::vector<Ranked> ranked;
  for (const auto& [id, n] : pred_sizes) {
    const auto it = scores.find(id);
    if (it == scores.end()) throw ValidationError("scores", "missing confidence for predicted id " + std::to_string(id));
    ranked.push_back({id, it->second});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  // Candidate gt per prediction, best IoU first, then lowest gt id.
  std::map<LabelId, std::vector<std::pair<double, LabelId>>> candidates;
  for (const auto& [key, v] : iou)
    if (v >= kIouThreshold) candidates[key.first].push_back({v, key.second});
  for (auto& [p, list] : candidates)
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });

  APReport report;
  const Index n_gt = static_cast<Index>(gt_sizes.size());
  std::map<LabelId, bool> gt_used;
  for (const Ranked& r : ranked) {
    bool hit = false;
    for (const auto& [v, g] : candidates[r.id]) {
      if (gt_used[g]) continue;
      gt_used[g] = true;
      report.matched.push_back({r.id, g, v});
      hit = true;
      break;
    }
    hit ? ++report.tp : ++report.fp;
    const double recall = n_gt ? static_cast<double>(report.tp) / static_cast<double>(n_gt) : 0.0;
    const double precision = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp);
    report.precision_recall_curve.push_back({recall, precision});
  }
  report.fn = n_gt - report.tp;
  if (n_gt == 0) {
    // Nothing to find: perfect when nothing was predicted either.
    report.ap50 = ranked.empty() ? 1.0 : 0.0;
  } else {
    report.ap50 = average_precision(report.precision_recall_curve);
  }
  return report;
}

ScoreMap mean_foreground_scores(const LabelVolume& pred, const Grid3<float>& foreground) {
  if (pred.shape() != foreground.shape()) throw ValidationError("scores", "foreground map shape differs");
  std::map<LabelId, std::pair<double, Index>> acc;
  for (Index i = 0; i < pred.data.size(); ++i) {
    if (pred.data[i] == 0) continue;
    auto& a = acc[pred.data[i]];
    a.first += foreground[i];
    ++a.second;
  }
  ScoreMap out;
  for (const auto& [id, a] : acc) out[id] = a.first / static_cast<double>(a.second);
  return out;
}

ScoreMap size_scores(const LabelVolume& pred) {
  ScoreMap out;
  for (const auto& [id, n] : sizes(pred.data)) out[id] = static_cast<double>(n);
  return out;
}

}  // namespace cysgan
