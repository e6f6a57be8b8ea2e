#pragma once

#include <map>
#include <utility>
#include <vector>

#include "cysgan/bcd.hpp"
#include "cysgan/volume.hpp"

namespace cysgan {

/// Sparse IoU table keyed by (pred_id, gt_id); only overlapping pairs appear.
using IouMatrix = std::map<std::pair<LabelId, LabelId>, double>;

IouMatrix iou_matrix(const LabelVolume& pred, const LabelVolume& gt);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

struct MatchedPair {
  LabelId pred = 0;
  LabelId gt = 0;
  double iou = 0;
};

struct APReport {
  double ap50 = 0;
  std::vector<PrPoint> precision_recall_curve;  ///< one point per ranked prediction
  Index tp = 0;
  Index fp = 0;
  Index fn = 0;
  std::vector<MatchedPair> matched;
};

using ScoreMap = std::map<LabelId, double>;

/// AP at IoU 0.5 with greedy confidence-ordered matching and all-point
/// interpolation. Every predicted id must have a score.
APReport evaluate_ap50(const LabelVolume& pred, const LabelVolume& gt, const ScoreMap& scores);

/// Area under the precision envelope of a ranked TP/FP sequence.
double average_precision(const std::vector<PrPoint>& curve);

/// Mean predicted foreground probability over each instance.
ScoreMap mean_foreground_scores(const LabelVolume& pred, const Grid3<float>& foreground);

/// Instance size as confidence, for predictions without probabilities.
ScoreMap size_scores(const LabelVolume& pred);

}  // namespace cysgan
