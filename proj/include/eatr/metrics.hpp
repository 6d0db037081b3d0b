#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eatr/geometry.hpp"

namespace eatr::metrics {

struct ScoredSpan {
  geom::Span span;
  double confidence = 0.0;
};

using PredictionSet = std::vector<std::vector<ScoredSpan>>;  // per sample
using GroundTruth = std::vector<std::vector<geom::Span>>;    // per sample

// Fraction of samples whose highest-confidence span has IoU strictly
// greater than m with any of that sample's ground-truth spans. Samples with
// no predictions count as misses (with a warning).
double recall1_at_iou(const PredictionSet& preds, const GroundTruth& gts,
                      double m);

struct ApResult {
  std::vector<double> per_threshold;
  double mean = 0.0;
};

// Detection-style AP: rank all predictions by confidence, greedily match
// each to an unmatched same-sample gt with IoU >= threshold, integrate the
// all-point interpolated precision-recall curve.
ApResult mean_ap(const PredictionSet& preds, const GroundTruth& gts,
                 const std::vector<double>& thresholds);

std::vector<double> default_iou_thresholds();  // 0.50, 0.55, ..., 0.95

struct Report {
  double r1_at_05 = 0.0;
  double r1_at_07 = 0.0;
  double map_at_05 = 0.0;
  double map_at_075 = 0.0;
  double map_avg = 0.0;
};

Report evaluate(const PredictionSet& preds, const GroundTruth& gts);
std::string report_json(const Report& r);

// One line per sample: qid, best IoU of the top-1 prediction over the gts.
std::string top1_iou_csv(const PredictionSet& preds, const GroundTruth& gts,
                         const std::vector<int64_t>& qids);

}  // namespace eatr::metrics
