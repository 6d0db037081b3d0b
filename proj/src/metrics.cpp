#include "eatr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "eatr/errors.hpp"

namespace eatr::metrics {

namespace {

void check_sizes(const PredictionSet& preds, const GroundTruth& gts) {
  if (preds.size() != gts.size())
    throw ValidationError("metrics: prediction/gt sample counts differ");
  for (const auto& g : gts)
    if (g.empty())
      throw ValidationError("metrics: every sample needs >= 1 gt span");
}

// Index of the highest-confidence prediction; first wins ties.
int top1_index(const std::vector<ScoredSpan>& preds) {
  int best = 0;
  for (int i = 1; i < int(preds.size()); ++i)
    if (preds[size_t(i)].confidence > preds[size_t(best)].confidence) best = i;
  return best;
}

double best_iou(const geom::Span& p, const std::vector<geom::Span>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, geom::iou_giou(p, g).iou);
  return best;
}

}  // namespace

double recall1_at_iou(const PredictionSet& preds, const GroundTruth& gts,
                      double m) {
  check_sizes(preds, gts);
  if (preds.empty()) return 0.0;
  int hits = 0;
  for (size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].empty()) {
      std::cerr << "warning: sample " << s
                << " has no predictions, counted as miss\n";
      continue;
    }
    const auto& top = preds[s][size_t(top1_index(preds[s]))];
    if (best_iou(top.span, gts[s]) > m) ++hits;
  }
  return double(hits) / double(preds.size());
}

ApResult mean_ap(const PredictionSet& preds, const GroundTruth& gts,
                 const std::vector<double>& thresholds) {
  check_sizes(preds, gts);
  if (thresholds.empty())
    throw ValidationError("metrics: need at least one IoU threshold");

  // global rank: confidence desc, ties by (sample, slot) for determinism
  struct Ranked {
    double conf;
    int sample;
    int slot;
  };
  std::vector<Ranked> ranked;
  size_t total_gt = 0;
  for (size_t s = 0; s < preds.size(); ++s) {
    total_gt += gts[s].size();
    for (size_t k = 0; k < preds[s].size(); ++k) {
      if (!std::isfinite(preds[s][k].confidence))
        throw ValidationError("metrics: non-finite confidence");
      ranked.push_back({preds[s][k].confidence, int(s), int(k)});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) {
                     if (a.conf != b.conf) return a.conf > b.conf;
                     if (a.sample != b.sample) return a.sample < b.sample;
                     return a.slot < b.slot;
                   });

  ApResult out;
  for (double th : thresholds) {
    std::vector<std::vector<char>> used(gts.size());
    for (size_t s = 0; s < gts.size(); ++s) used[s].assign(gts[s].size(), 0);

    std::vector<char> is_tp(ranked.size(), 0);
    for (size_t r = 0; r < ranked.size(); ++r) {
      const auto& item = ranked[r];
      const auto& span = preds[size_t(item.sample)][size_t(item.slot)].span;
      int best_j = -1;
      double best = th;  // must reach the threshold
      const auto& sample_gts = gts[size_t(item.sample)];
      for (size_t jj = 0; jj < sample_gts.size(); ++jj) {
        if (used[size_t(item.sample)][jj]) continue;
        const double v = geom::iou_giou(span, sample_gts[jj]).iou;
        if (v >= best) {
          best = v;
          best_j = int(jj);
        }
      }
      if (best_j >= 0) {
        used[size_t(item.sample)][size_t(best_j)] = 1;
        is_tp[r] = 1;
      }
    }

    // all-point interpolated area under precision-recall
    double ap = 0.0;
    if (total_gt > 0) {
      std::vector<double> precision, recall;
      int tp = 0;
      for (size_t r = 0; r < ranked.size(); ++r) {
        tp += is_tp[r];
        precision.push_back(double(tp) / double(r + 1));
        recall.push_back(double(tp) / double(total_gt));
      }
      double run_max = 0.0;
      for (size_t r = ranked.size(); r-- > 0;) {
        run_max = std::max(run_max, precision[r]);
        const double lo = (r == 0) ? 0.0 : recall[r - 1];
        ap += (recall[r] - lo) * run_max;
      }
    }
    out.per_threshold.push_back(ap);
  }
  double sum = 0.0;
  for (double x : out.per_threshold) sum += x;
  out.mean = sum / double(out.per_threshold.size());
  return out;
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> out;
  for (int k = 0; k < 10; ++k) out.push_back(0.5 + 0.05 * k);
  return out;
}

Report evaluate(const PredictionSet& preds, const GroundTruth& gts) {
  Report r;
  r.r1_at_05 = recall1_at_iou(preds, gts, 0.5);
  r.r1_at_07 = recall1_at_iou(preds, gts, 0.7);
  const auto ap = mean_ap(preds, gts, default_iou_thresholds());
  r.map_at_05 = ap.per_threshold[0];
  r.map_at_075 = ap.per_threshold[5];
  r.map_avg = ap.mean;
  return r;
}

std::string report_json(const Report& r) {
  nlohmann::json j;
  j["R1@0.5"] = r.r1_at_05;
  j["R1@0.7"] = r.r1_at_07;
  j["mAP@0.5"] = r.map_at_05;
  j["mAP@0.75"] = r.map_at_075;
  j["mAP_avg"] = r.map_avg;
  return j.dump(2) + "\n";
}

std::string top1_iou_csv(const PredictionSet& preds, const GroundTruth& gts,
                         const std::vector<int64_t>& qids) {
  check_sizes(preds, gts);
  if (qids.size() != preds.size())
    throw ValidationError("metrics: qid list size mismatch");
  std::ostringstream out;
  out << "qid,top1_iou\n";
  for (size_t s = 0; s < preds.size(); ++s) {
    double iou = 0.0;
    if (!preds[s].empty())
      iou = best_iou(preds[s][size_t(top1_index(preds[s]))].span, gts[s]);
    out << qids[s] << ',' << iou << '\n';
  }
  return out.str();
}

}  // namespace eatr::metrics
