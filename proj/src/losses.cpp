#include "eatr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eatr/errors.hpp"

namespace eatr::losses {

namespace {

constexpr double kProbEps = 1e-7;

double clamp_prob(double p) {
  return std::min(1.0 - kProbEps, std::max(kProbEps, p));
}

// Valid frame indices split by whether the frame center falls inside gt.
struct FrameSplit {
  std::vector<int> inside;
  std::vector<int> outside;
};

FrameSplit split_frames(int length, const std::vector<char>& mask,
                        const geom::Span& gt) {
  auto [lo, hi] = geom::span_to_interval(gt);
  FrameSplit out;
  for (int i = 0; i < length; ++i) {
    if (!mask.empty() && !mask[size_t(i)]) continue;
    const double center = (i + 0.5) / double(length);
    if (center >= lo && center <= hi)
      out.inside.push_back(i);
    else
      out.outside.push_back(i);
  }
  return out;
}

// Sample (inside, outside) indices; inside first so both loss forms consume
// the rng identically.
bool sample_pair(const FrameSplit& split, Rng& rng, int* in_idx, int* out_idx,
                 LossCounters* counters) {
  if (split.inside.empty() || split.outside.empty()) {
    if (counters != nullptr) counters->saliency_skipped++;
    return false;
  }
  *in_idx = split.inside[size_t(
      rng.uniform_int(0, int64_t(split.inside.size()) - 1))];
  *out_idx = split.outside[size_t(
      rng.uniform_int(0, int64_t(split.outside.size()) - 1))];
  return true;
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_sal < 0 || lambda_event < 0 || alpha < 0 ||
      background_weight < 0 || cost.lambda_l1 < 0 || cost.lambda_iou < 0 ||
      cost.lambda_c < 0)
    throw ConfigError("loss weights must be nonnegative");
}

double saliency_loss(const std::vector<double>& p_s, const geom::Span& gt,
                     double alpha, Rng& rng, LossCounters* counters) {
  FrameSplit split = split_frames(int(p_s.size()), {}, gt);
  int in_idx = 0, out_idx = 0;
  if (!sample_pair(split, rng, &in_idx, &out_idx, counters)) return 0.0;
  return std::max(0.0, alpha + p_s[size_t(out_idx)] - p_s[size_t(in_idx)]);
}

double event_loss(const std::vector<geom::Span>& predicted,
                  const std::vector<geom::Span>& pseudo,
                  const assign::CostWeights& w, LossCounters* counters) {
  if (pseudo.empty()) {
    if (counters != nullptr) counters->empty_pseudo++;
    return 0.0;
  }
  if (predicted.empty())
    throw ValidationError("event_loss: no predicted spans");
  auto cost = assign::event_cost_matrix(pseudo, predicted, w);
  return assign::hungarian(cost).total_cost;
}

double moment_loss(const std::vector<geom::Span>& moments,
                   const std::vector<double>& confidence,
                   const std::vector<geom::Span>& gt,
                   const assign::CostWeights& w, double background_weight) {
  if (gt.empty()) throw ValidationError("moment_loss: no ground-truth spans");
  auto cost = assign::moment_cost_matrix(gt, moments, confidence, w);
  auto matching = assign::hungarian(cost);

  std::vector<char> matched(moments.size(), 0);
  double loss = 0.0;
  for (auto [gi, pi] : matching.pairs) {
    matched[size_t(pi)] = 1;
    const auto& g = gt[size_t(gi)];
    const auto& p = moments[size_t(pi)];
    const auto r = geom::iou_giou(g, p);
    loss += w.lambda_l1 * (std::abs(g.c - p.c) + std::abs(g.w - p.w));
    loss += w.lambda_iou * (1.0 - r.giou);
    loss += -w.lambda_c * std::log(clamp_prob(confidence[size_t(pi)]));
  }
  for (size_t i = 0; i < moments.size(); ++i) {
    if (matched[i]) continue;
    loss += -background_weight * std::log(clamp_prob(1.0 - confidence[i]));
  }
  return loss;
}

double overall_loss(double moment, double saliency, double event,
                    const LossWeights& w) {
  if (!std::isfinite(moment) || !std::isfinite(saliency) ||
      !std::isfinite(event)) {
    std::ostringstream msg;
    msg << "non-finite loss component: moment=" << moment
        << " saliency=" << saliency << " event=" << event;
    throw DivergenceError(msg.str());
  }
  return moment + w.lambda_sal * saliency + w.lambda_event * event;
}

template <class T>
std::vector<geom::Span> spans_from_mat(const Mat<T>& m) {
  if (m.cols != 2) throw ValidationError("span matrix must have 2 columns");
  std::vector<geom::Span> out(size_t(m.rows));
  for (int i = 0; i < m.rows; ++i)
    out[size_t(i)] = geom::Span{double(m(i, 0)), double(m(i, 1))};
  return out;
}

template <class T>
tape::Var saliency_loss_t(tape::Tape<T>& t, tape::Var p_s,
                          const std::vector<char>& video_mask,
                          const geom::Span& gt, double alpha, Rng& rng,
                          LossCounters* counters) {
  const auto& scores = t.val(p_s);
  if (scores.cols != 1)
    throw ValidationError("saliency scores must be a column");
  FrameSplit split = split_frames(scores.rows, video_mask, gt);
  int in_idx = 0, out_idx = 0;
  if (!sample_pair(split, rng, &in_idx, &out_idx, counters))
    return t.input(Mat<T>(1, 1), false);
  tape::Var p_in = t.gather_rows(p_s, {in_idx});
  tape::Var p_out = t.gather_rows(p_s, {out_idx});
  return t.relu(t.add_scalar(t.sub(p_out, p_in), T(alpha)));
}

template <class T>
tape::Var event_loss_t(tape::Tape<T>& t, tape::Var pred_pos,
                       const std::vector<geom::Span>& pseudo,
                       const assign::CostWeights& w, LossCounters* counters) {
  if (pseudo.empty()) {
    if (counters != nullptr) counters->empty_pseudo++;
    return t.input(Mat<T>(1, 1), false);
  }
  auto predicted = spans_from_mat(t.val(pred_pos));
  auto cost = assign::event_cost_matrix(pseudo, predicted, w);
  auto matching = assign::hungarian(cost);

  std::vector<int> pred_rows;
  Mat<T> targets(int(matching.pairs.size()), 2);
  for (size_t k = 0; k < matching.pairs.size(); ++k) {
    auto [ei, pi] = matching.pairs[k];
    pred_rows.push_back(pi);
    targets(int(k), 0) = T(pseudo[size_t(ei)].c);
    targets(int(k), 1) = T(pseudo[size_t(ei)].w);
  }
  tape::Var matched = t.gather_rows(pred_pos, pred_rows);
  return t.span_l1_giou_loss(matched, targets, T(w.lambda_l1),
                             T(w.lambda_iou));
}

template <class T>
tape::Var moment_loss_t(tape::Tape<T>& t, tape::Var spans, tape::Var conf,
                        const std::vector<geom::Span>& gt,
                        const assign::CostWeights& w,
                        double background_weight) {
  if (gt.empty()) throw ValidationError("moment_loss: no ground-truth spans");
  auto predicted = spans_from_mat(t.val(spans));
  const auto& conf_m = t.val(conf);
  if (conf_m.cols != 1 || conf_m.rows != int(predicted.size()))
    throw ValidationError("moment_loss: confidence shape mismatch");
  std::vector<double> confidence(conf_m.v.begin(), conf_m.v.end());

  auto cost = assign::moment_cost_matrix(gt, predicted, confidence, w);
  auto matching = assign::hungarian(cost);

  std::vector<char> is_matched(predicted.size(), 0);
  std::vector<int> pred_rows;
  Mat<T> targets(int(matching.pairs.size()), 2);
  for (size_t k = 0; k < matching.pairs.size(); ++k) {
    auto [gi, pi] = matching.pairs[k];
    is_matched[size_t(pi)] = 1;
    pred_rows.push_back(pi);
    targets(int(k), 0) = T(gt[size_t(gi)].c);
    targets(int(k), 1) = T(gt[size_t(gi)].w);
  }
  std::vector<int> bg_rows;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (!is_matched[i]) bg_rows.push_back(int(i));

  tape::Var matched_spans = t.gather_rows(spans, pred_rows);
  tape::Var loss = t.span_l1_giou_loss(matched_spans, targets, T(w.lambda_l1),
                                       T(w.lambda_iou));

  tape::Var p = t.clamp(t.gather_rows(conf, pred_rows), T(kProbEps),
                        T(1.0 - kProbEps));
  loss = t.add(loss, t.scale(t.sum_all(t.log(p)), T(-w.lambda_c)));

  if (!bg_rows.empty()) {
    tape::Var q = t.gather_rows(conf, bg_rows);
    tape::Var one_minus = t.add_scalar(t.scale(q, T(-1)), T(1));
    tape::Var qc = t.clamp(one_minus, T(kProbEps), T(1.0 - kProbEps));
    loss = t.add(loss, t.scale(t.sum_all(t.log(qc)), T(-background_weight)));
  }
  return loss;
}

template <class T>
tape::Var combine_losses_t(tape::Tape<T>& t,
                           const std::vector<tape::Var>& moment_layers,
                           tape::Var saliency, tape::Var event,
                           const LossWeights& w) {
  if (moment_layers.empty())
    throw ValidationError("combine_losses: no moment terms");
  tape::Var total = moment_layers[0];
  for (size_t i = 1; i < moment_layers.size(); ++i)
    total = t.add(total, moment_layers[i]);
  if (saliency.valid())
    total = t.add(total, t.scale(saliency, T(w.lambda_sal)));
  if (event.valid()) total = t.add(total, t.scale(event, T(w.lambda_event)));
  return total;
}

#define EATR_INSTANTIATE(T)                                                    \
  template std::vector<geom::Span> spans_from_mat<T>(const Mat<T>&);           \
  template tape::Var saliency_loss_t<T>(tape::Tape<T>&, tape::Var,            \
                                        const std::vector<char>&,             \
                                        const geom::Span&, double, Rng&,      \
                                        LossCounters*);                       \
  template tape::Var event_loss_t<T>(tape::Tape<T>&, tape::Var,               \
                                     const std::vector<geom::Span>&,          \
                                     const assign::CostWeights&,              \
                                     LossCounters*);                          \
  template tape::Var moment_loss_t<T>(tape::Tape<T>&, tape::Var, tape::Var,   \
                                      const std::vector<geom::Span>&,         \
                                      const assign::CostWeights&, double);    \
  template tape::Var combine_losses_t<T>(tape::Tape<T>&,                      \
                                         const std::vector<tape::Var>&,       \
                                         tape::Var, tape::Var,                \
                                         const LossWeights&);

EATR_INSTANTIATE(float)
EATR_INSTANTIATE(double)
#undef EATR_INSTANTIATE

}  // namespace eatr::losses
