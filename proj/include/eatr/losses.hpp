#pragma once

#include <vector>

#include "eatr/assignment.hpp"
#include "eatr/geometry.hpp"
#include "eatr/rng.hpp"
#include "eatr/tape.hpp"

namespace eatr::losses {

struct LossWeights {
  double lambda_sal = 1.0;
  double lambda_event = 2.0;
  double alpha = 0.2;
  assign::CostWeights cost;
  double background_weight = 1.0;

  void validate() const;  // all weights nonnegative, else ConfigError
};

// Skipped-term telemetry, reported at the end of training.
struct LossCounters {
  long saliency_skipped = 0;
  long empty_pseudo = 0;
};

// ---- value-level losses (pure; these define the semantics) ----

// Hinge between one frame sampled inside the target interval and one outside
// (frame i counts as inside when its center (i+0.5)/L falls in the interval).
// Returns 0 and bumps the counter when either side has no frames.
double saliency_loss(const std::vector<double>& p_s, const geom::Span& gt,
                     double alpha, Rng& rng, LossCounters* counters = nullptr);

// Optimal-assignment span cost between predicted and pseudo event spans.
double event_loss(const std::vector<geom::Span>& predicted,
                  const std::vector<geom::Span>& pseudo,
                  const assign::CostWeights& w,
                  LossCounters* counters = nullptr);

// Matched queries pay confidence + span terms; unmatched queries pay a
// weighted background term pushing confidence toward 0.
double moment_loss(const std::vector<geom::Span>& moments,
                   const std::vector<double>& confidence,
                   const std::vector<geom::Span>& gt,
                   const assign::CostWeights& w, double background_weight);

// moment + lambda_sal * saliency + lambda_event * event. Throws
// DivergenceError when any component is non-finite.
double overall_loss(double moment, double saliency, double event,
                    const LossWeights& w);

// ---- tape-level losses (differentiable twins of the above) ----

// p_s: L_v x 1 saliency scores. Only frames with mask true are sampled.
template <class T>
tape::Var saliency_loss_t(tape::Tape<T>& t, tape::Var p_s,
                          const std::vector<char>& video_mask,
                          const geom::Span& gt, double alpha, Rng& rng,
                          LossCounters* counters = nullptr);

// pred_pos: N x 2 span matrix. Matching runs on values; gradients flow
// through the matched span terms only.
template <class T>
tape::Var event_loss_t(tape::Tape<T>& t, tape::Var pred_pos,
                       const std::vector<geom::Span>& pseudo,
                       const assign::CostWeights& w,
                       LossCounters* counters = nullptr);

// spans: N x 2, conf: N x 1.
template <class T>
tape::Var moment_loss_t(tape::Tape<T>& t, tape::Var spans, tape::Var conf,
                        const std::vector<geom::Span>& gt,
                        const assign::CostWeights& w, double background_weight);

// Sum of per-layer moment losses plus weighted saliency/event terms.
// Invalid (unset) saliency or event handles contribute zero.
template <class T>
tape::Var combine_losses_t(tape::Tape<T>& t,
                           const std::vector<tape::Var>& moment_layers,
                           tape::Var saliency, tape::Var event,
                           const LossWeights& w);

// Spans/confidence column pulled out of tape values for matching and metrics.
template <class T>
std::vector<geom::Span> spans_from_mat(const Mat<T>& m);

}  // namespace eatr::losses
