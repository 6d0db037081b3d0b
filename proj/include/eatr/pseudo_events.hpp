#pragma once

#include <vector>

#include "eatr/geometry.hpp"
#include "eatr/mat.hpp"

namespace eatr::pev {

struct BoundaryScores {
  std::vector<double> scores;  // one per frame; borders without a full
                               // window score 0
  double mean = 0.0;
};

// Cosine self-similarity of the feature rows, computed in double.
// Throws ValidationError on a zero-norm row.
template <class T>
Mat<double> build_tsm(const Mat<T>& features);

// Convolves the 5x5 contrastive kernel along the diagonal. Frames whose
// window would leave the matrix score 0. Throws ValidationError when the
// sequence is shorter than the kernel.
BoundaryScores boundary_scores(const Mat<double>& tsm);

// Threshold at the mean, sliding max filter of size 3 (ties within a run
// keep the last index), surviving indices become event starts; the frame
// ranges between consecutive starts are returned as normalized spans.
// No surviving boundary -> single whole-video span.
std::vector<geom::Span> extract_events(const BoundaryScores& b, int video_len);

// Full pipeline. Sequences shorter than the kernel fall back to a single
// whole-video event instead of erroring.
template <class T>
std::vector<geom::Span> pseudo_events(const Mat<T>& features);

}  // namespace eatr::pev
