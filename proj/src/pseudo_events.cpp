#include "eatr/pseudo_events.hpp"

#include <cmath>
#include <string>

#include "eatr/errors.hpp"

namespace eatr::pev {

namespace {

// Contrastive boundary kernel: positive within-event blocks on the
// diagonal, negative across-event blocks off it.
constexpr double kZ[5][5] = {{1, 1, 0, -1, -1},
                             {1, 1, 0, -1, -1},
                             {0, 0, 0, 0, 0},
                             {-1, -1, 0, 1, 1},
                             {-1, -1, 0, 1, 1}};

}  // namespace

template <class T>
Mat<double> build_tsm(const Mat<T>& features) {
  const int L = features.rows, d = features.cols;
  if (L < 1) throw ValidationError("build_tsm: empty feature sequence");

  std::vector<double> norm(size_t(L), 0.0);
  for (int i = 0; i < L; ++i) {
    double s = 0.0;
    const T* r = features.row(i);
    for (int j = 0; j < d; ++j) s += double(r[j]) * double(r[j]);
    norm[size_t(i)] = std::sqrt(s);
    if (norm[size_t(i)] == 0.0)
      throw ValidationError("build_tsm: zero-norm feature row " +
                            std::to_string(i));
  }

  Mat<double> tsm(L, L);
  for (int i = 0; i < L; ++i) {
    tsm(i, i) = 1.0;
    const T* ri = features.row(i);
    for (int j = i + 1; j < L; ++j) {
      const T* rj = features.row(j);
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += double(ri[k]) * double(rj[k]);
      const double c = dot / (norm[size_t(i)] * norm[size_t(j)]);
      tsm(i, j) = c;
      tsm(j, i) = c;
    }
  }
  return tsm;
}

template Mat<double> build_tsm<float>(const Mat<float>&);
template Mat<double> build_tsm<double>(const Mat<double>&);

BoundaryScores boundary_scores(const Mat<double>& tsm) {
  const int L = tsm.rows;
  if (L != tsm.cols) throw ValidationError("boundary_scores: matrix not square");
  if (L < 5)
    throw ValidationError("boundary_scores: sequence too short (" +
                          std::to_string(L) + " < 5)");

  BoundaryScores out;
  out.scores.assign(size_t(L), 0.0);
  for (int i = 2; i <= L - 3; ++i) {
    double s = 0.0;
    for (int u = -2; u <= 2; ++u)
      for (int v = -2; v <= 2; ++v)
        s += kZ[u + 2][v + 2] * tsm(i + u, i + v);
    out.scores[size_t(i)] = s;
  }
  double total = 0.0;
  for (double s : out.scores) total += s;
  out.mean = total / double(L);
  return out;
}

std::vector<geom::Span> extract_events(const BoundaryScores& b, int video_len) {
  const int L = video_len;
  if (int(b.scores.size()) != L)
    throw ValidationError("extract_events: score length mismatch");

  std::vector<double> s(b.scores);
  for (double& x : s)
    if (x < b.mean) x = 0.0;

  // Local maxima within a window of 3; adjacent qualifying indices have
  // equal scores by construction, so keeping the last index of each
  // qualifying run resolves plateau ties.
  auto at = [&](int i) { return (i >= 0 && i < L) ? s[size_t(i)] : 0.0; };
  std::vector<char> keep(size_t(L), 0);
  for (int i = 0; i < L; ++i)
    keep[size_t(i)] =
        at(i) > 0.0 && at(i) >= at(i - 1) && at(i) >= at(i + 1);

  std::vector<int> boundaries;
  for (int i = 0; i < L; ++i)
    if (keep[size_t(i)] && !(i + 1 < L && keep[size_t(i + 1)]))
      boundaries.push_back(i);

  // A boundary at frame 0 would create an empty first event.
  if (!boundaries.empty() && boundaries.front() == 0)
    boundaries.erase(boundaries.begin());

  std::vector<geom::Span> events;
  int prev = 0;
  for (int bi : boundaries) {
    events.push_back({(prev + bi) / (2.0 * L), (bi - prev) / double(L)});
    prev = bi;
  }
  events.push_back({(prev + L) / (2.0 * L), (L - prev) / double(L)});
  return events;
}

template <class T>
std::vector<geom::Span> pseudo_events(const Mat<T>& features) {
  if (features.rows < 5) return {{0.5, 1.0}};
  return extract_events(boundary_scores(build_tsm(features)), features.rows);
}

template std::vector<geom::Span> pseudo_events<float>(const Mat<float>&);
template std::vector<geom::Span> pseudo_events<double>(const Mat<double>&);

}  // namespace eatr::pev
