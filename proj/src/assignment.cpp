#include "eatr/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "eatr/errors.hpp"

namespace eatr::assign {

namespace {

// Jonker-Volgenant style shortest augmenting path for n rows <= m cols,
// 1-indexed internally; a(i,j) reads the 0-indexed cost.
std::vector<std::pair<int, int>> solve_rows_le_cols(
    int n, int m, const std::function<double(int, int)>& a) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(m) + 1, 0.0);
  std::vector<int> p(size_t(m) + 1, 0), way(size_t(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(m) + 1, kInf);
    std::vector<char> used(size_t(m) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      const int i0 = p[size_t(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[size_t(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      const int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(size_t(n));
  for (int j = 1; j <= m; ++j)
    if (p[size_t(j)] != 0) pairs.emplace_back(p[size_t(j)] - 1, j - 1);
  return pairs;
}

}  // namespace

Assignment hungarian(const Mat<double>& cost) {
  if (cost.rows < 1 || cost.cols < 1)
    throw ValidationError("hungarian: empty cost matrix");
  for (double x : cost.v)
    if (!std::isfinite(x))
      throw ValidationError("hungarian: non-finite cost entry");

  const int rows = cost.rows, cols = cost.cols;
  std::vector<std::pair<int, int>> pairs;
  if (rows <= cols) {
    pairs = solve_rows_le_cols(
        rows, cols, [&](int i, int j) { return cost(i, j); });
  } else {
    pairs = solve_rows_le_cols(
        cols, rows, [&](int i, int j) { return cost(j, i); });
    for (auto& pr : pairs) std::swap(pr.first, pr.second);
  }
  std::sort(pairs.begin(), pairs.end());

  Assignment out;
  out.pairs = std::move(pairs);
  for (auto [i, j] : out.pairs) out.total_cost += cost(i, j);
  return out;
}

Mat<double> event_cost_matrix(const std::vector<geom::Span>& rows,
                              const std::vector<geom::Span>& cols,
                              const CostWeights& w) {
  if (rows.empty() || cols.empty())
    throw ValidationError("event_cost_matrix: empty span list");
  Mat<double> cost(int(rows.size()), int(cols.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j) {
      const double l1 =
          std::abs(rows[i].c - cols[j].c) + std::abs(rows[i].w - cols[j].w);
      const double giou = geom::iou_giou(rows[i], cols[j]).giou;
      cost(int(i), int(j)) = w.lambda_l1 * l1 + w.lambda_iou * (1.0 - giou);
    }
  return cost;
}

Mat<double> moment_cost_matrix(const std::vector<geom::Span>& gt,
                               const std::vector<geom::Span>& predicted,
                               const std::vector<double>& confidence,
                               const CostWeights& w) {
  if (gt.empty()) throw ValidationError("moment_cost_matrix: no ground truth");
  if (predicted.size() != confidence.size())
    throw ValidationError("moment_cost_matrix: confidence length mismatch");
  if (gt.size() > predicted.size())
    std::fprintf(stderr,
                 "warning: %zu target moments exceed %zu queries; surplus "
                 "targets stay unmatched\n",
                 gt.size(), predicted.size());
  Mat<double> cost(int(gt.size()), int(predicted.size()));
  for (size_t i = 0; i < gt.size(); ++i)
    for (size_t j = 0; j < predicted.size(); ++j) {
      const double l1 = std::abs(gt[i].c - predicted[j].c) +
                        std::abs(gt[i].w - predicted[j].w);
      const double giou = geom::iou_giou(gt[i], predicted[j]).giou;
      cost(int(i), int(j)) = -w.lambda_c * confidence[j] +
                             w.lambda_l1 * l1 + w.lambda_iou * (1.0 - giou);
    }
  return cost;
}

}  // namespace eatr::assign
