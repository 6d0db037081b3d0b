#pragma once

#include <utility>
#include <vector>

#include "eatr/geometry.hpp"
#include "eatr/mat.hpp"

namespace eatr::assign {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), min(R,C) of them
  double total_cost = 0.0;
};

struct CostWeights {
  double lambda_l1 = 10.0;
  double lambda_iou = 1.0;
  double lambda_c = 4.0;
};

// Minimum-cost one-to-one assignment of min(R,C) pairs via shortest
// augmenting paths with potentials. Throws ValidationError on non-finite
// entries or an empty matrix.
Assignment hungarian(const Mat<double>& cost);

// cost(i,j) = lambda_l1 * (|c_i - c_j| + |w_i - w_j|)
//           + lambda_iou * (1 - giou(rows[i], cols[j]))
Mat<double> event_cost_matrix(const std::vector<geom::Span>& rows,
                              const std::vector<geom::Span>& cols,
                              const CostWeights& w);

// cost(i,j) = -lambda_c * confidence[j]
//           + lambda_l1 * (|c_i - c_j| + |w_i - w_j|)
//           + lambda_iou * (1 - giou(gt[i], predicted[j]))
// More ground-truth moments than queries triggers a stderr warning and a
// rectangular match that leaves the surplus unassigned.
Mat<double> moment_cost_matrix(const std::vector<geom::Span>& gt,
                               const std::vector<geom::Span>& predicted,
                               const std::vector<double>& confidence,
                               const CostWeights& w);

}  // namespace eatr::assign
