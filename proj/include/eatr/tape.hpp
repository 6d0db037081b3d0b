#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eatr/mat.hpp"
#include "eatr/rng.hpp"

namespace eatr::tape {

// Handle into a Tape; cheap to copy.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode autodiff over Mat<T>. A fresh tape is built per forward pass;
// ops append nodes and record closures that accumulate gradients into their
// inputs when backward() runs. T is float for model math and double for
// finite-difference gradient checking.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() copies; input_ref() aliases caller-owned storage that
  // must outlive the tape (used for model parameters).
  Var input(Mat<T> value, bool needs_grad = false);
  Var input_ref(const Mat<T>* value, bool needs_grad);

  const Mat<T>& val(Var v) const;
  const Mat<T>& grad(Var v) const;  // valid after backward()
  bool needs_grad(Var v) const;
  size_t num_nodes() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and sweeps the tape in reverse.
  void backward(Var loss);

  // ---- elementwise / arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var add_scalar(Var a, T s);
  Var add_rowvec(Var a, Var row);     // a: m x n, row: 1 x n
  Var scale_rows(Var a, Var s);       // a: m x n, s: m x 1
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log(Var a);                     // caller clamps away from 0
  Var logit(Var a, T eps);            // ln(p/(1-p)) on p clamped to [eps,1-eps]
  Var clamp(Var a, T lo, T hi);
  Var dropout(Var a, double rate, Rng& rng);  // inverted scaling; rate 0 = identity

  // ---- matrix products (dispatched kernels) ----
  Var matmul(Var a, Var b);     // (m x k)(k x n)
  Var matmul_nt(Var a, Var b);  // (m x k)(n x k)^T
  Var matmul_tn(Var a, Var b);  // (k x m)^T (k x n)
  Var linear(Var x, Var w, Var b);  // x w + b (b: 1 x n)

  // ---- shape plumbing ----
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_rows(Var a, int r0, int r1);
  Var slice_cols(Var a, int c0, int c1);
  Var gather_rows(Var a, std::vector<int> rows);

  // ---- reductions / normalizations ----
  Var sum_all(Var a);   // 1 x 1
  Var mean_all(Var a);  // 1 x 1
  // Softmax along each row; entries at masked (false) columns get
  // probability 0. mask may be empty = all valid.
  Var row_softmax(Var a, std::vector<char> col_mask = {});
  // y_ij = a_ij / (sum_i' a_i'j + eps), per column.
  Var col_normalize(Var a, T eps);
  // Per-row layer norm with learnable gamma/beta (1 x n each).
  Var layer_norm(Var a, Var gamma, Var beta, T eps);
  // 1 x n row of column maxima over rows with mask true; ties -> first row.
  Var row_max_pool(Var a, std::vector<char> row_mask = {});
  // m x 1 of row dot products of two m x n matrices.
  Var dot_rows(Var a, Var b);
  // Zero out rows whose mask entry is false.
  Var zero_rows(Var a, std::vector<char> row_mask);

  // ---- coordinate encodings ----
  // x: n x 1 -> n x d interleaved (sin, cos) pairs, differentiable in x.
  Var sincos_embed(Var x, int d, T tau);

  // ---- fused span loss ----
  // pred, target: n x 2 rows of (center, width). Returns 1 x 1 value of
  // sum_i [ l1_w * (|dc| + |dw|) + iou_w * (1 - giou_i) ]; gradient flows
  // to pred only. Interval clamping matches geometry::span_to_interval.
  Var span_l1_giou_loss(Var pred, const Mat<T>& target, T l1_w, T iou_w);

 private:
  struct Node {
    Mat<T> owned;               // empty when ext is set
    const Mat<T>* ext = nullptr;
    Mat<T> grad;                // allocated when needs_grad
    bool needs_grad = false;
    std::function<void()> back;  // may be empty (leaves, no-grad nodes)
  };

  const Mat<T>& value_of(int i) const {
    const Node& n = nodes_[size_t(i)];
    return n.ext ? *n.ext : n.owned;
  }
  Mat<T>& grad_of(int i) { return nodes_[size_t(i)].grad; }

  Var push(Mat<T> val, bool needs_grad, std::function<void()> back);
  void check(Var v) const;

  std::vector<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace eatr::tape
