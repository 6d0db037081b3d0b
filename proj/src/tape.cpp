#include "eatr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "eatr/errors.hpp"
#include "eatr/kernels.hpp"

namespace eatr::tape {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("tape: " + what);
}

}  // namespace

template <class T>
void Tape<T>::check(Var v) const {
  require(v.i >= 0 && size_t(v.i) < nodes_.size(), "dangling var handle");
}

template <class T>
Var Tape<T>::push(Mat<T> val, bool needs_grad, std::function<void()> back) {
  Node n;
  n.owned = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad = Mat<T>(n.owned.rows, n.owned.cols);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::input(Mat<T> value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

template <class T>
Var Tape<T>::input_ref(const Mat<T>* value, bool needs_grad) {
  require(value != nullptr, "null input_ref");
  Node n;
  n.ext = value;
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad = Mat<T>(value->rows, value->cols);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

template <class T>
const Mat<T>& Tape<T>::val(Var v) const {
  check(v);
  return value_of(v.i);
}

template <class T>
const Mat<T>& Tape<T>::grad(Var v) const {
  check(v);
  require(nodes_[size_t(v.i)].needs_grad, "grad of a no-grad node");
  return nodes_[size_t(v.i)].grad;
}

template <class T>
bool Tape<T>::needs_grad(Var v) const {
  check(v);
  return nodes_[size_t(v.i)].needs_grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
  check(loss);
  const Mat<T>& lv = value_of(loss.i);
  require(lv.rows == 1 && lv.cols == 1, "backward target must be 1x1");
  require(nodes_[size_t(loss.i)].needs_grad, "backward target has no grad");
  grad_of(loss.i)(0, 0) = T(1);
  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[size_t(i)];
    if (n.needs_grad && n.back) n.back();
  }
}

// ---------------------------------------------------------------- arithmetic

template <class T>
Var Tape<T>::add(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.same_shape(bv), "add: shape mismatch");
  Mat<T> y(av.rows, av.cols);
  kern::add(y.size(), av.data(), bv.data(), y.data());
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      if (nodes_[size_t(a)].needs_grad)
        kern::axpy(g.size(), T(1), g.data(), grad_of(a).data());
      if (nodes_[size_t(b)].needs_grad)
        kern::axpy(g.size(), T(1), g.data(), grad_of(b).data());
    };
  return out;
}

template <class T>
Var Tape<T>::sub(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.same_shape(bv), "sub: shape mismatch");
  Mat<T> y(av.rows, av.cols);
  kern::sub(y.size(), av.data(), bv.data(), y.data());
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      if (nodes_[size_t(a)].needs_grad)
        kern::axpy(g.size(), T(1), g.data(), grad_of(a).data());
      if (nodes_[size_t(b)].needs_grad)
        kern::axpy(g.size(), T(-1), g.data(), grad_of(b).data());
    };
  return out;
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.same_shape(bv), "mul: shape mismatch");
  Mat<T> y(av.rows, av.cols);
  kern::mul(y.size(), av.data(), bv.data(), y.data());
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &bvv = value_of(b);
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& ga = grad_of(a);
        for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * bvv.v[i];
      }
      if (nodes_[size_t(b)].needs_grad) {
        Mat<T>& gb = grad_of(b);
        for (size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i] * avv.v[i];
      }
    };
  return out;
}

template <class T>
Var Tape<T>::scale(Var a, T s) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  Mat<T> y(av.rows, av.cols);
  kern::scale(y.size(), s, av.data(), y.data());
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, s, o = out.i] {
      const Mat<T>& g = grad_of(o);
      kern::axpy(g.size(), s, g.data(), grad_of(a).data());
    };
  return out;
}

template <class T>
Var Tape<T>::add_scalar(Var a, T s) {
  check(a);
  Mat<T> y = value_of(a.i);
  for (auto& x : y.v) x += s;
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      kern::axpy(g.size(), T(1), g.data(), grad_of(a).data());
    };
  return out;
}

template <class T>
Var Tape<T>::add_rowvec(Var a, Var row) {
  check(a);
  check(row);
  const Mat<T>&av = value_of(a.i), &rv = value_of(row.i);
  require(rv.rows == 1 && rv.cols == av.cols, "add_rowvec: shape mismatch");
  Mat<T> y(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < av.cols; ++j) y(i, j) = av(i, j) + rv(0, j);
  bool ng = needs_grad(a) || needs_grad(row);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, r = row.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      if (nodes_[size_t(a)].needs_grad)
        kern::axpy(g.size(), T(1), g.data(), grad_of(a).data());
      if (nodes_[size_t(r)].needs_grad) {
        Mat<T>& gr = grad_of(r);
        for (int j = 0; j < g.cols; ++j) {
          double s = 0.0;
          for (int i = 0; i < g.rows; ++i) s += double(g(i, j));
          gr(0, j) += T(s);
        }
      }
    };
  return out;
}

template <class T>
Var Tape<T>::scale_rows(Var a, Var s) {
  check(a);
  check(s);
  const Mat<T>&av = value_of(a.i), &sv = value_of(s.i);
  require(sv.rows == av.rows && sv.cols == 1, "scale_rows: shape mismatch");
  Mat<T> y(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < av.cols; ++j) y(i, j) = av(i, j) * sv(i, 0);
  bool ng = needs_grad(a) || needs_grad(s);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, s = s.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &svv = value_of(s);
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& ga = grad_of(a);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * svv(i, 0);
      }
      if (nodes_[size_t(s)].needs_grad) {
        Mat<T>& gs = grad_of(s);
        for (int i = 0; i < g.rows; ++i) {
          double acc = 0.0;
          for (int j = 0; j < g.cols; ++j)
            acc += double(g(i, j)) * double(avv(i, j));
          gs(i, 0) += T(acc);
        }
      }
    };
  return out;
}

template <class T>
Var Tape<T>::relu(Var a) {
  check(a);
  Mat<T> y = value_of(a.i);
  for (auto& x : y.v) x = std::max(x, T(0));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& avv = value_of(a);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i)
        if (avv.v[i] > T(0)) ga.v[i] += g.v[i];
    };
  return out;
}

template <class T>
Var Tape<T>::sigmoid(Var a) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  Mat<T> y(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i)
    y.v[i] = T(1.0 / (1.0 + std::exp(-double(av.v[i]))));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& yv = value_of(o);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i)
        ga.v[i] += g.v[i] * yv.v[i] * (T(1) - yv.v[i]);
    };
  return out;
}

template <class T>
Var Tape<T>::log(Var a) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  Mat<T> y(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) {
    require(av.v[i] > T(0), "log of non-positive value");
    y.v[i] = T(std::log(double(av.v[i])));
  }
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& avv = value_of(a);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] / avv.v[i];
    };
  return out;
}

template <class T>
Var Tape<T>::logit(Var a, T eps) {
  check(a);
  require(eps > T(0) && eps < T(0.5), "logit: eps out of range");
  const Mat<T>& av = value_of(a.i);
  Mat<T> y(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) {
    double p = std::clamp(double(av.v[i]), double(eps), 1.0 - double(eps));
    y.v[i] = T(std::log(p / (1.0 - p)));
  }
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, eps] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& avv = value_of(a);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) {
        double p = double(avv.v[i]);
        if (p > double(eps) && p < 1.0 - double(eps))
          ga.v[i] += T(double(g.v[i]) / (p * (1.0 - p)));
      }
    };
  return out;
}

template <class T>
Var Tape<T>::clamp(Var a, T lo, T hi) {
  check(a);
  require(lo < hi, "clamp: bad bounds");
  Mat<T> y = value_of(a.i);
  for (auto& x : y.v) x = std::clamp(x, lo, hi);
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, lo, hi] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& avv = value_of(a);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i)
        if (avv.v[i] > lo && avv.v[i] < hi) ga.v[i] += g.v[i];
    };
  return out;
}

template <class T>
Var Tape<T>::dropout(Var a, double rate, Rng& rng) {
  check(a);
  require(rate >= 0.0 && rate < 1.0, "dropout: rate out of range");
  if (rate == 0.0) return a;
  const Mat<T>& av = value_of(a.i);
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<T>>(av.size());
  Mat<T> y(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform() < keep ? T(1.0 / keep) : T(0);
    y.v[i] = av.v[i] * (*mask)[i];
  }
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, mask] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * (*mask)[i];
    };
  return out;
}

// ------------------------------------------------------------------ products

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.cols == bv.rows, "matmul: inner dim mismatch");
  Mat<T> y(av.rows, bv.cols);
  kern::gemm_nn(av.rows, av.cols, bv.cols, av.data(), bv.data(), y.data(),
                false);
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &bvv = value_of(b);
      if (nodes_[size_t(a)].needs_grad)
        kern::gemm_nt(g.rows, g.cols, avv.cols, g.data(), bvv.data(),
                      grad_of(a).data(), true);
      if (nodes_[size_t(b)].needs_grad)
        kern::gemm_tn(avv.cols, avv.rows, g.cols, avv.data(), g.data(),
                      grad_of(b).data(), true);
    };
  return out;
}

template <class T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.cols == bv.cols, "matmul_nt: inner dim mismatch");
  Mat<T> y(av.rows, bv.rows);
  kern::gemm_nt(av.rows, av.cols, bv.rows, av.data(), bv.data(), y.data(),
                false);
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &bvv = value_of(b);
      if (nodes_[size_t(a)].needs_grad)
        kern::gemm_nn(g.rows, g.cols, avv.cols, g.data(), bvv.data(),
                      grad_of(a).data(), true);
      if (nodes_[size_t(b)].needs_grad)
        kern::gemm_tn(bvv.rows, g.rows, bvv.cols, g.data(), avv.data(),
                      grad_of(b).data(), true);
    };
  return out;
}

template <class T>
Var Tape<T>::matmul_tn(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.rows == bv.rows, "matmul_tn: inner dim mismatch");
  Mat<T> y(av.cols, bv.cols);
  kern::gemm_tn(av.cols, av.rows, bv.cols, av.data(), bv.data(), y.data(),
                false);
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &bvv = value_of(b);
      if (nodes_[size_t(a)].needs_grad)
        kern::gemm_nt(bvv.rows, bvv.cols, g.rows, bvv.data(), g.data(),
                      grad_of(a).data(), true);
      if (nodes_[size_t(b)].needs_grad)
        kern::gemm_nn(avv.rows, avv.cols, g.cols, avv.data(), g.data(),
                      grad_of(b).data(), true);
    };
  return out;
}

template <class T>
Var Tape<T>::linear(Var x, Var w, Var b) {
  return add_rowvec(matmul(x, w), b);
}

// ------------------------------------------------------------ shape plumbing

template <class T>
Var Tape<T>::concat_rows(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.cols == bv.cols, "concat_rows: col mismatch");
  Mat<T> y(av.rows + bv.rows, av.cols);
  std::copy(av.v.begin(), av.v.end(), y.v.begin());
  std::copy(bv.v.begin(), bv.v.end(), y.v.begin() + ptrdiff_t(av.size()));
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& ga = grad_of(a);
        kern::axpy(ga.size(), T(1), g.data(), ga.data());
      }
      if (nodes_[size_t(b)].needs_grad) {
        Mat<T>& gb = grad_of(b);
        kern::axpy(gb.size(), T(1), g.data() + value_of(a).size(), gb.data());
      }
    };
  return out;
}

template <class T>
Var Tape<T>::concat_cols(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.rows == bv.rows, "concat_cols: row mismatch");
  Mat<T> y(av.rows, av.cols + bv.cols);
  for (int i = 0; i < av.rows; ++i) {
    std::copy(av.row(i), av.row(i) + av.cols, y.row(i));
    std::copy(bv.row(i), bv.row(i) + bv.cols, y.row(i) + av.cols);
  }
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const int ac = value_of(a).cols, bc = value_of(b).cols;
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& ga = grad_of(a);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < ac; ++j) ga(i, j) += g(i, j);
      }
      if (nodes_[size_t(b)].needs_grad) {
        Mat<T>& gb = grad_of(b);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < bc; ++j) gb(i, j) += g(i, ac + j);
      }
    };
  return out;
}

template <class T>
Var Tape<T>::slice_rows(Var a, int r0, int r1) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  require(0 <= r0 && r0 < r1 && r1 <= av.rows, "slice_rows: bad range");
  Mat<T> y(r1 - r0, av.cols);
  std::copy(av.row(r0), av.row(r0) + y.size(), y.v.begin());
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, r0] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      kern::axpy(g.size(), T(1), g.data(), ga.row(r0));
    };
  return out;
}

template <class T>
Var Tape<T>::slice_cols(Var a, int c0, int c1) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  require(0 <= c0 && c0 < c1 && c1 <= av.cols, "slice_cols: bad range");
  Mat<T> y(av.rows, c1 - c0);
  for (int i = 0; i < av.rows; ++i)
    std::copy(av.row(i) + c0, av.row(i) + c1, y.row(i));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, c0] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
    };
  return out;
}

template <class T>
Var Tape<T>::gather_rows(Var a, std::vector<int> rows) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  require(!rows.empty(), "gather_rows: empty index list");
  for (int r : rows)
    require(0 <= r && r < av.rows, "gather_rows: index out of range");
  Mat<T> y(int(rows.size()), av.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(av.row(rows[i]), av.row(rows[i]) + av.cols, y.row(int(i)));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i,
                                  rows = std::move(rows)] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < g.cols; ++j) ga(rows[i], j) += g(int(i), j);
    };
  return out;
}

// --------------------------------------------------- reductions / normalizers

template <class T>
Var Tape<T>::sum_all(Var a) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  double s = 0.0;
  for (T x : av.v) s += double(x);
  Mat<T> y(1, 1);
  y(0, 0) = T(s);
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const T g = grad_of(o)(0, 0);
      Mat<T>& ga = grad_of(a);
      for (auto& x : ga.v) x += g;
    };
  return out;
}

template <class T>
Var Tape<T>::mean_all(Var a) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  require(!av.empty(), "mean_all: empty matrix");
  double s = 0.0;
  for (T x : av.v) s += double(x);
  Mat<T> y(1, 1);
  y(0, 0) = T(s / double(av.size()));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      Mat<T>& ga = grad_of(a);
      const T g = T(double(grad_of(o)(0, 0)) / double(ga.size()));
      for (auto& x : ga.v) x += g;
    };
  return out;
}

template <class T>
Var Tape<T>::row_softmax(Var a, std::vector<char> col_mask) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  if (!col_mask.empty()) {
    require(int(col_mask.size()) == av.cols, "row_softmax: mask length");
    bool any = false;
    for (char c : col_mask) any = any || c;
    require(any, "row_softmax: all columns masked");
  }
  auto valid = [&](int j) { return col_mask.empty() || col_mask[size_t(j)]; };
  Mat<T> y(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < av.cols; ++j)
      if (valid(j)) mx = std::max(mx, double(av(i, j)));
    double denom = 0.0;
    for (int j = 0; j < av.cols; ++j)
      if (valid(j)) denom += std::exp(double(av(i, j)) - mx);
    for (int j = 0; j < av.cols; ++j)
      y(i, j) = valid(j) ? T(std::exp(double(av(i, j)) - mx) / denom) : T(0);
  }
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& yv = value_of(o);
      Mat<T>& ga = grad_of(a);
      for (int i = 0; i < g.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols; ++j)
          dot += double(g(i, j)) * double(yv(i, j));
        for (int j = 0; j < g.cols; ++j)
          ga(i, j) += T(double(yv(i, j)) * (double(g(i, j)) - dot));
      }
    };
  return out;
}

template <class T>
Var Tape<T>::col_normalize(Var a, T eps) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  auto sums = std::make_shared<std::vector<double>>(size_t(av.cols), 0.0);
  for (int j = 0; j < av.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < av.rows; ++i) s += double(av(i, j));
    (*sums)[size_t(j)] = s + double(eps);
  }
  Mat<T> y(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < av.cols; ++j)
      y(i, j) = T(double(av(i, j)) / (*sums)[size_t(j)]);
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, sums] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& yv = value_of(o);
      Mat<T>& ga = grad_of(a);
      for (int j = 0; j < g.cols; ++j) {
        double dot = 0.0;
        for (int i = 0; i < g.rows; ++i)
          dot += double(g(i, j)) * double(yv(i, j));
        for (int i = 0; i < g.rows; ++i)
          ga(i, j) += T((double(g(i, j)) - dot) / (*sums)[size_t(j)]);
      }
    };
  return out;
}

template <class T>
Var Tape<T>::layer_norm(Var a, Var gamma, Var beta, T eps) {
  check(a);
  check(gamma);
  check(beta);
  const Mat<T>& av = value_of(a.i);
  const Mat<T>&gv = value_of(gamma.i), &bv = value_of(beta.i);
  require(gv.rows == 1 && gv.cols == av.cols, "layer_norm: gamma shape");
  require(bv.rows == 1 && bv.cols == av.cols, "layer_norm: beta shape");
  require(av.cols > 0, "layer_norm: empty rows");

  auto xhat = std::make_shared<Mat<T>>(av.rows, av.cols);
  auto inv = std::make_shared<std::vector<double>>(size_t(av.rows), 0.0);
  Mat<T> y(av.rows, av.cols);
  const int n = av.cols;
  for (int i = 0; i < av.rows; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += double(av(i, j));
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = double(av(i, j)) - mu;
      var += d * d;
    }
    var /= n;
    const double is = 1.0 / std::sqrt(var + double(eps));
    (*inv)[size_t(i)] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (double(av(i, j)) - mu) * is;
      (*xhat)(i, j) = T(xh);
      y(i, j) = T(xh * double(gv(0, j)) + double(bv(0, j)));
    }
  }
  bool ng = needs_grad(a) || needs_grad(gamma) || needs_grad(beta);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, ga_ = gamma.i, be = beta.i,
                                  o = out.i, xhat, inv] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& gmv = value_of(ga_);
      const int n = g.cols;
      if (nodes_[size_t(be)].needs_grad) {
        Mat<T>& gb = grad_of(be);
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < g.rows; ++i) s += double(g(i, j));
          gb(0, j) += T(s);
        }
      }
      if (nodes_[size_t(ga_)].needs_grad) {
        Mat<T>& gg = grad_of(ga_);
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < g.rows; ++i)
            s += double(g(i, j)) * double((*xhat)(i, j));
          gg(0, j) += T(s);
        }
      }
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& gx = grad_of(a);
        for (int i = 0; i < g.rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = double(g(i, j)) * double(gmv(0, j));
            m1 += dxh;
            m2 += dxh * double((*xhat)(i, j));
          }
          m1 /= n;
          m2 /= n;
          for (int j = 0; j < n; ++j) {
            const double dxh = double(g(i, j)) * double(gmv(0, j));
            gx(i, j) += T((*inv)[size_t(i)] *
                          (dxh - m1 - double((*xhat)(i, j)) * m2));
          }
        }
      }
    };
  return out;
}

template <class T>
Var Tape<T>::row_max_pool(Var a, std::vector<char> row_mask) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  if (!row_mask.empty())
    require(int(row_mask.size()) == av.rows, "row_max_pool: mask length");
  auto valid = [&](int i) { return row_mask.empty() || row_mask[size_t(i)]; };
  int first_valid = -1;
  for (int i = 0; i < av.rows && first_valid < 0; ++i)
    if (valid(i)) first_valid = i;
  require(first_valid >= 0, "row_max_pool: all rows masked");

  auto armax = std::make_shared<std::vector<int>>(size_t(av.cols), first_valid);
  Mat<T> y(1, av.cols);
  for (int j = 0; j < av.cols; ++j) {
    int arg = first_valid;
    T best = av(first_valid, j);
    for (int i = first_valid + 1; i < av.rows; ++i)
      if (valid(i) && av(i, j) > best) {
        best = av(i, j);
        arg = i;
      }
    (*armax)[size_t(j)] = arg;
    y(0, j) = best;
  }
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i, armax] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      for (int j = 0; j < g.cols; ++j) ga((*armax)[size_t(j)], j) += g(0, j);
    };
  return out;
}

template <class T>
Var Tape<T>::dot_rows(Var a, Var b) {
  check(a);
  check(b);
  const Mat<T>&av = value_of(a.i), &bv = value_of(b.i);
  require(av.same_shape(bv), "dot_rows: shape mismatch");
  Mat<T> y(av.rows, 1);
  for (int i = 0; i < av.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < av.cols; ++j)
      s += double(av(i, j)) * double(bv(i, j));
    y(i, 0) = T(s);
  }
  bool ng = needs_grad(a) || needs_grad(b);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, b = b.i, o = out.i] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>&avv = value_of(a), &bvv = value_of(b);
      if (nodes_[size_t(a)].needs_grad) {
        Mat<T>& ga = grad_of(a);
        for (int i = 0; i < avv.rows; ++i)
          for (int j = 0; j < avv.cols; ++j)
            ga(i, j) += g(i, 0) * bvv(i, j);
      }
      if (nodes_[size_t(b)].needs_grad) {
        Mat<T>& gb = grad_of(b);
        for (int i = 0; i < avv.rows; ++i)
          for (int j = 0; j < avv.cols; ++j)
            gb(i, j) += g(i, 0) * avv(i, j);
      }
    };
  return out;
}

template <class T>
Var Tape<T>::zero_rows(Var a, std::vector<char> row_mask) {
  check(a);
  const Mat<T>& av = value_of(a.i);
  require(int(row_mask.size()) == av.rows, "zero_rows: mask length");
  Mat<T> y = av;
  for (int i = 0; i < av.rows; ++i)
    if (!row_mask[size_t(i)])
      std::fill(y.row(i), y.row(i) + y.cols, T(0));
  bool ng = needs_grad(a);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, a = a.i, o = out.i,
                                  mask = std::move(row_mask)] {
      const Mat<T>& g = grad_of(o);
      Mat<T>& ga = grad_of(a);
      for (int i = 0; i < g.rows; ++i)
        if (mask[size_t(i)])
          for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j);
    };
  return out;
}

// ----------------------------------------------------------------- encodings

template <class T>
Var Tape<T>::sincos_embed(Var x, int d, T tau) {
  check(x);
  if (d <= 0 || d % 2 != 0)
    throw ConfigError("sincos_embed: dimension must be even and positive");
  const Mat<T>& xv = value_of(x.i);
  require(xv.cols == 1, "sincos_embed: input must be n x 1");
  Mat<T> y(xv.rows, d);
  for (int i = 0; i < xv.rows; ++i)
    for (int q = 0; q < d / 2; ++q) {
      const double omega = std::pow(10000.0, 2.0 * q / double(d));
      const double arg = double(xv(i, 0)) * double(tau) / omega;
      y(i, 2 * q) = T(std::sin(arg));
      y(i, 2 * q + 1) = T(std::cos(arg));
    }
  bool ng = needs_grad(x);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, x = x.i, o = out.i, d, tau] {
      const Mat<T>& g = grad_of(o);
      const Mat<T>& xv = value_of(x);
      Mat<T>& gx = grad_of(x);
      for (int i = 0; i < xv.rows; ++i) {
        double acc = 0.0;
        for (int q = 0; q < d / 2; ++q) {
          const double omega = std::pow(10000.0, 2.0 * q / double(d));
          const double rate = double(tau) / omega;
          const double arg = double(xv(i, 0)) * rate;
          acc += double(g(i, 2 * q)) * std::cos(arg) * rate;
          acc -= double(g(i, 2 * q + 1)) * std::sin(arg) * rate;
        }
        gx(i, 0) += T(acc);
      }
    };
  return out;
}

// ------------------------------------------------------------ fused span loss

template <class T>
Var Tape<T>::span_l1_giou_loss(Var pred, const Mat<T>& target, T l1_w,
                               T iou_w) {
  check(pred);
  const Mat<T>& pv = value_of(pred.i);
  require(pv.cols == 2 && target.cols == 2 && pv.rows == target.rows,
          "span_l1_giou_loss: need matching n x 2 matrices");
  require(pv.rows >= 1, "span_l1_giou_loss: empty");

  auto dpred = std::make_shared<Mat<T>>(pv.rows, 2);
  double total = 0.0;
  for (int i = 0; i < pv.rows; ++i) {
    const double c = double(pv(i, 0)), w = double(pv(i, 1));
    const double tc = double(target(i, 0)), tw = double(target(i, 1));

    double dc = 0.0, dw = 0.0;
    // L1 on raw (center, width)
    total += double(l1_w) * (std::abs(c - tc) + std::abs(w - tw));
    dc += double(l1_w) * (c > tc ? 1.0 : (c < tc ? -1.0 : 0.0));
    dw += double(l1_w) * (w > tw ? 1.0 : (w < tw ? -1.0 : 0.0));

    // gIoU over clamped intervals; indicator terms follow the clamps.
    const bool lo_free = c - w / 2 > 0.0;  // left edge not clamped
    const bool hi_free = c + w / 2 < 1.0;
    const double sa = lo_free ? c - w / 2 : 0.0;
    const double ea = hi_free ? c + w / 2 : 1.0;
    const double sb = std::max(0.0, tc - tw / 2);
    const double eb = std::min(1.0, tc + tw / 2);

    const double iraw = std::min(ea, eb) - std::max(sa, sb);
    const double inter = std::max(0.0, iraw);
    const double uni = (ea - sa) + (eb - sb) - inter;
    const double enc = std::max(ea, eb) - std::min(sa, sb);
    const double giou = inter / uni - (enc - uni) / enc;
    total += double(iou_w) * (1.0 - giou);

    // d(inter)/d(sa, ea)
    const double di_dea = (iraw > 0.0 && ea <= eb) ? 1.0 : 0.0;
    const double di_dsa = (iraw > 0.0 && sa >= sb) ? -1.0 : 0.0;
    // d(uni) = d(len_a) - d(inter)
    const double du_dea = 1.0 - di_dea;
    const double du_dsa = -1.0 - di_dsa;
    // d(enc)
    const double de_dea = ea >= eb ? 1.0 : 0.0;
    const double de_dsa = sa <= sb ? -1.0 : 0.0;
    // giou = inter/uni - 1 + uni/enc
    const double dg_dea = di_dea / uni - inter * du_dea / (uni * uni) +
                          du_dea / enc - uni * de_dea / (enc * enc);
    const double dg_dsa = di_dsa / uni - inter * du_dsa / (uni * uni) +
                          du_dsa / enc - uni * de_dsa / (enc * enc);
    // interval edges back to (c, w) through the clamps
    const double dsa_dc = lo_free ? 1.0 : 0.0;
    const double dsa_dw = lo_free ? -0.5 : 0.0;
    const double dea_dc = hi_free ? 1.0 : 0.0;
    const double dea_dw = hi_free ? 0.5 : 0.0;
    dc -= double(iou_w) * (dg_dea * dea_dc + dg_dsa * dsa_dc);
    dw -= double(iou_w) * (dg_dea * dea_dw + dg_dsa * dsa_dw);

    (*dpred)(i, 0) = T(dc);
    (*dpred)(i, 1) = T(dw);
  }

  Mat<T> y(1, 1);
  y(0, 0) = T(total);
  bool ng = needs_grad(pred);
  Var out = push(std::move(y), ng, nullptr);
  if (ng)
    nodes_[size_t(out.i)].back = [this, p = pred.i, o = out.i, dpred] {
      const T g = grad_of(o)(0, 0);
      Mat<T>& gp = grad_of(p);
      for (size_t i = 0; i < gp.size(); ++i) gp.v[i] += g * dpred->v[i];
    };
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace eatr::tape
