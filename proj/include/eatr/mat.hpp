#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace eatr {

// Dense row-major matrix. Vectors are 1xN or Nx1 matrices.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), T(0)) {
    assert(r >= 0 && c >= 0);
  }
  Mat(int r, int c, std::vector<T> data) : rows(r), cols(c), v(std::move(data)) {
    assert(v.size() == size_t(r) * size_t(c));
  }

  static Mat full(int r, int c, T value) {
    Mat m(r, c);
    for (auto& x : m.v) x = value;
    return m;
  }

  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T* row(int r) { return v.data() + size_t(r) * size_t(cols); }
  const T* row(int r) const { return v.data() + size_t(r) * size_t(cols); }

  T& operator()(int r, int c) {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return v[size_t(r) * size_t(cols) + size_t(c)];
  }
  T operator()(int r, int c) const {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return v[size_t(r) * size_t(cols) + size_t(c)];
  }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T x : v) {
      if (!std::isfinite(double(x))) return false;
    }
    return true;
  }

  template <class U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

}  // namespace eatr
