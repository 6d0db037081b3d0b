// AVX2+FMA float32 kernels. Compiled with -mavx2 -mfma on x86-64 only;
// selected at runtime through the dispatch layer in kernels.cpp.

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <cstring>

#include "eatr/kernels.hpp"

namespace eatr::kern::avx2 {

namespace {

inline double hsum256(__m256 v) {
  alignas(32) float lane[8];
  _mm256_store_ps(lane, v);
  // Reduce the lanes in double to stay close to the scalar reference.
  return (double(lane[0]) + double(lane[1]) + double(lane[2]) +
          double(lane[3])) +
         (double(lane[4]) + double(lane[5]) + double(lane[6]) +
          double(lane[7]));
}

}  // namespace

void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
  if (!acc) std::memset(c, 0, sizeof(float) * size_t(m) * size_t(n));
  for (int i = 0; i < m; ++i) {
    float* crow = c + size_t(i) * n;
    const float* arow = a + size_t(i) * k;
    for (int l = 0; l < k; ++l) {
      const float av = arow[l];
      if (av == 0.0f) continue;
      const float* brow = b + size_t(l) * n;
      const __m256 va = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + size_t(i) * k;
    float* crow = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + size_t(j) * k;
      __m256 s0 = _mm256_setzero_ps();
      __m256 s1 = _mm256_setzero_ps();
      int l = 0;
      for (; l + 16 <= k; l += 16) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + l),
                             _mm256_loadu_ps(brow + l), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + l + 8),
                             _mm256_loadu_ps(brow + l + 8), s1);
      }
      for (; l + 8 <= k; l += 8) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(arow + l),
                             _mm256_loadu_ps(brow + l), s0);
      }
      double accv = hsum256(_mm256_add_ps(s0, s1));
      for (; l < k; ++l) accv += double(arow[l]) * double(brow[l]);
      crow[j] = acc ? float(double(crow[j]) + accv) : float(accv);
    }
  }
}

void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
  // a is k x m, b is k x n
  if (!acc) std::memset(c, 0, sizeof(float) * size_t(m) * size_t(n));
  for (int l = 0; l < k; ++l) {
    const float* arow = a + size_t(l) * m;
    const float* brow = b + size_t(l) * n;
    for (int i = 0; i < m; ++i) {
      const float av = arow[i];
      if (av == 0.0f) continue;
      float* crow = c + size_t(i) * n;
      const __m256 va = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add(size_t n, const float* a, const float* b, float* out) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(size_t n, const float* a, const float* b, float* out) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(size_t n, const float* a, const float* b, float* out) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(size_t n, float alpha, const float* x, float* out) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

float dot(size_t n, const float* a, const float* b) {
  __m256 s0 = _mm256_setzero_ps();
  __m256 s1 = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8),
                         _mm256_loadu_ps(b + i + 8), s1);
  }
  for (; i + 8 <= n; i += 8)
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
  double acc = hsum256(_mm256_add_ps(s0, s1));
  for (; i < n; ++i) acc += double(a[i]) * double(b[i]);
  return float(acc);
}

float sum(size_t n, const float* x) {
  __m256 s = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) s = _mm256_add_ps(s, _mm256_loadu_ps(x + i));
  double acc = hsum256(s);
  for (; i < n; ++i) acc += double(x[i]);
  return float(acc);
}

}  // namespace eatr::kern::avx2

#endif  // x86
