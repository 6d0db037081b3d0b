#include "eatr/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "eatr/errors.hpp"

namespace eatr::kern {

namespace scalar {

template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(T) * size_t(m) * size_t(n));
  for (int i = 0; i < m; ++i) {
    T* crow = c + size_t(i) * n;
    const T* arow = a + size_t(i) * k;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      const T* brow = b + size_t(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + size_t(i) * k;
    T* crow = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + size_t(j) * k;
      // Accumulate in double so the float reference stays close to exact.
      double accv = 0.0;
      for (int l = 0; l < k; ++l) accv += double(arow[l]) * double(brow[l]);
      crow[j] = acc ? T(double(crow[j]) + accv) : T(accv);
    }
  }
}

template <class T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c, bool acc) {
  // a is k x m, b is k x n, c is m x n
  if (!acc) std::memset(c, 0, sizeof(T) * size_t(m) * size_t(n));
  for (int l = 0; l < k; ++l) {
    const T* arow = a + size_t(l) * m;
    const T* brow = b + size_t(l) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void add(size_t n, const T* a, const T* b, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(size_t n, const T* a, const T* b, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(size_t n, const T* a, const T* b, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void axpy(size_t n, T alpha, const T* x, T* y) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(size_t n, T alpha, const T* x, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <class T>
T dot(size_t n, const T* a, const T* b) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += double(a[i]) * double(b[i]);
  return T(acc);
}

template <class T>
T sum(size_t n, const T* x) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += double(x[i]);
  return T(acc);
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nt<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_tn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_nt<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_tn<double>(int, int, int, const double*, const double*, double*, bool);
template void add<float>(size_t, const float*, const float*, float*);
template void sub<float>(size_t, const float*, const float*, float*);
template void mul<float>(size_t, const float*, const float*, float*);
template void axpy<float>(size_t, float, const float*, float*);
template void scale<float>(size_t, float, const float*, float*);
template float dot<float>(size_t, const float*, const float*);
template float sum<float>(size_t, const float*);
template void add<double>(size_t, const double*, const double*, double*);
template void sub<double>(size_t, const double*, const double*, double*);
template void mul<double>(size_t, const double*, const double*, double*);
template void axpy<double>(size_t, double, const double*, double*);
template void scale<double>(size_t, double, const double*, double*);
template double dot<double>(size_t, const double*, const double*);
template double sum<double>(size_t, const double*);

}  // namespace scalar

bool avx2_supported() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend default_backend() {
  if (const char* env = std::getenv("EATR_KERNELS")) {
    std::string s(env);
    if (s == "scalar") return Backend::Scalar;
    if (s == "avx2") {
      if (!avx2_supported())
        throw ConfigError("EATR_KERNELS=avx2 but this CPU lacks AVX2/FMA");
      return Backend::Avx2;
    }
    if (!s.empty())
      throw ConfigError("unknown EATR_KERNELS value: " + s +
                        " (expected scalar or avx2)");
  }
  return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
}

namespace {
std::atomic<Backend> g_backend{Backend::Scalar};
std::atomic<bool> g_initialized{false};

Backend backend() {
  if (!g_initialized.load(std::memory_order_acquire)) {
    g_backend.store(default_backend(), std::memory_order_relaxed);
    g_initialized.store(true, std::memory_order_release);
  }
  return g_backend.load(std::memory_order_relaxed);
}
}  // namespace

Backend active_backend() noexcept { return backend(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported())
    throw ConfigError("AVX2 backend requested but this CPU lacks AVX2/FMA");
  g_backend.store(b, std::memory_order_relaxed);
  g_initialized.store(true, std::memory_order_release);
}

const char* backend_name(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
  }
  return "?";
}

#if defined(__x86_64__) || defined(__i386__)
#define EATR_HAVE_AVX2_BUILD 1
#else
#define EATR_HAVE_AVX2_BUILD 0
#endif

void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
#if EATR_HAVE_AVX2_BUILD
  if (backend() == Backend::Avx2) return avx2::gemm_nn(m, k, n, a, b, c, acc);
#endif
  scalar::gemm_nn(m, k, n, a, b, c, acc);
}

void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
#if EATR_HAVE_AVX2_BUILD
  if (backend() == Backend::Avx2) return avx2::gemm_nt(m, k, n, a, b, c, acc);
#endif
  scalar::gemm_nt(m, k, n, a, b, c, acc);
}

void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc) {
#if EATR_HAVE_AVX2_BUILD
  if (backend() == Backend::Avx2) return avx2::gemm_tn(m, k, n, a, b, c, acc);
#endif
  scalar::gemm_tn(m, k, n, a, b, c, acc);
}

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c,
             bool acc) {
  scalar::gemm_nn(m, k, n, a, b, c, acc);
}
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c,
             bool acc) {
  scalar::gemm_nt(m, k, n, a, b, c, acc);
}
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c,
             bool acc) {
  scalar::gemm_tn(m, k, n, a, b, c, acc);
}

#define EATR_DISPATCH_EW(name, ...)                           \
  do {                                                        \
    if (EATR_HAVE_AVX2_BUILD && backend() == Backend::Avx2) { \
      avx2::name(__VA_ARGS__);                                \
      return;                                                 \
    }                                                         \
    scalar::name(__VA_ARGS__);                                \
  } while (0)

void add(size_t n, const float* a, const float* b, float* out) {
  EATR_DISPATCH_EW(add, n, a, b, out);
}
void sub(size_t n, const float* a, const float* b, float* out) {
  EATR_DISPATCH_EW(sub, n, a, b, out);
}
void mul(size_t n, const float* a, const float* b, float* out) {
  EATR_DISPATCH_EW(mul, n, a, b, out);
}
void axpy(size_t n, float alpha, const float* x, float* y) {
  EATR_DISPATCH_EW(axpy, n, alpha, x, y);
}
void scale(size_t n, float alpha, const float* x, float* out) {
  EATR_DISPATCH_EW(scale, n, alpha, x, out);
}
float dot(size_t n, const float* a, const float* b) {
#if EATR_HAVE_AVX2_BUILD
  if (backend() == Backend::Avx2) return avx2::dot(n, a, b);
#endif
  return scalar::dot(n, a, b);
}
float sum(size_t n, const float* x) {
#if EATR_HAVE_AVX2_BUILD
  if (backend() == Backend::Avx2) return avx2::sum(n, x);
#endif
  return scalar::sum(n, x);
}

void add(size_t n, const double* a, const double* b, double* out) {
  scalar::add(n, a, b, out);
}
void sub(size_t n, const double* a, const double* b, double* out) {
  scalar::sub(n, a, b, out);
}
void mul(size_t n, const double* a, const double* b, double* out) {
  scalar::mul(n, a, b, out);
}
void axpy(size_t n, double alpha, const double* x, double* y) {
  scalar::axpy(n, alpha, x, y);
}
void scale(size_t n, double alpha, const double* x, double* out) {
  scalar::scale(n, alpha, x, out);
}
double dot(size_t n, const double* a, const double* b) {
  return scalar::dot(n, a, b);
}
double sum(size_t n, const double* x) { return scalar::sum(n, x); }

}  // namespace eatr::kern
