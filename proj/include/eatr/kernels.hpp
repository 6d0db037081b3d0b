#pragma once

#include <cstddef>

namespace eatr::kern {

// Runtime-selected backend for the float32 linear-algebra kernels. The
// scalar path is the reference implementation; the AVX2 path must agree
// with it within floating-point reassociation tolerance (equivalence-tested).
// Double-precision overloads always run the scalar reference.
enum class Backend { Scalar, Avx2 };

bool avx2_supported() noexcept;
Backend active_backend() noexcept;
// Throws ConfigError when the requested backend is not supported on this CPU.
void set_backend(Backend b);
// Honors EATR_KERNELS={scalar,avx2}; otherwise picks the best supported.
Backend default_backend();
const char* backend_name(Backend b) noexcept;

// All matrices are dense row-major, fully contiguous.
//
//   gemm_nn: C (m x n) = A (m x k) * B (k x n)
//   gemm_nt: C (m x n) = A (m x k) * B (n x k)^T
//   gemm_tn: C (m x n) = A (k x m)^T * B (k x n)
//
// With accumulate=true the product is added onto C instead of overwriting.
void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate);
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate);
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c,
             bool accumulate);

// Elementwise and reduction primitives.
void add(size_t n, const float* a, const float* b, float* out);
void sub(size_t n, const float* a, const float* b, float* out);
void mul(size_t n, const float* a, const float* b, float* out);
void axpy(size_t n, float alpha, const float* x, float* y);  // y += alpha*x
void scale(size_t n, float alpha, const float* x, float* out);
float dot(size_t n, const float* a, const float* b);
float sum(size_t n, const float* x);

void add(size_t n, const double* a, const double* b, double* out);
void sub(size_t n, const double* a, const double* b, double* out);
void mul(size_t n, const double* a, const double* b, double* out);
void axpy(size_t n, double alpha, const double* x, double* y);
void scale(size_t n, double alpha, const double* x, double* out);
double dot(size_t n, const double* a, const double* b);
double sum(size_t n, const double* x);

// Scalar reference implementations, exposed for the equivalence tests.
namespace scalar {
template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool acc);
template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c, bool acc);
template <class T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c, bool acc);
template <class T>
void add(size_t n, const T* a, const T* b, T* out);
template <class T>
void sub(size_t n, const T* a, const T* b, T* out);
template <class T>
void mul(size_t n, const T* a, const T* b, T* out);
template <class T>
void axpy(size_t n, T alpha, const T* x, T* y);
template <class T>
void scale(size_t n, T alpha, const T* x, T* out);
template <class T>
T dot(size_t n, const T* a, const T* b);
template <class T>
T sum(size_t n, const T* x);
}  // namespace scalar

// AVX2 float32 implementations; defined only on x86-64 builds. Calling them
// when avx2_supported() is false is undefined; go through the dispatched API.
namespace avx2 {
void gemm_nn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc);
void gemm_nt(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc);
void gemm_tn(int m, int k, int n, const float* a, const float* b, float* c,
             bool acc);
void add(size_t n, const float* a, const float* b, float* out);
void sub(size_t n, const float* a, const float* b, float* out);
void mul(size_t n, const float* a, const float* b, float* out);
void axpy(size_t n, float alpha, const float* x, float* y);
void scale(size_t n, float alpha, const float* x, float* out);
float dot(size_t n, const float* a, const float* b);
float sum(size_t n, const float* x);
}  // namespace avx2

}  // namespace eatr::kern
