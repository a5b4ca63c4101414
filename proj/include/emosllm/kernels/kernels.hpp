#pragma once

// Data-parallel inner loops used by the tensor engine and the DSP front end.
//
// Every kernel exists in a scalar reference form (kernels::scalar) and, on
// x86-64 with AVX2+FMA, a vectorized form (kernels::avx2). The unqualified
// entry points dispatch at runtime through the detected SIMD level; the two
// implementations are equivalence-tested against each other.

#include <cstddef>

namespace emosllm::kernels {

enum class SimdLevel { scalar, avx2 };

// Detected (or overridden) level. Honors EMOSLLM_SIMD=scalar|avx2 on first
// call; avx2 requests fall back to scalar when the CPU lacks AVX2+FMA.
SimdLevel active_level();
void set_level(SimdLevel level);
const char* level_name(SimdLevel level);

namespace scalar {

template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> void axpy(T* y, T alpha, const T* x, std::size_t n);
template <typename T> void add(T* out, const T* a, const T* b, std::size_t n);
template <typename T> void sub(T* out, const T* a, const T* b, std::size_t n);
template <typename T> void mul(T* out, const T* a, const T* b, std::size_t n);
template <typename T> void scale(T* out, T alpha, const T* x, std::size_t n);
template <typename T> T sum(const T* x, std::size_t n);

// C (m x n) = or += A (m x k) * B (k x n), all row-major.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate);
// C (m x n) = or += A (m x k) * B^T, with B stored (n x k).
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate);
// C (m x n) = or += A^T * B, with A stored (k x m), B (k x n).
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate);

}  // namespace scalar

namespace avx2 {

bool available();

float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float* y, float alpha, const float* x, std::size_t n);
void axpy(double* y, double alpha, const double* x, std::size_t n);
void add(float* out, const float* a, const float* b, std::size_t n);
void sub(float* out, const float* a, const float* b, std::size_t n);
void mul(float* out, const float* a, const float* b, std::size_t n);
void scale(float* out, float alpha, const float* x, std::size_t n);
float sum(const float* x, std::size_t n);

void gemm_nn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_tn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);

}  // namespace avx2

// Dispatching entry points.
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float* y, float alpha, const float* x, std::size_t n);
void axpy(double* y, double alpha, const double* x, std::size_t n);
void add(float* out, const float* a, const float* b, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(float* out, const float* a, const float* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(float* out, const float* a, const float* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void scale(float* out, float alpha, const float* x, std::size_t n);
void scale(double* out, double alpha, const double* x, std::size_t n);
float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);

void gemm_nn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_tn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate);

// Numerically stable in-place softmax of one row. Scalar path only; the
// surrounding matmuls dominate, so this is not dispatched.
template <typename T> void softmax_row(T* x, std::size_t n);

}  // namespace emosllm::kernels
