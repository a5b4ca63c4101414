#include "emosllm/kernels/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace emosllm::kernels {

namespace {

SimdLevel detect() {
    SimdLevel lvl = avx2::available() ? SimdLevel::avx2 : SimdLevel::scalar;
    if (const char* env = std::getenv("EMOSLLM_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) lvl = SimdLevel::scalar;
        else if (std::strcmp(env, "avx2") == 0 && avx2::available()) lvl = SimdLevel::avx2;
    }
    return lvl;
}

SimdLevel g_level = detect();

}  // namespace

SimdLevel active_level() { return g_level; }

void set_level(SimdLevel level) {
    g_level = (level == SimdLevel::avx2 && !avx2::available()) ? SimdLevel::scalar : level;
}

const char* level_name(SimdLevel level) {
    return level == SimdLevel::avx2 ? "avx2" : "scalar";
}

#define EMOSLLM_DISPATCH(expr_avx2, expr_scalar) \
    if (g_level == SimdLevel::avx2) { expr_avx2; } else { expr_scalar; }

float dot(const float* a, const float* b, std::size_t n) {
    EMOSLLM_DISPATCH(return avx2::dot(a, b, n), return scalar::dot(a, b, n));
}
double dot(const double* a, const double* b, std::size_t n) {
    EMOSLLM_DISPATCH(return avx2::dot(a, b, n), return scalar::dot(a, b, n));
}
void axpy(float* y, float alpha, const float* x, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::axpy(y, alpha, x, n), scalar::axpy(y, alpha, x, n));
}
void axpy(double* y, double alpha, const double* x, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::axpy(y, alpha, x, n), scalar::axpy(y, alpha, x, n));
}
void add(float* out, const float* a, const float* b, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::add(out, a, b, n), scalar::add(out, a, b, n));
}
void add(double* out, const double* a, const double* b, std::size_t n) {
    scalar::add(out, a, b, n);
}
void sub(float* out, const float* a, const float* b, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::sub(out, a, b, n), scalar::sub(out, a, b, n));
}
void sub(double* out, const double* a, const double* b, std::size_t n) {
    scalar::sub(out, a, b, n);
}
void mul(float* out, const float* a, const float* b, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::mul(out, a, b, n), scalar::mul(out, a, b, n));
}
void mul(double* out, const double* a, const double* b, std::size_t n) {
    scalar::mul(out, a, b, n);
}
void scale(float* out, float alpha, const float* x, std::size_t n) {
    EMOSLLM_DISPATCH(avx2::scale(out, alpha, x, n), scalar::scale(out, alpha, x, n));
}
void scale(double* out, double alpha, const double* x, std::size_t n) {
    scalar::scale(out, alpha, x, n);
}
float sum(const float* x, std::size_t n) {
    EMOSLLM_DISPATCH(return avx2::sum(x, n), return scalar::sum(x, n));
}
double sum(const double* x, std::size_t n) { return scalar::sum(x, n); }

void gemm_nn(const float* A, const float* B, float* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_nn(A, B, C, m, k, n, acc), scalar::gemm_nn(A, B, C, m, k, n, acc));
}
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_nt(A, B, C, m, k, n, acc), scalar::gemm_nt(A, B, C, m, k, n, acc));
}
void gemm_tn(const float* A, const float* B, float* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_tn(A, B, C, m, k, n, acc), scalar::gemm_tn(A, B, C, m, k, n, acc));
}
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_nn(A, B, C, m, k, n, acc), scalar::gemm_nn(A, B, C, m, k, n, acc));
}
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_nt(A, B, C, m, k, n, acc), scalar::gemm_nt(A, B, C, m, k, n, acc));
}
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    EMOSLLM_DISPATCH(avx2::gemm_tn(A, B, C, m, k, n, acc), scalar::gemm_tn(A, B, C, m, k, n, acc));
}

#undef EMOSLLM_DISPATCH

}  // namespace emosllm::kernels
