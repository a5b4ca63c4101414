#include "emosllm/kernels/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define EMOSLLM_X86 1
#include <immintrin.h>
#else
#define EMOSLLM_X86 0
#endif

#include <cstring>

namespace emosllm::kernels::avx2 {

#if EMOSLLM_X86

bool available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

inline double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_hadd_pd(lo, lo);
    return _mm_cvtsd_f64(lo);
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float acc = hsum8(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(float* y, float alpha, const float* x, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy(double* y, double alpha, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(float* out, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(float* out, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(float* out, const float* a, const float* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(float* out, float alpha, const float* x, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

float sum(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum8(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

namespace {

// C[i..i+3, :] += A[i..i+3, p] * B[p, :] over p; four A rows share each
// streamed B row, which keeps the FMA ports busy at these matrix sizes.
void gemm_rows4_f32(const float* A, const float* B, float* C, int m, int k, int n,
                    std::size_t lda_row /* stride between A row elements */,
                    std::size_t lda_col /* stride between A column elements */) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        float* c0 = C + std::size_t(i) * n;
        float* c1 = c0 + n;
        float* c2 = c1 + n;
        float* c3 = c2 + n;
        for (int p = 0; p < k; ++p) {
            const float* b = B + std::size_t(p) * n;
            const float* abase = A + std::size_t(i) * lda_row + std::size_t(p) * lda_col;
            const __m256 a0 = _mm256_set1_ps(abase[0]);
            const __m256 a1 = _mm256_set1_ps(abase[lda_row]);
            const __m256 a2 = _mm256_set1_ps(abase[2 * lda_row]);
            const __m256 a3 = _mm256_set1_ps(abase[3 * lda_row]);
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                const __m256 vb = _mm256_loadu_ps(b + j);
                _mm256_storeu_ps(c0 + j, _mm256_fmadd_ps(a0, vb, _mm256_loadu_ps(c0 + j)));
                _mm256_storeu_ps(c1 + j, _mm256_fmadd_ps(a1, vb, _mm256_loadu_ps(c1 + j)));
                _mm256_storeu_ps(c2 + j, _mm256_fmadd_ps(a2, vb, _mm256_loadu_ps(c2 + j)));
                _mm256_storeu_ps(c3 + j, _mm256_fmadd_ps(a3, vb, _mm256_loadu_ps(c3 + j)));
            }
            for (; j < n; ++j) {
                c0[j] += abase[0] * b[j];
                c1[j] += abase[lda_row] * b[j];
                c2[j] += abase[2 * lda_row] * b[j];
                c3[j] += abase[3 * lda_row] * b[j];
            }
        }
    }
    for (; i < m; ++i) {
        float* c = C + std::size_t(i) * n;
        for (int p = 0; p < k; ++p) {
            const float a = A[std::size_t(i) * lda_row + std::size_t(p) * lda_col];
            avx2::axpy(c, a, B + std::size_t(p) * n, std::size_t(n));
        }
    }
}

}  // namespace

void gemm_nn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(float) * std::size_t(m) * n);
    gemm_rows4_f32(A, B, C, m, k, n, std::size_t(k), 1);
}

void gemm_tn(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(float) * std::size_t(m) * n);
    // A stored (k x m): element (p, i) at A[p*m + i].
    gemm_rows4_f32(A, B, C, m, k, n, 1, std::size_t(m));
}

void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* a = A + std::size_t(i) * k;
        float* c = C + std::size_t(i) * n;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = B + std::size_t(j) * k;
            const float* b1 = b0 + k;
            const float* b2 = b1 + k;
            const float* b3 = b2 + k;
            __m256 s0 = _mm256_setzero_ps();
            __m256 s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps();
            __m256 s3 = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 8 <= std::size_t(k); p += 8) {
                const __m256 va = _mm256_loadu_ps(a + p);
                s0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b0 + p), s0);
                s1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b1 + p), s1);
                s2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b2 + p), s2);
                s3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b3 + p), s3);
            }
            float r0 = hsum8(s0), r1 = hsum8(s1), r2 = hsum8(s2), r3 = hsum8(s3);
            for (; p < std::size_t(k); ++p) {
                r0 += a[p] * b0[p];
                r1 += a[p] * b1[p];
                r2 += a[p] * b2[p];
                r3 += a[p] * b3[p];
            }
            if (accumulate) {
                c[j] += r0; c[j + 1] += r1; c[j + 2] += r2; c[j + 3] += r3;
            } else {
                c[j] = r0; c[j + 1] = r1; c[j + 2] = r2; c[j + 3] = r3;
            }
        }
        for (; j < n; ++j) {
            const float r = avx2::dot(a, B + std::size_t(j) * k, std::size_t(k));
            c[j] = accumulate ? c[j] + r : r;
        }
    }
}

void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * std::size_t(m) * n);
    for (int i = 0; i < m; ++i) {
        double* c = C + std::size_t(i) * n;
        const double* a = A + std::size_t(i) * k;
        for (int p = 0; p < k; ++p) avx2::axpy(c, a[p], B + std::size_t(p) * n, std::size_t(n));
    }
}

void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * std::size_t(m) * n);
    for (int p = 0; p < k; ++p) {
        const double* a = A + std::size_t(p) * m;
        const double* b = B + std::size_t(p) * n;
        for (int i = 0; i < m; ++i)
            avx2::axpy(C + std::size_t(i) * n, a[i], b, std::size_t(n));
    }
}

void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + std::size_t(i) * k;
        double* c = C + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const double r = avx2::dot(a, B + std::size_t(j) * k, std::size_t(k));
            c[j] = accumulate ? c[j] + r : r;
        }
    }
}

#else  // !EMOSLLM_X86

bool available() { return false; }

float dot(const float* a, const float* b, std::size_t n) { return scalar::dot(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return scalar::dot(a, b, n); }
void axpy(float* y, float alpha, const float* x, std::size_t n) { scalar::axpy(y, alpha, x, n); }
void axpy(double* y, double alpha, const double* x, std::size_t n) { scalar::axpy(y, alpha, x, n); }
void add(float* out, const float* a, const float* b, std::size_t n) { scalar::add(out, a, b, n); }
void sub(float* out, const float* a, const float* b, std::size_t n) { scalar::sub(out, a, b, n); }
void mul(float* out, const float* a, const float* b, std::size_t n) { scalar::mul(out, a, b, n); }
void scale(float* out, float alpha, const float* x, std::size_t n) { scalar::scale(out, alpha, x, n); }
float sum(const float* x, std::size_t n) { return scalar::sum(x, n); }
void gemm_nn(const float* A, const float* B, float* C, int m, int k, int n, bool acc) { scalar::gemm_nn(A, B, C, m, k, n, acc); }
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n, bool acc) { scalar::gemm_nt(A, B, C, m, k, n, acc); }
void gemm_tn(const float* A, const float* B, float* C, int m, int k, int n, bool acc) { scalar::gemm_tn(A, B, C, m, k, n, acc); }
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) { scalar::gemm_nn(A, B, C, m, k, n, acc); }
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) { scalar::gemm_nt(A, B, C, m, k, n, acc); }
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) { scalar::gemm_tn(A, B, C, m, k, n, acc); }

#endif

}  // namespace emosllm::kernels::avx2
