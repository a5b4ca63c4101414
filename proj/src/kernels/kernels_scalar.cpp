#include "emosllm/kernels/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace emosllm::kernels::scalar {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
void axpy(T* y, T alpha, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void add(T* out, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(T* out, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(T* out, const T* a, const T* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale(T* out, T alpha, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
T sum(const T* x, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(T) * std::size_t(m) * n);
    for (int i = 0; i < m; ++i) {
        T* c = C + std::size_t(i) * n;
        const T* a = A + std::size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const T alpha = a[p];
            const T* b = B + std::size_t(p) * n;
            for (int j = 0; j < n; ++j) c[j] += alpha * b[j];
        }
    }
}

template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + std::size_t(i) * k;
        T* c = C + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* b = B + std::size_t(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] = accumulate ? c[j] + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(T) * std::size_t(m) * n);
    for (int p = 0; p < k; ++p) {
        const T* a = A + std::size_t(p) * m;
        const T* b = B + std::size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const T alpha = a[i];
            T* c = C + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) c[j] += alpha * b[j];
        }
    }
}

template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float*, float, const float*, std::size_t);
template void axpy<double>(double*, double, const double*, std::size_t);
template void add<float>(float*, const float*, const float*, std::size_t);
template void add<double>(double*, const double*, const double*, std::size_t);
template void sub<float>(float*, const float*, const float*, std::size_t);
template void sub<double>(double*, const double*, const double*, std::size_t);
template void mul<float>(float*, const float*, const float*, std::size_t);
template void mul<double>(double*, const double*, const double*, std::size_t);
template void scale<float>(float*, float, const float*, std::size_t);
template void scale<double>(double*, double, const double*, std::size_t);
template float sum<float>(const float*, std::size_t);
template double sum<double>(const double*, std::size_t);
template void gemm_nn<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_nn<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_tn<double>(const double*, const double*, double*, int, int, int, bool);

}  // namespace emosllm::kernels::scalar

namespace emosllm::kernels {

template <typename T>
void softmax_row(T* x, std::size_t n) {
    if (n == 0) return;
    T mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        total += x[i];
    }
    const T inv = T(1) / total;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

template void softmax_row<float>(float*, std::size_t);
template void softmax_row<double>(double*, std::size_t);

}  // namespace emosllm::kernels
