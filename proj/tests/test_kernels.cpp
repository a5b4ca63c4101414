#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "emosllm/kernels/kernels.hpp"
#include "emosllm/rng.hpp"

using namespace emosllm;
namespace k = emosllm::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.gaussian());
    return v;
}

double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("scalar gemm against hand-computed products") {
    // 2x3 * 3x2
    const float A[] = {1, 2, 3, 4, 5, 6};
    const float B[] = {7, 8, 9, 10, 11, 12};
    float C[4] = {};
    k::scalar::gemm_nn(A, B, C, 2, 3, 2, false);
    CHECK(C[0] == doctest::Approx(58));
    CHECK(C[1] == doctest::Approx(64));
    CHECK(C[2] == doctest::Approx(139));
    CHECK(C[3] == doctest::Approx(154));

    // accumulate adds on top
    k::scalar::gemm_nn(A, B, C, 2, 3, 2, true);
    CHECK(C[0] == doctest::Approx(116));

    // nt: A (2x3) * B^T with B stored 2x3
    float Cnt[4] = {};
    const float B2[] = {1, 0, 1, 0, 2, 0};
    k::scalar::gemm_nt(A, B2, Cnt, 2, 3, 2, false);
    CHECK(Cnt[0] == doctest::Approx(4));   // 1+0+3
    CHECK(Cnt[1] == doctest::Approx(4));   // 0+4+0
    CHECK(Cnt[2] == doctest::Approx(10));  // 4+0+6
    CHECK(Cnt[3] == doctest::Approx(10));

    // tn: A^T (3x2 stored as 2x3) * B (2x2)
    const float A2[] = {1, 2, 3, 4, 5, 6};  // 2x3, so A^T is 3x2
    const float B3[] = {1, 1, 2, 2};
    float Ctn[6] = {};
    k::scalar::gemm_tn(A2, B3, Ctn, 3, 2, 2, false);
    CHECK(Ctn[0] == doctest::Approx(9));   // 1*1 + 4*2
    CHECK(Ctn[1] == doctest::Approx(9));
    CHECK(Ctn[2] == doctest::Approx(12));  // 2 + 5*2
}

TEST_CASE("avx2 kernels match scalar reference") {
    if (!k::avx2::available()) {
        MESSAGE("AVX2 not available; dispatch falls back to scalar");
        return;
    }
    Rng rng(42);
    for (std::size_t n : {1u, 7u, 8u, 33u, 256u, 1000u}) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);
        CHECK(rel_err(k::avx2::dot(a.data(), b.data(), n),
                      k::scalar::dot(a.data(), b.data(), n)) < 1e-5);
        CHECK(rel_err(k::avx2::sum(a.data(), n), k::scalar::sum(a.data(), n)) < 1e-4);

        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        k::avx2::axpy(y1.data(), 0.37f, a.data(), n);
        k::scalar::axpy(y2.data(), 0.37f, a.data(), n);
        // FMA rounds once, mul+add twice; compare against the input scale.
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(y1[i] - y2[i]) <= 1e-6f * (1.0f + std::abs(a[i]) + std::abs(y2[i])));

        std::vector<float> o1(n), o2(n);
        k::avx2::mul(o1.data(), a.data(), b.data(), n);
        k::scalar::mul(o2.data(), a.data(), b.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(o1[i] == o2[i]);
    }
}

namespace {

// Summation order differs between paths; compare against the matrix scale.
void check_close(const std::vector<float>& got, const std::vector<float>& want, int k_dim) {
    float scale = 1.0f;
    for (float v : want) scale = std::max(scale, std::abs(v));
    const float tol = 1e-6f * float(k_dim) * scale + 1e-6f;
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got[i] - want[i]) <= tol);
}

}  // namespace

TEST_CASE("avx2 gemm variants match scalar on random shapes") {
    if (!k::avx2::available()) return;
    Rng rng(7);
    const int shapes[][3] = {{1, 1, 1}, {3, 5, 2}, {4, 8, 8}, {17, 33, 9}, {64, 128, 64}, {50, 31, 77}};
    for (const auto& s : shapes) {
        const int m = s[0], kk = s[1], n = s[2];
        const auto A = random_vec(std::size_t(m) * kk, rng);
        const auto Bnn = random_vec(std::size_t(kk) * n, rng);
        const auto Bnt = random_vec(std::size_t(n) * kk, rng);
        const auto Atn = random_vec(std::size_t(kk) * m, rng);

        std::vector<float> c1(std::size_t(m) * n), c2(std::size_t(m) * n);
        k::avx2::gemm_nn(A.data(), Bnn.data(), c1.data(), m, kk, n, false);
        k::scalar::gemm_nn(A.data(), Bnn.data(), c2.data(), m, kk, n, false);
        check_close(c1, c2, kk);

        k::avx2::gemm_nt(A.data(), Bnt.data(), c1.data(), m, kk, n, false);
        k::scalar::gemm_nt(A.data(), Bnt.data(), c2.data(), m, kk, n, false);
        check_close(c1, c2, kk);

        k::avx2::gemm_tn(Atn.data(), Bnn.data(), c1.data(), m, kk, n, false);
        k::scalar::gemm_tn(Atn.data(), Bnn.data(), c2.data(), m, kk, n, false);
        check_close(c1, c2, kk);

        // accumulate path
        auto acc1 = random_vec(std::size_t(m) * n, rng);
        auto acc2 = acc1;
        k::avx2::gemm_nn(A.data(), Bnn.data(), acc1.data(), m, kk, n, true);
        k::scalar::gemm_nn(A.data(), Bnn.data(), acc2.data(), m, kk, n, true);
        check_close(acc1, acc2, kk);
    }
}

TEST_CASE("double-precision dispatch matches scalar") {
    Rng rng(3);
    const int m = 9, kk = 17, n = 13;
    std::vector<double> A(std::size_t(m) * kk), B(std::size_t(kk) * n);
    for (auto& x : A) x = rng.gaussian();
    for (auto& x : B) x = rng.gaussian();
    std::vector<double> c1(std::size_t(m) * n), c2(std::size_t(m) * n);
    k::gemm_nn(A.data(), B.data(), c1.data(), m, kk, n, false);
    k::scalar::gemm_nn(A.data(), B.data(), c2.data(), m, kk, n, false);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(rel_err(c1[i], c2[i]) < 1e-12);
}

TEST_CASE("softmax_row is a stable probability distribution") {
    std::vector<double> x{1000.0, 1001.0, 999.0};
    k::softmax_row(x.data(), x.size());
    double total = 0;
    for (double v : x) {
        CHECK(v > 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(1.0));
    CHECK(x[1] > x[0]);
    CHECK(x[0] > x[2]);
}

TEST_CASE("runtime level override") {
    const auto saved = k::active_level();
    k::set_level(k::SimdLevel::scalar);
    CHECK(k::active_level() == k::SimdLevel::scalar);
    float a[4] = {1, 2, 3, 4}, b[4] = {4, 3, 2, 1};
    CHECK(k::dot(a, b, 4) == doctest::Approx(20.0f));
    k::set_level(saved);
}
