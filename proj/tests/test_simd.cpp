#include "mapl/error.hpp"
#include "mapl/network.hpp"
#include "mapl/rng.hpp"
#include "mapl/simd/kernels.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace mapl {
namespace {

using simd::Isa;
using simd::KernelTable;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// Restores the process-wide selection when a test changes it.
struct IsaGuard {
    const KernelTable& saved = simd::kernels();
    ~IsaGuard() { simd::set_active_isa(saved.isa); }
};

void naive_gemm(bool ta, bool tb, int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
                int ldc) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += (ta ? a[p * lda + i] : a[i * lda + p]) * (tb ? b[j * ldb + p] : b[p * ldb + j]);
            c[i * ldc + j] += s;
        }
}

// Tolerance for FMA and reordered summation: relative to the sum of |terms|.
constexpr double kTol = 1e-13;

void check_gemms(const KernelTable& t) {
    const int shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 4, 4}, {8, 9, 13}, {17, 33, 5}, {31, 2, 64}, {64, 48, 27}};
    std::uint64_t seed = 1;
    for (const auto& s : shapes) {
        const int m = s[0], n = s[1], k = s[2];
        // Padded leading dimensions exercise the stride handling.
        const int pad = 3;
        for (int variant = 0; variant < 3; ++variant) {
            const bool ta = variant == 1, tb = variant == 2;
            const int lda = (ta ? m : k) + pad, ldb = (tb ? k : n) + pad, ldc = n + pad;
            const auto a = random_vec(static_cast<std::size_t>(lda) * (ta ? k : m), seed++);
            const auto b = random_vec(static_cast<std::size_t>(ldb) * (tb ? n : k), seed++);
            auto c = random_vec(static_cast<std::size_t>(ldc) * m, seed++);
            auto ref = c;
            naive_gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, ref.data(), ldc);
            auto fn = variant == 0 ? t.gemm_nn : (variant == 1 ? t.gemm_tn : t.gemm_nt);
            fn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < ldc; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * ldc + j;
                    if (j >= n) {
                        ASSERT_EQ(c[idx], ref[idx]) << "padding written";
                        continue;
                    }
                    ASSERT_NEAR(c[idx], ref[idx], kTol * (k + 1)) << t.name << " variant " << variant << " m" << m
                                                                    << " n" << n << " k" << k;
                }
            }
        }
    }
}

void check_vector_kernels(const KernelTable& t, const KernelTable& ref) {
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 15u, 16u, 17u, 100u, 1023u}) {
        auto x = random_vec(n, 10 + n), y = random_vec(n, 20 + n), g = random_vec(n, 30 + n);
        // A few exact zeros and exact ties.
        if (n > 2) {
            x[1] = 0.0;
            y[2] = x[2];
        }
        EXPECT_NEAR(t.dot(n, x.data(), y.data()), ref.dot(n, x.data(), y.data()), kTol * (n + 1));

        auto ya = y, yb = y;
        t.axpy(n, 0.37, x.data(), ya.data());
        ref.axpy(n, 0.37, x.data(), yb.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ya[i], yb[i], 1e-15);

        std::vector<double> oa(n), ob(n);
        EXPECT_NEAR(t.abs_diff(n, x.data(), y.data(), oa.data()), ref.abs_diff(n, x.data(), y.data(), ob.data()),
                    kTol * (n + 1));
        EXPECT_NEAR(t.abs_diff(n, x.data(), y.data(), nullptr), ref.abs_diff(n, x.data(), y.data(), nullptr),
                    kTol * (n + 1));
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(oa[i], ob[i]);

        auto da = g, db = g;
        t.abs_diff_backward(n, x.data(), y.data(), g.data(), da.data());
        ref.abs_diff_backward(n, x.data(), y.data(), g.data(), db.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(da[i], db[i]);
        if (n > 2) EXPECT_EQ(da[2], g[2]);  // tie contributes nothing

        std::vector<double> la(n), lb(n);
        t.leaky_relu(n, 0.01, x.data(), la.data());
        ref.leaky_relu(n, 0.01, x.data(), lb.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(la[i], lb[i]);
        auto inplace = x;
        t.leaky_relu(n, 0.01, inplace.data(), inplace.data());
        EXPECT_EQ(inplace, la);

        std::vector<double> ba(n), bb(n);
        t.leaky_relu_backward(n, 0.01, la.data(), g.data(), ba.data());
        ref.leaky_relu_backward(n, 0.01, lb.data(), g.data(), bb.data());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(ba[i], bb[i]);
    }
}

}  // namespace

TEST(ScalarKernels, GemmMatchesNaive) { check_gemms(simd::kernels(Isa::scalar)); }

TEST(ScalarKernels, VectorWorkedValues) {
    const auto& t = simd::kernels(Isa::scalar);
    const double x[] = {1, -2, 3}, y[] = {4, 5, -6};
    EXPECT_EQ(t.dot(3, x, y), 4 - 10 - 18);
    double out[3];
    EXPECT_EQ(t.abs_diff(3, x, y, out), 3 + 7 + 9);
    EXPECT_EQ(out[1], 7);
    double act[3];
    t.leaky_relu(3, 0.01, x, act);
    EXPECT_EQ(act[0], 1);
    EXPECT_DOUBLE_EQ(act[1], -0.02);
}

TEST(Avx2Kernels, GemmMatchesNaive) {
    if (!simd::isa_supported(Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
    check_gemms(simd::kernels(Isa::avx2));
}

TEST(Avx2Kernels, VectorKernelsMatchScalar) {
    if (!simd::isa_supported(Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
    check_vector_kernels(simd::kernels(Isa::avx2), simd::kernels(Isa::scalar));
}

TEST(Avx2Kernels, NetworkForwardMatchesScalar) {
    if (!simd::isa_supported(Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
    IsaGuard guard;
    net::NetworkConfig cfg;
    cfg.image_size = 32;
    cfg.base_width = 4;
    cfg.predictor_hidden = 8;
    const net::Model model(cfg, 3);
    const Image img = testing::random_image(32, 32, 5);

    auto run = [&](Isa isa) {
        simd::set_active_isa(isa);
        std::vector<FeaturePyramid> entries{model.encode_features(testing::random_image(32, 32, 6)),
                                            model.encode_features(testing::random_image(32, 32, 7))};
        return model.forward(img, memory::MemoryBank(std::move(entries)));
    };
    const auto a = run(Isa::scalar), b = run(Isa::avx2);
    EXPECT_NEAR(a.q, b.q, 1e-10);
    ASSERT_EQ(a.seg.values.size(), b.seg.values.size());
    for (std::size_t i = 0; i < a.seg.values.size(); ++i) EXPECT_NEAR(a.seg.values[i], b.seg.values[i], 1e-10);
}

TEST(Dispatch, TablesAndOverride) {
    IsaGuard guard;
    EXPECT_TRUE(simd::isa_supported(Isa::scalar));
    EXPECT_EQ(simd::kernels(Isa::scalar).isa, Isa::scalar);
    EXPECT_EQ(simd::isa_name(Isa::avx2), "avx2");
    simd::set_active_isa(Isa::scalar);
    EXPECT_EQ(simd::kernels().isa, Isa::scalar);
    if (simd::isa_supported(Isa::avx2)) {
        simd::set_active_isa(Isa::avx2);
        EXPECT_EQ(simd::kernels().isa, Isa::avx2);
    } else {
        EXPECT_THROW(simd::kernels(Isa::avx2), ParameterError);
    }
}

}  // namespace mapl
