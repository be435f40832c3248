#include "mapl/error.hpp"
#include "mapl/memory.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace mapl;
using namespace mapl::memory;
using mapl::testing::random_tensor;

namespace {

FeaturePyramid random_pyramid(std::uint64_t seed, int c = 2, int s = 8) {
    FeaturePyramid p;
    p[0] = random_tensor(c, s, s, seed * 3 + 0);
    p[1] = random_tensor(2 * c, s / 2, s / 2, seed * 3 + 1);
    p[2] = random_tensor(4 * c, s / 4, s / 4, seed * 3 + 2);
    return p;
}

FeaturePyramid scalar_pyramid(double a, double b, double c) {
    FeaturePyramid p;
    p[0] = Tensor(1, 1, 1, a);
    p[1] = Tensor(1, 1, 1, b);
    p[2] = Tensor(1, 1, 1, c);
    return p;
}

MemoryBank random_bank(int n, std::uint64_t seed) {
    std::vector<FeaturePyramid> e;
    for (int i = 0; i < n; ++i) e.push_back(random_pyramid(seed * 1000 + i));
    return MemoryBank(std::move(e));
}

bool all_zero(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return v == 0.0; });
}

}  // namespace

TEST(MemoryBank, RejectsMixedShapes) {
    std::vector<FeaturePyramid> e{random_pyramid(1), random_pyramid(2, 2, 16)};
    EXPECT_THROW(MemoryBank(std::move(e)), ParameterError);
}

TEST(BuildMemory, SelectionAndErrors) {
    std::vector<Image> normals;
    for (int i = 0; i < 5; ++i) normals.emplace_back(2, 2, static_cast<float>(i));
    auto encode = [](const Image& img) { return scalar_pyramid(img.pixels[0], 0, 0); };

    Rng a(7), b(7);
    const MemoryBank ba = build_memory(normals, encode, 3, a), bb = build_memory(normals, encode, 3, b);
    ASSERT_EQ(ba.size(), 3u);
    EXPECT_EQ(ba.source_indices(), bb.source_indices());
    std::vector<std::size_t> idx = ba.source_indices();
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::unique(idx.begin(), idx.end()), idx.end());
    for (std::size_t i = 0; i < ba.size(); ++i)
        EXPECT_EQ(ba[i][0].data[0], static_cast<double>(ba.source_indices()[i]));

    Rng c(1);
    const std::vector<Image> one{Image(2, 2, 0.25f)};
    const MemoryBank single = build_memory(one, encode, 1, c);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0][0].data[0], 0.25);

    EXPECT_THROW(build_memory(one, encode, 2, c), ConfigError);
}

TEST(DiffAll, ToyAndIdentity) {
    const MemoryBank bank({scalar_pyramid(3, 3, 3), scalar_pyramid(2, 2, 2)});
    const auto d = diff_all(scalar_pyramid(2, 2, 2), bank);
    ASSERT_EQ(d.size(), 2u);
    for (int s = 0; s < 3; ++s) {
        EXPECT_EQ(d[0][s].data[0], 1.0);
        EXPECT_EQ(d[1][s].data[0], 0.0);
    }
    EXPECT_THROW(diff_all(random_pyramid(1), bank), ParameterError);
}

TEST(SelectBest, ToyTiesAndEmpty) {
    std::vector<DiffPyramid> d(2);
    for (int s = 0; s < 3; ++s) {
        d[0][s] = Tensor(1, 1, 1, s == 0 ? 1.0 : 0.0);
        d[1][s] = Tensor(1, 1, 1, s == 0 ? 4.0 : 0.0);
    }
    EXPECT_EQ(select_best_index(d), 0u);
    std::swap(d[0], d[1]);
    EXPECT_EQ(select_best_index(d), 1u);
    d[0] = d[1];
    EXPECT_EQ(select_best_index(d), 0u);  // tie → lowest index
    EXPECT_THROW(select_best_index(std::vector<DiffPyramid>{}), StateError);
}

TEST(SelectBest, BruteForceOracle) {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const MemoryBank bank = random_bank(2 + static_cast<int>(trial % 7), trial + 1);
        const FeaturePyramid x = random_pyramid(9000 + trial);
        const auto diffs = diff_all(x, bank);
        std::size_t best = 0;
        double best_sum = 0.0;
        for (std::size_t i = 0; i < bank.size(); ++i) {
            double s = 0.0;
            for (int l = 0; l < 3; ++l)
                for (std::size_t k = 0; k < x[l].size(); ++k) s += std::abs(bank[i][l].data[k] - x[l].data[k]);
            if (i == 0 || s < best_sum) {
                best = i;
                best_sum = s;
            }
        }
        ASSERT_EQ(select_best_index(diffs), best);
        const Match m = match_memory(x, bank);
        ASSERT_EQ(m.index[0], best);
        ASSERT_NEAR(m.total, best_sum, 1e-9 * std::max(1.0, best_sum));
        for (int l = 0; l < 3; ++l) ASSERT_EQ(m.best[l].data, diffs[best][l].data);
    }
}

TEST(SelectBest, PermutationEquivariant) {
    const MemoryBank bank = random_bank(6, 4);
    const FeaturePyramid x = random_pyramid(77);
    const Match m = match_memory(x, bank);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    rng.shuffle(perm);
    std::vector<FeaturePyramid> permuted;
    for (std::size_t p : perm) permuted.push_back(bank[p]);
    const Match mp = match_memory(x, MemoryBank(permuted));
    EXPECT_EQ(perm[mp.index[0]], m.index[0]);
    for (int l = 0; l < 3; ++l) EXPECT_EQ(mp.best[l].data, m.best[l].data);
}

TEST(MatchMemory, PerScaleArgmin) {
    const MemoryBank bank({scalar_pyramid(0, 5, 5), scalar_pyramid(5, 0, 5), scalar_pyramid(5, 5, 0)});
    const Match joint = match_memory(scalar_pyramid(0, 0, 0), bank, false);
    EXPECT_EQ(joint.index[0], 0u);
    EXPECT_EQ(joint.index[1], 0u);
    const Match per = match_memory(scalar_pyramid(0, 0, 0), bank, true);
    EXPECT_EQ(per.index[0], 0u);
    EXPECT_EQ(per.index[1], 1u);
    EXPECT_EQ(per.index[2], 2u);
    EXPECT_EQ(per.total, 0.0);
}

TEST(ConcatInfo, ChannelLayout) {
    const FeaturePyramid x = random_pyramid(5);
    DiffPyramid zero;
    for (int s = 0; s < 3; ++s) zero[s] = Tensor(x[s].channels, x[s].height, x[s].width);
    const ConcatPyramid c = concat_info(x, zero);
    for (int s = 0; s < 3; ++s) {
        ASSERT_EQ(c[s].channels, 2 * x[s].channels);
        const std::size_t half = x[s].size();
        EXPECT_TRUE(std::equal(x[s].data.begin(), x[s].data.end(), c[s].data.begin()));
        EXPECT_TRUE(std::all_of(c[s].data.begin() + half, c[s].data.end(), [](double v) { return v == 0.0; }));
    }
    DiffPyramid bad = zero;
    bad[1] = Tensor(1, 1, 1);
    EXPECT_THROW(concat_info(x, bad), ParameterError);
}

TEST(AttentionMaps, WorkedToy) {
    DiffPyramid d;
    d[2] = Tensor(2, 1, 1);
    d[2].data = {0.2, 0.4};
    d[1] = Tensor(1, 2, 2, 0.5);
    d[0] = Tensor(1, 4, 4, 1.0);
    const AttentionMaps m = attention_maps(d);
    EXPECT_NEAR(m[2].data[0], 0.3, 1e-15);
    for (double v : m[1].data) EXPECT_NEAR(v, 0.15, 1e-15);
    for (double v : m[0].data) EXPECT_NEAR(v, 0.15, 1e-15);
}

TEST(AttentionMaps, NonNegativeAndScaleCoupled) {
    const FeaturePyramid x = random_pyramid(3);
    const Match m = match_memory(x, random_bank(4, 9));
    const AttentionMaps a = attention_maps(m.best);
    for (int s = 0; s < 3; ++s)
        for (double v : a[s].data) EXPECT_GE(v, 0.0);

    for (double c : {4.0, 0.37}) {
        DiffPyramid scaled = m.best;
        for (double& v : scaled[2].data) v *= c;
        const AttentionMaps b = attention_maps(scaled);
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < a[s].size(); ++k) {
                if (c == 4.0)
                    EXPECT_EQ(b[s].data[k], c * a[s].data[k]);  // power of two: exact
                else
                    EXPECT_NEAR(b[s].data[k], c * a[s].data[k], 1e-14 * std::max(1.0, a[s].data[k]));
            }
    }
}

TEST(ZeroMatch, BankEntriesGiveZeroMaps) {
    const MemoryBank bank = random_bank(5, 12);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const Match m = match_memory(bank[i], bank);
        EXPECT_EQ(m.total, 0.0);
        EXPECT_EQ(m.index[0], i);
        const AttentionMaps a = attention_maps(m.best);
        for (int s = 0; s < 3; ++s) EXPECT_TRUE(all_zero(a[s]));
    }
}

TEST(AttentionBackward, MatchesFiniteDifferences) {
    const FeaturePyramid x = random_pyramid(21);
    const Match m = match_memory(x, random_bank(3, 5));
    AttentionMaps w;
    for (int s = 0; s < 3; ++s) w[s] = random_tensor(1, m.best[s].height, m.best[s].width, 50 + s);
    auto objective = [&](const DiffPyramid& d) {
        const AttentionMaps a = attention_maps(d);
        double f = 0.0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < a[s].size(); ++k) f += w[s].data[k] * a[s].data[k];
        return f;
    };
    const DiffPyramid g = attention_maps_backward(m.best, w);
    for (int s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < m.best[s].size(); k += 3) {
            DiffPyramid p = m.best, q = m.best;
            const double h = 1e-6;
            p[s].data[k] += h;
            q[s].data[k] -= h;
            const double num = (objective(p) - objective(q)) / (2 * h);
            EXPECT_NEAR(g[s].data[k], num, 1e-6 * std::max(1.0, std::abs(num))) << s << ":" << k;
        }
}

TEST(MatchBackward, SignOfDifference) {
    const MemoryBank bank({scalar_pyramid(3, -1, 2)});
    const FeaturePyramid x = scalar_pyramid(1, 1, 2);
    const Match m = match_memory(x, bank);
    DiffPyramid g;
    for (int s = 0; s < 3; ++s) g[s] = Tensor(1, 1, 1, 2.0);
    FeaturePyramid dx;
    for (int s = 0; s < 3; ++s) dx[s] = Tensor(1, 1, 1, 0.0);
    match_backward(x, bank, m, g, dx);
    EXPECT_EQ(dx[0].data[0], -2.0);  // x < m
    EXPECT_EQ(dx[1].data[0], 2.0);   // x > m
    EXPECT_EQ(dx[2].data[0], 0.0);   // equal: subgradient 0
}
