#include "mapl/error.hpp"
#include "mapl/losses.hpp"
#include "mapl/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace mapl;
using namespace mapl::loss;
using pseudo::PseudoLabel;

namespace {

struct Map {
    std::vector<double> target, pred;
};

// Predictions stay well inside the clamp so central differences are clean.
Map random_map(std::uint64_t seed, int n = 64) {
    Rng rng(seed);
    Map m{std::vector<double>(n), std::vector<double>(n)};
    for (int i = 0; i < n; ++i) {
        m.target[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
        m.pred[i] = rng.uniform(0.05, 0.95);
    }
    return m;
}

double pixel_bce(const Map& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.pred.size(); ++i)
        s -= m.target[i] * std::log(m.pred[i]) + (1 - m.target[i]) * std::log(1 - m.pred[i]);
    return s / m.pred.size();
}

void expect_grad_matches(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x, const std::vector<double>& analytic, const char* what) {
    constexpr double h = 1e-5;
    ASSERT_EQ(analytic.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> a = x, b = x;
        a[i] += h;
        b[i] -= h;
        const double fd = (f(a) - f(b)) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
        EXPECT_LT(std::abs(fd - analytic[i]) / denom, 1e-4) << what << " at " << i << ": fd " << fd << " analytic "
                                                             << analytic[i];
    }
}

}  // namespace

TEST(FocalLoss, ReducesToBce) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Map m = random_map(s);
        EXPECT_NEAR(focal_loss(m.target, m.pred, 0.0, 1.0), pixel_bce(m), 1e-6);
    }
    const std::vector<double> one{1.0}, half{0.5};
    EXPECT_NEAR(focal_loss(one, half, 0.0, 1.0), std::log(2.0), 1e-12);
}

TEST(FocalLoss, WorkedValueAndLimit) {
    // y = 1, p = 0.9: 0.25 * 0.1^4 * -ln 0.9
    const std::vector<double> one{1.0};
    EXPECT_NEAR(focal_loss(one, std::vector<double>{0.9}, 4.0, 0.25), 0.25 * 1e-4 * -std::log(0.9), 1e-15);
    EXPECT_NEAR(focal_loss(one, std::vector<double>{0.9}, 4.0, 0.25), 2.634e-6, 1e-9);
    EXPECT_LT(focal_loss(one, std::vector<double>{1.0}, 4.0, 0.25), 1e-6);
    EXPECT_LT(focal_loss(std::vector<double>{0.0}, std::vector<double>{0.0}, 4.0, 0.25), 1e-6);
}

TEST(FocalLoss, StrictlyDecreasingInGamma) {
    for (double pt : {0.05, 0.3, 0.5, 0.8, 0.99}) {
        double prev = std::numeric_limits<double>::infinity();
        for (double gamma : {0.0, 1.0, 2.0, 4.0}) {
            const double v = focal_loss(std::vector<double>{1.0}, std::vector<double>{pt}, gamma, 0.25);
            EXPECT_LT(v, prev) << "pt " << pt << " gamma " << gamma;
            prev = v;
        }
    }
}

TEST(L1Loss, MeanReduction) {
    const std::vector<double> g{0, 1, 1, 0}, p{0.5, 0.5, 1.0, 0.0};
    EXPECT_DOUBLE_EQ(l1_loss(g, p), 0.25);
    EXPECT_EQ(l1_loss(g, g), 0.0);
    EXPECT_EQ(l1_loss(std::vector<double>{}, std::vector<double>{}), 0.0);
}

TEST(SegLoss, WeightCollapseAndComposite) {
    const Map m = random_map(5);
    LossWeights l1_only{1.0, 0.0, 4.0, 0.25};
    EXPECT_DOUBLE_EQ(seg_loss(m.target, m.pred, l1_only), l1_loss(m.target, m.pred));
    LossWeights w;
    EXPECT_NEAR(seg_loss(m.target, m.pred, w),
                0.6 * l1_loss(m.target, m.pred) + 0.4 * focal_loss(m.target, m.pred, 4.0, 0.25), 1e-15);
}

TEST(SegLoss, MapOverloadsCheckShape) {
    GrayMask g(8, 8, 0);
    g.at(2, 3) = 1;
    ScoreMap s(8, 8, 0.2);
    EXPECT_NEAR(l1_loss(g, s), (63 * 0.2 + 0.8) / 64.0, 1e-15);
    EXPECT_DOUBLE_EQ(seg_loss(g, s, LossWeights{}), seg_loss(to_target(g), s.values, LossWeights{}));
    EXPECT_THROW(l1_loss(g, ScoreMap(8, 7)), ParameterError);
    EXPECT_THROW(focal_loss(g, ScoreMap(7, 8), 4, 0.25), ParameterError);
    EXPECT_THROW(l1_loss(std::vector<double>{1, 2}, std::vector<double>{1}), ParameterError);
}

TEST(Losses, NonNegativeAndZeroAtPerfect) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Map m = random_map(s);
        EXPECT_GE(l1_loss(m.target, m.pred), 0.0);
        EXPECT_GE(focal_loss(m.target, m.pred, 4, 0.25), 0.0);
        EXPECT_GE(seg_loss(m.target, m.pred, LossWeights{}), 0.0);
        EXPECT_LT(seg_loss(m.target, m.target, LossWeights{}), 1e-6);
        std::vector<int> y(m.target.begin(), m.target.end());
        EXPECT_LT(bce_labeled(m.target, y), 1e-6);
    }
}

TEST(Gradients, PixelTermsMatchFiniteDifferences) {
    const Map m = random_map(77, 64);  // 8x8
    const LossWeights w;
    expect_grad_matches([&](const auto& p) { return l1_loss(m.target, p); }, m.pred, l1_loss_grad(m.target, m.pred),
                        "l1");
    for (double gamma : {0.0, 1.0, 2.5, 4.0})
        expect_grad_matches([&](const auto& p) { return focal_loss(m.target, p, gamma, 0.25); }, m.pred,
                            focal_loss_grad(m.target, m.pred, gamma, 0.25), "focal");
    expect_grad_matches([&](const auto& p) { return seg_loss(m.target, p, w); }, m.pred,
                        seg_loss_grad(m.target, m.pred, w), "seg");
}

TEST(Gradients, BceTermsMatchFiniteDifferences) {
    Rng rng(4);
    std::vector<double> q(16);
    std::vector<int> y(16);
    std::vector<PseudoLabel> v(16);
    for (int i = 0; i < 16; ++i) {
        q[i] = rng.uniform(0.05, 0.95);
        y[i] = static_cast<int>(rng.below(2));
        v[i] = static_cast<PseudoLabel>(static_cast<int>(rng.below(3)) - 1);
    }
    expect_grad_matches([&](const auto& x) { return bce_labeled(x, y); }, q, bce_labeled_grad(q, y), "bce_l");
    expect_grad_matches([&](const auto& x) { return bce_pseudo(x, v); }, q, bce_pseudo_grad(q, v), "bce_u");
    for (int i = 0; i < 16; ++i)
        if (v[i] == PseudoLabel::unknown) EXPECT_EQ(bce_pseudo_grad(q, v)[i], 0.0);
}

TEST(Gradients, ZeroInsideClampRegion) {
    const std::vector<double> t{1.0, 0.0}, p{0.0, 1.0};
    for (double g : focal_loss_grad(t, p, 4, 0.25)) EXPECT_EQ(g, 0.0);
    for (double g : bce_labeled_grad(p, std::vector<int>{1, 0})) EXPECT_EQ(g, 0.0);
    // Clamped value is finite and equals -ln(eps).
    EXPECT_NEAR(bce_labeled(std::vector<double>{0.0}, std::vector<int>{1}), -std::log(kEps), 1e-9);
}

TEST(BceLabeled, WorkedValues) {
    EXPECT_NEAR(bce_labeled(std::vector<double>{0.9}, std::vector<int>{1}), 0.1054, 1e-4);
    EXPECT_NEAR(bce_labeled(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1}), std::log(2.0), 1e-12);
    EXPECT_EQ(bce_labeled(std::vector<double>{}, std::vector<int>{}), 0.0);
}

TEST(BcePseudo, IndicatorMasking) {
    using enum PseudoLabel;
    const std::vector<double> q{0.9, 0.1};
    EXPECT_EQ(bce_pseudo(q, std::vector<PseudoLabel>{unknown, unknown}), 0.0);
    EXPECT_NEAR(bce_pseudo(q, std::vector<PseudoLabel>{anomalous, unknown}), -std::log(0.9), 1e-12);
    EXPECT_DOUBLE_EQ(bce_pseudo(q, std::vector<PseudoLabel>{anomalous, normal}),
                     bce_labeled(q, std::vector<int>{1, 0}));
    EXPECT_EQ(bce_pseudo(std::vector<double>{}, std::vector<PseudoLabel>{}), 0.0);
}

TEST(TotalLoss, SumIdentity) {
    EXPECT_NEAR(total_loss(0.3, 0.2, 0.1), 0.6, 1e-12);
}

TEST(LossWeights, Validation) {
    EXPECT_NO_THROW(LossWeights{}.validate());
    EXPECT_THROW((LossWeights{-0.1, 0.4, 4, 0.25}.validate()), ConfigError);
    EXPECT_THROW((LossWeights{0.6, 0.4, -1, 0.25}.validate()), ConfigError);
}
