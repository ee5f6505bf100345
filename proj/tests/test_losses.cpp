#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "focusfree/losses.hpp"

using namespace focusfree;

namespace {

constexpr double kLn2 = std::numbers::ln2;

// Central differences of f at x with step h, one coordinate at a time.
std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

SegmentationMap random_mask(std::size_t w, std::size_t h, std::mt19937& rng) {
    SegmentationMap m(w, h, 0);
    std::bernoulli_distribution fg(0.3);
    for (auto& v : m.values()) {
        v = fg(rng) ? 1 : 0;
    }
    return m;
}

// Class-planar probabilities with per-pixel softmax over two random logits.
std::vector<double> random_planar_probs(std::size_t n, std::mt19937& rng) {
    std::normal_distribution<double> z(0.0, 1.5);
    std::vector<double> p(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = z(rng), b = z(rng);
        p[i] = std::exp(a) / (std::exp(a) + std::exp(b));
        p[n + i] = 1.0 - p[i];
    }
    return p;
}

} // namespace

TEST(SegFocalLoss, HandValue) {
    SegmentationMap mask(2, 2, 0);
    mask(1, 0) = 1;
    const std::vector<double> probs(8, 0.5);
    const auto l = seg_focal_loss<double>(probs, mask, 2.0);
    EXPECT_NEAR(l.value, 0.25 * kLn2 * 1.5, 1e-12);
    EXPECT_NEAR(l.value, 0.2599, 1e-4);
}

TEST(SegFocalLoss, PerfectPrediction) {
    std::mt19937 rng(1);
    const auto mask = random_mask(8, 8, rng);
    std::vector<double> probs(128);
    for (std::size_t i = 0; i < 64; ++i) {
        probs[i] = mask.values()[i] ? 0.0 : 1.0;
        probs[64 + i] = mask.values()[i] ? 1.0 : 0.0;
    }
    const auto l = seg_focal_loss<double>(probs, mask);
    EXPECT_EQ(l.value, 0.0);
    for (double g : l.gradient) {
        EXPECT_EQ(g, 0.0);
    }
}

TEST(SegFocalLoss, GradientMatchesFiniteDifferences) {
    std::mt19937 rng(2);
    const auto mask = random_mask(16, 16, rng);
    const auto probs = random_planar_probs(256, rng);
    const auto l = seg_focal_loss<double>(probs, mask, 2.0);
    const auto fd = central_diff([&](const std::vector<double>& p) { return seg_focal_loss<double>(p, mask, 2.0).value; },
                                 probs, 1e-6);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        EXPECT_LT(rel_err(l.gradient[i], fd[i]), 1e-5) << i;
    }
}

TEST(SegFocalLoss, ReducesToCrossEntropy) {
    // gamma 0 and a balanced mask give alpha = 1/2 for both classes.
    SegmentationMap mask(8, 8, 0);
    for (std::size_t i = 0; i < 32; ++i) {
        mask.values()[2 * i] = 1;
    }
    std::mt19937 rng(3);
    const auto probs = random_planar_probs(64, rng);
    double ce = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        ce -= std::log(mask.values()[i] ? probs[64 + i] : probs[i]);
    }
    EXPECT_NEAR(seg_focal_loss<double>(probs, mask, 0.0).value, 0.5 * ce, 1e-9);
}

TEST(SegFocalLoss, FloorKeepsFinite) {
    SegmentationMap mask(2, 1, 1);
    const std::vector<double> probs{1.0, 1.0, 0.0, 0.0};
    const auto l = seg_focal_loss<double>(probs, mask);
    EXPECT_TRUE(std::isfinite(l.value));
    for (double g : l.gradient) {
        EXPECT_TRUE(std::isfinite(g));
    }
}

TEST(SegFocalLoss, Errors) {
    SegmentationMap mask(2, 2, 0);
    EXPECT_THROW(seg_focal_loss<double>(std::vector<double>(7, 0.5), mask), ShapeMismatch);
    EXPECT_THROW(seg_focal_loss<double>(std::vector<double>(8, 0.5), mask, -1.0), InvalidArgument);
}

TEST(GlobalDensityLoss, HandValues) {
    const std::vector<double> half{0.1, 0.5, 0.2, 0.1, 0.1};
    const auto l = global_density_loss<double>(half, {1}, 2.0);
    EXPECT_NEAR(l.value, 0.25 * kLn2, 1e-12);
    EXPECT_NEAR(l.value, 0.17329, 1e-4);
    const std::vector<double> sure{0.0, 0.0, 1.0, 0.0, 0.0};
    EXPECT_EQ(global_density_loss<double>(sure, {2}).value, 0.0);
    EXPECT_THROW(global_density_loss<double>(sure, {5}), ShapeMismatch);
}

TEST(GlobalDensityLoss, GradientMatchesFiniteDifferences) {
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> p(5);
        double s = 0.0;
        for (auto& v : p) {
            s += (v = u(rng));
        }
        for (auto& v : p) {
            v /= s;
        }
        const GlobalDensityLabel t{static_cast<std::size_t>(trial % 5)};
        const auto l = global_density_loss<double>(p, t);
        const auto fd =
            central_diff([&](const std::vector<double>& q) { return global_density_loss<double>(q, t).value; }, p, 1e-6);
        for (std::size_t i = 0; i < p.size(); ++i) {
            EXPECT_LT(rel_err(l.gradient[i], fd[i]), 1e-6);
        }
    }
}

TEST(DensityRegressionLoss, HandValues) {
    const std::vector<double> target{1.0, 2.0};
    const std::vector<double> pred{4.0, -2.0};
    const auto l = density_regression_loss<double>(pred, target);
    EXPECT_DOUBLE_EQ(l.value, 19.5);
    EXPECT_EQ(l.gradient, (std::vector<double>{4.0, -5.0}));
    const auto zero = density_regression_loss<double>(target, target);
    EXPECT_EQ(zero.value, 0.0);
    EXPECT_EQ(zero.gradient, (std::vector<double>{0.0, 0.0}));
    EXPECT_THROW(density_regression_loss<double>(std::vector<double>{1.0}, target), ShapeMismatch);
}

TEST(DensityRegressionLoss, GradientAndSymmetry) {
    std::mt19937 rng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> target(1024), resid(1024), pred(1024), neg(1024);
    for (std::size_t i = 0; i < 1024; ++i) {
        target[i] = std::abs(z(rng));
        resid[i] = z(rng);
        if (std::abs(resid[i]) < 1e-3) {
            resid[i] = 0.5;
        }
        pred[i] = target[i] + resid[i];
        neg[i] = target[i] - resid[i];
    }
    const auto l = density_regression_loss<double>(pred, target);
    const auto fd =
        central_diff([&](const std::vector<double>& p) { return density_regression_loss<double>(p, target).value; }, pred,
                     1e-6);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        EXPECT_LT(rel_err(l.gradient[i], fd[i]), 1e-5);
    }
    EXPECT_NEAR(l.value, density_regression_loss<double>(neg, target).value, 1e-9);
}

TEST(DensityRegressionLoss, AcceptsFloatPredictions) {
    DensityMap target(2, 1, 0.0);
    const std::vector<float> pred{1.0f, -1.0f};
    EXPECT_DOUBLE_EQ(density_regression_loss<float>(pred, target).value, 3.0);
}

TEST(TotalLoss, Weights) {
    EXPECT_EQ(total_loss(1.0, 1.0, 1.0), 12.0);
    EXPECT_EQ(total_loss(0.0, 0.0, 0.0), 0.0);
    const LossWeights w{};
    EXPECT_EQ(w.lambda_r, 1.0);
    EXPECT_EQ(w.lambda_s, 10.0);
    EXPECT_EQ(w.lambda_c, 1.0);
    EXPECT_EQ(total_loss(LossValue{2.0, {}}, LossValue{0.5, {}}, LossValue{3.0, {}}, {2.0, 1.0, 0.0}), 4.5);
}
