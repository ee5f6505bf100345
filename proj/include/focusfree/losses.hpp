#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "focusfree/errors.hpp"
#include "focusfree/supervision.hpp"

namespace focusfree {

/// Scalar loss plus its gradient with respect to the predicted input, laid
/// out like that input.
struct LossValue {
    double value = 0.0;
    std::vector<double> gradient;
};

struct LossWeights {
    double lambda_r = 1.0;
    double lambda_s = 10.0;
    double lambda_c = 1.0;
};

/// Floor applied to probabilities before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kDefaultFocalGamma = 2.0;

namespace detail {

// Focal term -alpha (1 - p)^gamma log(p) and its derivative in p. Below the
// floor p is clamped and the derivative is zero.
struct FocalTerm {
    double value;
    double derivative;
};

inline FocalTerm focal_term(double p, double alpha, double gamma) {
    const bool clamped = p < kProbabilityFloor;
    const double pc = std::clamp(p, kProbabilityFloor, 1.0);
    const double q = 1.0 - pc;
    const double logp = std::log(pc);
    const double q_gamma = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    const double value = -alpha * q_gamma * logp;
    if (clamped) {
        return {value, 0.0};
    }
    double d = q_gamma / pc;
    if (gamma != 0.0) {
        d -= gamma * std::pow(q, gamma - 1.0) * logp;
    }
    return {value, -alpha * d};
}

} // namespace detail

/// Per-pixel class-weighted focal loss for the segmentation branch.
///
/// `probs` is class-planar: background probabilities for all H*W pixels,
/// followed by foreground probabilities. Each class is weighted by
/// alpha_l = 1 - |S_l| / |S|, so the rarer class weighs more. The loss is
/// summed over pixels.
template <typename T>
LossValue seg_focal_loss(std::span<const T> probs, const SegmentationMap& target,
                         double gamma_s = kDefaultFocalGamma) {
    const std::size_t n = target.size();
    if (probs.size() != 2 * n) {
        throw ShapeMismatch("segmentation probabilities hold " + std::to_string(probs.size()) +
                            " values, expected " + std::to_string(2 * n));
    }
    if (gamma_s < 0.0) {
        throw InvalidArgument("focal gamma must be non-negative");
    }
    std::size_t foreground = 0;
    for (auto v : target.values()) {
        foreground += v ? 1 : 0;
    }
    const double total = static_cast<double>(n);
    const double alpha[2] = {1.0 - static_cast<double>(n - foreground) / total,
                             1.0 - static_cast<double>(foreground) / total};
    LossValue out{0.0, std::vector<double>(probs.size(), 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = target.values()[i] ? 1 : 0;
        const std::size_t at = cls * n + i;
        const auto term = detail::focal_term(static_cast<double>(probs[at]), alpha[cls], gamma_s);
        out.value += term.value;
        out.gradient[at] = term.derivative;
    }
    return out;
}

/// Focal loss on the global density class distribution, one-hot target.
template <typename T>
LossValue global_density_loss(std::span<const T> probs, GlobalDensityLabel target,
                              double gamma_c = kDefaultFocalGamma) {
    if (target.level >= probs.size()) {
        throw ShapeMismatch("density level " + std::to_string(target.level) + " outside " +
                            std::to_string(probs.size()) + " classes");
    }
    if (gamma_c < 0.0) {
        throw InvalidArgument("focal gamma must be non-negative");
    }
    LossValue out{0.0, std::vector<double>(probs.size(), 0.0)};
    const auto term = detail::focal_term(static_cast<double>(probs[target.level]), 1.0, gamma_c);
    out.value = term.value;
    out.gradient[target.level] = term.derivative;
    return out;
}

/// 0.5 * ||pred - target||^2 + ||pred - target||_1, summed over pixels.
/// The L1 subgradient uses sign(0) = 0.
template <typename T>
LossValue density_regression_loss(std::span<const T> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw ShapeMismatch("prediction holds " + std::to_string(pred.size()) + " values, target " +
                            std::to_string(target.size()));
    }
    LossValue out{0.0, std::vector<double>(pred.size(), 0.0)};
    double l2 = 0.0;
    double l1 = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = static_cast<double>(pred[i]) - target[i];
        l2 += r * r;
        l1 += std::abs(r);
        out.gradient[i] = r + static_cast<double>((r > 0.0) - (r < 0.0));
    }
    out.value = 0.5 * l2 + l1;
    return out;
}

template <typename T>
LossValue density_regression_loss(std::span<const T> pred, const DensityMap& target) {
    return density_regression_loss(pred, target.values());
}

inline double total_loss(double loss_r, double loss_s, double loss_c, const LossWeights& w = {}) {
    return w.lambda_r * loss_r + w.lambda_s * loss_s + w.lambda_c * loss_c;
}

inline double total_loss(const LossValue& lr, const LossValue& ls, const LossValue& lc,
                         const LossWeights& w = {}) {
    return total_loss(lr.value, ls.value, lc.value, w);
}

} // namespace focusfree
