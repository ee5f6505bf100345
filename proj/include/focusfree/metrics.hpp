#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "focusfree/errors.hpp"
#include "focusfree/geometry.hpp"
#include "focusfree/grid.hpp"
#include "focusfree/supervision.hpp"

namespace focusfree {

struct CountErrors {
    double mae = 0.0;
    double rmse = 0.0;
    double nmae = 0.0; // over images with a non-zero true count; 0 when none
};

inline CountErrors count_errors(std::span<const double> truth, std::span<const double> pred) {
    if (truth.size() != pred.size()) {
        throw ShapeMismatch("count lists of length " + std::to_string(truth.size()) + " and " +
                            std::to_string(pred.size()));
    }
    if (truth.empty()) {
        throw NoData("no images to evaluate");
    }
    double abs_sum = 0.0, sq_sum = 0.0, norm_sum = 0.0;
    std::size_t norm_count = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = std::abs(pred[i] - truth[i]);
        abs_sum += d;
        sq_sum += d * d;
        if (truth[i] > 0.0) {
            norm_sum += d / truth[i];
            ++norm_count;
        }
    }
    const auto n = static_cast<double>(truth.size());
    return {abs_sum / n, std::sqrt(sq_sum / n), norm_count ? norm_sum / static_cast<double>(norm_count) : 0.0};
}

inline constexpr std::size_t kMaxGameLevel = 4;

/// Grid Average Mean absolute Error contribution of one image: the image is
/// cut into a 2^L x 2^L grid (the last row and column of cells absorb the
/// remainder pixels) and the absolute cell count differences are summed.
template <typename A, typename B>
double game(const Grid<A>& truth, const Grid<B>& pred, std::size_t level) {
    require_same_shape(truth, pred, "game");
    if (level > 16) {
        throw InvalidArgument("GAME level " + std::to_string(level) + " too large");
    }
    const std::size_t cells = std::size_t{1} << level;
    const std::size_t cw = truth.width() / cells, ch = truth.height() / cells;
    const auto cell_of = [cells](std::size_t v, std::size_t extent) {
        return extent == 0 ? cells - 1 : std::min(v / extent, cells - 1);
    };
    std::vector<double> diff(cells * cells, 0.0);
    for (std::size_t y = 0; y < truth.height(); ++y) {
        const std::size_t cy = cell_of(y, ch);
        for (std::size_t x = 0; x < truth.width(); ++x) {
            diff[cy * cells + cell_of(x, cw)] += static_cast<double>(truth(x, y)) - static_cast<double>(pred(x, y));
        }
    }
    double total = 0.0;
    for (double d : diff) {
        total += std::abs(d);
    }
    return total;
}

struct QualityScores {
    double psnr = 0.0; // dB; +infinity for identical maps
    double ssim = 0.0;
};

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double total = 0.0;
    const double half = static_cast<double>(kSsimWindow / 2);
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - half;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += k[i];
    }
    for (auto& v : k) {
        v /= total;
    }
    return k;
}

// Separable 'valid' Gaussian filtering: output (w-10) x (h-10).
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t w, std::size_t h) {
    const auto k = ssim_kernel();
    const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> rows(ow * h, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kSsimWindow; ++i) {
                acc += k[i] * img[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(ow * oh, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kSsimWindow; ++i) {
                acc += k[i] * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    return out;
}

} // namespace detail

/// PSNR and SSIM after scaling both maps by 1 / max(truth), so the peak is 1.
/// SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated at every fully
/// contained window position and averaged.
template <typename A, typename B>
QualityScores psnr_ssim(const Grid<A>& truth, const Grid<B>& pred) {
    require_same_shape(truth, pred, "psnr_ssim");
    if (truth.width() < kSsimWindow || truth.height() < kSsimWindow) {
        throw ShapeMismatch("SSIM needs maps of at least 11x11 pixels");
    }
    double peak = 0.0;
    for (auto v : truth.values()) {
        peak = std::max(peak, static_cast<double>(v));
    }
    if (!(peak > 0.0)) {
        throw UndefinedPeak("ground-truth map has no positive value");
    }
    const std::size_t w = truth.width(), h = truth.height(), n = truth.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(truth.values()[i]) / peak;
        y[i] = static_cast<double>(pred.values()[i]) / peak;
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
        sq += (x[i] - y[i]) * (x[i] - y[i]);
    }
    QualityScores out;
    const double mse = sq / static_cast<double>(n);
    out.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);

    const auto mx = detail::filter_valid(x, w, h), my = detail::filter_valid(y, w, h);
    const auto mxx = detail::filter_valid(xx, w, h), myy = detail::filter_valid(yy, w, h);
    const auto mxy = detail::filter_valid(xy, w, h);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + kSsimC1) * (2.0 * cxy + kSsimC2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2);
        total += num / den;
    }
    out.ssim = total / static_cast<double>(mx.size());
    return out;
}

enum class StratifyMode { scale, crowding };

inline std::string_view to_string(StratifyMode mode) noexcept {
    return mode == StratifyMode::scale ? "scale" : "crowding";
}

/// Strata names, ascending in the index.
inline std::array<std::string_view, 3> stratum_names(StratifyMode mode) noexcept {
    if (mode == StratifyMode::scale) {
        return {"small", "medium", "large"};
    }
    return {"sparse", "medium", "dense"};
}

struct StratumIndex {
    std::string image;
    double value = 0.0;
    std::size_t stratum = 0; // 0, 1, 2 in ascending order of value
};

struct AnnotatedImage {
    std::string id;
    PointSet annotations;
};

/// Scale index F_s / F_n or crowding index (F_s / I_s) * (F_n / I_s), where
/// F_s is the mean box area, F_n the object count and I_s the image area.
inline double stratum_value(const PointSet& ps, StratifyMode mode) {
    if (!ps.boxes) {
        throw MissingBoxes("stratification needs box annotations");
    }
    if (ps.boxes->empty()) {
        throw InvalidArgument("stratification needs at least one object per image");
    }
    double area = 0.0;
    for (const auto& b : *ps.boxes) {
        area += b.w * b.h;
    }
    const auto fn = static_cast<double>(ps.boxes->size());
    const double fs = area / fn;
    if (mode == StratifyMode::scale) {
        return fs / fn;
    }
    const double is = static_cast<double>(ps.width) * static_cast<double>(ps.height);
    return (fs / is) * (fn / is);
}

/// Computes the index per image, sorts ascending (ties broken by image id)
/// and cuts the order into three groups whose sizes differ by at most one.
/// Results come back in the input order.
inline std::vector<StratumIndex> stratify(std::span<const AnnotatedImage> images, StratifyMode mode) {
    std::vector<StratumIndex> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        out.push_back({img.id, stratum_value(img.annotations, mode), 0});
    }
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out[a].value != out[b].value) {
            return out[a].value < out[b].value;
        }
        return out[a].image < out[b].image;
    });
    const std::size_t n = order.size();
    for (std::size_t rank = 0; rank < n; ++rank) {
        const std::size_t group = rank * 3 / std::max<std::size_t>(n, 1);
        out[order[rank]].stratum = std::min<std::size_t>(group, 2);
    }
    return out;
}

struct ImageMetrics {
    std::string image;
    double truth = 0.0;
    double pred = 0.0;
    double abs_err = 0.0;
    std::vector<double> game; // levels 0..game_max
    double psnr = 0.0;
    double ssim = 0.0;
};

struct AggregateMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double nmae = 0.0;
    std::vector<double> game;
    double psnr = 0.0; // over images with a defined peak
    double ssim = 0.0;
    std::size_t quality_images = 0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    AggregateMetrics aggregate;
};

struct MapPair {
    std::string image;
    DensityMap truth;
    DensityMap pred;
};

/// Evaluates a set of truth/prediction map pairs. Counts are map sums.
/// PSNR and SSIM are NaN for images whose truth map is all zero.
inline MetricReport evaluate_maps(std::span<const MapPair> pairs, std::size_t game_max = kMaxGameLevel) {
    if (pairs.empty()) {
        throw NoData("no map pairs to evaluate");
    }
    MetricReport report;
    std::vector<double> truth, pred;
    report.aggregate.game.assign(game_max + 1, 0.0);
    for (const auto& p : pairs) {
        ImageMetrics m;
        m.image = p.image;
        m.truth = p.truth.sum();
        m.pred = p.pred.sum();
        m.abs_err = std::abs(m.pred - m.truth);
        for (std::size_t l = 0; l <= game_max; ++l) {
            m.game.push_back(game(p.truth, p.pred, l));
            report.aggregate.game[l] += m.game.back();
        }
        try {
            const auto q = psnr_ssim(p.truth, p.pred);
            m.psnr = q.psnr;
            m.ssim = q.ssim;
            report.aggregate.psnr += q.psnr;
            report.aggregate.ssim += q.ssim;
            ++report.aggregate.quality_images;
        } catch (const UndefinedPeak&) {
            m.psnr = m.ssim = std::numeric_limits<double>::quiet_NaN();
        }
        truth.push_back(m.truth);
        pred.push_back(m.pred);
        report.per_image.push_back(std::move(m));
    }
    const auto n = static_cast<double>(pairs.size());
    for (auto& g : report.aggregate.game) {
        g /= n;
    }
    if (report.aggregate.quality_images > 0) {
        report.aggregate.psnr /= static_cast<double>(report.aggregate.quality_images);
        report.aggregate.ssim /= static_cast<double>(report.aggregate.quality_images);
    } else {
        report.aggregate.psnr = report.aggregate.ssim = std::numeric_limits<double>::quiet_NaN();
    }
    const auto ce = count_errors(truth, pred);
    report.aggregate.mae = ce.mae;
    report.aggregate.rmse = ce.rmse;
    report.aggregate.nmae = ce.nmae;
    return report;
}

} // namespace focusfree
