#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focusfree/errors.hpp"
#include "focusfree/geometry.hpp"
#include "focusfree/grid.hpp"

namespace focusfree {

/// Objects per pixel; the map integrates to the object count.
using DensityMap = Grid<double>;
/// Binary foreground mask, values in {0, 1}.
using SegmentationMap = Grid<std::uint8_t>;

/// Kernels are truncated at this many standard deviations.
inline constexpr double kKernelTruncation = 3.0;

namespace detail {

inline void check_parallel(const PointSet& ps, const SigmaAssignment& sigmas) {
    if (sigmas.size() != ps.size()) {
        throw ShapeMismatch(std::to_string(ps.size()) + " points but " + std::to_string(sigmas.size()) +
                            " sigmas");
    }
}

struct PixelWindow {
    std::size_t x0, x1, y0, y1; // inclusive; empty when x0 > x1 or y0 > y1
};

inline PixelWindow window_around(const Point& p, double radius, std::size_t width, std::size_t height) {
    const auto lo = [](double v) { return static_cast<std::ptrdiff_t>(std::ceil(v)); };
    const auto hi = [](double v) { return static_cast<std::ptrdiff_t>(std::floor(v)); };
    const auto clamp = [](std::ptrdiff_t v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    const auto x0 = lo(p.x - radius), x1 = hi(p.x + radius);
    const auto y0 = lo(p.y - radius), y1 = hi(p.y + radius);
    if (x1 < 0 || y1 < 0 || x0 >= static_cast<std::ptrdiff_t>(width) ||
        y0 >= static_cast<std::ptrdiff_t>(height) || x0 > x1 || y0 > y1) {
        return {1, 0, 1, 0};
    }
    return {clamp(x0, width), clamp(x1, width), clamp(y0, height), clamp(y1, height)};
}

} // namespace detail

/// Adds one point's kernel into `map`: a Gaussian sampled at pixel centers,
/// truncated at 3 sigma, and renormalized to unit discrete mass after border
/// clipping. A kernel too narrow to touch any pixel center deposits its unit
/// mass on the nearest pixel.
inline void splat_gaussian(DensityMap& map, const Point& p, double sigma) {
    const double radius = kKernelTruncation * sigma;
    const double r2 = radius * radius;
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    const auto win = detail::window_around(p, radius, map.width(), map.height());
    const std::size_t cols = win.x1 >= win.x0 ? win.x1 - win.x0 + 1 : 0;
    const std::size_t rows = win.y1 >= win.y0 ? win.y1 - win.y0 + 1 : 0;
    std::vector<double> weights(cols * rows, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
        const double dy = static_cast<double>(win.y0 + j) - p.y;
        for (std::size_t i = 0; i < cols; ++i) {
            const double dx = static_cast<double>(win.x0 + i) - p.x;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r2) {
                const double w = std::exp(-d2 * inv_two_var);
                weights[j * cols + i] = w;
                total += w;
            }
        }
    }
    if (!(total > 0.0)) {
        const auto nx = static_cast<std::size_t>(std::clamp(std::round(p.x), 0.0, static_cast<double>(map.width() - 1)));
        const auto ny = static_cast<std::size_t>(std::clamp(std::round(p.y), 0.0, static_cast<double>(map.height() - 1)));
        map(nx, ny) += 1.0;
        return;
    }
    for (std::size_t j = 0; j < rows; ++j) {
        for (std::size_t i = 0; i < cols; ++i) {
            map(win.x0 + i, win.y0 + j) += weights[j * cols + i] / total;
        }
    }
}

/// Density ground truth: one unit-mass Gaussian per annotation.
inline DensityMap rasterize_density(const PointSet& ps, const SigmaAssignment& sigmas) {
    if (ps.width == 0 || ps.height == 0) {
        throw EmptyCanvas("cannot rasterize onto a zero-size image");
    }
    detail::check_parallel(ps, sigmas);
    DensityMap map(ps.width, ps.height, 0.0);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double s = sigmas.sigmas[i];
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw InvalidArgument("sigma " + std::to_string(i) + " is not positive and finite");
        }
        splat_gaussian(map, ps.points[i], s);
    }
    return map;
}

/// Pixel is foreground iff it lies within sigma_P of some annotation P.
inline SegmentationMap rasterize_segmentation(const PointSet& ps, const SigmaAssignment& sigmas) {
    if (ps.width == 0 || ps.height == 0) {
        throw EmptyCanvas("cannot rasterize onto a zero-size image");
    }
    detail::check_parallel(ps, sigmas);
    SegmentationMap map(ps.width, ps.height, 0);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Point& p = ps.points[i];
        const double s = sigmas.sigmas[i];
        const auto win = detail::window_around(p, s, ps.width, ps.height);
        for (std::size_t y = win.y0; y <= win.y1 && win.y0 <= win.y1; ++y) {
            for (std::size_t x = win.x0; x <= win.x1; ++x) {
                if (distance({static_cast<double>(x), static_cast<double>(y)}, p) <= s) {
                    map(x, y) = 1;
                }
            }
        }
    }
    return map;
}

struct GlobalDensitySpec {
    std::size_t step_size = 1;  // objects per level, L
    std::size_t num_levels = 1; // M; labels range over 0..M
    friend bool operator==(const GlobalDensitySpec&, const GlobalDensitySpec&) = default;
};

struct GlobalDensityLabel {
    std::size_t level = 0;
    friend bool operator==(const GlobalDensityLabel&, const GlobalDensityLabel&) = default;
};

/// A training patch: its source image annotations plus the patch pixel count.
struct TrainingPatch {
    PointSet image;
    std::size_t patch_pixels = 0;
};

/// Dataset-wide global density step size
///   L = floor(max_i(|P_i| / Z_i * Z_ji) / M) + 1.
/// Evaluated in integers as max_i floor(|P_i| Z_ji / (Z_i M)) + 1, which is
/// equal because floor is monotone.
inline GlobalDensitySpec compute_step_size(std::span<const TrainingPatch> patches, std::size_t num_levels) {
    if (patches.empty()) {
        throw NoData("no training patches");
    }
    if (num_levels < 1) {
        throw InvalidArgument("number of density levels must be at least 1");
    }
    std::uint64_t best = 0;
    for (const auto& patch : patches) {
        const std::uint64_t image_pixels = static_cast<std::uint64_t>(patch.image.width) * patch.image.height;
        if (image_pixels == 0) {
            throw EmptyCanvas("training image with zero pixels");
        }
        const std::uint64_t num = static_cast<std::uint64_t>(patch.image.size()) * patch.patch_pixels;
        best = std::max(best, num / (image_pixels * num_levels));
    }
    return {static_cast<std::size_t>(best) + 1, num_levels};
}

/// Quantized global density class floor(count / L), clamped into [0, M].
inline GlobalDensityLabel density_label(std::size_t point_count, const GlobalDensitySpec& spec) {
    if (spec.step_size < 1) {
        throw InvalidArgument("step size must be at least 1");
    }
    return {std::min(point_count / spec.step_size, spec.num_levels)};
}

inline GlobalDensityLabel density_label(const PointSet& patch, const GlobalDensitySpec& spec) {
    return density_label(patch.size(), spec);
}

} // namespace focusfree
