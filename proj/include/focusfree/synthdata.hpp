#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "focusfree/errors.hpp"
#include "focusfree/geometry.hpp"
#include "focusfree/grid.hpp"

namespace focusfree {

enum class Layout { uniform, clustered, bimodal };

inline std::string_view to_string(Layout layout) noexcept {
    switch (layout) {
    case Layout::uniform: return "uniform";
    case Layout::clustered: return "clustered";
    case Layout::bimodal: return "bimodal";
    }
    return "unknown";
}

/// Parameters of the synthetic scene family. Scene `index` of a spec is a
/// pure function of (spec, index).
///
/// Layouts:
///  - uniform: points uniform over the image, radius uniform per point.
///  - clustered: `num_clusters` Gaussian clusters. Each cluster draws one
///    blob radius r and places its n points with standard deviation
///    cluster_spread * r * sqrt(n), so clusters of small objects are packed
///    tightly and clusters of large objects spread out.
///  - bimodal: one vertical half (chosen per scene) holds `dense_fraction`
///    of the objects at radius_min; the other half holds the rest at
///    radius_max.
struct SceneSpec {
    std::size_t width = 64;
    std::size_t height = 64;
    std::size_t count_min = 5;
    std::size_t count_max = 30;
    Layout layout = Layout::uniform;
    std::size_t num_clusters = 3;
    double cluster_spread = 1.0;
    double dense_fraction = 0.8;
    double radius_min = 2.0;
    double radius_max = 3.5;
    double noise = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (width < 4 || height < 4) {
            throw InvalidArgument("scene must be at least 4x4 pixels");
        }
        if (count_min > count_max) {
            throw InvalidArgument("count_min exceeds count_max");
        }
        if (!(radius_min > 0.0) || radius_max < radius_min) {
            throw InvalidArgument("blob radii must satisfy 0 < radius_min <= radius_max");
        }
        if (layout == Layout::clustered && (num_clusters < 1 || !(cluster_spread > 0.0))) {
            throw InvalidArgument("clustered layout needs at least one cluster and positive spread");
        }
        if (!(dense_fraction >= 0.0 && dense_fraction <= 1.0)) {
            throw InvalidArgument("dense_fraction must lie in [0, 1]");
        }
        if (noise < 0.0) {
            throw InvalidArgument("noise must be non-negative");
        }
    }
};

struct Scene {
    Grid<float> image; // intensities in [0, 1]
    PointSet annotations;
};

namespace detail {

class SceneSampler {
public:
    SceneSampler(const SceneSpec& spec, std::uint64_t index)
        : spec_(spec), rng_(seed_for(spec.seed, index)) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(rng_); }
    std::size_t integer(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
    }

    /// Coordinate clamped strictly inside [1, extent - 1).
    [[nodiscard]] static double inside(double v, std::size_t extent) {
        return std::clamp(v, 1.0, static_cast<double>(extent) - 1.0 - 1e-6);
    }

    Point uniform_point(double x0, double x1) {
        return {uniform(std::max(1.0, x0), std::min(x1, static_cast<double>(spec_.width) - 1.0)),
                uniform(1.0, static_cast<double>(spec_.height) - 1.0)};
    }

    Point gaussian_point(const Point& center, double spread) {
        for (int attempt = 0; attempt < 32; ++attempt) {
            const Point p{normal(center.x, spread), normal(center.y, spread)};
            if (p.x >= 1.0 && p.x < static_cast<double>(spec_.width) - 1.0 && p.y >= 1.0 &&
                p.y < static_cast<double>(spec_.height) - 1.0) {
                return p;
            }
        }
        return {inside(center.x, spec_.width), inside(center.y, spec_.height)};
    }

private:
    static std::seed_seq::result_type lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
    static std::seed_seq::result_type hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

    static std::mt19937_64 seed_for(std::uint64_t seed, std::uint64_t index) {
        std::seed_seq seq{lo32(seed), hi32(seed), lo32(index), hi32(index), 0x46464644u};
        return std::mt19937_64(seq);
    }

    const SceneSpec& spec_;
    std::mt19937_64 rng_;
};

inline void render_blob(Grid<float>& image, const Point& p, double radius, double amplitude) {
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(p.x - radius));
    const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(p.x + radius));
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(p.y - radius));
    const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(p.y + radius));
    for (auto y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, image.height() - 1); ++y) {
        for (auto x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, image.width() - 1); ++x) {
            const double d = distance({static_cast<double>(x), static_cast<double>(y)}, p);
            if (d < radius) {
                const double v = amplitude * 0.5 * (1.0 + std::cos(std::numbers::pi * d / radius));
                auto& px = image(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
                px = static_cast<float>(std::min(1.0, static_cast<double>(px) + v));
            }
        }
    }
}

} // namespace detail

/// Renders scene `index` of `spec`: one cosine-falloff blob per object on a
/// noisy background. Each annotation carries a box of side 2 * radius
/// clipped to the image.
inline Scene generate(const SceneSpec& spec, std::uint64_t index) {
    spec.validate();
    detail::SceneSampler rng(spec, index);
    const std::size_t count = rng.integer(spec.count_min, spec.count_max);
    std::vector<Point> points;
    std::vector<double> radii;
    points.reserve(count);
    radii.reserve(count);
    const double w = static_cast<double>(spec.width);
    const double h = static_cast<double>(spec.height);

    switch (spec.layout) {
    case Layout::uniform:
        for (std::size_t i = 0; i < count; ++i) {
            points.push_back(rng.uniform_point(1.0, w - 1.0));
            radii.push_back(rng.uniform(spec.radius_min, spec.radius_max));
        }
        break;
    case Layout::clustered: {
        // Split the count as evenly as possible over the clusters.
        for (std::size_t c = 0; c < spec.num_clusters; ++c) {
            const std::size_t n = count / spec.num_clusters + (c < count % spec.num_clusters ? 1 : 0);
            const Point center = rng.uniform_point(1.0, w - 1.0);
            const double radius = rng.uniform(spec.radius_min, spec.radius_max);
            const double spread = spec.cluster_spread * radius * std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1)));
            for (std::size_t i = 0; i < n; ++i) {
                points.push_back(rng.gaussian_point(center, spread));
                radii.push_back(radius);
            }
        }
        break;
    }
    case Layout::bimodal: {
        const bool dense_left = rng.uniform(0.0, 1.0) < 0.5;
        const auto dense = static_cast<std::size_t>(std::llround(spec.dense_fraction * static_cast<double>(count)));
        for (std::size_t i = 0; i < count; ++i) {
            const bool is_dense = i < dense;
            const bool left = is_dense == dense_left;
            points.push_back(left ? rng.uniform_point(1.0, 0.5 * w) : rng.uniform_point(0.5 * w, w - 1.0));
            radii.push_back(is_dense ? spec.radius_min : spec.radius_max);
        }
        break;
    }
    }

    Scene scene;
    scene.image = Grid<float>(spec.width, spec.height, 0.0f);
    for (auto& v : scene.image.values()) {
        v = static_cast<float>(spec.noise * rng.uniform(0.0, 1.0));
    }
    std::vector<Box> boxes;
    boxes.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        detail::render_blob(scene.image, points[i], radii[i], rng.uniform(0.6, 1.0));
        const double bx0 = std::max(0.0, points[i].x - radii[i]);
        const double by0 = std::max(0.0, points[i].y - radii[i]);
        const double bx1 = std::min(w, points[i].x + radii[i]);
        const double by1 = std::min(h, points[i].y + radii[i]);
        boxes.push_back({bx0, by0, bx1 - bx0, by1 - by0});
    }
    scene.annotations = PointSet{spec.width, spec.height, std::move(points), std::move(boxes)};
    return scene;
}

} // namespace focusfree
