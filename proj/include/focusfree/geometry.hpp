#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "focusfree/errors.hpp"

namespace focusfree {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned box, top-left corner plus extent, in pixels.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    friend bool operator==(const Box&, const Box&) = default;
};

/// Point annotations of one image, optionally with a box per point.
struct PointSet {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<Point> points;
    std::optional<std::vector<Box>> boxes;

    [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
    [[nodiscard]] bool has_boxes() const noexcept { return boxes.has_value(); }

    /// Throws InvalidArgument naming the first violated invariant.
    void validate() const {
        if (width < 1 || height < 1) {
            throw InvalidArgument("image size must be at least 1x1");
        }
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 &&
                  p.y < static_cast<double>(height))) {
                throw InvalidArgument("point " + std::to_string(i) + " lies outside the image");
            }
        }
        if (boxes) {
            if (boxes->size() != points.size()) {
                throw InvalidArgument("boxes and points differ in length");
            }
            for (std::size_t i = 0; i < boxes->size(); ++i) {
                if (!((*boxes)[i].w > 0.0 && (*boxes)[i].h > 0.0)) {
                    throw InvalidArgument("box " + std::to_string(i) + " has non-positive extent");
                }
            }
        }
    }

    friend bool operator==(const PointSet&, const PointSet&) = default;
};

enum class EstimatorTag { fixed, gak, nonuniform, from_boxes };

inline std::string_view to_string(EstimatorTag tag) noexcept {
    switch (tag) {
    case EstimatorTag::fixed: return "fixed";
    case EstimatorTag::gak: return "gak";
    case EstimatorTag::nonuniform: return "nonuniform";
    case EstimatorTag::from_boxes: return "from_boxes";
    }
    return "unknown";
}

struct SigmaAssignment {
    std::vector<double> sigmas;
    EstimatorTag estimator_tag = EstimatorTag::fixed;

    [[nodiscard]] std::size_t size() const noexcept { return sigmas.size(); }
    friend bool operator==(const SigmaAssignment&, const SigmaAssignment&) = default;
};

/// Sigma given to every point of an image that holds a single annotation,
/// where no neighbor distance exists.
inline constexpr double kFallbackSigma = 15.0;

inline constexpr double kDefaultBeta = 0.3;
inline constexpr std::size_t kDefaultK = 5;
inline constexpr double kDefaultRegionFraction = 1.0 / 8.0;

inline double distance(const Point& a, const Point& b) noexcept {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

/// Uniform bucket grid over the bounding box of a point cloud. Supports exact
/// k-nearest-neighbor and axis-aligned rectangle queries.
class NeighborIndex {
public:
    explicit NeighborIndex(std::span<const Point> points) : points_(points.begin(), points.end()) {
        if (points_.empty()) {
            return;
        }
        auto [minx, maxx] = std::minmax_element(points_.begin(), points_.end(),
                                                [](auto& a, auto& b) { return a.x < b.x; });
        auto [miny, maxy] = std::minmax_element(points_.begin(), points_.end(),
                                                [](auto& a, auto& b) { return a.y < b.y; });
        origin_ = {minx->x, miny->y};
        const double span_x = maxx->x - minx->x;
        const double span_y = maxy->y - miny->y;
        // Roughly two points per cell on average.
        const double area = std::max(span_x * span_y, 1e-12);
        cell_ = std::sqrt(2.0 * area / static_cast<double>(points_.size()));
        cell_ = std::max({cell_, span_x / 1024.0, span_y / 1024.0, 1e-9});
        cols_ = static_cast<std::size_t>(span_x / cell_) + 1;
        rows_ = static_cast<std::size_t>(span_y / cell_) + 1;
        buckets_.assign(cols_ * rows_, {});
        for (std::size_t i = 0; i < points_.size(); ++i) {
            auto [cx, cy] = cell_of(points_[i]);
            buckets_[cy * cols_ + cx].push_back(i);
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }

    /// k smallest distances from point `query` to every other point, ascending.
    /// Returns fewer than k when fewer other points exist.
    [[nodiscard]] std::vector<double> knn(std::size_t query, std::size_t k) const {
        std::vector<double> best;
        if (points_.size() < 2 || k == 0) {
            return best;
        }
        const Point& q = points_[query];
        auto [qx, qy] = cell_of(q);
        const std::size_t want = std::min(k, points_.size() - 1);
        const std::size_t max_ring = std::max(cols_, rows_);
        std::vector<double> found;
        for (std::size_t ring = 0; ring <= max_ring; ++ring) {
            visit_ring(qx, qy, ring, [&](std::size_t idx) {
                if (idx != query) {
                    found.push_back(distance(q, points_[idx]));
                }
            });
            if (found.size() >= want) {
                std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(want),
                                  found.end());
                // Points in ring+1 are at least ring * cell away.
                if (found[want - 1] <= static_cast<double>(ring) * cell_) {
                    break;
                }
            }
        }
        std::sort(found.begin(), found.end());
        found.resize(want);
        return found;
    }

    /// Indices of points with |p.x - cx| <= half_w and |p.y - cy| <= half_h.
    [[nodiscard]] std::vector<std::size_t> in_rect(const Point& center, double half_w,
                                                   double half_h) const {
        std::vector<std::size_t> out;
        if (points_.empty()) {
            return out;
        }
        const auto lo = cell_of({center.x - half_w, center.y - half_h});
        const auto hi = cell_of({center.x + half_w, center.y + half_h});
        for (std::size_t cy = lo.second; cy <= hi.second; ++cy) {
            for (std::size_t cx = lo.first; cx <= hi.first; ++cx) {
                for (std::size_t idx : buckets_[cy * cols_ + cx]) {
                    const Point& p = points_[idx];
                    if (std::abs(p.x - center.x) <= half_w && std::abs(p.y - center.y) <= half_h) {
                        out.push_back(idx);
                    }
                }
            }
        }
        return out;
    }

private:
    [[nodiscard]] std::pair<std::size_t, std::size_t> cell_of(const Point& p) const noexcept {
        auto clamp_cell = [](double v, std::size_t n) {
            if (!(v > 0.0)) {
                return std::size_t{0};
            }
            return std::min(static_cast<std::size_t>(v), n - 1);
        };
        return {clamp_cell((p.x - origin_.x) / cell_, cols_), clamp_cell((p.y - origin_.y) / cell_, rows_)};
    }

    template <typename Fn>
    void visit_ring(std::size_t qx, std::size_t qy, std::size_t ring, Fn&& fn) const {
        const auto r = static_cast<std::ptrdiff_t>(ring);
        const auto x0 = static_cast<std::ptrdiff_t>(qx) - r;
        const auto x1 = static_cast<std::ptrdiff_t>(qx) + r;
        const auto y0 = static_cast<std::ptrdiff_t>(qy) - r;
        const auto y1 = static_cast<std::ptrdiff_t>(qy) + r;
        auto visit_cell = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
            if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(cols_) ||
                y >= static_cast<std::ptrdiff_t>(rows_)) {
                return;
            }
            for (std::size_t idx : buckets_[static_cast<std::size_t>(y) * cols_ + static_cast<std::size_t>(x)]) {
                fn(idx);
            }
        };
        if (ring == 0) {
            visit_cell(x0, y0);
            return;
        }
        for (auto x = x0; x <= x1; ++x) {
            visit_cell(x, y0);
            visit_cell(x, y1);
        }
        for (auto y = y0 + 1; y < y1; ++y) {
            visit_cell(x0, y);
            visit_cell(x1, y);
        }
    }

    std::vector<Point> points_;
    Point origin_;
    double cell_ = 1.0;
    std::size_t cols_ = 1;
    std::size_t rows_ = 1;
    std::vector<std::vector<std::size_t>> buckets_;
};

/// The k smallest Euclidean distances from points[query_index] to the other
/// points, ascending.
inline std::vector<double> knn_distances(std::span<const Point> points, std::size_t query_index,
                                         std::size_t k) {
    if (points.size() < 2) {
        throw NoNeighbors("need at least two points, got " + std::to_string(points.size()));
    }
    if (k < 1) {
        throw InvalidArgument("k must be at least 1");
    }
    if (query_index >= points.size()) {
        throw InvalidArgument("query index out of range");
    }
    return NeighborIndex(points).knn(query_index, k);
}

namespace detail {

inline void check_estimator_args(std::size_t k, double beta) {
    if (k < 1) {
        throw InvalidArgument("k must be at least 1");
    }
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw InvalidArgument("beta must be positive");
    }
}

// Ascending accumulation makes the result independent of annotation order.
inline double sorted_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) {
        acc += v;
    }
    return acc / static_cast<double>(values.size());
}

/// Mean distance from every point to its k nearest neighbors.
inline std::vector<double> mean_knn_distances(const NeighborIndex& index, std::size_t k) {
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        out[i] = sorted_mean(index.knn(i, k));
    }
    return out;
}

} // namespace detail

inline SigmaAssignment estimate_sigma_fixed(const PointSet& ps, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw InvalidArgument("fixed sigma must be positive");
    }
    return {std::vector<double>(ps.size(), sigma), EstimatorTag::fixed};
}

/// Geometry-adaptive kernel: sigma = beta times the mean distance to the k
/// nearest annotations anywhere in the image.
inline SigmaAssignment estimate_sigma_gak(const PointSet& ps, std::size_t k = kDefaultK,
                                          double beta = kDefaultBeta) {
    detail::check_estimator_args(k, beta);
    SigmaAssignment out{{}, EstimatorTag::gak};
    if (ps.size() < 2) {
        out.sigmas.assign(ps.size(), kFallbackSigma);
        return out;
    }
    const NeighborIndex index(ps.points);
    out.sigmas = detail::mean_knn_distances(index, k);
    for (double& s : out.sigmas) {
        s *= beta;
    }
    return out;
}

/// Non-uniform kernel: sigma of P is the average of beta * dbar_a over every
/// annotation a inside the P-centered region of size region_fraction * image.
/// dbar_a uses the image-wide neighbor pool; only the averaging set is local.
inline SigmaAssignment estimate_sigma_nonuniform(const PointSet& ps, std::size_t k = kDefaultK,
                                                 double beta = kDefaultBeta,
                                                 double region_fraction = kDefaultRegionFraction) {
    detail::check_estimator_args(k, beta);
    if (!(region_fraction > 0.0 && region_fraction <= 1.0)) {
        throw InvalidArgument("region fraction must lie in (0, 1]");
    }
    SigmaAssignment out{{}, EstimatorTag::nonuniform};
    if (ps.size() < 2) {
        out.sigmas.assign(ps.size(), kFallbackSigma);
        return out;
    }
    const NeighborIndex index(ps.points);
    const auto dbar = detail::mean_knn_distances(index, k);
    const double half_w = 0.5 * region_fraction * static_cast<double>(ps.width);
    const double half_h = 0.5 * region_fraction * static_cast<double>(ps.height);
    out.sigmas.resize(ps.size());
    std::vector<double> members;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        members.clear();
        for (std::size_t a : index.in_rect(ps.points[i], half_w, half_h)) {
            members.push_back(beta * dbar[a]);
        }
        out.sigmas[i] = detail::sorted_mean(members);
    }
    return out;
}

/// sigma = min(w, h) / 2, the largest isotropic radius inscribed in the box.
inline SigmaAssignment sigma_from_boxes(const PointSet& ps) {
    if (!ps.boxes) {
        throw MissingBoxes("point set carries no boxes");
    }
    SigmaAssignment out{{}, EstimatorTag::from_boxes};
    out.sigmas.reserve(ps.boxes->size());
    for (const Box& b : *ps.boxes) {
        out.sigmas.push_back(0.5 * std::min(b.w, b.h));
    }
    return out;
}

/// Mean absolute difference between two parallel sigma assignments.
inline double sigma_error(const SigmaAssignment& estimated, const SigmaAssignment& reference) {
    if (estimated.size() != reference.size()) {
        throw ShapeMismatch("sigma assignments of length " + std::to_string(estimated.size()) +
                            " and " + std::to_string(reference.size()));
    }
    if (estimated.size() == 0) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < estimated.size(); ++i) {
        acc += std::abs(estimated.sigmas[i] - reference.sigmas[i]);
    }
    return acc / static_cast<double>(estimated.size());
}

} // namespace focusfree
