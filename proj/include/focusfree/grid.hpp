#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "focusfree/errors.hpp"

namespace focusfree {

/// Dense row-major 2D field. Pixel (x, y) lives at index y * width + x and
/// its center sits at integer coordinates.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t width, std::size_t height, T fill = T{})
        : width_(width), height_(height), values_(width * height, fill) {}
    Grid(std::size_t width, std::size_t height, std::vector<T> values)
        : width_(width), height_(height), values_(std::move(values)) {
        if (values_.size() != width_ * height_) {
            throw ShapeMismatch("grid of " + std::to_string(width_) + "x" + std::to_string(height_) +
                                " given " + std::to_string(values_.size()) + " values");
        }
    }

    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t height() const noexcept { return height_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    T& operator()(std::size_t x, std::size_t y) noexcept { return values_[y * width_ + x]; }
    const T& operator()(std::size_t x, std::size_t y) const noexcept { return values_[y * width_ + x]; }

    [[nodiscard]] std::span<T> values() noexcept { return values_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return values_; }
    [[nodiscard]] std::vector<T>& storage() noexcept { return values_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return values_; }

    /// Sum accumulated in double regardless of T.
    [[nodiscard]] double sum() const noexcept {
        return std::accumulate(values_.begin(), values_.end(), 0.0,
                               [](double acc, T v) { return acc + static_cast<double>(v); });
    }

    [[nodiscard]] bool same_shape(const Grid& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<T> values_;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                            std::to_string(b.height()));
    }
}

} // namespace focusfree
