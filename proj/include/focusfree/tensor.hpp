#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "focusfree/errors.hpp"

namespace focusfree {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ')';
    return os.str();
}

/// Dense row-major array with an optional gradient buffer of equal length.
template <std::floating_point T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T{0}, bool needs_grad = false)
        : shape(std::move(s)), data(numel(shape), fill), requires_grad(needs_grad) {}
    Tensor(Shape s, std::vector<T> values, bool needs_grad = false)
        : shape(std::move(s)), data(std::move(values)), requires_grad(needs_grad) {
        if (data.size() != numel(shape)) {
            throw ShapeMismatch("tensor of shape " + to_string(shape) + " given " +
                                std::to_string(data.size()) + " values");
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] std::size_t rank() const noexcept { return shape.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape.at(axis); }

    /// Allocates a zeroed gradient buffer if none exists yet.
    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), T{0});
        }
        return grad;
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <std::floating_point T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <std::floating_point T>
TensorPtr<T> make_tensor(Shape shape, T fill = T{0}, bool requires_grad = false) {
    return std::make_shared<Tensor<T>>(std::move(shape), fill, requires_grad);
}

template <std::floating_point T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    return std::make_shared<Tensor<T>>(std::move(shape), std::move(values), requires_grad);
}

} // namespace focusfree
