#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focusfree/errors.hpp"
#include "focusfree/tensor.hpp"

namespace focusfree {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment estimates for one parameter array.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
template <std::floating_point T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, const AdamOptions& opt = {}) {
    if (params.size() != grads.size()) {
        throw ShapeMismatch("adam: " + std::to_string(params.size()) + " parameters but " +
                            std::to_string(grads.size()) + " gradients");
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.step = 0;
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
        state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
    }
}

/// Adam over a fixed list of parameter tensors; missing gradients count as zero.
template <std::floating_point T>
class Adam {
public:
    Adam(std::vector<TensorPtr<T>> params, AdamOptions opt = {})
        : params_(std::move(params)), states_(params_.size()), opt_(opt) {}

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            adam_step<T>(p.data, p.grad, states_[i], opt_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    [[nodiscard]] const AdamOptions& options() const noexcept { return opt_; }
    void set_lr(double lr) noexcept { opt_.lr = lr; }

private:
    std::vector<TensorPtr<T>> params_;
    std::vector<AdamState> states_;
    AdamOptions opt_;
};

} // namespace focusfree
