#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "focusfree/conv_kernels.hpp"
#include "focusfree/errors.hpp"
#include "focusfree/tensor.hpp"

namespace focusfree {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

struct ConvTranspose2dOptions {
    std::size_t stride = 2;
    std::size_t padding = 1;
};

/// Tape of differentiable operations. Every op computes its forward value
/// eagerly and, when any input requires a gradient, records a backward rule.
/// Gradients accumulate additively into inputs. A Graph is used from one
/// thread at a time.
template <std::floating_point T>
class Graph {
public:
    using Ptr = TensorPtr<T>;

    explicit Graph(bool record = true) : record_(record) {}

    [[nodiscard]] std::size_t num_nodes() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool recording() const noexcept { return record_; }

    /// 2D cross-correlation. input [N, Cin, H, W], weight [Cout, Cin, kh, kw],
    /// optional bias [Cout]; output [N, Cout, Ho, Wo].
    Ptr conv2d(const Ptr& input, const Ptr& weight, const Ptr& bias, Conv2dOptions opt = {}) {
        check_rank(*input, 4, "conv2d input");
        check_rank(*weight, 4, "conv2d weight");
        const std::size_t n = input->dim(0), cin = input->dim(1), h = input->dim(2), w = input->dim(3);
        const std::size_t cout = weight->dim(0), kh = weight->dim(2), kw = weight->dim(3);
        if (weight->dim(1) != cin) {
            throw ShapeMismatch("conv2d input " + to_string(input->shape) + " vs weight " + to_string(weight->shape));
        }
        check_bias(bias, cout, "conv2d bias");
        if (opt.stride < 1 || opt.dilation < 1) {
            throw InvalidArgument("conv2d stride and dilation must be positive");
        }
        const std::size_t span_h = opt.dilation * (kh - 1) + 1, span_w = opt.dilation * (kw - 1) + 1;
        if (h + 2 * opt.padding < span_h || w + 2 * opt.padding < span_w) {
            throw ShapeMismatch("conv2d kernel " + to_string(weight->shape) + " larger than padded input " +
                                to_string(input->shape));
        }
        kernels::ConvGeometry g{cin, h, w, kh, kw, opt.stride, opt.padding, opt.dilation,
                                (h + 2 * opt.padding - span_h) / opt.stride + 1,
                                (w + 2 * opt.padding - span_w) / opt.stride + 1};
        auto out = make_output({n, cout, g.out_h, g.out_w}, {input, weight, bias});
        std::vector<T> col(g.col_rows() * g.col_cols());
        const std::size_t in_stride = cin * h * w, out_stride = cout * g.col_cols();
        for (std::size_t s = 0; s < n; ++s) {
            kernels::im2col(input->data.data() + s * in_stride, g, col.data());
            T* dst = out->data.data() + s * out_stride;
            kernels::gemm(weight->data.data(), col.data(), dst, cout, g.col_rows(), g.col_cols(), false);
            add_channel_bias(bias, dst, cout, g.col_cols());
        }
        record(out, [input, weight, bias, out, g, n, cin, cout, in_stride, out_stride]() {
            std::vector<T> col(g.col_rows() * g.col_cols());
            for (std::size_t s = 0; s < n; ++s) {
                const T* dout = out->grad.data() + s * out_stride;
                if (weight->requires_grad) {
                    kernels::im2col(input->data.data() + s * in_stride, g, col.data());
                    kernels::gemm_bt(dout, col.data(), weight->ensure_grad().data(), cout, g.col_cols(),
                                     g.col_rows(), true);
                }
                if (input->requires_grad) {
                    kernels::gemm_at(weight->data.data(), dout, col.data(), g.col_rows(), cout, g.col_cols(), false);
                    kernels::col2im_add(col.data(), g, input->ensure_grad().data() + s * in_stride);
                }
                accumulate_bias_grad(bias, dout, cout, g.col_cols());
            }
        });
        return out;
    }

    /// Transposed convolution (the adjoint of a strided conv2d).
    /// input [N, Cin, H, W], weight [Cin, Cout, k, k], optional bias [Cout];
    /// output [N, Cout, (H-1)*stride - 2*pad + k, ...].
    Ptr conv_transpose2d(const Ptr& input, const Ptr& weight, const Ptr& bias, ConvTranspose2dOptions opt = {}) {
        check_rank(*input, 4, "conv_transpose2d input");
        check_rank(*weight, 4, "conv_transpose2d weight");
        const std::size_t n = input->dim(0), cin = input->dim(1), h = input->dim(2), w = input->dim(3);
        const std::size_t cout = weight->dim(1), kh = weight->dim(2), kw = weight->dim(3);
        if (weight->dim(0) != cin) {
            throw ShapeMismatch("conv_transpose2d input " + to_string(input->shape) + " vs weight " +
                                to_string(weight->shape));
        }
        check_bias(bias, cout, "conv_transpose2d bias");
        if (opt.stride < 1 || (h - 1) * opt.stride + kh < 2 * opt.padding + 1 ||
            (w - 1) * opt.stride + kw < 2 * opt.padding + 1) {
            throw ShapeMismatch("conv_transpose2d produces an empty output");
        }
        const std::size_t oh = (h - 1) * opt.stride + kh - 2 * opt.padding;
        const std::size_t ow = (w - 1) * opt.stride + kw - 2 * opt.padding;
        // The output plays the role of a conv2d input whose window grid is H x W.
        kernels::ConvGeometry g{cout, oh, ow, kh, kw, opt.stride, opt.padding, 1, h, w};
        auto out = make_output({n, cout, oh, ow}, {input, weight, bias});
        std::vector<T> col(g.col_rows() * g.col_cols());
        const std::size_t in_stride = cin * h * w, out_stride = cout * oh * ow;
        for (std::size_t s = 0; s < n; ++s) {
            kernels::gemm_at(weight->data.data(), input->data.data() + s * in_stride, col.data(), g.col_rows(), cin,
                             g.col_cols(), false);
            T* dst = out->data.data() + s * out_stride;
            kernels::col2im_add(col.data(), g, dst);
            add_channel_bias(bias, dst, cout, oh * ow);
        }
        record(out, [input, weight, bias, out, g, n, cin, cout, in_stride, out_stride, oh, ow]() {
            std::vector<T> col(g.col_rows() * g.col_cols());
            for (std::size_t s = 0; s < n; ++s) {
                const T* dout = out->grad.data() + s * out_stride;
                kernels::im2col(dout, g, col.data());
                if (input->requires_grad) {
                    kernels::gemm(weight->data.data(), col.data(), input->ensure_grad().data() + s * in_stride, cin,
                                  g.col_rows(), g.col_cols(), true);
                }
                if (weight->requires_grad) {
                    kernels::gemm_bt(input->data.data() + s * in_stride, col.data(), weight->ensure_grad().data(), cin,
                                     g.col_cols(), g.col_rows(), true);
                }
                accumulate_bias_grad(bias, dout, cout, oh * ow);
            }
        });
        return out;
    }

    Ptr relu(const Ptr& x) {
        return unary(x, [](T v) { return v > T{0} ? v : T{0}; },
                     [](T v, T /*y*/) { return v > T{0} ? T{1} : T{0}; });
    }

    Ptr sigmoid(const Ptr& x) {
        return unary(x, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](T /*v*/, T y) { return y * (T{1} - y); });
    }

    /// sign(x) * sqrt(|x|). The derivative is unbounded at zero; the backward
    /// rule uses 1 / (2 sqrt(|x| + 1e-8)).
    Ptr signed_sqrt(const Ptr& x) {
        return unary(x, [](T v) { return v < T{0} ? -std::sqrt(-v) : std::sqrt(v); },
                     [](T v, T /*y*/) { return T{0.5} / std::sqrt(std::abs(v) + T{1e-8}); });
    }

    Ptr scale(const Ptr& x, T factor) {
        return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
    }

    /// Softmax along `axis`.
    Ptr softmax(const Ptr& x, std::size_t axis) {
        if (axis >= x->rank()) {
            throw ShapeMismatch("softmax axis " + std::to_string(axis) + " on " + to_string(x->shape));
        }
        const auto [outer, len, inner] = split_axis(x->shape, axis);
        auto out = make_output(x->shape, {x});
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                T peak = x->data[base];
                for (std::size_t k = 1; k < len; ++k) {
                    peak = std::max(peak, x->data[base + k * inner]);
                }
                T total{0};
                for (std::size_t k = 0; k < len; ++k) {
                    const T e = std::exp(x->data[base + k * inner] - peak);
                    out->data[base + k * inner] = e;
                    total += e;
                }
                for (std::size_t k = 0; k < len; ++k) {
                    out->data[base + k * inner] /= total;
                }
            }
        }
        record(out, [x, out, outer, len, inner]() {
            auto& gx = x->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * len * inner + i;
                    T dot{0};
                    for (std::size_t k = 0; k < len; ++k) {
                        dot += out->grad[base + k * inner] * out->data[base + k * inner];
                    }
                    for (std::size_t k = 0; k < len; ++k) {
                        const std::size_t at = base + k * inner;
                        gx[at] += out->data[at] * (out->grad[at] - dot);
                    }
                }
            }
        });
        return out;
    }

    Ptr mul(const Ptr& a, const Ptr& b) {
        check_same(*a, *b, "mul");
        auto out = make_output(a->shape, {a, b});
        for (std::size_t i = 0; i < out->size(); ++i) {
            out->data[i] = a->data[i] * b->data[i];
        }
        record(out, [a, b, out]() {
            if (a->requires_grad) {
                auto& ga = a->ensure_grad();
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    ga[i] += out->grad[i] * b->data[i];
                }
            }
            if (b->requires_grad) {
                auto& gb = b->ensure_grad();
                for (std::size_t i = 0; i < gb.size(); ++i) {
                    gb[i] += out->grad[i] * a->data[i];
                }
            }
        });
        return out;
    }

    Ptr add(const Ptr& a, const Ptr& b) {
        check_same(*a, *b, "add");
        auto out = make_output(a->shape, {a, b});
        for (std::size_t i = 0; i < out->size(); ++i) {
            out->data[i] = a->data[i] + b->data[i];
        }
        record(out, [a, b, out]() {
            for (const auto& t : {a, b}) {
                if (t->requires_grad) {
                    auto& g = t->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += out->grad[i];
                    }
                }
            }
        });
        return out;
    }

    /// Adds bias[k] to every element whose index along `axis` is k.
    Ptr add_bias(const Ptr& x, const Ptr& bias, std::size_t axis) {
        if (axis >= x->rank() || bias->size() != x->dim(axis)) {
            throw ShapeMismatch("add_bias " + to_string(bias->shape) + " along axis " + std::to_string(axis) +
                                " of " + to_string(x->shape));
        }
        const auto [outer, len, inner] = split_axis(x->shape, axis);
        auto out = make_output(x->shape, {x, bias});
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < len; ++k) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t at = (o * len + k) * inner + i;
                    out->data[at] = x->data[at] + bias->data[k];
                }
            }
        }
        record(out, [x, bias, out, outer, len, inner]() {
            if (x->requires_grad) {
                auto& gx = x->ensure_grad();
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += out->grad[i];
                }
            }
            if (bias->requires_grad) {
                auto& gb = bias->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t k = 0; k < len; ++k) {
                        for (std::size_t i = 0; i < inner; ++i) {
                            gb[k] += out->grad[(o * len + k) * inner + i];
                        }
                    }
                }
            }
        });
        return out;
    }

    /// Per-channel affine y = x * scale[c] + shift[c] over axis 1.
    Ptr channel_affine(const Ptr& x, const Ptr& scale, const Ptr& shift) {
        if (x->rank() < 2 || scale->size() != x->dim(1) || shift->size() != x->dim(1)) {
            throw ShapeMismatch("channel_affine on " + to_string(x->shape));
        }
        const auto [outer, len, inner] = split_axis(x->shape, 1);
        auto out = make_output(x->shape, {x, scale, shift});
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < len; ++c) {
                const T s = scale->data[c], b = shift->data[c];
                const std::size_t base = (o * len + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    out->data[base + i] = x->data[base + i] * s + b;
                }
            }
        }
        record(out, [x, scale, shift, out, outer, len, inner]() {
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t c = 0; c < len; ++c) {
                    const std::size_t base = (o * len + c) * inner;
                    T gs{0}, gb{0};
                    for (std::size_t i = 0; i < inner; ++i) {
                        gs += out->grad[base + i] * x->data[base + i];
                        gb += out->grad[base + i];
                    }
                    if (scale->requires_grad) {
                        scale->ensure_grad()[c] += gs;
                    }
                    if (shift->requires_grad) {
                        shift->ensure_grad()[c] += gb;
                    }
                    if (x->requires_grad) {
                        auto& gx = x->ensure_grad();
                        const T s = scale->data[c];
                        for (std::size_t i = 0; i < inner; ++i) {
                            gx[base + i] += out->grad[base + i] * s;
                        }
                    }
                }
            }
        });
        return out;
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    Ptr concat(const std::vector<Ptr>& parts, std::size_t axis) {
        if (parts.empty()) {
            throw ShapeMismatch("concat of zero tensors");
        }
        Shape shape = parts.front()->shape;
        if (axis >= shape.size()) {
            throw ShapeMismatch("concat axis " + std::to_string(axis) + " on " + to_string(shape));
        }
        shape[axis] = 0;
        for (const auto& p : parts) {
            Shape a = p->shape, b = parts.front()->shape;
            if (a.size() != b.size()) {
                throw ShapeMismatch("concat " + to_string(a) + " with " + to_string(b));
            }
            a[axis] = b[axis] = 0;
            if (a != b) {
                throw ShapeMismatch("concat " + to_string(p->shape) + " with " + to_string(parts.front()->shape));
            }
            shape[axis] += p->dim(axis);
        }
        const auto [outer, total, inner] = split_axis(shape, axis);
        auto out = make_output(shape, parts);
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t len = p->dim(axis) * inner;
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(p->data.begin() + static_cast<std::ptrdiff_t>(o * len), len,
                            out->data.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
            }
            offset += len;
        }
        record(out, [parts, out, outer, total, inner, axis]() {
            std::size_t offset = 0;
            for (const auto& p : parts) {
                const std::size_t len = p->dim(axis) * inner;
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t i = 0; i < len; ++i) {
                            g[o * len + i] += out->grad[o * total * inner + offset + i];
                        }
                    }
                }
                offset += len;
            }
        });
        return out;
    }

    /// a [M, K] times b [K, N].
    Ptr matmul(const Ptr& a, const Ptr& b) {
        check_rank(*a, 2, "matmul lhs");
        check_rank(*b, 2, "matmul rhs");
        if (a->dim(1) != b->dim(0)) {
            throw ShapeMismatch("matmul " + to_string(a->shape) + " x " + to_string(b->shape));
        }
        const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
        auto out = make_output({m, n}, {a, b});
        kernels::gemm(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
        record(out, [a, b, out, m, k, n]() {
            if (a->requires_grad) {
                kernels::gemm_bt(out->grad.data(), b->data.data(), a->ensure_grad().data(), m, n, k, true);
            }
            if (b->requires_grad) {
                kernels::gemm_at(a->data.data(), out->grad.data(), b->ensure_grad().data(), k, m, n, true);
            }
        });
        return out;
    }

    /// Bilinear pooling: per sample, B = V V^T over channels (V is C x P with
    /// P the flattened spatial size), then the mean over B's second axis.
    /// input [N, C, ...] -> output [N, C].
    Ptr outer_product_pool(const Ptr& x) {
        if (x->rank() < 2) {
            throw ShapeMismatch("outer_product_pool on " + to_string(x->shape));
        }
        const std::size_t n = x->dim(0), c = x->dim(1), p = x->size() / std::max<std::size_t>(n * c, 1);
        auto out = make_output({n, c}, {x});
        const T inv_c = T{1} / static_cast<T>(c);
        std::vector<T> colsum(p);
        for (std::size_t s = 0; s < n; ++s) {
            const T* v = x->data.data() + s * c * p;
            channel_sum(v, c, p, colsum.data());
            for (std::size_t i = 0; i < c; ++i) {
                T acc{0};
                for (std::size_t q = 0; q < p; ++q) {
                    acc += v[i * p + q] * colsum[q];
                }
                out->data[s * c + i] = acc * inv_c;
            }
        }
        record(out, [x, out, n, c, p, inv_c]() {
            auto& gx = x->ensure_grad();
            std::vector<T> colsum(p), weighted(p);
            for (std::size_t s = 0; s < n; ++s) {
                const T* v = x->data.data() + s * c * p;
                const T* g = out->grad.data() + s * c;
                channel_sum(v, c, p, colsum.data());
                std::fill(weighted.begin(), weighted.end(), T{0});
                for (std::size_t i = 0; i < c; ++i) {
                    for (std::size_t q = 0; q < p; ++q) {
                        weighted[q] += g[i] * v[i * p + q];
                    }
                }
                T* gv = gx.data() + s * c * p;
                for (std::size_t i = 0; i < c; ++i) {
                    for (std::size_t q = 0; q < p; ++q) {
                        gv[i * p + q] += inv_c * (g[i] * colsum[q] + weighted[q]);
                    }
                }
            }
        });
        return out;
    }

    /// Divides each row (last axis) by its Euclidean norm.
    Ptr l2_normalize(const Ptr& x) {
        if (x->rank() < 1) {
            throw ShapeMismatch("l2_normalize on a rank-0 tensor");
        }
        const std::size_t len = x->shape.back(), rows = x->size() / std::max<std::size_t>(len, 1);
        auto out = make_output(x->shape, {x});
        std::vector<T> norms(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            T ss{0};
            for (std::size_t i = 0; i < len; ++i) {
                ss += x->data[r * len + i] * x->data[r * len + i];
            }
            norms[r] = std::sqrt(ss + kNormEpsilon);
            for (std::size_t i = 0; i < len; ++i) {
                out->data[r * len + i] = x->data[r * len + i] / norms[r];
            }
        }
        record(out, [x, out, rows, len, norms]() {
            auto& gx = x->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                T dot{0};
                for (std::size_t i = 0; i < len; ++i) {
                    dot += out->grad[r * len + i] * x->data[r * len + i];
                }
                const T inv = T{1} / norms[r];
                const T inv3 = inv * inv * inv;
                for (std::size_t i = 0; i < len; ++i) {
                    gx[r * len + i] += out->grad[r * len + i] * inv - x->data[r * len + i] * dot * inv3;
                }
            }
        });
        return out;
    }

    /// Mean over every axis after the first two: [N, C, ...] -> [N, C].
    Ptr mean_pool(const Ptr& x) {
        if (x->rank() < 2) {
            throw ShapeMismatch("mean_pool on " + to_string(x->shape));
        }
        const std::size_t rows = x->dim(0) * x->dim(1), len = x->size() / std::max<std::size_t>(rows, 1);
        auto out = make_output({x->dim(0), x->dim(1)}, {x});
        for (std::size_t r = 0; r < rows; ++r) {
            T acc{0};
            for (std::size_t i = 0; i < len; ++i) {
                acc += x->data[r * len + i];
            }
            out->data[r] = acc / static_cast<T>(len);
        }
        record(out, [x, out, rows, len]() {
            auto& gx = x->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T g = out->grad[r] / static_cast<T>(len);
                for (std::size_t i = 0; i < len; ++i) {
                    gx[r * len + i] += g;
                }
            }
        });
        return out;
    }

    /// Repeats a size-1 axis `count` times.
    Ptr tile(const Ptr& x, std::size_t axis, std::size_t count) {
        if (axis >= x->rank() || x->dim(axis) != 1) {
            throw ShapeMismatch("tile needs a size-1 axis " + std::to_string(axis) + " in " + to_string(x->shape));
        }
        Shape shape = x->shape;
        shape[axis] = count;
        const auto [outer, len, inner] = split_axis(shape, axis);
        auto out = make_output(shape, {x});
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < len; ++k) {
                std::copy_n(x->data.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                            out->data.begin() + static_cast<std::ptrdiff_t>((o * len + k) * inner));
            }
        }
        record(out, [x, out, outer, len, inner]() {
            auto& gx = x->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t k = 0; k < len; ++k) {
                    for (std::size_t i = 0; i < inner; ++i) {
                        gx[o * inner + i] += out->grad[(o * len + k) * inner + i];
                    }
                }
            }
        });
        return out;
    }

    /// Selects position `index` along `axis`, keeping the axis with size 1.
    Ptr slice(const Ptr& x, std::size_t axis, std::size_t index) {
        if (axis >= x->rank() || index >= x->dim(axis)) {
            throw ShapeMismatch("slice " + std::to_string(index) + " on axis " + std::to_string(axis) + " of " +
                                to_string(x->shape));
        }
        Shape shape = x->shape;
        shape[axis] = 1;
        const auto [outer, len, inner] = split_axis(x->shape, axis);
        auto out = make_output(shape, {x});
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(x->data.begin() + static_cast<std::ptrdiff_t>((o * len + index) * inner), inner,
                        out->data.begin() + static_cast<std::ptrdiff_t>(o * inner));
        }
        record(out, [x, out, outer, len, inner, index]() {
            auto& gx = x->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    gx[(o * len + index) * inner + i] += out->grad[o * inner + i];
                }
            }
        });
        return out;
    }

    Ptr reshape(const Ptr& x, Shape shape) {
        if (numel(shape) != x->size()) {
            throw ShapeMismatch("reshape " + to_string(x->shape) + " to " + to_string(shape));
        }
        auto out = make_output(std::move(shape), {x});
        out->data = x->data;
        record(out, [x, out]() {
            auto& gx = x->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += out->grad[i];
            }
        });
        return out;
    }

    /// Sum of all elements as a shape-{1} tensor.
    Ptr sum(const Ptr& x) {
        auto out = make_output({1}, {x});
        T acc{0};
        for (T v : x->data) {
            acc += v;
        }
        out->data[0] = acc;
        record(out, [x, out]() {
            auto& gx = x->ensure_grad();
            for (auto& g : gx) {
                g += out->grad[0];
            }
        });
        return out;
    }

    /// Wraps an externally computed loss: the output is weight * value and the
    /// backward rule injects weight * gradient into `x`.
    Ptr external_loss(const Ptr& x, double value, std::span<const double> gradient, double weight = 1.0) {
        if (gradient.size() != x->size()) {
            throw ShapeMismatch("loss gradient of " + std::to_string(gradient.size()) + " values for " +
                                to_string(x->shape));
        }
        auto out = make_output({1}, {x});
        out->data[0] = static_cast<T>(weight * value);
        std::vector<T> g(gradient.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = static_cast<T>(weight * gradient[i]);
        }
        record(out, [x, out, g = std::move(g)]() {
            auto& gx = x->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += out->grad[0] * g[i];
            }
        });
        return out;
    }

    /// Populates d(loss)/d(t) into every tensor reachable from `loss` that
    /// requires a gradient. Gradients of intermediate results are recomputed
    /// from zero on every call; leaf gradients accumulate.
    void backward(const Ptr& loss) {
        if (loss->size() != 1) {
            throw NotScalar("backward needs a scalar loss, got shape " + to_string(loss->shape));
        }
        for (auto& node : nodes_) {
            node.output->ensure_grad();
            node.output->zero_grad();
        }
        loss->ensure_grad()[0] = T{1};
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->backward();
        }
    }

    /// Drops the recorded tape; tensors stay alive while referenced elsewhere.
    void clear() { nodes_.clear(); }

private:
    static constexpr T kNormEpsilon = T{1e-12};

    struct Node {
        Ptr output;
        std::function<void()> backward;
    };

    static void check_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
        if (t.rank() != rank) {
            throw ShapeMismatch(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                                to_string(t.shape));
        }
    }

    static void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
        if (a.shape != b.shape) {
            throw ShapeMismatch(std::string(what) + " " + to_string(a.shape) + " vs " + to_string(b.shape));
        }
    }

    static void check_bias(const Ptr& bias, std::size_t channels, const char* what) {
        if (bias && bias->size() != channels) {
            throw ShapeMismatch(std::string(what) + " " + to_string(bias->shape) + " for " + std::to_string(channels) +
                                " channels");
        }
    }

    static std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& shape, std::size_t axis) {
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) {
            outer *= shape[i];
        }
        for (std::size_t i = axis + 1; i < shape.size(); ++i) {
            inner *= shape[i];
        }
        return {outer, shape[axis], inner};
    }

    static void channel_sum(const T* v, std::size_t c, std::size_t p, T* out) {
        std::fill(out, out + p, T{0});
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t q = 0; q < p; ++q) {
                out[q] += v[i * p + q];
            }
        }
    }

    static void add_channel_bias(const Ptr& bias, T* dst, std::size_t channels, std::size_t plane) {
        if (!bias) {
            return;
        }
        for (std::size_t c = 0; c < channels; ++c) {
            const T b = bias->data[c];
            for (std::size_t i = 0; i < plane; ++i) {
                dst[c * plane + i] += b;
            }
        }
    }

    static void accumulate_bias_grad(const Ptr& bias, const T* dout, std::size_t channels, std::size_t plane) {
        if (!bias || !bias->requires_grad) {
            return;
        }
        auto& gb = bias->ensure_grad();
        for (std::size_t c = 0; c < channels; ++c) {
            T acc{0};
            for (std::size_t i = 0; i < plane; ++i) {
                acc += dout[c * plane + i];
            }
            gb[c] += acc;
        }
    }

    Ptr make_output(Shape shape, std::initializer_list<Ptr> inputs) {
        return make_output(std::move(shape), std::vector<Ptr>(inputs));
    }

    Ptr make_output(Shape shape, const std::vector<Ptr>& inputs) {
        bool needs = false;
        for (const auto& t : inputs) {
            needs = needs || (t && t->requires_grad);
        }
        return make_tensor<T>(std::move(shape), T{0}, needs && record_);
    }

    template <typename Fwd, typename Bwd>
    Ptr unary(const Ptr& x, Fwd fwd, Bwd bwd) {
        auto out = make_output(x->shape, {x});
        for (std::size_t i = 0; i < x->size(); ++i) {
            out->data[i] = fwd(x->data[i]);
        }
        record(out, [x, out, bwd]() {
            auto& gx = x->ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += out->grad[i] * bwd(x->data[i], out->data[i]);
            }
        });
        return out;
    }

    template <typename Fn>
    void record(const Ptr& out, Fn&& fn) {
        if (out->requires_grad) {
            nodes_.push_back({out, std::forward<Fn>(fn)});
        }
    }

    bool record_ = true;
    std::vector<Node> nodes_;
};

} // namespace focusfree
