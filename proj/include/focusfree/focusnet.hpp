#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "focusfree/autograd.hpp"
#include "focusfree/errors.hpp"
#include "focusfree/grid.hpp"
#include "focusfree/losses.hpp"
#include "focusfree/tensor.hpp"

namespace focusfree {

/// Which focus maps multiply into the base features. A disabled focus acts
/// as an all-ones map.
struct FocusSwitches {
    bool segmentation = true;
    bool global_density = true;
    friend bool operator==(const FocusSwitches&, const FocusSwitches&) = default;
};

struct FocusNetConfig {
    std::size_t input_size = 64;
    std::size_t channels = 16;  // C
    std::size_t num_levels = 4; // M; the level head has M + 1 outputs
    LossWeights weights{};
    double gamma_s = kDefaultFocalGamma;
    double gamma_c = kDefaultFocalGamma;
    std::uint64_t seed = 0;
    FocusSwitches focus{};

    void validate() const {
        if (input_size == 0 || input_size % 8 != 0) {
            throw InvalidConfig("input size " + std::to_string(input_size) + " is not a positive multiple of 8");
        }
        if (channels == 0) {
            throw InvalidConfig("channel count must be positive");
        }
        if (num_levels == 0) {
            throw InvalidConfig("number of density levels must be positive");
        }
        if (weights.lambda_r < 0.0 || weights.lambda_s < 0.0 || weights.lambda_c < 0.0) {
            throw InvalidConfig("loss weights must be non-negative");
        }
    }
};

template <std::floating_point T>
struct FocusNetOutput {
    TensorPtr<T> density;      // [N, 1, H, W]
    TensorPtr<T> seg_probs;    // [N, 2, H, W], softmax over axis 1
    TensorPtr<T> level_probs;  // [N, M + 1]
    TensorPtr<T> features;     // base output V, [N, C, H, W]
    TensorPtr<T> focus_seg;    // V_s, [N, C, H, W]; null when disabled
    TensorPtr<T> focus_density; // V_d, [N, C, H, W]; null when disabled
};

/// Toy-scale counting network with segmentation and global-density focus.
///
/// Base network (all 3x3 convs followed by ReLU and a learnable per-channel
/// affine):
///   encoder    enc1..enc3 stride-2 convs (H/2, H/4, H/8), then dil1, dil2
///              with dilation 2 at H/8
///   distiller  concat(enc3, dil2) -> two fusing convs; dil1 is left out
///   decoder    three 4x4 stride-2 transposed convs, each followed by two convs
/// Heads on V:
///   seg        1x1 conv to 2 classes, softmax; foreground tiled C times -> V_s
///   density    bilinear pool, l2 + signed sqrt; FC + softmax -> level probs,
///              FC + sigmoid tiled over space -> V_d
///   fusion     V * V_s * V_d -> 1x1 conv -> density map
template <std::floating_point T>
class FocusNet {
public:
    using Ptr = TensorPtr<T>;

    struct NamedParam {
        std::string name;
        Ptr tensor;
    };

    explicit FocusNet(FocusNetConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(cfg_.seed);
        const std::size_t c = cfg_.channels;
        enc_ = {conv_block("enc1", 1, c, {2, 1, 1}, rng), conv_block("enc2", c, c, {2, 1, 1}, rng),
                conv_block("enc3", c, c, {2, 1, 1}, rng)};
        dil_ = {conv_block("dil1", c, c, {1, 2, 2}, rng), conv_block("dil2", c, c, {1, 2, 2}, rng)};
        distill_ = {conv_block("distill1", 2 * c, c, {1, 1, 1}, rng), conv_block("distill2", c, c, {1, 1, 1}, rng)};
        for (std::size_t s = 0; s < 3; ++s) {
            const std::string stage = "dec" + std::to_string(s + 1);
            DeconvStage d;
            d.up = deconv_block(stage + ".up", c, c, rng);
            d.conv = {conv_block(stage + ".conv1", c, c, {1, 1, 1}, rng),
                      conv_block(stage + ".conv2", c, c, {1, 1, 1}, rng)};
            dec_.push_back(std::move(d));
        }
        seg_w_ = param("seg.weight", {2, c, 1, 1}, rng, std::sqrt(1.0 / static_cast<double>(c)));
        seg_b_ = param("seg.bias", {2}, rng, 0.0);
        level_w_ = param("level.weight", {c, cfg_.num_levels + 1}, rng, std::sqrt(1.0 / static_cast<double>(c)));
        level_b_ = param("level.bias", {cfg_.num_levels + 1}, rng, 0.0);
        focus_w_ = param("focus.weight", {c, c}, rng, std::sqrt(1.0 / static_cast<double>(c)));
        focus_b_ = param("focus.bias", {c}, rng, 0.0);
        head_w_ = param("head.weight", {1, c, 1, 1}, rng, 0.01);
        head_b_ = param("head.bias", {1}, rng, 0.0);
    }

    [[nodiscard]] const FocusNetConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::vector<NamedParam>& parameters() const noexcept { return params_; }

    [[nodiscard]] std::vector<Ptr> parameter_tensors() const {
        std::vector<Ptr> out;
        for (const auto& p : params_) {
            out.push_back(p.tensor);
        }
        return out;
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.tensor->size();
        }
        return n;
    }

    [[nodiscard]] Ptr find(const std::string& name) const {
        for (const auto& p : params_) {
            if (p.name == name) {
                return p.tensor;
            }
        }
        throw InvalidArgument("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.tensor->ensure_grad();
            p.tensor->zero_grad();
        }
    }

    /// Base network: image [N, 1, S, S] -> V [N, C, S, S].
    Ptr base(Graph<T>& g, const Ptr& image) const {
        if (image->rank() != 4 || image->dim(1) != 1 || image->dim(2) != cfg_.input_size ||
            image->dim(3) != cfg_.input_size) {
            throw ShapeMismatch("network input " + to_string(image->shape) + " does not match input size " +
                                std::to_string(cfg_.input_size));
        }
        Ptr x = image;
        for (const auto& b : enc_) {
            x = apply(g, b, x);
        }
        const Ptr level3 = x;
        x = apply(g, dil_[0], x);
        x = apply(g, dil_[1], x);
        x = g.concat({level3, x}, 1);
        for (const auto& b : distill_) {
            x = apply(g, b, x);
        }
        for (const auto& stage : dec_) {
            x = apply(g, stage.up, x);
            for (const auto& b : stage.conv) {
                x = apply(g, b, x);
            }
        }
        return x;
    }

    /// Final 1x1 density head on (possibly focused) features.
    Ptr density_head(Graph<T>& g, const Ptr& fused) const { return g.conv2d(fused, head_w_, head_b_); }

    FocusNetOutput<T> forward(Graph<T>& g, const Ptr& image) const { return forward(g, image, cfg_.focus); }

    FocusNetOutput<T> forward(Graph<T>& g, const Ptr& image, const FocusSwitches& focus) const {
        FocusNetOutput<T> out;
        const std::size_t c = cfg_.channels, s = cfg_.input_size;
        out.features = base(g, image);
        const Ptr& v = out.features;

        out.seg_probs = g.softmax(g.conv2d(v, seg_w_, seg_b_), 1);

        auto pooled = g.signed_sqrt(g.l2_normalize(g.outer_product_pool(v)));
        out.level_probs = g.softmax(g.add_bias(g.matmul(pooled, level_w_), level_b_, 1), 1);

        Ptr fused = v;
        if (focus.segmentation) {
            out.focus_seg = g.tile(g.slice(out.seg_probs, 1, 1), 1, c);
            fused = g.mul(fused, out.focus_seg);
        }
        if (focus.global_density) {
            auto channel = g.sigmoid(g.add_bias(g.matmul(pooled, focus_w_), focus_b_, 1));
            auto grid = g.reshape(channel, {image->dim(0), c, 1, 1});
            out.focus_density = g.tile(g.tile(grid, 2, s), 3, s);
            fused = g.mul(fused, out.focus_density);
        }
        out.density = density_head(g, fused);
        return out;
    }

    /// Flat copies of all parameters, in declaration order.
    [[nodiscard]] std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> out;
        for (const auto& p : params_) {
            out.push_back(p.tensor->data);
        }
        return out;
    }

private:
    struct ConvBlock {
        Ptr weight, bias, scale, shift;
        Conv2dOptions opt;
        bool transposed = false;
    };

    struct DeconvStage {
        ConvBlock up;
        std::vector<ConvBlock> conv;
    };

    Ptr param(const std::string& name, Shape shape, std::mt19937_64& rng, double stddev, double fill = 0.0) {
        auto t = make_tensor<T>(std::move(shape), static_cast<T>(fill), true);
        if (stddev > 0.0) {
            std::normal_distribution<double> dist(0.0, stddev);
            for (auto& v : t->data) {
                v = static_cast<T>(dist(rng));
            }
        }
        params_.push_back({name, t});
        return t;
    }

    ConvBlock conv_block(const std::string& name, std::size_t cin, std::size_t cout, Conv2dOptions opt,
                         std::mt19937_64& rng) {
        ConvBlock b;
        b.weight = param(name + ".weight", {cout, cin, 3, 3}, rng, std::sqrt(2.0 / static_cast<double>(cin * 9)));
        b.bias = param(name + ".bias", {cout}, rng, 0.0);
        b.scale = param(name + ".scale", {cout}, rng, 0.0, 1.0);
        b.shift = param(name + ".shift", {cout}, rng, 0.0);
        b.opt = opt;
        return b;
    }

    ConvBlock deconv_block(const std::string& name, std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
        ConvBlock b;
        // Each output pixel of a 4x4 stride-2 deconvolution sees 2x2 taps per input channel.
        b.weight = param(name + ".weight", {cin, cout, 4, 4}, rng, std::sqrt(2.0 / static_cast<double>(cin * 4)));
        b.bias = param(name + ".bias", {cout}, rng, 0.0);
        b.scale = param(name + ".scale", {cout}, rng, 0.0, 1.0);
        b.shift = param(name + ".shift", {cout}, rng, 0.0);
        b.transposed = true;
        return b;
    }

    Ptr apply(Graph<T>& g, const ConvBlock& b, const Ptr& x) const {
        auto y = b.transposed ? g.conv_transpose2d(x, b.weight, b.bias, {2, 1}) : g.conv2d(x, b.weight, b.bias, b.opt);
        return g.channel_affine(g.relu(y), b.scale, b.shift);
    }

    FocusNetConfig cfg_;
    std::vector<NamedParam> params_;
    std::vector<ConvBlock> enc_, dil_, distill_;
    std::vector<DeconvStage> dec_;
    Ptr seg_w_, seg_b_, level_w_, level_b_, focus_w_, focus_b_, head_w_, head_b_;
};

} // namespace focusfree
