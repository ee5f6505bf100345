#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "focusfree/autograd.hpp"
#include "focusfree/errors.hpp"
#include "focusfree/focusnet.hpp"
#include "focusfree/grid.hpp"
#include "focusfree/io.hpp"
#include "focusfree/losses.hpp"
#include "focusfree/metrics.hpp"
#include "focusfree/optim.hpp"
#include "focusfree/supervision.hpp"
#include "focusfree/synthdata.hpp"

namespace focusfree {

/// One supervised example: the image and the three supervision signals.
struct TrainingSample {
    Grid<float> image;
    DensityMap density;
    SegmentationMap segmentation;
    GlobalDensityLabel level;
    double count = 0.0; // number of annotated objects
};

enum class LrSchedule { constant, cosine };

struct TrainOptions {
    std::size_t epochs = 150;
    std::size_t batch_size = 4;
    double validation_fraction = 0.2;
    AdamOptions adam{1e-3, 0.9, 0.999, 1e-8};
    LrSchedule schedule = LrSchedule::cosine; // cosine: lr falls from adam.lr to 0 over the run
    std::uint64_t seed = 0;
};

/// Learning rate used during epoch `epoch` (1-based).
inline double epoch_lr(const TrainOptions& opt, std::size_t epoch) {
    if (opt.schedule == LrSchedule::constant || opt.epochs == 0) {
        return opt.adam.lr;
    }
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(opt.epochs);
    return 0.5 * opt.adam.lr * (1.0 + std::cos(std::numbers::pi * t));
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss_r = 0.0; // per training sample
    double loss_s = 0.0;
    double loss_c = 0.0;
    double total = 0.0;
    double val_mae = 0.0;
    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Row 0 describes the untrained model; row e the model after e epochs.
struct TrainingLog {
    std::vector<EpochLog> epochs;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> validation_indices;

    [[nodiscard]] double initial_val_mae() const { return epochs.front().val_mae; }
    [[nodiscard]] double final_val_mae() const { return epochs.back().val_mae; }

    [[nodiscard]] std::string to_csv() const {
        std::ostringstream os;
        os.precision(9);
        os << "epoch,loss_r,loss_s,loss_c,total,val_mae\n";
        for (const auto& e : epochs) {
            os << e.epoch << ',' << e.loss_r << ',' << e.loss_s << ',' << e.loss_c << ',' << e.total << ','
               << e.val_mae << '\n';
        }
        return os.str();
    }
};

/// Deterministic 80/20-style split by seeded shuffle.
struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

inline DataSplit split_dataset(std::size_t n, double validation_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ 0x5eed5a1177ULL);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
    if (n >= 2) {
        n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    } else {
        n_val = 0;
    }
    DataSplit split;
    split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    return split;
}

namespace detail {

template <std::floating_point T>
TensorPtr<T> stack_images(std::span<const TrainingSample> data, std::span<const std::size_t> batch,
                          std::size_t size) {
    auto t = make_tensor<T>({batch.size(), 1, size, size});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& img = data[batch[b]].image;
        if (img.width() != size || img.height() != size) {
            throw ShapeMismatch("training image does not match the network input size");
        }
        std::transform(img.values().begin(), img.values().end(), t->data.begin() + static_cast<std::ptrdiff_t>(b * size * size),
                       [](float v) { return static_cast<T>(v); });
    }
    return t;
}

struct BatchLosses {
    LossValue density, segmentation, level;
};

template <std::floating_point T>
BatchLosses batch_losses(const FocusNetOutput<T>& out, std::span<const TrainingSample> data,
                         std::span<const std::size_t> batch, const FocusNetConfig& cfg) {
    const std::size_t pixels = cfg.input_size * cfg.input_size, classes = cfg.num_levels + 1;
    BatchLosses losses;
    losses.density.gradient.assign(out.density->size(), 0.0);
    losses.segmentation.gradient.assign(out.seg_probs->size(), 0.0);
    losses.level.gradient.assign(out.level_probs->size(), 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = data[batch[b]];
        const std::span<const T> dens(out.density->data.data() + b * pixels, pixels);
        const std::span<const T> seg(out.seg_probs->data.data() + 2 * b * pixels, 2 * pixels);
        const std::span<const T> lvl(out.level_probs->data.data() + b * classes, classes);
        if (s.density.size() != pixels || s.segmentation.size() != pixels) {
            throw ShapeMismatch("supervision maps do not match the network input size");
        }
        const auto lr = density_regression_loss(dens, s.density);
        const auto ls = seg_focal_loss(seg, s.segmentation, cfg.gamma_s);
        const auto lc = global_density_loss(lvl, s.level, cfg.gamma_c);
        losses.density.value += lr.value;
        losses.segmentation.value += ls.value;
        losses.level.value += lc.value;
        std::copy(lr.gradient.begin(), lr.gradient.end(), losses.density.gradient.begin() + static_cast<std::ptrdiff_t>(b * pixels));
        std::copy(ls.gradient.begin(), ls.gradient.end(),
                  losses.segmentation.gradient.begin() + static_cast<std::ptrdiff_t>(2 * b * pixels));
        std::copy(lc.gradient.begin(), lc.gradient.end(), losses.level.gradient.begin() + static_cast<std::ptrdiff_t>(b * classes));
    }
    return losses;
}

} // namespace detail

/// Loss weights actually optimized: an ablated focus branch is not trained.
inline LossWeights effective_weights(const FocusNetConfig& cfg) {
    LossWeights w = cfg.weights;
    if (!cfg.focus.segmentation) {
        w.lambda_s = 0.0;
    }
    if (!cfg.focus.global_density) {
        w.lambda_c = 0.0;
    }
    return w;
}

/// Builds the multi-level objective for one forward pass on the graph.
template <std::floating_point T>
TensorPtr<T> objective(Graph<T>& g, const FocusNetOutput<T>& out, std::span<const TrainingSample> data,
                       std::span<const std::size_t> batch, const FocusNetConfig& cfg, detail::BatchLosses* parts = nullptr) {
    auto losses = detail::batch_losses(out, data, batch, cfg);
    const auto w = effective_weights(cfg);
    auto total = g.external_loss(out.density, losses.density.value, losses.density.gradient, w.lambda_r);
    if (w.lambda_s != 0.0) {
        total = g.add(total, g.external_loss(out.seg_probs, losses.segmentation.value, losses.segmentation.gradient,
                                             w.lambda_s));
    }
    if (w.lambda_c != 0.0) {
        total = g.add(total, g.external_loss(out.level_probs, losses.level.value, losses.level.gradient, w.lambda_c));
    }
    if (parts) {
        *parts = std::move(losses);
    }
    return total;
}

/// Predicted density map of one image.
template <std::floating_point T>
Grid<float> predict_density(const FocusNet<T>& model, const Grid<float>& image) {
    const std::size_t s = model.config().input_size;
    if (image.width() != s || image.height() != s) {
        throw ShapeMismatch("image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                            " does not match network input " + std::to_string(s));
    }
    Graph<T> g(false);
    auto input = make_tensor<T>({1, 1, s, s});
    std::transform(image.values().begin(), image.values().end(), input->data.begin(),
                   [](float v) { return static_cast<T>(v); });
    auto out = model.forward(g, input);
    std::vector<float> values(out.density->size());
    std::transform(out.density->data.begin(), out.density->data.end(), values.begin(),
                   [](T v) { return static_cast<float>(v); });
    return Grid<float>(s, s, std::move(values));
}

/// Raw sum of the predicted density map.
template <std::floating_point T>
double predict_count(const FocusNet<T>& model, const Grid<float>& image) {
    return predict_density(model, image).sum();
}

template <std::floating_point T>
double validation_mae(const FocusNet<T>& model, std::span<const TrainingSample> data,
                      std::span<const std::size_t> indices) {
    if (indices.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i : indices) {
        total += std::abs(predict_count(model, data[i].image) - data[i].count);
    }
    return total / static_cast<double>(indices.size());
}

/// Trains `model` with Adam on the weighted multi-level loss. Batches are
/// drawn from a per-epoch seeded shuffle; the run is deterministic given
/// the options and the model's initial parameters.
template <std::floating_point T>
TrainingLog train(FocusNet<T>& model, std::span<const TrainingSample> data, const TrainOptions& opt) {
    if (data.empty()) {
        throw NoData("empty training set");
    }
    if (opt.batch_size == 0) {
        throw InvalidArgument("batch size must be positive");
    }
    const auto& cfg = model.config();
    const auto w = effective_weights(cfg);
    const auto split = split_dataset(data.size(), opt.validation_fraction, opt.seed);
    TrainingLog log;
    log.train_indices = split.train;
    log.validation_indices = split.validation;

    Adam<T> adam(model.parameter_tensors(), opt.adam);
    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order = split.train;

    auto run_epoch = [&](std::size_t epoch, bool update) {
        EpochLog row;
        row.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::span<const std::size_t> batch(order.data() + start, std::min(opt.batch_size, order.size() - start));
            Graph<T> g(update);
            auto input = detail::stack_images<T>(data, batch, cfg.input_size);
            auto out = model.forward(g, input);
            detail::BatchLosses parts;
            auto total = objective(g, out, data, batch, cfg, &parts);
            row.loss_r += parts.density.value;
            row.loss_s += parts.segmentation.value;
            row.loss_c += parts.level.value;
            if (update) {
                adam.zero_grad();
                g.backward(total);
                adam.step();
            }
        }
        const auto n = static_cast<double>(order.size());
        row.loss_r /= n;
        row.loss_s /= n;
        row.loss_c /= n;
        row.total = total_loss(row.loss_r, row.loss_s, row.loss_c, w);
        row.val_mae = validation_mae(model, data, split.validation);
        log.epochs.push_back(row);
    };

    run_epoch(0, false);
    for (std::size_t e = 1; e <= opt.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        adam.set_lr(epoch_lr(opt, e));
        run_epoch(e, true);
    }
    return log;
}

/// Supervision for a synthetic scene: box-derived sigmas for both maps.
inline TrainingSample make_sample(const Scene& scene, const GlobalDensitySpec& levels) {
    const auto sigmas = sigma_from_boxes(scene.annotations);
    TrainingSample s;
    s.image = scene.image;
    s.density = rasterize_density(scene.annotations, sigmas);
    s.segmentation = rasterize_segmentation(scene.annotations, sigmas);
    s.level = density_label(scene.annotations, levels);
    s.count = static_cast<double>(scene.annotations.size());
    return s;
}

/// Generates `n` scenes and their supervision. The global density step size
/// is computed over the whole set with the full image as the patch.
inline std::vector<TrainingSample> make_synthetic_dataset(const SceneSpec& spec, std::size_t n, std::size_t num_levels) {
    std::vector<Scene> scenes;
    std::vector<TrainingPatch> patches;
    for (std::size_t i = 0; i < n; ++i) {
        scenes.push_back(generate(spec, i));
        patches.push_back({scenes.back().annotations, spec.width * spec.height});
    }
    const auto levels = compute_step_size(patches, num_levels);
    std::vector<TrainingSample> out;
    out.reserve(n);
    for (const auto& s : scenes) {
        out.push_back(make_sample(s, levels));
    }
    return out;
}

template <std::floating_point T>
std::vector<io::NamedArray> export_parameters(const FocusNet<T>& model) {
    std::vector<io::NamedArray> out;
    for (const auto& p : model.parameters()) {
        io::NamedArray a{p.name, p.tensor->shape, {}};
        a.values.assign(p.tensor->data.begin(), p.tensor->data.end());
        out.push_back(std::move(a));
    }
    return out;
}

template <std::floating_point T>
void import_parameters(FocusNet<T>& model, const std::vector<io::NamedArray>& arrays) {
    for (const auto& a : arrays) {
        auto t = model.find(a.name);
        if (t->shape != a.shape) {
            throw ShapeMismatch("checkpoint entry " + a.name + " has shape " + to_string(a.shape) + ", model expects " +
                                to_string(t->shape));
        }
        std::transform(a.values.begin(), a.values.end(), t->data.begin(), [](float v) { return static_cast<T>(v); });
    }
}

} // namespace focusfree
