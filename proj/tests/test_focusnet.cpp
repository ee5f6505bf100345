#include <gtest/gtest.h>

#include <random>
#include <set>
#include <vector>

#include "focusfree/focusnet.hpp"
#include "focusfree/io.hpp"
#include "focusfree/synthdata.hpp"
#include "focusfree/trainer.hpp"
#include "gradcheck.hpp"

using namespace focusfree;

namespace {

// Hand count: 3x3 conv blocks carry weight, bias, scale and shift.
std::size_t expected_parameters(std::size_t c, std::size_t m) {
    auto block = [](std::size_t cin, std::size_t cout, std::size_t taps) { return cout * cin * taps + 3 * cout; };
    std::size_t n = 0;
    n += block(1, c, 9) + 2 * block(c, c, 9);  // encoder
    n += 2 * block(c, c, 9);                   // dilated
    n += block(2 * c, c, 9) + block(c, c, 9);  // distiller
    n += 3 * (block(c, c, 16) + 2 * block(c, c, 9)); // decoder
    n += 2 * c + 2;                            // segmentation 1x1
    n += c * (m + 1) + (m + 1);                // level classifier
    n += c * c + c;                            // density focus
    n += c + 1;                                // density head
    return n;
}

TensorPtr<double> random_image(std::size_t n, std::size_t s, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto t = make_tensor<double>({n, 1, s, s});
    for (auto& v : t->data) {
        v = u(rng);
    }
    return t;
}

} // namespace

TEST(FocusNet, OutputShapes) {
    FocusNetConfig cfg;
    FocusNet<float> net(cfg);
    Graph<float> g(false);
    auto x = make_tensor<float>({2, 1, 64, 64}, 0.5f);
    const auto out = net.forward(g, x);
    EXPECT_EQ(out.density->shape, (Shape{2, 1, 64, 64}));
    EXPECT_EQ(out.seg_probs->shape, (Shape{2, 2, 64, 64}));
    EXPECT_EQ(out.level_probs->shape, (Shape{2, 5}));
    EXPECT_EQ(out.features->shape, (Shape{2, 16, 64, 64}));
    EXPECT_EQ(out.focus_seg->shape, out.features->shape);
    EXPECT_EQ(out.focus_density->shape, out.features->shape);
    for (std::size_t i = 0; i < 64 * 64; ++i) {
        EXPECT_NEAR(out.seg_probs->data[i] + out.seg_probs->data[64 * 64 + i], 1.0f, 1e-6f);
    }
}

TEST(FocusNet, ParameterCount) {
    for (auto [c, m] : {std::pair<std::size_t, std::size_t>{16, 4}, {8, 2}, {5, 7}}) {
        FocusNetConfig cfg;
        cfg.channels = c;
        cfg.num_levels = m;
        FocusNet<float> net(cfg);
        EXPECT_EQ(net.parameter_count(), expected_parameters(c, m));
    }
    EXPECT_EQ(expected_parameters(16, 4), 43560u);
}

TEST(FocusNet, UniqueParameterNames) {
    FocusNet<float> net(FocusNetConfig{});
    std::set<std::string> names;
    for (const auto& p : net.parameters()) {
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
    }
    EXPECT_NO_THROW(net.find("head.weight"));
    EXPECT_THROW(net.find("nope"), InvalidArgument);
}

TEST(FocusNet, InvalidConfig) {
    FocusNetConfig cfg;
    cfg.input_size = 60;
    EXPECT_THROW(FocusNet<float>{cfg}, InvalidConfig);
    cfg.input_size = 64;
    cfg.channels = 0;
    EXPECT_THROW(FocusNet<float>{cfg}, InvalidConfig);
    FocusNet<float> net(FocusNetConfig{});
    Graph<float> g(false);
    EXPECT_THROW(net.forward(g, make_tensor<float>({1, 1, 32, 32})), ShapeMismatch);
}

TEST(FocusNet, AblationIdentity) {
    FocusNetConfig cfg;
    cfg.seed = 3;
    FocusNet<double> net(cfg);
    auto x = random_image(2, 64, 1);
    Graph<double> g(false);
    const auto ablated = net.forward(g, x, {false, false});
    auto v = net.base(g, x);
    auto ones = make_tensor<double>(v->shape, 1.0);
    auto manual = net.density_head(g, g.mul(g.mul(v, ones), ones));
    EXPECT_EQ(ablated.density->data, manual->data);
    EXPECT_EQ(ablated.focus_seg, nullptr);
    EXPECT_EQ(ablated.focus_density, nullptr);
    // The focused output differs once the branches are active.
    const auto full = net.forward(g, x);
    EXPECT_NE(full.density->data, ablated.density->data);
}

TEST(FocusNet, Deterministic) {
    FocusNetConfig cfg;
    cfg.seed = 11;
    FocusNet<float> a(cfg), b(cfg);
    EXPECT_EQ(a.snapshot(), b.snapshot());
    cfg.seed = 12;
    FocusNet<float> c(cfg);
    EXPECT_NE(a.snapshot(), c.snapshot());
    Graph<float> g1(false), g2(false);
    auto x = make_tensor<float>({1, 1, 64, 64}, 0.25f);
    EXPECT_EQ(a.forward(g1, x).density->data, b.forward(g2, x).density->data);
}

TEST(FocusNet, EndToEndGradientCheck) {
    FocusNetConfig cfg;
    cfg.input_size = 32;
    cfg.seed = 5;
    FocusNet<double> net(cfg);
    // Non-trivial head so every branch contributes.
    std::mt19937 rng(9);
    std::normal_distribution<double> z(0.0, 0.3);
    for (auto& v : net.find("head.weight")->data) {
        v = z(rng);
    }
    SceneSpec spec;
    spec.width = spec.height = 32;
    spec.seed = 4;
    const auto data = make_synthetic_dataset(spec, 2, cfg.num_levels);
    auto input = detail::stack_images<double>(data, std::vector<std::size_t>{0, 1}, 32);
    const std::vector<std::size_t> batch{0, 1};

    // Sample 50 parameter coordinates across all tensors.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    const auto& params = net.parameters();
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].tensor->size(); ++i) {
            all.push_back({t, i});
        }
    }
    std::shuffle(all.begin(), all.end(), rng);
    coords.assign(all.begin(), all.begin() + 50);

    auto loss_value = [&]() {
        Graph<double> g(false);
        auto out = net.forward(g, input);
        return objective(g, out, std::span<const TrainingSample>(data), batch, cfg)->data[0];
    };
    net.zero_grad();
    {
        Graph<double> g;
        auto out = net.forward(g, input);
        g.backward(objective(g, out, std::span<const TrainingSample>(data), batch, cfg));
    }
    std::size_t bad = 0;
    for (auto [t, i] : coords) {
        auto& p = *params[t].tensor;
        const double keep = p.data[i], h = 1e-7; // small enough that no ReLU input crosses zero inside the stencil
        p.data[i] = keep + h;
        const double up = loss_value();
        p.data[i] = keep - h;
        const double down = loss_value();
        p.data[i] = keep;
        const double numeric = (up - down) / (2 * h), analytic = p.grad[i];
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        if (std::abs(numeric - analytic) > std::max(1e-6, 1e-3 * scale)) {
            ++bad;
            ADD_FAILURE() << params[t].name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
        }
    }
    EXPECT_EQ(bad, 0u);
}

TEST(PredictCount, ZeroHead) {
    FocusNet<float> net(FocusNetConfig{});
    std::fill(net.find("head.weight")->data.begin(), net.find("head.weight")->data.end(), 0.0f);
    std::fill(net.find("head.bias")->data.begin(), net.find("head.bias")->data.end(), 0.0f);
    const auto scene = generate(SceneSpec{}, 0);
    EXPECT_EQ(predict_count(net, scene.image), 0.0);
}

TEST(PredictCount, MatchesExportedMapSum) {
    FocusNetConfig cfg;
    cfg.seed = 2;
    FocusNet<float> net(cfg);
    net.find("head.bias")->data[0] = 0.01f;
    const auto scene = generate(SceneSpec{}, 3);
    const auto map = predict_density(net, scene.image);
    const auto decoded = io::decode_density(io::encode_density(map));
    EXPECT_EQ(predict_count(net, scene.image), decoded.sum());
    EXPECT_THROW(predict_count(net, Grid<float>(32, 32, 0.0f)), ShapeMismatch);
}
