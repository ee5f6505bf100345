#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "focusfree/trainer.hpp"

using namespace focusfree;

namespace {

FocusNetConfig small_config(std::uint64_t seed) {
    FocusNetConfig cfg;
    cfg.input_size = 32;
    cfg.channels = 8;
    cfg.seed = seed;
    return cfg;
}

SceneSpec small_scenes(std::uint64_t seed) {
    SceneSpec spec;
    spec.width = spec.height = 32;
    spec.count_min = 2;
    spec.count_max = 12;
    spec.seed = seed;
    return spec;
}

} // namespace

TEST(SplitDataset, DisjointAndDeterministic) {
    const auto a = split_dataset(200, 0.2, 7), b = split_dataset(200, 0.2, 7);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.validation.size(), 40u);
    std::vector<int> seen(200, 0);
    for (auto i : a.train) {
        ++seen[i];
    }
    for (auto i : a.validation) {
        ++seen[i];
    }
    for (int s : seen) {
        EXPECT_EQ(s, 1);
    }
    EXPECT_NE(split_dataset(200, 0.2, 8).validation, a.validation);
}

TEST(EffectiveWeights, AblatedBranchesAreNotTrained) {
    FocusNetConfig cfg;
    EXPECT_EQ(effective_weights(cfg).lambda_s, 10.0);
    cfg.focus = {false, true};
    EXPECT_EQ(effective_weights(cfg).lambda_s, 0.0);
    EXPECT_EQ(effective_weights(cfg).lambda_c, 1.0);
    cfg.focus = {true, false};
    EXPECT_EQ(effective_weights(cfg).lambda_c, 0.0);
}

TEST(EpochLr, CosineSchedule) {
    TrainOptions opt;
    opt.epochs = 10;
    opt.adam.lr = 1e-3;
    EXPECT_DOUBLE_EQ(epoch_lr(opt, 1), 1e-3);
    EXPECT_NEAR(epoch_lr(opt, 6), 0.5e-3, 1e-15);
    EXPECT_GT(epoch_lr(opt, 10), 0.0);
    opt.schedule = LrSchedule::constant;
    EXPECT_EQ(epoch_lr(opt, 10), 1e-3);
}

TEST(Train, EmptyDatasetThrows) {
    FocusNet<float> net(small_config(0));
    EXPECT_THROW(train(net, std::span<const TrainingSample>{}, TrainOptions{}), NoData);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
    const auto data = make_synthetic_dataset(small_scenes(1), 20, 4);
    FocusNet<float> net(small_config(1));
    const auto before = net.snapshot();
    TrainOptions opt;
    opt.epochs = 3;
    opt.adam.lr = 0.0;
    const auto log = train(net, std::span<const TrainingSample>(data), opt);
    EXPECT_EQ(net.snapshot(), before);
    ASSERT_EQ(log.epochs.size(), 4u);
    for (const auto& e : log.epochs) {
        EXPECT_NEAR(e.total, log.epochs[0].total, 1e-9 * log.epochs[0].total);
        EXPECT_EQ(e.val_mae, log.epochs[0].val_mae);
    }
}

TEST(Train, DeterministicLogs) {
    const auto data = make_synthetic_dataset(small_scenes(2), 20, 4);
    TrainOptions opt;
    opt.epochs = 2;
    opt.seed = 5;
    FocusNet<float> a(small_config(3)), b(small_config(3));
    const auto la = train(a, std::span<const TrainingSample>(data), opt);
    const auto lb = train(b, std::span<const TrainingSample>(data), opt);
    EXPECT_EQ(la.to_csv(), lb.to_csv());
    EXPECT_EQ(a.snapshot(), b.snapshot());
    EXPECT_EQ(la.epochs.size(), 3u);
    EXPECT_TRUE(la.to_csv().starts_with("epoch,loss_r,loss_s,loss_c,total,val_mae\n"));
}

TEST(Train, TrainedModelCountsATenPointScene) {
    auto spec = small_scenes(4);
    const auto data = make_synthetic_dataset(spec, 80, 4);
    FocusNet<float> net(small_config(4));
    SceneSpec probe = spec;
    probe.count_min = probe.count_max = 10;
    probe.seed = 99;
    const auto scene = generate(probe, 0);
    ASSERT_EQ(scene.annotations.size(), 10u);
    const double before = std::abs(predict_count(net, scene.image) - 10.0);
    TrainOptions opt;
    opt.epochs = 25;
    opt.seed = 4;
    const auto log = train(net, std::span<const TrainingSample>(data), opt);
    const double after = std::abs(predict_count(net, scene.image) - 10.0);
    EXPECT_LT(after, before);
    EXPECT_LT(log.final_val_mae(), log.initial_val_mae());
}

TEST(Checkpoint, ExportImportRoundTrip) {
    FocusNet<float> a(small_config(6)), b(small_config(7));
    import_parameters(b, export_parameters(a));
    EXPECT_EQ(a.snapshot(), b.snapshot());
    auto arrays = export_parameters(a);
    arrays[0].shape = {1};
    EXPECT_THROW(import_parameters(b, arrays), ShapeMismatch);
}

TEST(MakeSample, SupervisionIsConsistent) {
    const auto scene = generate(small_scenes(8), 0);
    const auto s = make_sample(scene, {2, 4});
    EXPECT_NEAR(s.density.sum(), static_cast<double>(scene.annotations.size()), 1e-6);
    EXPECT_EQ(s.count, static_cast<double>(scene.annotations.size()));
    EXPECT_EQ(s.level.level, std::min<std::size_t>(scene.annotations.size() / 2, 4));
}
