// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance NAME...    run the named criteria only (see kCriteria)

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "focusfree/focusfree.hpp"
#include "gradcheck.hpp"
#include "json.hpp"

using namespace focusfree;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 6) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path scratch_root() {
    static const fs::path root = fs::temp_directory_path() / ("focusfree_acceptance_" + std::to_string(::getpid()));
    return root;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = scratch_root() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + FOCUSFREE_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Layout used by the kernel criteria: clusters of small objects packed
// tightly next to clusters of large objects.
SceneSpec clustered_benchmark(std::uint64_t seed) {
    SceneSpec spec;
    spec.layout = Layout::clustered;
    spec.width = spec.height = 192;
    spec.num_clusters = 5;
    spec.cluster_spread = 0.8;
    spec.count_min = 30;
    spec.count_max = 60;
    spec.radius_min = 1.5;
    spec.radius_max = 6.0;
    spec.seed = seed;
    return spec;
}

// ---- 1. mass conservation

Outcome mass_conservation() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> layout(0, 2), side(4, 16), count(0, 80);
    std::uniform_real_distribution<double> rmin(1.0, 3.0), extra(0.0, 4.0);
    double worst = 0.0;
    std::size_t maps = 0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        SceneSpec spec;
        spec.layout = static_cast<Layout>(layout(rng));
        spec.width = 8 * static_cast<std::size_t>(side(rng));
        spec.height = 8 * static_cast<std::size_t>(side(rng));
        spec.count_min = spec.count_max = static_cast<std::size_t>(count(rng));
        spec.radius_min = rmin(rng);
        spec.radius_max = spec.radius_min + extra(rng);
        spec.seed = i;
        const auto ps = generate(spec, i).annotations;
        const double n = static_cast<double>(ps.size());
        for (const auto& sigmas : {estimate_sigma_gak(ps), estimate_sigma_nonuniform(ps), estimate_sigma_fixed(ps, 5.0),
                                   estimate_sigma_fixed(ps, 10.0)}) {
            worst = std::max(worst, std::abs(rasterize_density(ps, sigmas).sum() - n));
            ++maps;
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-6 && secs < 60.0,
            std::to_string(maps) + " maps, max |sum - count| " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

// ---- 2. lattice equivalence and clustered divergence

PointSet lattice(std::size_t nx, std::size_t ny, double dx, double dy, double x0, double y0, std::size_t w,
                 std::size_t h) {
    PointSet ps;
    ps.width = w;
    ps.height = h;
    for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
            ps.points.push_back({x0 + dx * static_cast<double>(i), y0 + dy * static_cast<double>(j)});
        }
    }
    return ps;
}

Outcome lattice_equivalence() {
    const auto t0 = Clock::now();
    const std::vector<PointSet> grids{
        lattice(8, 8, 8.0, 8.0, 4.0, 4.0, 64, 64),     lattice(16, 16, 4.0, 4.0, 2.0, 2.0, 64, 64),
        lattice(12, 5, 10.0, 10.0, 3.5, 7.25, 128, 64), lattice(20, 20, 3.0, 3.0, 1.5, 1.5, 64, 64),
        lattice(7, 9, 5.0, 9.0, 2.0, 1.0, 40, 90),      lattice(30, 30, 6.4, 6.4, 3.2, 3.2, 192, 192)};
    double worst = 0.0;
    for (const auto& ps : grids) {
        const auto gak = estimate_sigma_gak(ps, 1);
        const auto nu = estimate_sigma_nonuniform(ps, 1);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            worst = std::max(worst, std::abs(gak.sigmas[i] - nu.sigmas[i]));
        }
    }
    double rel = 0.0;
    std::size_t n = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto ps = generate(clustered_benchmark(1), i).annotations;
        const auto gak = estimate_sigma_gak(ps);
        const auto nu = estimate_sigma_nonuniform(ps);
        for (std::size_t j = 0; j < ps.size(); ++j) {
            rel += std::abs(nu.sigmas[j] - gak.sigmas[j]) / gak.sigmas[j];
            ++n;
        }
    }
    rel /= static_cast<double>(n);
    const double secs = seconds_since(t0);
    return {worst <= 1e-9 && rel > 0.10 && secs < 10.0,
            "lattice max |diff| " + fmt(worst, 3) + " (k=1), clustered mean relative divergence " + fmt(rel, 4) +
                ", " + fmt(secs, 3) + " s"};
}

// ---- 3. sigma accuracy against box-derived reference

Outcome sigma_accuracy() {
    const auto t0 = Clock::now();
    std::vector<double> gak_err, nu_err;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto spec = clustered_benchmark(100 + seed);
        double g = 0.0, u = 0.0;
        for (std::uint64_t i = 0; i < 200; ++i) {
            const auto ps = generate(spec, i).annotations;
            const auto ref = sigma_from_boxes(ps);
            g += sigma_error(estimate_sigma_gak(ps), ref);
            u += sigma_error(estimate_sigma_nonuniform(ps), ref);
        }
        gak_err.push_back(g / 200.0);
        nu_err.push_back(u / 200.0);
    }
    const double mg = median(gak_err), mu = median(nu_err), secs = seconds_since(t0);
    return {mu < mg && secs < 60.0,
            "median sigma error nonuniform " + fmt(mu, 4) + " vs gak " + fmt(mg, 4) + ", " + fmt(secs, 3) + " s"};
}

// ---- 4. gradient suite

struct GradTally {
    std::size_t checks = 0, failures = 0;
    double worst = 0.0;
    std::vector<std::string> failed;

    void add(const std::string& name, const gradcheck::Report& r) {
        ++checks;
        worst = std::max(worst, r.worst_rel);
        if (!r.ok()) {
            ++failures;
            failed.push_back(name + " (" + r.describe() + ")");
        }
    }
    // Analytic vs central-difference gradient of a scalar function of a vector.
    void add_loss(const std::string& name, const std::vector<double>& analytic,
                  const std::function<double(const std::vector<double>&)>& f, std::vector<double> x, double tol) {
        gradcheck::Report r;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i], h = 1e-6;
            x[i] = keep + h;
            const double up = f(x);
            x[i] = keep - h;
            const double down = f(x);
            x[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
            const double diff = std::abs(numeric - analytic[i]);
            r.worst_rel = std::max(r.worst_rel, scale > 0 ? diff / scale : 0.0);
            ++r.checked;
            if (diff > std::max(1e-6, tol * scale)) {
                r.failures.push_back({0, i, analytic[i], numeric});
            }
        }
        add(name, r);
    }
};

void op_checks(GradTally& t) {
    using gradcheck::probe;
    using gradcheck::random_tensor;
    using G = Graph<double>;
    std::mt19937 rng(77);
    for (Conv2dOptions o : {Conv2dOptions{1, 1, 1}, Conv2dOptions{2, 1, 1}, Conv2dOptions{1, 2, 2}}) {
        auto x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
        G shape(false);
        auto r = random_tensor(shape.conv2d(x, w, b, o)->shape, rng);
        t.add("conv2d", gradcheck::check([&](G& g) { return probe(g, g.conv2d(x, w, b, o), r); }, {x, w, b}));
    }
    {
        auto x = random_tensor({2, 4, 4, 4}, rng), w = random_tensor({4, 3, 4, 4}, rng), b = random_tensor({3}, rng);
        auto r = random_tensor({2, 3, 8, 8}, rng);
        t.add("conv_transpose2d",
              gradcheck::check([&](G& g) { return probe(g, g.conv_transpose2d(x, w, b, {2, 1}), r); }, {x, w, b}));
    }
    auto x = random_tensor({2, 4, 6, 6}, rng), y = random_tensor({2, 4, 6, 6}, rng), r = random_tensor({2, 4, 6, 6}, rng);
    auto c = random_tensor({4}, rng), s = random_tensor({4}, rng);
    t.add("relu", gradcheck::check([&](G& g) { return probe(g, g.relu(x), r); }, {x}));
    t.add("sigmoid", gradcheck::check([&](G& g) { return probe(g, g.sigmoid(x), r); }, {x}));
    t.add("signed_sqrt", gradcheck::check([&](G& g) { return probe(g, g.signed_sqrt(x), r); }, {x}));
    t.add("scale", gradcheck::check([&](G& g) { return probe(g, g.scale(x, 1.5), r); }, {x}));
    t.add("mul", gradcheck::check([&](G& g) { return probe(g, g.mul(x, y), r); }, {x, y}));
    t.add("add", gradcheck::check([&](G& g) { return probe(g, g.add(x, y), r); }, {x, y}));
    t.add("softmax", gradcheck::check([&](G& g) { return probe(g, g.softmax(x, 1), r); }, {x}));
    t.add("add_bias", gradcheck::check([&](G& g) { return probe(g, g.add_bias(x, c, 1), r); }, {x, c}));
    t.add("channel_affine", gradcheck::check([&](G& g) { return probe(g, g.channel_affine(x, s, c), r); }, {x, s, c}));
    auto r2 = random_tensor({2, 8, 6, 6}, rng);
    t.add("concat", gradcheck::check([&](G& g) { return probe(g, g.concat({x, y}, 1), r2); }, {x, y}));
    auto a = random_tensor({3, 4}, rng), m = random_tensor({4, 5}, rng), rm = random_tensor({3, 5}, rng);
    t.add("matmul", gradcheck::check([&](G& g) { return probe(g, g.matmul(a, m), rm); }, {a, m}));
    auto rp = random_tensor({2, 4}, rng), p = random_tensor({2, 4}, rng);
    t.add("outer_product_pool", gradcheck::check([&](G& g) { return probe(g, g.outer_product_pool(x), rp); }, {x}));
    t.add("mean_pool", gradcheck::check([&](G& g) { return probe(g, g.mean_pool(x), rp); }, {x}));
    t.add("l2_normalize", gradcheck::check([&](G& g) { return probe(g, g.l2_normalize(p), rp); }, {p}));
    auto x1 = random_tensor({2, 1, 6, 6}, rng), rs = random_tensor({2, 1, 6, 6}, rng);
    t.add("tile", gradcheck::check([&](G& g) { return probe(g, g.tile(x1, 1, 4), r); }, {x1}));
    t.add("slice", gradcheck::check([&](G& g) { return probe(g, g.slice(x, 1, 2), rs); }, {x}));
    auto rr = random_tensor({8, 36}, rng);
    t.add("reshape", gradcheck::check([&](G& g) { return probe(g, g.reshape(x, {8, 36}), rr); }, {x}));
    t.add("sum", gradcheck::check([&](G& g) { return g.sum(g.mul(x, r)); }, {x}));
}

void loss_checks(GradTally& t) {
    std::mt19937 rng(78);
    std::normal_distribution<double> z(0.0, 1.5);
    const std::size_t w = 12, h = 10, n = w * h;
    SegmentationMap mask(w, h, 0);
    std::bernoulli_distribution fg(0.3);
    for (auto& v : mask.values()) {
        v = fg(rng);
    }
    std::vector<double> probs(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double l0 = z(rng), l1 = z(rng);
        probs[i] = std::exp(l0) / (std::exp(l0) + std::exp(l1));
        probs[n + i] = 1.0 - probs[i];
    }
    t.add_loss("seg_focal_loss", seg_focal_loss<double>(probs, mask).gradient,
               [&](const std::vector<double>& p) { return seg_focal_loss<double>(p, mask).value; }, probs, 1e-4);

    std::vector<double> level{0.1, 0.3, 0.25, 0.15, 0.2};
    t.add_loss("global_density_loss", global_density_loss<double>(level, {2}).gradient,
               [&](const std::vector<double>& p) { return global_density_loss<double>(p, {2}).value; }, level, 1e-4);

    std::vector<double> target(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        target[i] = std::abs(z(rng));
        const double d = z(rng);
        pred[i] = target[i] + (std::abs(d) < 1e-3 ? 0.5 : d);
    }
    t.add_loss("density_regression_loss", density_regression_loss<double>(pred, target).gradient,
               [&](const std::vector<double>& p) { return density_regression_loss<double>(p, target).value; }, pred,
               1e-4);
}

// Total objective through the full network on 32x32 inputs, 50 sampled parameters.
gradcheck::Report network_check() {
    FocusNetConfig cfg;
    cfg.input_size = 32;
    cfg.seed = 21;
    FocusNet<double> net(cfg);
    std::mt19937 rng(22);
    std::normal_distribution<double> z(0.0, 0.3);
    for (auto& v : net.find("head.weight")->data) {
        v = z(rng);
    }
    SceneSpec spec;
    spec.width = spec.height = 32;
    spec.seed = 23;
    const auto data = make_synthetic_dataset(spec, 2, cfg.num_levels);
    const std::vector<std::size_t> batch{0, 1};
    auto input = detail::stack_images<double>(data, batch, 32);
    auto loss = [&](Graph<double>& g) {
        auto out = net.forward(g, input);
        return objective(g, out, std::span<const TrainingSample>(data), batch, cfg);
    };
    net.zero_grad();
    {
        Graph<double> g;
        g.backward(loss(g));
    }
    std::vector<std::pair<std::size_t, std::size_t>> all;
    const auto& params = net.parameters();
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].tensor->size(); ++i) {
            all.push_back({t, i});
        }
    }
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(50);
    gradcheck::Report rep;
    for (auto [t, i] : all) {
        auto& p = *params[t].tensor;
        const double keep = p.data[i], h = 1e-7; // small enough that no ReLU input crosses zero inside the stencil
        p.data[i] = keep + h;
        Graph<double> gu(false);
        const double up = loss(gu)->data[0];
        p.data[i] = keep - h;
        Graph<double> gd(false);
        const double down = loss(gd)->data[0];
        p.data[i] = keep;
        const double numeric = (up - down) / (2 * h), analytic = p.grad[i];
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        const double diff = std::abs(numeric - analytic);
        rep.worst_rel = std::max(rep.worst_rel, scale > 0 ? diff / scale : 0.0);
        ++rep.checked;
        if (diff > std::max(1e-6, 1e-3 * scale)) {
            rep.failures.push_back({t, i, analytic, numeric});
        }
    }
    return rep;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    GradTally t;
    op_checks(t);
    loss_checks(t);
    const auto net = network_check();
    t.add("network", net);
    const double secs = seconds_since(t0);
    std::string detail = std::to_string(t.checks) + " checks (" + std::to_string(net.checked) +
                         " network parameters), worst network rel " + fmt(net.worst_rel, 3) + ", " + fmt(secs, 3) +
                         " s";
    for (const auto& f : t.failed) {
        detail += "; failed " + f;
    }
    return {t.failures == 0 && secs < 300.0, detail};
}

// ---- 5. loss hand values

Outcome loss_hand_values() {
    SegmentationMap mask(2, 2, 0);
    mask(1, 0) = 1;
    const double seg = seg_focal_loss<double>(std::vector<double>(8, 0.5), mask, 2.0).value;
    const double lev = global_density_loss<double>(std::vector<double>{0.1, 0.5, 0.2, 0.1, 0.1}, {1}, 2.0).value;
    return {std::abs(seg - 0.2599) <= 1e-4 && std::abs(lev - 0.17329) <= 1e-4,
            "segmentation " + fmt(seg, 8) + ", global density " + fmt(lev, 8)};
}

// ---- 6. metric oracles

Outcome metric_oracles() {
    // Evaluation run: box-kernel truth against GAK predictions on a bimodal set.
    const auto dir = fresh_dir("metrics");
    const auto log = dir / "cli.log";
    bool cli_ok = run_cli("--out-dir " + q(dir / "gt") + " synth-gt --synth bimodal,count=5-40,scenes=30 --kernel boxes",
                          log) == 0 &&
                  run_cli("--out-dir " + q(dir / "pr") + " synth-gt --annotations " +
                              q(dir / "gt" / "annotations.json") + " --kernel gak",
                          log) == 0 &&
                  run_cli("--out-dir " + q(dir / "ev") + " evaluate --truth " + q(dir / "gt") + " --pred " +
                              q(dir / "pr"),
                          log) == 0;
    double game0_gap = INFINITY;
    bool monotone = false;
    if (cli_ok) {
        const auto report = json::parse(io::read_file(dir / "ev" / "report.json"));
        game0_gap = std::abs(report["game"][0].get<double>() - report["mae"].get<double>());
        std::vector<MapPair> pairs;
        for (const auto& e : fs::directory_iterator(dir / "gt")) {
            if (e.path().extension() == ".ffdm") {
                pairs.push_back({e.path().stem().string(), io::read_density(e.path()),
                                 io::read_density(dir / "pr" / e.path().filename())});
            }
        }
        const auto r = evaluate_maps(pairs);
        monotone = true;
        for (const auto& m : r.per_image) {
            game0_gap = std::max(game0_gap, std::abs(m.game[0] - m.abs_err));
            for (std::size_t l = 0; l + 1 < m.game.size(); ++l) {
                monotone = monotone && m.game[l] <= m.game[l + 1] + 1e-12;
            }
        }
    }
    // Offset fixture: truth peaks at 1, prediction is truth + 0.1 everywhere.
    DensityMap truth(32, 32, 0.0), offset(32, 32, 0.0);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : truth.values()) {
        v = u(rng);
    }
    truth(7, 9) = 1.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        offset.values()[i] = truth.values()[i] + 0.1;
    }
    const double psnr = psnr_ssim(truth, offset).psnr;
    const double ssim = psnr_ssim(truth, truth).ssim;
    const bool pass = cli_ok && game0_gap <= 1e-9 && monotone && std::abs(psnr - 20.0) <= 1e-6 &&
                      std::abs(ssim - 1.0) <= 1e-12;
    return {pass, std::string(cli_ok ? "" : "CLI run failed; ") + "max |GAME(0) - MAE| " + fmt(game0_gap, 3) +
                      ", GAME monotone " + (monotone ? "yes" : "no") + ", PSNR offset " + fmt(psnr, 12) +
                      " dB, SSIM(x,x) " + fmt(ssim, 15)};
}

// ---- 7. training efficacy

json read_manifest(const fs::path& dir) { return json::parse(io::read_file(dir / "manifest.json")); }

Outcome training_efficacy() {
    std::string detail;
    bool pass = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto dir = fresh_dir("efficacy_" + std::to_string(seed));
        const auto t0 = Clock::now();
        const int code = run_cli("--out-dir " + q(dir) + " train-toy --scenes 200 --epochs 150 --seed " +
                                     std::to_string(seed),
                                 dir / "cli.log");
        const double secs = seconds_since(t0);
        if (code != 0) {
            return {false, "train-toy seed " + std::to_string(seed) + " exited with " + std::to_string(code)};
        }
        const auto s = read_manifest(dir)["summary"];
        const double init = s["initial_val_mae"], fin = s["final_val_mae"];
        const bool ok = fin < 0.5 * init && secs <= 1800.0;
        pass = pass && ok;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " + fmt(init, 4) +
                  " -> " + fmt(fin, 4) + " (" + fmt(100.0 * fin / init, 3) + "%), " + fmt(secs, 4) + " s";
    }
    return {pass, detail};
}

// ---- 8. focus for free

constexpr std::size_t kFocusScenes = 200;
constexpr std::size_t kFocusEpochs = 150;

bool ablation_identity() {
    FocusNetConfig cfg;
    cfg.seed = 31;
    FocusNet<double> net(cfg);
    auto x = make_tensor<double>({2, 1, 64, 64});
    std::mt19937 rng(32);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x->data) {
        v = u(rng);
    }
    Graph<double> g(false);
    const auto ablated = net.forward(g, x, {false, false});
    auto v = net.base(g, x);
    auto ones = make_tensor<double>(v->shape, 1.0);
    return ablated.density->data == net.density_head(g, g.mul(g.mul(v, ones), ones))->data;
}

Outcome focus_for_free() {
    const std::vector<std::string> arms{"none", "no-density", "no-seg", "base-only"};
    std::map<std::string, std::vector<double>> mae;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (const auto& arm : arms) {
            const auto dir = fresh_dir("focus_" + arm + "_" + std::to_string(seed));
            const int code = run_cli("--out-dir " + q(dir) + " train-toy --layout bimodal --scenes " +
                                         std::to_string(kFocusScenes) + " --epochs " + std::to_string(kFocusEpochs) +
                                         " --ablate " + arm + " --seed " + std::to_string(seed),
                                     dir / "cli.log");
            if (code != 0) {
                return {false, "train-toy " + arm + " seed " + std::to_string(seed) + " exited with " +
                                   std::to_string(code)};
            }
            mae[arm].push_back(read_manifest(dir)["summary"]["final_val_mae"].get<double>());
        }
    }
    const double combined = median(mae["none"]), seg = median(mae["no-density"]), dens = median(mae["no-seg"]),
                 base = median(mae["base-only"]);
    const bool identity = ablation_identity();
    std::string detail = "median val MAE combined " + fmt(combined, 4) + ", seg-only " + fmt(seg, 4) +
                         ", density-only " + fmt(dens, 4) + ", base-only " + fmt(base, 4) + "; ablation identity " +
                         (identity ? "exact" : "broken") + "; per seed";
    for (const auto& arm : arms) {
        detail += " " + arm + "=[";
        for (std::size_t i = 0; i < mae[arm].size(); ++i) {
            detail += (i ? "," : "") + fmt(mae[arm][i], 4);
        }
        detail += "]";
    }
    return {combined <= seg && combined <= dens && combined < base && identity, detail};
}

// ---- 9. determinism

// Every file in `dir`, with the manifest's timestamp removed.
std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) {
            continue;
        }
        auto bytes = io::read_file(e.path());
        if (e.path().filename() == "manifest.json") {
            auto m = json::parse(bytes);
            m.erase("created_utc");
            bytes = m.dump();
        }
        out[fs::relative(e.path(), dir).string()] = bytes;
    }
    return out;
}

// Each command runs twice into the same directory, which is wiped in between.
Outcome determinism() {
    const auto root = fresh_dir("determinism");
    const std::vector<std::pair<std::string, std::string>> commands{
        {"synth", "--seed 7 --threads 2 synth-gt --synth clustered,count=10-50,scenes=8 --kernel nonuniform --out "},
        {"annotated", "synth-gt --annotations " + q(fs::path(FOCUSFREE_DATA_DIR) / "demo_clustered.json") +
                          " --kernel gak --out "},
        {"evaluate", "evaluate --stratify scale --truth " + q(root / "synth") + " --pred " + q(root / "synth") +
                         " --out-dir "},
        {"train", "train-toy --scenes 24 --epochs 3 --layout clustered --seed 5 --out-dir "}};
    std::size_t files = 0;
    std::string detail;
    bool pass = true;
    for (const auto& [name, args] : commands) {
        const auto out = root / name;
        std::map<std::string, std::string> first;
        for (int round = 0; round < 2; ++round) {
            fs::remove_all(out);
            if (run_cli(args + q(out), root / (name + ".log")) != 0) {
                return {false, name + " run failed"};
            }
            auto snap = snapshot_dir(out);
            if (round == 0) {
                first = std::move(snap);
            } else if (snap != first) {
                pass = false;
                detail += name + " differs; ";
            } else {
                files += snap.size();
            }
        }
    }
    return {pass, detail + std::to_string(files) + " files byte-identical across repeated runs (manifest timestamps excluded)"};
}

struct Criterion {
    const char* name;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"mass_conservation", mass_conservation}, {"lattice_equivalence", lattice_equivalence},
    {"sigma_accuracy", sigma_accuracy},       {"gradient_suite", gradient_suite},
    {"loss_hand_values", loss_hand_values},   {"metric_oracles", metric_oracles},
    {"training_efficacy", training_efficacy}, {"focus_for_free", focus_for_free},
    {"determinism", determinism},
};

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    std::vector<std::string> wanted(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& c : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) {
            continue;
        }
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
    }
    fs::remove_all(scratch_root());
    return failures == 0 ? 0 : 1;
}
