// focusfree: batch front end for ground-truth synthesis, evaluation and toy training.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "focusfree/focusfree.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace focusfree;

namespace {

constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kInputError = 2, kPairingError = 3, kInvariantViolation = 4 };

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PairingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvariantViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GlobalOptions {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out_dir = ".";
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first failure
// (lowest index) is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::optional<std::pair<std::size_t, std::exception_ptr>> failure;
    auto body = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure || i < failure->first) {
                    failure.emplace(i, std::current_exception());
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back(body);
    }
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure->second);
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) { io::write_file(path, text); }

void write_manifest(const fs::path& dir, const std::string& command, const GlobalOptions& g, json config,
                    std::vector<std::string> outputs, json summary) {
    std::sort(outputs.begin(), outputs.end());
    json m;
    m["schema"] = "focusfree.manifest/1";
    m["tool"] = "focusfree";
    m["version"] = kVersion;
    m["command"] = command;
    m["created_utc"] = utc_timestamp();
    m["global"] = {{"seed", g.seed}, {"threads", g.threads}, {"out_dir", g.out_dir}};
    m["config"] = std::move(config);
    m["outputs"] = std::move(outputs);
    m["summary"] = std::move(summary);
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

fs::path prepare_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw InputError("cannot create output directory " + dir + ": " + ec.message());
    }
    return fs::path(dir);
}

// ---- synth-gt

struct SynthGtOptions {
    std::string annotations;
    std::string synth;
    std::string kernel = "gak";
    double beta = kDefaultBeta;
    std::size_t k = kDefaultK;
    double region_frac = kDefaultRegionFraction;
    std::size_t levels = 4;
    std::string out;
};

struct KernelChoice {
    EstimatorTag tag = EstimatorTag::gak;
    double fixed_sigma = 0.0;
};

KernelChoice parse_kernel(const std::string& text) {
    if (text == "gak") {
        return {EstimatorTag::gak, 0.0};
    }
    if (text == "nonuniform") {
        return {EstimatorTag::nonuniform, 0.0};
    }
    if (text == "boxes") {
        return {EstimatorTag::from_boxes, 0.0};
    }
    if (text.starts_with("fixed:")) {
        try {
            std::size_t used = 0;
            const std::string num = text.substr(6);
            const double s = std::stod(num, &used);
            if (used == num.size() && s > 0.0 && std::isfinite(s)) {
                return {EstimatorTag::fixed, s};
            }
        } catch (const std::exception&) {
        }
        throw InputError("--kernel fixed:SIGMA needs a positive number, got '" + text + "'");
    }
    throw InputError("--kernel must be fixed:SIGMA, gak, nonuniform or boxes, got '" + text + "'");
}

struct SynthRequest {
    SceneSpec spec;
    std::size_t scenes = 1;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    try {
        const long long n = std::stoll(v, &used);
        if (used == v.size() && n >= 0) {
            return static_cast<std::size_t>(n);
        }
    } catch (const std::exception&) {
    }
    throw InputError("--synth " + key + " needs a non-negative integer, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    try {
        const double x = std::stod(v, &used);
        if (used == v.size() && std::isfinite(x)) {
            return x;
        }
    } catch (const std::exception&) {
    }
    throw InputError("--synth " + key + " needs a number, got '" + v + "'");
}

// LAYOUT[,key=value...]; see README for the keys.
SynthRequest parse_synth(const std::string& text, std::uint64_t seed) {
    SynthRequest req;
    req.spec.seed = seed;
    std::stringstream ss(text);
    std::string item;
    bool first = true;
    while (std::getline(ss, item, ',')) {
        if (first) {
            first = false;
            if (item == "uniform") {
                req.spec.layout = Layout::uniform;
            } else if (item == "clustered") {
                req.spec.layout = Layout::clustered;
            } else if (item == "bimodal") {
                req.spec.layout = Layout::bimodal;
            } else {
                throw InputError("--synth layout must be uniform, clustered or bimodal, got '" + item + "'");
            }
            continue;
        }
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw InputError("--synth entry '" + item + "' is not key=value");
        }
        const std::string key = item.substr(0, eq), v = item.substr(eq + 1);
        if (key == "count") {
            const auto dash = v.find('-');
            if (dash == std::string::npos) {
                req.spec.count_min = req.spec.count_max = parse_size(key, v);
            } else {
                req.spec.count_min = parse_size(key, v.substr(0, dash));
                req.spec.count_max = parse_size(key, v.substr(dash + 1));
            }
        } else if (key == "scenes") {
            req.scenes = parse_size(key, v);
        } else if (key == "size") {
            req.spec.width = req.spec.height = parse_size(key, v);
        } else if (key == "clusters") {
            req.spec.num_clusters = parse_size(key, v);
        } else if (key == "spread") {
            req.spec.cluster_spread = parse_real(key, v);
        } else if (key == "dense") {
            req.spec.dense_fraction = parse_real(key, v);
        } else if (key == "rmin") {
            req.spec.radius_min = parse_real(key, v);
        } else if (key == "rmax") {
            req.spec.radius_max = parse_real(key, v);
        } else if (key == "noise") {
            req.spec.noise = parse_real(key, v);
        } else if (key == "seed") {
            req.spec.seed = parse_size(key, v);
        } else {
            throw InputError("--synth has no key '" + key + "'");
        }
    }
    if (first) {
        throw InputError("--synth needs a layout");
    }
    if (req.scenes == 0) {
        throw InputError("--synth scenes must be at least 1");
    }
    try {
        req.spec.validate();
    } catch (const InvalidArgument& e) {
        throw InputError(std::string("--synth: ") + e.what());
    }
    return req;
}

json spec_json(const SceneSpec& s, std::size_t scenes) {
    return {{"layout", to_string(s.layout)}, {"scenes", scenes},          {"width", s.width},
            {"height", s.height},           {"count_min", s.count_min},   {"count_max", s.count_max},
            {"num_clusters", s.num_clusters}, {"cluster_spread", s.cluster_spread},
            {"dense_fraction", s.dense_fraction}, {"radius_min", s.radius_min},
            {"radius_max", s.radius_max},   {"noise", s.noise},           {"seed", s.seed}};
}

SigmaAssignment assign_sigmas(const PointSet& ps, const KernelChoice& kernel, const SynthGtOptions& o) {
    switch (kernel.tag) {
    case EstimatorTag::fixed: return estimate_sigma_fixed(ps, kernel.fixed_sigma);
    case EstimatorTag::gak: return estimate_sigma_gak(ps, o.k, o.beta);
    case EstimatorTag::nonuniform: return estimate_sigma_nonuniform(ps, o.k, o.beta, o.region_frac);
    case EstimatorTag::from_boxes: return sigma_from_boxes(ps);
    }
    throw InvariantViolation("unknown kernel");
}

void check_image_id(const std::string& id) {
    if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
        throw InputError("image id '" + id + "' cannot be used as a file name");
    }
}

int run_synth_gt(const GlobalOptions& g, const SynthGtOptions& o) {
    const auto kernel = parse_kernel(o.kernel);
    if (o.levels < 1) {
        throw InputError("--M must be at least 1");
    }
    if (!(o.region_frac > 0.0 && o.region_frac <= 1.0)) {
        throw InputError("--region-frac must lie in (0, 1]");
    }
    const fs::path dir = prepare_dir(o.out.empty() ? g.out_dir : o.out);

    std::vector<io::AnnotationRecord> records;
    std::vector<std::optional<Grid<float>>> images;
    json source;
    if (!o.annotations.empty()) {
        try {
            records = io::read_annotations(o.annotations);
        } catch (const FormatError& e) {
            throw InputError(e.what());
        }
        images.resize(records.size());
        source = {{"annotations", o.annotations}};
    } else {
        const auto req = parse_synth(o.synth, g.seed);
        records.resize(req.scenes);
        images.resize(req.scenes);
        parallel_for(req.scenes, g.threads, [&](std::size_t i) {
            auto scene = generate(req.spec, i);
            char id[32];
            std::snprintf(id, sizeof id, "scene_%04zu", i);
            records[i] = {id, std::move(scene.annotations)};
            images[i] = std::move(scene.image);
        });
        source = {{"synth", o.synth}, {"resolved", spec_json(req.spec, req.scenes)}};
    }
    if (records.empty()) {
        throw InputError("no images to process");
    }
    std::set<std::string> ids;
    for (const auto& r : records) {
        check_image_id(r.image);
        if (!ids.insert(r.image).second) {
            throw InputError("duplicate image id '" + r.image + "'");
        }
    }
    if (kernel.tag == EstimatorTag::from_boxes) {
        for (const auto& r : records) {
            if (!r.annotations.boxes) {
                throw InputError("--kernel boxes needs box annotations, image '" + r.image + "' has none");
            }
        }
    }

    std::vector<TrainingPatch> patches;
    for (const auto& r : records) {
        patches.push_back({r.annotations, r.annotations.width * r.annotations.height});
    }
    const auto levels = compute_step_size(patches, o.levels);

    std::vector<SigmaAssignment> sigmas(records.size());
    std::vector<double> masses(records.size());
    parallel_for(records.size(), g.threads, [&](std::size_t i) {
        const auto& r = records[i];
        sigmas[i] = assign_sigmas(r.annotations, kernel, o);
        const auto density = rasterize_density(r.annotations, sigmas[i]);
        const auto seg = rasterize_segmentation(r.annotations, sigmas[i]);
        masses[i] = density.sum();
        io::write_density(dir / (r.image + ".ffdm"), density);
        io::write_mask_png(dir / (r.image + ".seg.png"), seg);
        if (images[i]) {
            io::write_png(dir / (r.image + ".image.png"), *images[i]);
        }
    });

    std::vector<std::string> outputs{"labels.csv", "sigmas.csv"};
    std::string labels = "image,width,height,count,density_sum,level\n";
    std::string sigma_csv = "image,index,x,y,sigma\n";
    double worst = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const double n = static_cast<double>(r.annotations.size());
        worst = std::max(worst, std::abs(masses[i] - n));
        labels += r.image + ',' + std::to_string(r.annotations.width) + ',' + std::to_string(r.annotations.height) +
                  ',' + std::to_string(r.annotations.size()) + ',' + format_double(masses[i]) + ',' +
                  std::to_string(density_label(r.annotations, levels).level) + '\n';
        for (std::size_t j = 0; j < r.annotations.size(); ++j) {
            const auto& p = r.annotations.points[j];
            sigma_csv += r.image + ',' + std::to_string(j) + ',' + format_double(p.x) + ',' + format_double(p.y) +
                         ',' + format_double(sigmas[i].sigmas[j]) + '\n';
        }
        outputs.push_back(r.image + ".ffdm");
        outputs.push_back(r.image + ".seg.png");
        if (images[i]) {
            outputs.push_back(r.image + ".image.png");
        }
    }
    write_text(dir / "labels.csv", labels);
    write_text(dir / "sigmas.csv", sigma_csv);
    if (o.annotations.empty()) {
        io::write_annotations(dir / "annotations.json", records);
        outputs.push_back("annotations.json");
    }

    json config = {{"source", source},
                   {"kernel", o.kernel},
                   {"beta", o.beta},
                   {"k", o.k},
                   {"region_frac", o.region_frac},
                   {"M", o.levels},
                   {"out", dir.string()}};
    json summary = {{"images", records.size()},
                    {"step_size", levels.step_size},
                    {"num_levels", levels.num_levels},
                    {"max_mass_error", worst}};
    write_manifest(dir, "synth-gt", g, config, outputs, summary);
    if (worst > 1e-6) {
        throw InvariantViolation("density mass differs from the annotation count by " + format_double(worst));
    }
    std::cout << "synth-gt: " << records.size() << " image(s) written to " << dir.string() << "\n";
    return kOk;
}

// ---- evaluate

struct EvaluateOptions {
    std::string truth;
    std::string pred;
    std::size_t game_max = kMaxGameLevel;
    std::string stratify = "none";
};

std::map<std::string, fs::path> list_maps(const std::string& dir, const char* role) {
    if (!fs::is_directory(dir)) {
        throw InputError(std::string("--") + role + " directory " + dir + " does not exist");
    }
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ffdm") {
            out.emplace(entry.path().stem().string(), entry.path());
        }
    }
    return out;
}

json aggregate_json(const AggregateMetrics& a, std::size_t images) {
    json games = json::array();
    for (double v : a.game) {
        games.push_back(v);
    }
    return {{"images", images},      {"mae", a.mae},
            {"rmse", a.rmse},        {"nmae", a.nmae},
            {"game", games},         {"psnr", number_or_null(a.psnr)},
            {"ssim", number_or_null(a.ssim)}, {"quality_images", a.quality_images}};
}

int run_evaluate(const GlobalOptions& g, const EvaluateOptions& o) {
    if (o.game_max > kMaxGameLevel) {
        throw InputError("--game-max must be at most " + std::to_string(kMaxGameLevel));
    }
    std::optional<StratifyMode> mode;
    if (o.stratify == "scale") {
        mode = StratifyMode::scale;
    } else if (o.stratify == "crowding") {
        mode = StratifyMode::crowding;
    } else if (o.stratify != "none") {
        throw InputError("--stratify must be none, scale or crowding");
    }
    const auto truth = list_maps(o.truth, "truth"), pred = list_maps(o.pred, "pred");
    std::vector<std::string> orphans;
    for (const auto& [id, path] : truth) {
        if (!pred.contains(id)) {
            orphans.push_back(path.string());
        }
    }
    for (const auto& [id, path] : pred) {
        if (!truth.contains(id)) {
            orphans.push_back(path.string());
        }
    }
    if (!orphans.empty()) {
        std::ostringstream os;
        os << orphans.size() << " file(s) without a counterpart:";
        for (const auto& p : orphans) {
            os << "\n  " << p;
        }
        throw PairingError(os.str());
    }
    if (truth.empty()) {
        throw InputError("no .ffdm maps in " + o.truth);
    }

    std::vector<MapPair> pairs(truth.size());
    std::vector<std::string> ids;
    for (const auto& [id, _] : truth) {
        ids.push_back(id);
    }
    parallel_for(ids.size(), g.threads, [&](std::size_t i) {
        try {
            pairs[i] = {ids[i], io::read_density(truth.at(ids[i])), io::read_density(pred.at(ids[i]))};
        } catch (const FormatError& e) {
            throw InputError(e.what());
        }
        if (pairs[i].truth.width() != pairs[i].pred.width() || pairs[i].truth.height() != pairs[i].pred.height()) {
            throw PairingError("map sizes differ for image " + ids[i]);
        }
    });

    std::vector<StratumIndex> strata;
    if (mode) {
        const fs::path ann = fs::path(o.truth) / "annotations.json";
        if (!fs::exists(ann)) {
            throw InputError("--stratify needs " + ann.string());
        }
        std::map<std::string, PointSet> by_id;
        try {
            for (auto& r : io::read_annotations(ann)) {
                by_id.emplace(r.image, std::move(r.annotations));
            }
        } catch (const FormatError& e) {
            throw InputError(e.what());
        }
        std::vector<AnnotatedImage> annotated;
        for (const auto& id : ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw PairingError("image " + id + " has no entry in " + ann.string());
            }
            annotated.push_back({id, it->second});
        }
        try {
            strata = stratify(annotated, *mode);
        } catch (const MissingBoxes& e) {
            throw InputError(e.what());
        } catch (const InvalidArgument& e) {
            throw InputError(e.what());
        }
    }

    const auto report = evaluate_maps(pairs, o.game_max);
    std::string csv = "image,truth,pred,abs_err";
    for (std::size_t l = 1; l <= o.game_max; ++l) {
        csv += ",game" + std::to_string(l);
    }
    csv += ",psnr,ssim";
    if (mode) {
        csv += ",stratum";
    }
    csv += '\n';
    for (std::size_t i = 0; i < report.per_image.size(); ++i) {
        const auto& m = report.per_image[i];
        csv += m.image + ',' + format_double(m.truth) + ',' + format_double(m.pred) + ',' + format_double(m.abs_err);
        for (std::size_t l = 1; l <= o.game_max; ++l) {
            csv += ',' + format_double(m.game[l]);
        }
        csv += ',' + format_double(m.psnr) + ',' + format_double(m.ssim);
        if (mode) {
            csv += ',' + std::string(stratum_names(*mode)[strata[i].stratum]);
        }
        csv += '\n';
    }

    json agg = aggregate_json(report.aggregate, pairs.size());
    if (mode) {
        json groups = json::object();
        for (std::size_t s = 0; s < 3; ++s) {
            std::vector<MapPair> subset;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                if (strata[i].stratum == s) {
                    subset.push_back(pairs[i]);
                }
            }
            const std::string name(stratum_names(*mode)[s]);
            groups[name] = subset.empty() ? json{{"images", 0}}
                                          : aggregate_json(evaluate_maps(subset, o.game_max).aggregate, subset.size());
        }
        agg["strata"] = {{"mode", o.stratify}, {"groups", groups}};
    }

    const fs::path dir = prepare_dir(g.out_dir);
    write_text(dir / "report.csv", csv);
    write_text(dir / "report.json", agg.dump(2) + "\n");
    json config = {{"truth", o.truth}, {"pred", o.pred}, {"game_max", o.game_max}, {"stratify", o.stratify}};
    write_manifest(dir, "evaluate", g, config, {"report.csv", "report.json"}, agg);
    std::cout << "evaluate: " << pairs.size() << " image(s), MAE " << format_double(report.aggregate.mae) << "\n";
    return kOk;
}

// ---- train-toy

struct TrainToyOptions {
    std::size_t scenes = 200;
    std::size_t epochs = 150;
    std::string ablate = "none";
    std::string layout = "uniform";
    double lr = 1e-3;
    std::size_t batch = 4;
    std::optional<std::uint64_t> seed;
};

int run_train_toy(const GlobalOptions& g, const TrainToyOptions& o) {
    if (o.scenes < 20) {
        throw InputError("--scenes must be at least 20");
    }
    if (o.batch < 1) {
        throw InputError("--batch must be at least 1");
    }
    if (!(o.lr >= 0.0) || !std::isfinite(o.lr)) {
        throw InputError("--lr must be a non-negative number");
    }
    const std::uint64_t seed = o.seed.value_or(g.seed);

    FocusNetConfig net_cfg;
    net_cfg.seed = seed;
    if (o.ablate == "no-seg") {
        net_cfg.focus = {false, true};
    } else if (o.ablate == "no-density") {
        net_cfg.focus = {true, false};
    } else if (o.ablate == "base-only") {
        net_cfg.focus = {false, false};
    } else if (o.ablate != "none") {
        throw InputError("--ablate must be none, no-seg, no-density or base-only");
    }
    SceneSpec spec;
    spec.width = spec.height = net_cfg.input_size;
    spec.seed = seed;
    if (o.layout == "clustered") {
        spec.layout = Layout::clustered;
    } else if (o.layout == "bimodal") {
        spec.layout = Layout::bimodal;
    } else if (o.layout != "uniform") {
        throw InputError("--layout must be uniform, clustered or bimodal");
    }

    TrainOptions topt;
    topt.epochs = o.epochs;
    topt.batch_size = o.batch;
    topt.adam.lr = o.lr;
    topt.seed = seed;

    const auto data = make_synthetic_dataset(spec, o.scenes, net_cfg.num_levels);
    FocusNet<float> net(net_cfg);
    const auto log = train(net, std::span<const TrainingSample>(data), topt);

    const fs::path dir = prepare_dir(g.out_dir);
    io::write_file(dir / "checkpoint.ffck", io::encode_checkpoint(export_parameters(net)));
    write_text(dir / "train_log.csv", log.to_csv());
    for (const auto& p : net.parameters()) {
        if (!std::all_of(p.tensor->data.begin(), p.tensor->data.end(), [](float v) { return std::isfinite(v); })) {
            throw InvariantViolation("parameter " + p.name + " is not finite after training");
        }
    }

    json config = {{"scenes", o.scenes},
                   {"epochs", o.epochs},
                   {"ablate", o.ablate},
                   {"seed", seed},
                   {"layout", o.layout},
                   {"lr", o.lr},
                   {"lr_schedule", "cosine"},
                   {"batch", o.batch},
                   {"validation_fraction", topt.validation_fraction},
                   {"scene", spec_json(spec, o.scenes)},
                   {"network",
                    {{"input_size", net_cfg.input_size},
                     {"channels", net_cfg.channels},
                     {"num_levels", net_cfg.num_levels},
                     {"segmentation_focus", net_cfg.focus.segmentation},
                     {"global_density_focus", net_cfg.focus.global_density},
                     {"parameters", net.parameter_count()}}}};
    json summary = {{"ablate", o.ablate},
                    {"initial_val_mae", log.initial_val_mae()},
                    {"final_val_mae", log.final_val_mae()},
                    {"train_images", log.train_indices.size()},
                    {"validation_images", log.validation_indices.size()}};
    write_manifest(dir, "train-toy", g, config, {"checkpoint.ffck", "train_log.csv"}, summary);
    std::cout << "train-toy [" << o.ablate << "]: validation MAE " << format_double(log.initial_val_mae()) << " -> "
              << format_double(log.final_val_mae()) << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"focusfree: crowd-counting supervision, evaluation and toy training"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for per-image stages")
        ->check(CLI::Range(1u, 1024u))
        ->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

    SynthGtOptions sg;
    auto* synth = app.add_subcommand("synth-gt", "Build density maps, masks and labels from point annotations");
    auto* src_ann = synth->add_option("--annotations", sg.annotations, "Annotation JSON file");
    auto* src_syn = synth->add_option("--synth", sg.synth, "Synthetic scene spec, e.g. uniform,count=10,scenes=4");
    src_ann->excludes(src_syn);
    synth->add_option("--kernel", sg.kernel, "fixed:SIGMA | gak | nonuniform | boxes")->capture_default_str();
    synth->add_option("--beta", sg.beta, "Kernel scale factor")->capture_default_str();
    synth->add_option("--k", sg.k, "Nearest neighbours per point")->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--region-frac", sg.region_frac, "Region side as a fraction of the image side")
        ->capture_default_str();
    synth->add_option("--M", sg.levels, "Number of global density levels")->capture_default_str();
    synth->add_option("--out", sg.out, "Output directory (defaults to --out-dir)");

    EvaluateOptions ev;
    auto* eval = app.add_subcommand("evaluate", "Compare predicted density maps with ground truth");
    eval->add_option("--truth", ev.truth, "Directory of ground-truth .ffdm maps")->required();
    eval->add_option("--pred", ev.pred, "Directory of predicted .ffdm maps")->required();
    eval->add_option("--game-max", ev.game_max, "Highest GAME level")->capture_default_str();
    eval->add_option("--stratify", ev.stratify, "none | scale | crowding")->capture_default_str();

    TrainToyOptions tt;
    auto* trainer = app.add_subcommand("train-toy", "Train the toy counting network on synthetic scenes");
    trainer->add_option("--scenes", tt.scenes, "Number of synthetic scenes (>= 20)")->capture_default_str();
    trainer->add_option("--epochs", tt.epochs, "Training epochs")->capture_default_str();
    trainer->add_option("--ablate", tt.ablate, "none | no-seg | no-density | base-only")->capture_default_str();
    trainer->add_option("--layout", tt.layout, "uniform | clustered | bimodal")->capture_default_str();
    trainer->add_option("--lr", tt.lr, "Peak learning rate")->capture_default_str();
    trainer->add_option("--batch", tt.batch, "Mini-batch size")->capture_default_str();
    trainer->add_option("--seed", tt.seed, "Seed (overrides the global --seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInputError;
    }

    try {
        if (synth->parsed()) {
            if (sg.annotations.empty() == sg.synth.empty()) {
                throw InputError("synth-gt needs exactly one of --annotations or --synth");
            }
            return run_synth_gt(g, sg);
        }
        if (eval->parsed()) {
            return run_evaluate(g, ev);
        }
        return run_train_toy(g, tt);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const PairingError& e) {
        std::cerr << "pairing error: " << e.what() << "\n";
        return kPairingError;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return kInvariantViolation;
    } catch (const FormatError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const InvalidArgument& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return kInvariantViolation;
    }
}
