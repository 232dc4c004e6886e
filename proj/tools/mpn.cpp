// mpn: dataset generation, training, inference, distillation, evaluation and
// flow visualisation from the command line.
//
// Every command takes `--config file.json` plus flag overrides (flags win).
// Unknown config keys are rejected. The resolved config is written next to the
// command's outputs. Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "mpn/checkpoint.hpp"
#include "mpn/compensation.hpp"
#include "mpn/distill.hpp"
#include "mpn/io.hpp"
#include "mpn/metrics.hpp"
#include "mpn/net.hpp"
#include "mpn/parallel.hpp"
#include "mpn/phantom.hpp"
#include "mpn/rng.hpp"
#include "mpn/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpn;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Overlays `user` onto `base`. Every key must already exist in `base`; nested
// objects are merged key by key.
void merge_into(json& base, const json& user, const std::string& where) {
    if (!user.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : user.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key: " + path);
        if (base[key].is_object() && value.is_object()) {
            merge_into(base[key], value, path);
        } else {
            base[key] = value;
        }
    }
}

json resolve(json defaults, const std::string& config_path) {
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot read config file " + config_path);
        json user;
        try {
            user = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("malformed config file " + config_path + ": " + e.what());
        }
        merge_into(defaults, user, "");
    }
    return defaults;
}

template <class T>
void override_with(json& j, const char* key, const std::optional<T>& flag) {
    if (flag) j[key] = *flag;
}

void echo_config(const fs::path& dir, const std::string& name, const json& cfg) {
    fs::create_directories(dir);
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << cfg.dump(2) << '\n';
}

std::string required_path(const json& cfg, const char* key) {
    const auto s = cfg.at(key).get<std::string>();
    if (s.empty()) throw ConfigError(std::string("missing required setting: ") + key);
    return s;
}

std::vector<ImagePair> image_pairs(const std::vector<PhantomPair>& pairs) {
    std::vector<ImagePair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.source, p.target});
    return out;
}

// Runs `resolve_fn` (config errors) then `run_fn` (runtime errors).
template <class Resolve, class Run>
int guarded(Resolve&& resolve_fn, Run&& run_fn) {
    json cfg;
    try {
        cfg = resolve_fn();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
    try {
        return run_fn(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

// ---- gen --------------------------------------------------------------------------

struct GenFlags {
    std::string config;
    std::optional<std::string> out;
    std::optional<int> n;
    std::optional<int> size;
    std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve({{"out", ""}, {"n", 200}, {"seed", 0}, {"ranges", PhantomRanges{}}}, f.config);
            override_with(cfg, "out", f.out);
            override_with(cfg, "n", f.n);
            override_with(cfg, "seed", f.seed);
            if (f.size) cfg["ranges"]["size"] = *f.size;
            required_path(cfg, "out");
            if (cfg.at("n").get<int>() < 1) throw ConfigError("n must be >= 1");
            cfg["ranges"] = cfg.at("ranges").get<PhantomRanges>();  // validates
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const auto ranges = cfg.at("ranges").get<PhantomRanges>();
            const json manifest = generate_dataset(out, cfg.at("n").get<std::size_t>(), ranges,
                                                   cfg.at("seed").get<std::uint64_t>());
            echo_config(out, "gen_config.json", cfg);
            std::cout << "wrote " << manifest.at("pairs").size() << " pairs to " << out.string() << '\n';
            return 0;
        });
}

// ---- train ------------------------------------------------------------------------

struct TrainFlags {
    std::string config;
    std::optional<std::string> data, out, variant, resume;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve({{"data", ""},
                                {"out", ""},
                                {"variant", "pyramid"},
                                {"arch", ArchConfig{}},
                                {"epochs", 30},
                                {"lr", 1e-3},
                                {"seed", 0},
                                {"weights", LossWeights{}},
                                {"resume", ""}},
                               f.config);
            override_with(cfg, "data", f.data);
            override_with(cfg, "out", f.out);
            override_with(cfg, "variant", f.variant);
            override_with(cfg, "resume", f.resume);
            override_with(cfg, "epochs", f.epochs);
            override_with(cfg, "lr", f.lr);
            override_with(cfg, "seed", f.seed);
            required_path(cfg, "data");
            required_path(cfg, "out");
            cfg["arch"]["variant"] = cfg.at("variant");
            cfg["arch"] = cfg.at("arch").get<ArchConfig>();
            cfg["weights"] = cfg.at("weights").get<LossWeights>();
            if (cfg.at("epochs").get<int>() < 0) throw ConfigError("epochs must be >= 0");
            if (!(cfg.at("lr").get<double>() > 0.0)) throw ConfigError("lr must be positive");
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const auto arch = cfg.at("arch").get<ArchConfig>();
            const auto seed = cfg.at("seed").get<std::uint64_t>();
            const std::string resume = cfg.at("resume").get<std::string>();

            ModelParams params;
            if (!resume.empty()) {
                params = load_checkpoint(resume);
                if (!(params.config == arch)) {
                    throw ConfigError("resume checkpoint architecture differs from the configured one");
                }
            } else {
                params = init_model(arch, seed);
            }
            const auto pairs = image_pairs(load_dataset(cfg.at("data").get<std::string>()));
            echo_config(out, "train_config.json", cfg);

            std::ofstream log(out / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
            TrainOptions opt;
            opt.epochs = cfg.at("epochs").get<int>();
            opt.lr = cfg.at("lr").get<double>();
            opt.seed = seed;
            opt.weights = cfg.at("weights").get<LossWeights>();
            opt.on_epoch = [&](const EpochLog& e) {
                log << json(e).dump() << '\n' << std::flush;
                std::cout << "epoch " << e.epoch << " loss " << e.mean.total << '\n';
            };
            TrainResult r = train_unsupervised(std::move(params), pairs, opt);
            save_checkpoint(out / "model.mpnc", r.params);
            std::cout << "saved " << (out / "model.mpnc").string() << " (epochs_trained " << r.params.epochs_trained
                      << ")\n";
            return 0;
        });
}

// ---- infer ------------------------------------------------------------------------

struct InferFlags {
    std::string config;
    std::optional<std::string> model, source, target, source_mask, out;
    std::optional<int> steps, repeat;
    std::optional<bool> hsv;
};

int cmd_infer(const InferFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve({{"model", ""},
                                {"source", ""},
                                {"target", ""},
                                {"source_mask", ""},
                                {"out", ""},
                                {"steps", 2},
                                {"repeat", 1},
                                {"hsv", true}},
                               f.config);
            override_with(cfg, "model", f.model);
            override_with(cfg, "source", f.source);
            override_with(cfg, "target", f.target);
            override_with(cfg, "source_mask", f.source_mask);
            override_with(cfg, "out", f.out);
            override_with(cfg, "steps", f.steps);
            override_with(cfg, "repeat", f.repeat);
            override_with(cfg, "hsv", f.hsv);
            for (const char* k : {"model", "source", "target", "out"}) required_path(cfg, k);
            if (cfg.at("steps").get<int>() < 1) throw ConfigError("steps must be >= 1");
            if (cfg.at("repeat").get<int>() < 1) throw ConfigError("repeat must be >= 1");
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const ModelParams params = load_checkpoint(cfg.at("model").get<std::string>());
            const Image source = read_image(cfg.at("source").get<std::string>());
            const Image target = read_image(cfg.at("target").get<std::string>());
            const int steps = cfg.at("steps").get<int>();
            const int repeat = cfg.at("repeat").get<int>();
            echo_config(out, "infer_config.json", cfg);

            ProgressiveResult r;
            const auto t0 = std::chrono::steady_clock::now();
            for (int i = 0; i < repeat; ++i) r = progressive_flow(params, source, target, steps);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / repeat;

            write_flo(out / "flow.flo", r.flow);
            write_png16(out / "warped.png", r.intermediates.back());
            if (cfg.at("hsv").get<bool>()) write_rgb_png(out / "flow_hsv.png", flow_to_hsv(r.flow));
            const std::string mask_path = cfg.at("source_mask").get<std::string>();
            if (!mask_path.empty()) write_mask_png(out / "warped_mask.png", warp_mask(read_mask_png(mask_path), r.flow));
            std::printf("timing: %.3f ms/frame (steps=%d, %dx%d)\n", ms, steps, source.height(), source.width());
            return 0;
        });
}

// ---- distill ----------------------------------------------------------------------

struct DistillFlags {
    std::string config;
    std::optional<std::string> data, teacher, out;
    std::optional<int> cycles, epochs_per_cycle;
    std::optional<double> lr, val_fraction;
    std::optional<std::uint64_t> seed;
};

// Deterministic train/validation split of the pair indices.
std::pair<std::vector<ImagePair>, std::vector<ImagePair>> split_pairs(const std::vector<ImagePair>& all,
                                                                      double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng(seed, Stream::Split).shuffle(idx);
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(all.size())));
    std::vector<ImagePair> train, val;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? val : train).push_back(all[idx[i]]);
    return {std::move(train), std::move(val)};
}

int cmd_distill(const DistillFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve({{"data", ""}, {"teacher", ""}, {"out", ""}, {"val_fraction", 0.1}, {"cycle", CycleConfig{}}},
                               f.config);
            override_with(cfg, "data", f.data);
            override_with(cfg, "teacher", f.teacher);
            override_with(cfg, "out", f.out);
            override_with(cfg, "val_fraction", f.val_fraction);
            if (f.cycles) cfg["cycle"]["num_cycles"] = *f.cycles;
            if (f.epochs_per_cycle) cfg["cycle"]["epochs_per_cycle"] = *f.epochs_per_cycle;
            if (f.lr) cfg["cycle"]["lr"] = *f.lr;
            if (f.seed) cfg["cycle"]["seed"] = *f.seed;
            for (const char* k : {"data", "teacher", "out"}) required_path(cfg, k);
            const double vf = cfg.at("val_fraction").get<double>();
            if (!(vf >= 0.0 && vf < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
            cfg["cycle"] = cfg.at("cycle").get<CycleConfig>();
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
            const auto cc = cfg.at("cycle").get<CycleConfig>();
            const ModelParams teacher = load_checkpoint(cfg.at("teacher").get<std::string>());
            const auto all = image_pairs(load_dataset(cfg.at("data").get<std::string>()));
            auto [train, val] = split_pairs(all, cfg.at("val_fraction").get<double>(), cc.seed);
            echo_config(dir, "distill_config.json", cfg);

            NetworkDistillResult r = cyclic_distill(teacher, train, val, cc);
            json logs = json::array();
            for (const auto& c : r.cycles) {
                logs.push_back(c);
                std::ofstream(dir / ("distill_cycle_" + std::to_string(c.cycle) + ".json")) << json(c).dump(2) << '\n';
                std::cout << "cycle " << c.cycle << ": flow loss " << c.initial_val_flow_loss << " -> "
                          << c.final_val_flow_loss() << ", epochs " << c.epochs.size()
                          << ", teacher frozen " << (c.teacher_frozen() ? "yes" : "NO") << '\n';
            }
            std::ofstream(dir / "distill_log.json") << logs.dump(2) << '\n';
            save_checkpoint(out, r.params);
            return 0;
        });
}

// ---- eval -------------------------------------------------------------------------

struct EvalFlags {
    std::string config;
    std::optional<std::string> data, model, out;
    std::optional<int> steps, threads;
    std::optional<bool> use_gt;
};

int cmd_eval(const EvalFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve(
                {{"data", ""}, {"model", ""}, {"out", ""}, {"steps", 1}, {"threads", 0}, {"use_gt", false}}, f.config);
            override_with(cfg, "data", f.data);
            override_with(cfg, "model", f.model);
            override_with(cfg, "out", f.out);
            override_with(cfg, "steps", f.steps);
            override_with(cfg, "threads", f.threads);
            override_with(cfg, "use_gt", f.use_gt);
            required_path(cfg, "data");
            required_path(cfg, "out");
            if (!cfg.at("use_gt").get<bool>()) required_path(cfg, "model");
            if (cfg.at("steps").get<int>() < 1) throw ConfigError("steps must be >= 1");
            if (cfg.at("threads").get<int>() < 0) throw ConfigError("threads must be >= 0");
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const bool use_gt = cfg.at("use_gt").get<bool>();
            const int steps = cfg.at("steps").get<int>();
            std::optional<ModelParams> params;
            if (!use_gt) params = load_checkpoint(cfg.at("model").get<std::string>());
            const auto pairs = load_dataset(cfg.at("data").get<std::string>());
            echo_config(out, "eval_config.json", cfg);

            std::vector<MetricsReport> reports(pairs.size());
            parallel_for(
                pairs.size(),
                [&](std::size_t i) {
                    const PhantomPair& p = pairs[i];
                    const FlowField est =
                        use_gt ? p.gt_flow : progressive_flow(*params, p.source, p.target, steps).flow;
                    reports[i] = evaluate_pair({&est, &p.gt_flow, &p.source_mask, &p.target_mask, p.source_keypoints,
                                                p.target_keypoints});
                },
                static_cast<unsigned>(cfg.at("threads").get<int>()));

            json per_pair = json::array();
            for (std::size_t i = 0; i < reports.size(); ++i) per_pair.push_back({{"index", i}, {"report", reports[i]}});
            const MetricsReport agg = aggregate(reports);
            const json doc{{"aggregate", agg}, {"pairs", per_pair}};
            std::ofstream(out / "report.json") << doc.dump(2) << '\n';
            std::printf("EPE %.4f mm  Dice(MYO) %.4f  HD(MYO) %.3f mm  KPTE %.4f mm  (n=%zu)\n", agg.epe_mm.mean,
                        agg.myo.dice, agg.myo.hd_mm, agg.kpte_mm.mean, agg.n_samples);
            return 0;
        });
}

// ---- viz --------------------------------------------------------------------------

struct VizFlags {
    std::string config;
    std::optional<std::string> flow, out;
    std::optional<double> max_magnitude;
};

int cmd_viz(const VizFlags& f) {
    return guarded(
        [&] {
            json cfg = resolve({{"flow", ""}, {"out", ""}, {"max_magnitude", 0.0}}, f.config);
            override_with(cfg, "flow", f.flow);
            override_with(cfg, "out", f.out);
            override_with(cfg, "max_magnitude", f.max_magnitude);
            required_path(cfg, "flow");
            required_path(cfg, "out");
            if (cfg.at("max_magnitude").get<double>() < 0.0) throw ConfigError("max_magnitude must be >= 0");
            return cfg;
        },
        [&](const json& cfg) {
            const fs::path out = cfg.at("out").get<std::string>();
            const FlowField flow = read_flo(cfg.at("flow").get<std::string>());
            const double m = cfg.at("max_magnitude").get<double>();
            write_rgb_png(out, m > 0.0 ? flow_to_hsv(flow, m) : flow_to_hsv(flow));
            echo_config(out.has_parent_path() ? out.parent_path() : fs::path("."), "viz_config.json", cfg);
            return 0;
        });
}

}  // namespace

int main(int argc, char** argv) {
    retain_freed_memory();
    CLI::App app{"Motion pyramid network toolkit"};
    app.require_subcommand(1);

    GenFlags gen;
    auto* g = app.add_subcommand("gen", "Generate a phantom dataset");
    g->add_option("--config", gen.config, "JSON config file");
    g->add_option("--out", gen.out, "Output directory");
    g->add_option("--n", gen.n, "Number of pairs");
    g->add_option("--size", gen.size, "Image size (pixels)");
    g->add_option("--seed", gen.seed, "Seed");

    TrainFlags train;
    auto* t = app.add_subcommand("train", "Unsupervised training");
    t->add_option("--config", train.config, "JSON config file");
    t->add_option("--data", train.data, "Dataset directory");
    t->add_option("--out", train.out, "Output directory");
    t->add_option("--variant", train.variant, "pyramid | single_scale");
    t->add_option("--epochs", train.epochs, "Epochs to run");
    t->add_option("--lr", train.lr, "Learning rate");
    t->add_option("--seed", train.seed, "Seed");
    t->add_option("--resume", train.resume, "Checkpoint to continue from");

    InferFlags infer;
    auto* i = app.add_subcommand("infer", "Estimate the flow of one image pair");
    i->add_option("--config", infer.config, "JSON config file");
    i->add_option("--model", infer.model, "Checkpoint");
    i->add_option("--source", infer.source, "Source image");
    i->add_option("--target", infer.target, "Target image");
    i->add_option("--source-mask", infer.source_mask, "Optional source label mask to warp");
    i->add_option("--out", infer.out, "Output directory");
    i->add_option("--steps", infer.steps, "Progressive compensation steps (1 = single step)");
    i->add_option("--repeat", infer.repeat, "Repetitions averaged in the timing line");
    i->add_option("--hsv", infer.hsv, "Write the HSV flow image");

    DistillFlags distill;
    auto* d = app.add_subcommand("distill", "Cyclic teacher-student distillation");
    d->add_option("--config", distill.config, "JSON config file");
    d->add_option("--data", distill.data, "Dataset directory");
    d->add_option("--teacher", distill.teacher, "Teacher checkpoint");
    d->add_option("--out", distill.out, "Output checkpoint");
    d->add_option("--cycles", distill.cycles, "Number of cycles");
    d->add_option("--epochs-per-cycle", distill.epochs_per_cycle, "Epoch cap per cycle");
    d->add_option("--lr", distill.lr, "Learning rate");
    d->add_option("--val-fraction", distill.val_fraction, "Fraction of pairs held out for convergence checks");
    d->add_option("--seed", distill.seed, "Seed");

    EvalFlags eval;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    e->add_option("--config", eval.config, "JSON config file");
    e->add_option("--data", eval.data, "Dataset directory");
    e->add_option("--model", eval.model, "Checkpoint");
    e->add_option("--out", eval.out, "Output directory");
    e->add_option("--steps", eval.steps, "Progressive compensation steps");
    e->add_option("--threads", eval.threads, "Worker threads (0 = all cores)");
    e->add_option("--use-gt", eval.use_gt, "Evaluate the ground-truth flow instead of a model");

    VizFlags viz;
    auto* v = app.add_subcommand("viz", "Render a .flo file as an HSV image");
    v->add_option("--config", viz.config, "JSON config file");
    v->add_option("--flow", viz.flow, ".flo file");
    v->add_option("--out", viz.out, "Output PNG");
    v->add_option("--max-magnitude", viz.max_magnitude, "Magnitude mapped to full saturation (0 = field max)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kConfigError;
    }

    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(train);
    if (*i) return cmd_infer(infer);
    if (*d) return cmd_distill(distill);
    if (*e) return cmd_eval(eval);
    return cmd_viz(viz);
}
