#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "witu/bench.hpp"
#include "witu/checkpoint.hpp"
#include "witu/cli_config.hpp"
#include "witu/data.hpp"
#include "witu/errors.hpp"
#include "witu/gradcheck.hpp"
#include "witu/metrics.hpp"
#include "witu/tensor_io.hpp"
#include "witu/training.hpp"
#include "witu/witunet.hpp"

namespace fs = std::filesystem;
using namespace witu;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / data::kManifestName : p; }

struct MakeDataArgs {
    fs::path out;
    std::size_t n_train = 8, n_test = 2;
    data::PhantomSpec phantom;
    data::NoiseSpec noise{0.08, 0, 1};
};

struct TrainArgs {
    fs::path data, out, resume;
    std::string preset = "desk";
    NetConfig net = NetConfig::desk();
    OptimConfig optim = OptimConfig::desk();
    bool ablate_lipe = false, ablate_nested = false;
    double metric_max = 1.0;
    // Options whose value should survive a switch to the full preset.
    std::vector<std::pair<CLI::Option*, std::function<void(NetConfig&, OptimConfig&)>>> bound;
};

struct DenoiseArgs {
    fs::path checkpoint, input, output, pgm;
};

struct EvalArgs {
    fs::path checkpoint, data, csv, json;
    double metric_max = 1.0;
    bool hu = false;
    std::string ssim = "global";
    std::string split = "test";
};

struct GradcheckArgs {
    std::string precision = "both";
    std::string case_name;
    gradcheck::Options opt;
};

struct PgmArgs {
    fs::path input, output;
    double lo = 0.0, hi = 1.0;
};

template <typename V>
CLI::Option* bind(TrainArgs& a, CLI::App* app, const std::string& flag, V NetConfig::*field, const std::string& help) {
    auto* o = app->add_option(flag, a.net.*field, help);
    a.bound.emplace_back(o, [&a, field](NetConfig& n, OptimConfig&) { n.*field = a.net.*field; });
    return o;
}

template <typename V>
CLI::Option* bind(TrainArgs& a, CLI::App* app, const std::string& flag, V OptimConfig::*field, const std::string& help) {
    auto* o = app->add_option(flag, a.optim.*field, help);
    a.bound.emplace_back(o, [&a, field](NetConfig&, OptimConfig& p) { p.*field = a.optim.*field; });
    return o;
}

CLI::Option* bind_flag(TrainArgs& a, CLI::App* app, const std::string& flag, bool NetConfig::*field,
                       const std::string& help) {
    auto* o = app->add_flag(flag, a.net.*field, help);
    a.bound.emplace_back(o, [&a, field](NetConfig& n, OptimConfig&) { n.*field = a.net.*field; });
    return o;
}

CLI::Option* bind_flag(TrainArgs& a, CLI::App* app, const std::string& flag, bool OptimConfig::*field,
                       const std::string& help) {
    auto* o = app->add_flag(flag, a.optim.*field, help);
    a.bound.emplace_back(o, [&a, field](NetConfig&, OptimConfig& p) { p.*field = a.optim.*field; });
    return o;
}

int run_make_data(const MakeDataArgs& a) {
    const auto manifest = data::build_corpus(a.n_train, a.n_test, a.phantom, a.noise, a.out);
    std::printf("wrote %zu train + %zu test pairs, manifest %s\n", a.n_train, a.n_test, manifest.string().c_str());
    return kExitOk;
}

int run_train(TrainArgs& a) {
    if (a.preset == "full") {
        NetConfig net;
        OptimConfig optim;
        for (auto& [opt, copy] : a.bound) {
            if (opt->count() > 0) copy(net, optim);
        }
        a.net = net;
        a.optim = optim;
    }
    if (a.ablate_lipe) a.net.use_lipe = false;
    if (a.ablate_nested) a.net.use_nested = false;

    TrainRequest req;
    req.net = a.net;
    req.optim = a.optim;
    req.manifest = manifest_path(a.data);
    req.out.checkpoint = a.out;
    req.resume = a.resume;
    req.metric.data_range = a.metric_max;
    req.metric.validate();
    req.on_epoch = [](const EpochRecord& e) {
        std::printf("epoch %3zu  loss %.6g  psnr %.4f  ssim %.4f  rmse %.5f  (%.1fs)\n", e.epoch, e.train_loss,
                    e.psnr, e.ssim, e.rmse, e.seconds);
        std::fflush(stdout);
    };
    std::printf("net %s\noptim %s\n", a.net.to_json().dump().c_str(), a.optim.to_json().dump().c_str());
    const TrainLog log = train(req);
    const double first = log.steps.empty() ? 0 : log.steps.front().loss;
    const double last = log.steps.empty() ? 0 : log.steps.back().loss;
    std::printf("steps %zu  first loss %.6g  last loss %.6g  best psnr %.4f  %.1fs\n", log.steps.size(), first, last,
                log.best_psnr, log.seconds);
    std::printf("checkpoint %s\n", a.out.string().c_str());
    return kExitOk;
}

int run_denoise(const DenoiseArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    Tensor in = load_tensor(a.input);
    Tensor y = in;
    if (in.ndim() == 2) y = in.reshaped({1, in.dim(0), in.dim(1)});
    if (y.ndim() < 3 || y.dim(y.ndim() - 3) != 1) {
        throw ConfigError("denoise expects a single-channel image, got " + dims_to_string(in.dims()));
    }
    Tensor out = denoise(y, ck.params, ck.net).reshaped(in.dims());
    save_tensor(a.output, out);
    if (!a.pgm.empty()) write_file_atomic(a.pgm, encode_pgm(out));
    std::printf("denoised %s -> %s %s\n", a.input.string().c_str(), a.output.string().c_str(),
                dims_to_string(out.dims()).c_str());
    return kExitOk;
}

void print_summary(const char* label, const metrics::MetricReport& r) {
    std::printf("%-15s psnr %.4f +- %.4f  ssim %.4f +- %.4f  rmse %.5f +- %.5f\n", label, r.psnr.mean, r.psnr.std,
                r.ssim.mean, r.ssim.std, r.rmse.mean, r.rmse.std);
}

int run_eval(EvalArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const auto manifest = data::read_manifest(manifest_path(a.data));
    metrics::MetricConfig cfg;
    cfg.data_range = a.hu && a.metric_max == 1.0 ? 400.0 : a.metric_max;
    cfg.mode = a.ssim == "windowed" ? metrics::SsimMode::windowed : metrics::SsimMode::global;
    cfg.validate();
    EvalOptions opt;
    opt.test_split = a.split == "test";
    opt.hounsfield = a.hu;
    const Evaluation ev = evaluate(ck.params, ck.net, manifest, cfg, opt);
    if (a.csv.empty()) a.csv = a.checkpoint.string() + ".eval.csv";
    write_file_atomic(a.csv, ev.csv());
    auto summary = ev.summary();
    summary["metric_max"] = cfg.data_range;
    summary["split"] = a.split;
    if (!a.json.empty()) write_file_atomic(a.json, summary.dump(2) + "\n");
    print_summary("model", ev.model);
    print_summary("input-baseline", ev.baseline);
    std::printf("%s\n", summary.dump(2).c_str());
    std::printf("per-image csv %s\n", a.csv.string().c_str());
    return kExitOk;
}

int run_gradcheck(const GradcheckArgs& a) {
    std::vector<std::pair<std::string, std::vector<gradcheck::Result>>> runs;
    if (a.precision == "float" || a.precision == "both") {
        runs.emplace_back("f32", gradcheck::run_suite<float>(a.opt, a.case_name));
    }
    if (a.precision == "double" || a.precision == "both") {
        runs.emplace_back("f64", gradcheck::run_suite<double>(a.opt, a.case_name));
    }
    bool ok = true;
    std::printf("%-4s %-32s %7s %12s %9s  %s\n", "prec", "group", "checked", "max_rel_err", "tol", "status");
    for (const auto& [prec, results] : runs) {
        for (const auto& r : results) {
            ok = ok && r.passed();
            std::printf("%-4s %-32s %7zu %12.3e %9.1e  %s\n", prec.c_str(), r.group.c_str(), r.checked,
                        r.max_rel_error, r.tolerance, r.passed() ? "PASS" : "FAIL");
            if (!r.passed()) std::printf("     worst: %s\n", r.worst.c_str());
        }
    }
    if (!ok) {
        std::fprintf(stderr, "gradcheck FAILED\n");
        return kExitRuntime;
    }
    std::printf("gradcheck passed\n");
    return kExitOk;
}

int run_bench(const BenchOptions& opt) {
    const BenchResult r = bench_attention(opt);
    std::printf("%s", r.table().c_str());
    return kExitOk;
}

int run_pgm(const PgmArgs& a) {
    write_file_atomic(a.output, encode_pgm(load_tensor(a.input), a.lo, a.hi));
    std::printf("wrote %s\n", a.output.string().c_str());
    return kExitOk;
}

// Splits "--config FILE" / "--config=FILE" out of argv.
std::vector<std::string> extract_config(std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            out.push_back(args[++i]);
        } else if (args[i].starts_with("--config=")) {
            out.push_back(args[i].substr(9));
        } else {
            kept.push_back(args[i]);
        }
    }
    args = std::move(kept);
    return out;
}

std::vector<std::string> option_keys(const CLI::App* sub) {
    std::vector<std::string> keys;
    for (const auto* o : sub->get_options()) {
        if (!o->get_lnames().empty() && o->get_lnames().front() != "help" && !o->get_group().empty()) {
            keys.push_back(o->get_lnames().front());
        }
    }
    return keys;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Window-transformer U-net for low-dose CT denoising"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    // Config values are injected ahead of the real flags; the last one wins.
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_doc;
    app.add_option("--config", config_doc,
                   "flat 'key = value' file (keys are long flag names); flags on the command line take precedence");

    MakeDataArgs md;
    auto* c_md = app.add_subcommand("make-data", "generate a seeded synthetic phantom corpus");
    c_md->add_option("--out", md.out, "output directory")->required();
    c_md->add_option("--n-train", md.n_train, "training pairs")->check(CLI::PositiveNumber);
    c_md->add_option("--n-test", md.n_test, "held-out test pairs")->check(CLI::PositiveNumber);
    c_md->add_option("--size", md.phantom.size, "image side length")->check(CLI::Range(16, 4096));
    c_md->add_option("--seed", md.phantom.seed, "base seed of the phantoms");
    c_md->add_option("--min-ellipses", md.phantom.min_ellipses, "fewest ellipses per phantom");
    c_md->add_option("--max-ellipses", md.phantom.max_ellipses, "most ellipses per phantom");
    c_md->add_option("--sigma", md.noise.gaussian_sigma, "gaussian noise std (normalized units)");
    c_md->add_option("--photons", md.noise.poisson_photons, "photon count of the Poisson perturbation (0: off)");
    c_md->add_option("--noise-seed", md.noise.seed, "seed mixed into each image's noise stream");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train a model (defaults shown are the desk preset)");
    c_tr->add_option("--data", tr.data, "corpus manifest or directory")->required();
    c_tr->add_option("--out", tr.out, "checkpoint path (logs are written next to it)")->required();
    c_tr->add_option("--resume", tr.resume, "continue from this checkpoint");
    c_tr->add_option("--preset", tr.preset, "base hyperparameters")->check(CLI::IsMember({"desk", "full"}));
    bind(tr, c_tr, "--channels", &NetConfig::base_channels, "base width C");
    bind(tr, c_tr, "--depth", &NetConfig::depth, "downsampling depth D");
    bind(tr, c_tr, "--window", &NetConfig::window, "attention window M");
    bind(tr, c_tr, "--blocks", &NetConfig::blocks_per_level, "WT blocks per stack");
    bind(tr, c_tr, "--head-dim", &NetConfig::head_dim, "channels per attention head");
    bind(tr, c_tr, "--expansion", &NetConfig::lipe_expansion, "feed-forward expansion ratio");
    bind_flag(tr, c_tr, "--projection-after", &NetConfig::projection_after, "decoder projection after the blocks");
    bind_flag(tr, c_tr, "--depthwise-lipe", &NetConfig::depthwise_lipe, "depthwise 3x3 conv in LiPe");
    bind_flag(tr, c_tr, "--shared-bias-table", &NetConfig::shared_bias_table, "one bias table for all heads");
    c_tr->add_flag("--ablate-lipe", tr.ablate_lipe, "replace LiPe with an MLP feed-forward");
    c_tr->add_flag("--ablate-nested", tr.ablate_nested, "plain skips instead of the nested dense pathway");
    bind(tr, c_tr, "--lr", &OptimConfig::lr, "learning rate");
    bind(tr, c_tr, "--beta1", &OptimConfig::beta1, "AdamW beta1");
    bind(tr, c_tr, "--beta2", &OptimConfig::beta2, "AdamW beta2");
    bind(tr, c_tr, "--eps", &OptimConfig::eps, "AdamW epsilon");
    bind(tr, c_tr, "--weight-decay", &OptimConfig::weight_decay, "decoupled weight decay");
    bind(tr, c_tr, "--epochs", &OptimConfig::epochs, "epochs");
    bind(tr, c_tr, "--batch-size", &OptimConfig::batch_size, "images per step");
    bind(tr, c_tr, "--seed", &OptimConfig::seed, "seed for init, shuffling and augmentation");
    bind(tr, c_tr, "--max-grad-norm", &OptimConfig::max_grad_norm, "global gradient clipping (0: off)");
    bind(tr, c_tr, "--max-steps", &OptimConfig::max_steps, "stop after this many total steps (0: all epochs)");
    bind_flag(tr, c_tr, "--cosine", &OptimConfig::cosine, "cosine learning-rate decay");
    bind_flag(tr, c_tr, "--augment", &OptimConfig::augment, "random rotations/flips (--augment=false to disable)");
    c_tr->add_option("--metric-max", tr.metric_max, "PSNR/SSIM data range for validation");

    DenoiseArgs dn;
    auto* c_dn = app.add_subcommand("denoise", "denoise one WTEN image");
    c_dn->add_option("--checkpoint", dn.checkpoint, "model checkpoint")->required();
    c_dn->add_option("--input", dn.input, "noisy WTEN image")->required();
    c_dn->add_option("--output", dn.output, "denoised WTEN image")->required();
    c_dn->add_option("--pgm", dn.pgm, "also write the result as 8-bit PGM");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "evaluate a checkpoint against a corpus split");
    c_ev->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
    c_ev->add_option("--data", ev.data, "corpus manifest or directory")->required();
    c_ev->add_option("--csv", ev.csv, "per-image CSV (default <checkpoint>.eval.csv)");
    c_ev->add_option("--json", ev.json, "aggregate summary JSON");
    c_ev->add_option("--metric-max", ev.metric_max, "PSNR/SSIM data range MAX");
    c_ev->add_flag("--hu", ev.hu, "measure in HU after mapping [0,1] back to [-160,240] (MAX 400 unless set)");
    c_ev->add_option("--ssim", ev.ssim, "SSIM statistics")->check(CLI::IsMember({"global", "windowed"}));
    c_ev->add_option("--split", ev.split, "corpus split")->check(CLI::IsMember({"test", "train"}));

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient checks per parameter group");
    c_gc->add_option("--precision", gc.precision, "float, double or both")
        ->check(CLI::IsMember({"float", "double", "both"}));
    std::string case_help = "single case:";
    for (const auto& c : gradcheck::cases()) case_help += " " + c.name;
    c_gc->add_option("--case", gc.case_name, case_help);
    c_gc->add_option("--samples", gc.opt.samples, "minimum coordinates per group")->check(CLI::PositiveNumber);
    c_gc->add_option("--seed", gc.opt.seed, "sampling and data seed");
    c_gc->add_option("--fault-op", gc.opt.fault_op, "negate this op's backward (detector test)")->group("");

    BenchOptions bo;
    auto* c_be = app.add_subcommand("bench", "windowed vs global attention FLOPs and timings");
    c_be->add_option("--sizes", bo.sizes, "square image sides")->delimiter(',');
    c_be->add_option("--window", bo.window, "window M")->check(CLI::PositiveNumber);
    c_be->add_option("--channels", bo.channels, "token channels")->check(CLI::PositiveNumber);
    c_be->add_option("--seed", bo.seed, "data seed");
    c_be->add_option("--min-seconds", bo.min_seconds, "minimum timed duration per measurement");

    PgmArgs pg;
    auto* c_pg = app.add_subcommand("export-pgm", "write a WTEN image as 8-bit PGM");
    c_pg->add_option("--input", pg.input, "WTEN image")->required();
    c_pg->add_option("--output", pg.output, "PGM path")->required();
    c_pg->add_option("--lo", pg.lo, "value mapped to black");
    c_pg->add_option("--hi", pg.hi, "value mapped to white");

    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> final_args;
    try {
        const auto configs = extract_config(args);
        if (configs.size() > 1) throw ConfigError("--config given more than once");
        if (!configs.empty()) {
            CLI::App* sub = nullptr;
            std::size_t sub_pos = 0;
            for (; sub_pos < args.size(); ++sub_pos) {
                for (auto* s : app.get_subcommands([](const CLI::App*) { return true; })) {
                    if (s->get_name() == args[sub_pos]) sub = s;
                }
                if (sub) break;
            }
            if (!sub) throw ConfigError("--config needs a subcommand");
            auto entries = parse_config_text(read_file(configs.front()));
            require_known_keys(entries, option_keys(sub));
            std::vector<std::string> injected;
            for (const auto& e : entries) {
                bool overridden = false;
                for (const auto& a : args) overridden = overridden || a == "--" + e.key || a.starts_with("--" + e.key + "=");
                std::fprintf(stderr, "config: %s = %s%s\n", e.key.c_str(), e.value.c_str(),
                             overridden ? " (overridden by command-line flag)" : "");
                injected.push_back("--" + e.key + "=" + e.value);
            }
            args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(), injected.end());
        }
        final_args = args;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }

    try {
        std::vector<std::string> reversed(final_args.rbegin(), final_args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_md->parsed()) return run_make_data(md);
        if (c_tr->parsed()) return run_train(tr);
        if (c_dn->parsed()) return run_denoise(dn);
        if (c_ev->parsed()) return run_eval(ev);
        if (c_gc->parsed()) return run_gradcheck(gc);
        if (c_be->parsed()) return run_bench(bo);
        if (c_pg->parsed()) return run_pgm(pg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
