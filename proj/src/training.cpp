#include "witu/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "witu/checkpoint.hpp"
#include "witu/errors.hpp"
#include "witu/rng.hpp"
#include "witu/tensor_io.hpp"
#include "witu/witunet.hpp"

namespace witu {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5348554646u;  // "SHUFF"
constexpr std::uint64_t kAugmentSalt = 0x4155474du;    // "AUGM"

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed ^ kShuffleSalt, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// [1,H,W] images -> [N,1,H,W].
Tensor stack(const std::vector<Tensor>& imgs) {
    const Dims& d = imgs.front().dims();
    Tensor out({imgs.size(), 1, d[1], d[2]});
    const std::size_t plane = imgs.front().numel();
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        require_dims(imgs[i].dims(), d, "batch image");
        std::copy(imgs[i].ptr(), imgs[i].ptr() + plane, out.ptr() + i * plane);
    }
    return out;
}

void require_single_channel(const Tensor& t, const std::string& what) {
    if (t.ndim() != 3 || t.dim(0) != 1) {
        throw ConfigError(what + ": expected a single-channel [1,H,W] image, got " + dims_to_string(t.dims()));
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << v;
    return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) out.push_back(f);
    return out;
}

// Rows of an earlier run's logs, kept up to the resume point.
void load_prior_log(const TrainPaths& paths, std::size_t upto_step, std::size_t upto_epoch, TrainLog& log) {
    std::ifstream steps(paths.steps_csv());
    std::string line;
    if (steps && std::getline(steps, line)) {
        while (std::getline(steps, line)) {
            auto f = split_csv(line);
            if (f.size() != 3) continue;
            StepRecord r{std::stoull(f[0]), std::stoull(f[1]), std::stod(f[2])};
            if (r.step <= upto_step) log.steps.push_back(r);
        }
    }
    std::ifstream epochs(paths.epochs_csv());
    if (epochs && std::getline(epochs, line)) {
        while (std::getline(epochs, line)) {
            auto f = split_csv(line);
            if (f.size() != 4) continue;
            EpochRecord r;
            r.epoch = std::stoull(f[0]);
            r.psnr = std::stod(f[1]);
            r.ssim = std::stod(f[2]);
            r.rmse = std::stod(f[3]);
            if (r.epoch < upto_epoch) log.epochs.push_back(r);
        }
    }
}

void write_logs(const TrainPaths& paths, const TrainLog& log) {
    write_file_atomic(paths.steps_csv(), log.steps_csv());
    write_file_atomic(paths.epochs_csv(), log.epochs_csv());
    write_file_atomic(paths.log_json(), log.to_json().dump(2) + "\n");
}

// Aborts with the step and the parameter carrying the largest |grad|.
void check_finite(double loss, const ParamStore<float>& store, std::size_t step) {
    const Parameter<float>* worst = nullptr;
    double worst_mag = -1;
    bool finite = std::isfinite(loss);
    for (const auto& p : store) {
        for (float g : p.grad.data()) {
            double mag = std::isfinite(g) ? std::fabs(g) : std::numeric_limits<double>::infinity();
            if (!std::isfinite(g)) finite = false;
            if (mag > worst_mag) {
                worst_mag = mag;
                worst = &p;
            }
        }
    }
    if (finite) return;
    std::ostringstream os;
    os << "non-finite " << (std::isfinite(loss) ? "gradient" : "loss") << " at step " << step << " (loss " << loss
       << "); largest gradient in '" << (worst ? worst->name : "?") << "' (|g| = " << worst_mag << ")";
    throw TrainingError(os.str());
}

}  // namespace

OptimConfig OptimConfig::desk() {
    OptimConfig c;
    c.epochs = 50;
    return c;
}

void OptimConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0,1)");
    if (!(eps > 0)) throw ConfigError("eps must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(max_grad_norm >= 0)) throw ConfigError("max_grad_norm must be >= 0");
}

nlohmann::json OptimConfig::to_json() const {
    return {{"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"weight_decay", weight_decay},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"max_grad_norm", max_grad_norm},
            {"cosine", cosine},
            {"max_steps", max_steps},
            {"augment", augment}};
}

OptimConfig OptimConfig::from_json(const nlohmann::json& j) {
    OptimConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.cosine = j.value("cosine", c.cosine);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.augment = j.value("augment", c.augment);
    c.validate();
    return c;
}

template <typename T>
void adamw_step(ParamStore<T>& store, const OptimConfig& cfg, double lr) {
    if (lr < 0) lr = cfg.lr;
    for (const auto& p : store) {
        if (!p.has_grad) throw StateError("adamw_step: parameter '" + p.name + "' has no gradient");
    }
    const std::size_t t = ++store.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& p : store) {
        if (p.m.empty()) p.m = BasicTensor<T>(p.value.dims());
        if (p.v.empty()) p.v = BasicTensor<T>(p.value.dims());
        const double decay = 1.0 - lr * cfg.weight_decay;
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i];
            const double m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            p.m[i] = static_cast<T>(m);
            p.v[i] = static_cast<T>(v);
            const double mhat = m / bc1, vhat = v / bc2;
            p.value[i] = static_cast<T>(p.value[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (!cfg.cosine || total_steps <= 1) return cfg.lr;
    const double frac = static_cast<double>(std::min(step, total_steps) - 1) / static_cast<double>(total_steps - 1);
    return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
double grad_norm(const ParamStore<T>& store) {
    double s = 0;
    for (const auto& p : store) {
        for (T g : p.grad.data()) s += static_cast<double>(g) * g;
    }
    return std::sqrt(s);
}

std::string TrainLog::steps_csv() const {
    std::ostringstream os;
    os << "step,epoch,loss\n";
    for (const auto& s : steps) os << s.step << ',' << s.epoch << ',' << fmt(s.loss) << '\n';
    return os.str();
}

std::string TrainLog::epochs_csv() const {
    std::ostringstream os;
    os << "epoch,psnr,ssim,rmse\n";
    for (const auto& e : epochs) os << e.epoch << ',' << fmt(e.psnr) << ',' << fmt(e.ssim) << ',' << fmt(e.rmse) << '\n';
    return os.str();
}

nlohmann::json TrainLog::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["init_seed"] = init_seed;
    j["seconds"] = seconds;
    j["best_psnr"] = best_psnr;
    j["steps"] = steps.size();
    auto& eps = j["epochs"] = nlohmann::json::array();
    for (const auto& e : epochs) {
        eps.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"psnr", e.psnr},
                       {"ssim", e.ssim},
                       {"rmse", e.rmse},
                       {"seconds", e.seconds}});
    }
    j["epoch_orders"] = epoch_orders;
    return j;
}

std::filesystem::path TrainPaths::best() const {
    auto p = checkpoint;
    return p.replace_filename(checkpoint.stem().string() + ".best.witu");
}
std::filesystem::path TrainPaths::steps_csv() const { return checkpoint.string() + ".steps.csv"; }
std::filesystem::path TrainPaths::epochs_csv() const { return checkpoint.string() + ".epochs.csv"; }
std::filesystem::path TrainPaths::log_json() const { return checkpoint.string() + ".log.json"; }

TrainLog train(const TrainRequest& req) {
    const auto t0 = Clock::now();
    NetConfig net = req.net;
    OptimConfig optim = req.optim;
    ParamStore<float> store;
    TrainLog log;
    nlohmann::json state;

    if (!req.resume.empty()) {
        Checkpoint ck = load_checkpoint(req.resume);
        net = ck.net;
        if (ck.train.contains("optim")) {
            optim = OptimConfig::from_json(ck.train["optim"]);
            optim.epochs = req.optim.epochs;
            optim.max_steps = req.optim.max_steps;
        }
        store = std::move(ck.params);
        log.init_seed = ck.train.value("init_seed", std::uint64_t{0});
        log.best_psnr = ck.train.value("best_psnr", -1.0);
    } else {
        log.init_seed = mix_seed(optim.seed, 0);
    }
    net.validate();
    optim.validate();
    if (req.resume.empty()) store = build_params<float>(net, {log.init_seed, true});
    log.seed = optim.seed;

    const data::Manifest manifest = data::read_manifest(req.manifest);
    if (auto dir = req.out.checkpoint.parent_path(); !dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    const auto train_entries = manifest.train();
    const auto test_entries = manifest.test();
    if (train_entries.empty()) throw ConfigError("manifest " + req.manifest.string() + " has no training pairs");
    std::vector<data::ImagePair> train_set;
    for (const auto& e : train_entries) {
        train_set.push_back(manifest.load(e));
        require_single_channel(train_set.back().ldct, train_set.back().tag);
    }

    const std::size_t n = train_set.size();
    const std::size_t per_epoch = (n + optim.batch_size - 1) / optim.batch_size;
    const std::size_t planned = optim.epochs * per_epoch;
    const std::size_t stop = optim.max_steps > 0 ? std::min(planned, optim.max_steps) : planned;
    if (!req.resume.empty()) load_prior_log(req.out, store.step, store.step / per_epoch, log);

    auto train_state = [&](std::size_t epoch) {
        return nlohmann::json{{"optim", optim.to_json()},
                              {"init_seed", log.init_seed},
                              {"best_psnr", log.best_psnr},
                              {"epoch", epoch}};
    };

    while (store.step < stop) {
        const std::size_t epoch = store.step / per_epoch;
        const auto order = epoch_order(optim.seed, epoch, n);
        log.epoch_orders.push_back(order);
        const auto epoch_t0 = Clock::now();
        std::size_t b = store.step % per_epoch;
        for (; b < per_epoch && store.step < stop; ++b) {
            const std::size_t step = store.step + 1;
            Rng aug_rng(mix_seed(optim.seed ^ kAugmentSalt, step));
            std::vector<Tensor> ys, xs;
            for (std::size_t i = b * optim.batch_size; i < std::min(n, (b + 1) * optim.batch_size); ++i) {
                data::ImagePair pair = train_set[order[i]];
                if (optim.augment) pair = data::augment(pair, aug_rng);
                ys.push_back(std::move(pair.ldct));
                xs.push_back(std::move(pair.fdct));
            }
            store.zero_grad();
            Tape<float> tape;
            Var y = tape.leaf(stack(ys));
            Var pred = forward(tape, y, store, net);
            Var loss = loss_mse(tape, pred, stack(xs));
            const double loss_value = tape.value(loss)[0];
            if (!std::isfinite(loss_value)) check_finite(loss_value, store, step);
            tape.backward(loss);
            check_finite(loss_value, store, step);
            if (optim.max_grad_norm > 0) {
                const double norm = grad_norm(store);
                if (norm > optim.max_grad_norm) {
                    const float s = static_cast<float>(optim.max_grad_norm / norm);
                    for (auto& p : store) {
                        for (auto& g : p.grad.storage()) g *= s;
                    }
                }
            }
            adamw_step(store, optim, scheduled_lr(optim, step, planned));
            log.steps.push_back({step, epoch, loss_value});
        }
        if (b < per_epoch) break;  // interrupted mid-epoch by max_steps

        EpochRecord rec;
        rec.epoch = epoch;
        double sum = 0;
        std::size_t count = 0;
        for (const auto& s : log.steps) {
            if (s.epoch == epoch) {
                sum += s.loss;
                ++count;
            }
        }
        rec.train_loss = count ? sum / count : 0;
        if (!test_entries.empty()) {
            Evaluation ev = evaluate(store, net, manifest, req.metric);
            rec.psnr = ev.model.psnr.mean;
            rec.ssim = ev.model.ssim.mean;
            rec.rmse = ev.model.rmse.mean;
        }
        rec.seconds = seconds_since(epoch_t0);
        log.epochs.push_back(rec);
        if (req.on_epoch) req.on_epoch(rec);
        if (!test_entries.empty() && rec.psnr > log.best_psnr) {
            log.best_psnr = rec.psnr;
            save_checkpoint(req.out.best(), net, store, train_state(epoch + 1));
        }
        log.seconds = seconds_since(t0);
        write_logs(req.out, log);
    }
    save_checkpoint(req.out.checkpoint, net, store, train_state(store.step / per_epoch));
    log.seconds = seconds_since(t0);
    write_logs(req.out, log);
    return log;
}

std::string Evaluation::csv() const {
    std::ostringstream os;
    os << "index,source,psnr,ssim,rmse\n";
    auto rows = [&](const metrics::MetricReport& r, const char* source) {
        for (std::size_t i = 0; i < r.per_image.size(); ++i) {
            const auto& m = r.per_image[i];
            os << i << ',' << source << ',' << fmt(m.psnr) << ',' << fmt(m.ssim) << ',' << fmt(m.rmse) << '\n';
        }
    };
    rows(model, "model");
    rows(baseline, "input-baseline");
    return os.str();
}

nlohmann::json Evaluation::summary() const {
    auto block = [](const metrics::Summary& s) {
        return nlohmann::json{{"mean", s.mean}, {"std", s.std},       {"min", s.min}, {"q1", s.q1},
                              {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
    };
    auto rep = [&](const metrics::MetricReport& r) {
        return nlohmann::json{{"psnr", block(r.psnr)}, {"ssim", block(r.ssim)}, {"rmse", block(r.rmse)}};
    };
    return {{"images", tags.size()}, {"model", rep(model)}, {"input-baseline", rep(baseline)}};
}

Evaluation evaluate(ParamStore<float>& store, const NetConfig& net, const data::Manifest& manifest,
                    const metrics::MetricConfig& cfg, const EvalOptions& opt) {
    const auto entries = opt.test_split ? manifest.test() : manifest.train();
    if (entries.empty()) {
        throw ConfigError("manifest has no " + std::string(opt.test_split ? "test" : "train") + " pairs");
    }
    auto hu = [&](const Tensor& t) { return opt.hounsfield ? data::denormalize(t, opt.lo, opt.hi) : t; };
    Evaluation ev;
    std::vector<metrics::ImageMetrics> model, baseline;
    for (const auto& e : entries) {
        data::ImagePair pair = manifest.load(e);
        require_single_channel(pair.ldct, pair.tag);
        const Tensor out = denoise(pair.ldct, store, net);
        const Tensor target = hu(pair.fdct);
        model.push_back(metrics::measure(hu(out), target, cfg));
        baseline.push_back(metrics::measure(hu(pair.ldct), target, cfg));
        ev.tags.push_back(pair.tag);
    }
    ev.model = metrics::report_from(std::move(model));
    ev.baseline = metrics::report_from(std::move(baseline));
    return ev;
}

template void adamw_step(ParamStore<float>&, const OptimConfig&, double);
template void adamw_step(ParamStore<double>&, const OptimConfig&, double);
template double grad_norm(const ParamStore<float>&);
template double grad_norm(const ParamStore<double>&);

}  // namespace witu
