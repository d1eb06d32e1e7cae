#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "witu/autograd.hpp"
#include "witu/data.hpp"
#include "witu/metrics.hpp"
#include "witu/net_config.hpp"
#include "witu/param_store.hpp"

namespace witu {

struct OptimConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    std::size_t epochs = 200;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    double max_grad_norm = 0;  // 0 disables clipping
    bool cosine = false;       // cosine decay of lr to 0 over the planned steps
    std::size_t max_steps = 0; // 0: run all epochs; otherwise stop once store.step reaches it
    bool augment = true;

    // 50 epochs, otherwise defaults.
    static OptimConfig desk();

    void validate() const;
    nlohmann::json to_json() const;
    static OptimConfig from_json(const nlohmann::json& j);
    bool operator==(const OptimConfig&) const = default;
};

// Mean squared error against a fixed target.
template <typename T>
Var loss_mse(Tape<T>& t, Var pred, const BasicTensor<T>& target) {
    return ag::mse_loss(t, pred, target);
}

// One decoupled-weight-decay Adam update using each parameter's grad.
// Increments store.step first and uses it as the bias-correction step t.
// lr overrides cfg.lr (schedules); negative means cfg.lr.
template <typename T>
void adamw_step(ParamStore<T>& store, const OptimConfig& cfg, double lr = -1);

// Learning rate for the 1-based step under cfg (constant or cosine).
double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps);

// Global L2 norm of all gradients, accumulated in double.
template <typename T>
double grad_norm(const ParamStore<T>& store);

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;  // mean step loss over the epoch
    double psnr = 0, ssim = 0, rmse = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<std::vector<std::size_t>> epoch_orders;  // shuffled train indices, per epoch in this run
    std::uint64_t seed = 0;
    std::uint64_t init_seed = 0;
    double seconds = 0;
    double best_psnr = -1;  // best validation PSNR so far (-1: none)

    std::string steps_csv() const;   // "step,epoch,loss"
    std::string epochs_csv() const;  // "epoch,psnr,ssim,rmse"
    nlohmann::json to_json() const;
};

struct TrainPaths {
    std::filesystem::path checkpoint;  // end-of-run checkpoint

    std::filesystem::path best() const;        // "<stem>.best.witu"
    std::filesystem::path steps_csv() const;   // "<checkpoint>.steps.csv"
    std::filesystem::path epochs_csv() const;  // "<checkpoint>.epochs.csv"
    std::filesystem::path log_json() const;    // "<checkpoint>.log.json"
};

struct TrainRequest {
    NetConfig net;
    OptimConfig optim;
    std::filesystem::path manifest;
    TrainPaths out;
    // When set, parameters, moments, step and net/optim settings that shape
    // the trajectory come from this checkpoint; epochs/max_steps from `optim`.
    std::filesystem::path resume;
    metrics::MetricConfig metric;
    // Called after each completed epoch (progress reporting).
    std::function<void(const EpochRecord&)> on_epoch;
};

// Shuffle -> augment -> forward -> MSE -> backward -> AdamW, validating on
// the test split after every epoch. Throws TrainingError on non-finite loss
// or gradient, naming the step and the parameter with the largest gradient.
TrainLog train(const TrainRequest& req);

struct Evaluation {
    std::vector<std::string> tags;
    metrics::MetricReport model;
    metrics::MetricReport baseline;  // raw LDCT vs FDCT

    // "index,source,psnr,ssim,rmse" with source model / input-baseline.
    std::string csv() const;
    nlohmann::json summary() const;
};

struct EvalOptions {
    bool test_split = true;  // false: evaluate the training pairs
    // Map estimate, input and target back to HU with [lo, hi] before measuring.
    bool hounsfield = false;
    double lo = data::kHuWindowLo;
    double hi = data::kHuWindowHi;
};

// Denoises every pair of the split and measures model and raw-input metrics
// against the clean target. Non single-channel images throw ConfigError.
Evaluation evaluate(ParamStore<float>& store, const NetConfig& net, const data::Manifest& manifest,
                    const metrics::MetricConfig& cfg, const EvalOptions& opt = {});

extern template void adamw_step(ParamStore<float>&, const OptimConfig&, double);
extern template void adamw_step(ParamStore<double>&, const OptimConfig&, double);
extern template double grad_norm(const ParamStore<float>&);
extern template double grad_norm(const ParamStore<double>&);

}  // namespace witu
