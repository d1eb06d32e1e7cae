#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "witu/tensor.hpp"

namespace witu::metrics {

enum class SsimMode { global, windowed };

struct MetricConfig {
    double data_range = 1.0;  // MAX; for HU data use the window span
    double k1 = 0.01;
    double k2 = 0.03;
    SsimMode mode = SsimMode::global;
    std::size_t window = 11;  // windowed SSIM: Gaussian window side
    double sigma = 1.5;

    double c1() const { return (k1 * data_range) * (k1 * data_range); }
    double c2() const { return (k2 * data_range) * (k2 * data_range); }
    void validate() const;

    // MAX = 400, the span of the [-160, 240] HU display window.
    static MetricConfig hounsfield();
};

// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double mse(const Tensor& x, const Tensor& y);
double psnr(const Tensor& x, const Tensor& y, const MetricConfig& cfg = {});
// Global mode: Eq.-style SSIM from whole-image means, variances and
// covariance (biased). Windowed mode: mean SSIM map over Gaussian windows
// (valid region) of the last two axes.
double ssim(const Tensor& x, const Tensor& y, const MetricConfig& cfg = {});
double rmse(const Tensor& x, const Tensor& y);

struct Summary {
    double mean = 0, std = 0, min = 0, max = 0;
    double q1 = 0, median = 0, q3 = 0;
};

// Quantile of sorted values with linear interpolation at q*(n-1).
double quantile_sorted(const std::vector<double>& sorted, double q);
// Population standard deviation; quartiles by quantile_sorted.
Summary summarize(const std::vector<double>& values);

struct ImageMetrics {
    double psnr = 0, ssim = 0, rmse = 0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    Summary psnr, ssim, rmse;
};

ImageMetrics measure(const Tensor& estimate, const Tensor& target, const MetricConfig& cfg);
// Throws std::invalid_argument on an empty list.
MetricReport report(const std::vector<std::pair<Tensor, Tensor>>& pairs, const MetricConfig& cfg);
MetricReport report_from(std::vector<ImageMetrics> per_image);

}  // namespace witu::metrics
