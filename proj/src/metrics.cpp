#include "witu/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace witu::metrics {

namespace {

void require_same(const Tensor& x, const Tensor& y, const char* what) {
    if (x.dims() != y.dims()) {
        throw ShapeError(std::string(what) + ": image dims differ " + dims_to_string(x.dims()) +
                         " vs " + dims_to_string(y.dims()));
    }
    if (x.numel() == 0) throw ShapeError(std::string(what) + ": empty image");
}

double ssim_from_stats(double mx, double my, double vx, double vy, double cov, double c1, double c2) {
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double global_ssim(const Tensor& x, const Tensor& y, const MetricConfig& cfg) {
    const double n = static_cast<double>(x.numel());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cov = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    return ssim_from_stats(mx, my, vx / n, vy / n, cov / n, cfg.c1(), cfg.c2());
}

double windowed_ssim(const Tensor& x, const Tensor& y, const MetricConfig& cfg) {
    if (x.ndim() < 2) throw ShapeError("windowed ssim needs at least 2 axes");
    const std::size_t h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
    const std::size_t planes = x.numel() / (h * w);
    const std::size_t win = cfg.window;
    if (win > h || win > w) {
        throw ShapeError("windowed ssim: window " + std::to_string(win) + " larger than image");
    }
    std::vector<double> kernel(win * win);
    const double r = (static_cast<double>(win) - 1) / 2;
    double ksum = 0;
    for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
            const double di = i - r, dj = j - r;
            kernel[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * cfg.sigma * cfg.sigma));
            ksum += kernel[i * win + j];
        }
    }
    for (auto& k : kernel) k /= ksum;
    double total = 0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* xp = x.ptr() + p * h * w;
        const float* yp = y.ptr() + p * h * w;
        for (std::size_t i0 = 0; i0 + win <= h; ++i0) {
            for (std::size_t j0 = 0; j0 + win <= w; ++j0) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (std::size_t i = 0; i < win; ++i) {
                    for (std::size_t j = 0; j < win; ++j) {
                        const double k = kernel[i * win + j];
                        const double a = xp[(i0 + i) * w + j0 + j], b = yp[(i0 + i) * w + j0 + j];
                        mx += k * a;
                        my += k * b;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                total += ssim_from_stats(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my,
                                         cfg.c1(), cfg.c2());
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace

void MetricConfig::validate() const {
    if (!(data_range > 0)) throw ConfigError("metric data range (MAX) must be positive");
    if (!(k1 > 0) || !(k2 > 0)) throw ConfigError("SSIM constants must be positive");
    if (mode == SsimMode::windowed && (window == 0 || !(sigma > 0))) {
        throw ConfigError("windowed SSIM needs window >= 1 and sigma > 0");
    }
}

MetricConfig MetricConfig::hounsfield() {
    MetricConfig c;
    c.data_range = 400.0;
    return c;
}

double mse(const Tensor& x, const Tensor& y) {
    require_same(x, y, "mse");
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

double psnr(const Tensor& x, const Tensor& y, const MetricConfig& cfg) {
    cfg.validate();
    const double e = mse(x, y);
    if (e == 0) return kPsnrIdentical;
    return 10.0 * std::log10(cfg.data_range * cfg.data_range / e);
}

double ssim(const Tensor& x, const Tensor& y, const MetricConfig& cfg) {
    cfg.validate();
    require_same(x, y, "ssim");
    return cfg.mode == SsimMode::global ? global_ssim(x, y, cfg) : windowed_ssim(x, y, cfg);
}

double rmse(const Tensor& x, const Tensor& y) { return std::sqrt(mse(x, y)); }

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile of empty list");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("summarize: empty list");
    Summary s;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (sorted.front() == sorted.back()) {
        s.std = 0;  // also covers an all-infinite PSNR list
    } else {
        double var = 0;
        for (double v : values) var += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(var / static_cast<double>(values.size()));
    }
    s.min = sorted.front();
    s.max = sorted.back();
    s.q1 = quantile_sorted(sorted, 0.25);
    s.median = quantile_sorted(sorted, 0.5);
    s.q3 = quantile_sorted(sorted, 0.75);
    return s;
}

ImageMetrics measure(const Tensor& estimate, const Tensor& target, const MetricConfig& cfg) {
    return {psnr(estimate, target, cfg), ssim(estimate, target, cfg), rmse(estimate, target)};
}

MetricReport report_from(std::vector<ImageMetrics> per_image) {
    if (per_image.empty()) throw std::invalid_argument("metric report needs at least one image pair");
    MetricReport r;
    std::vector<double> p, s, e;
    for (const auto& m : per_image) {
        p.push_back(m.psnr);
        s.push_back(m.ssim);
        e.push_back(m.rmse);
    }
    r.per_image = std::move(per_image);
    r.psnr = summarize(p);
    r.ssim = summarize(s);
    r.rmse = summarize(e);
    return r;
}

MetricReport report(const std::vector<std::pair<Tensor, Tensor>>& pairs, const MetricConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("metric report needs at least one image pair");
    std::vector<ImageMetrics> per;
    for (const auto& [est, tgt] : pairs) per.push_back(measure(est, tgt, cfg));
    return report_from(std::move(per));
}

}  // namespace witu::metrics
