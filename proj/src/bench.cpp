#include "witu/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "witu/errors.hpp"
#include "witu/rng.hpp"
#include "witu/window_ops.hpp"
#include "witu/wt_block.hpp"

namespace witu {

namespace {

template <typename F>
double median_seconds(F&& f, const BenchOptions& opt) {
    std::vector<double> times;
    double total = 0;
    while (times.size() < opt.max_repeats && (times.size() < 3 || total < opt.min_seconds)) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        times.push_back(dt);
        total += dt;
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

Tensor random_tensor(const Dims& dims, Rng& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor t(dims);
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

}  // namespace

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw PreconditionError("loglog_slope needs >= 2 paired points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0)) throw PreconditionError("loglog_slope needs positive values");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0) throw PreconditionError("loglog_slope needs distinct x values");
    return sxy / sxx;
}

BenchResult bench_attention(const BenchOptions& opt) {
    if (opt.sizes.size() < 2) throw ConfigError("bench needs at least two sizes");
    Rng rng(opt.seed);
    BlockOptions bo;
    bo.channels = opt.channels;
    bo.heads = 1;
    bo.window = opt.window;
    ParamStore<float> store;
    register_wt_block(store, "blk", bo, rng);

    BenchResult res;
    std::vector<double> hw, tw, tg;
    for (std::size_t n : opt.sizes) {
        BenchRow row;
        row.size = n;
        const auto flops = attention_flops(n, n, opt.channels, opt.window);
        row.flops_windowed = flops.windowed;
        row.flops_global = flops.global;

        const Tensor x = random_tensor({1, opt.channels, n, n}, rng);
        row.seconds_windowed = median_seconds(
            [&] {
                Tape<float> t(false);
                auto vars = bind_wt_block(t, store, "blk", bo);
                windowed_attention(t, t.leaf(x), vars.attn);
            },
            opt);

        const Tensor q = random_tensor({1, n * n, opt.channels}, rng);
        const Tensor k = random_tensor({1, n * n, opt.channels}, rng);
        const Tensor v = random_tensor({1, n * n, opt.channels}, rng);
        row.seconds_global = median_seconds([&] { global_attention_streaming(q, k, v); }, opt);

        hw.push_back(static_cast<double>(n * n));
        tw.push_back(row.seconds_windowed);
        tg.push_back(row.seconds_global);
        res.rows.push_back(row);
    }
    res.slope_windowed = loglog_slope(hw, tw);
    res.slope_global = loglog_slope(hw, tg);
    return res;
}

std::string BenchResult::table() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%6s %16s %16s %12s %12s %12s\n", "H=W", "flops_windowed", "flops_global",
                  "ratio", "t_windowed", "t_global");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%6zu %16llu %16llu %12.1f %12.6f %12.6f\n", r.size,
                      static_cast<unsigned long long>(r.flops_windowed),
                      static_cast<unsigned long long>(r.flops_global),
                      static_cast<double>(r.flops_global) / static_cast<double>(r.flops_windowed),
                      r.seconds_windowed, r.seconds_global);
        os << line;
    }
    std::snprintf(line, sizeof line, "log-log slope vs H*W: windowed %.3f, global %.3f\n", slope_windowed,
                  slope_global);
    os << line;
    return os.str();
}

}  // namespace witu
