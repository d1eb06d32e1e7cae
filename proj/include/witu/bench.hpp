#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace witu {

struct BenchOptions {
    std::vector<std::size_t> sizes{32, 64, 128};  // square H = W
    std::size_t channels = 16;
    std::size_t window = 8;
    std::uint64_t seed = 0;
    double min_seconds = 0.2;  // per measurement, repeated until reached
    std::size_t max_repeats = 50;
};

struct BenchRow {
    std::size_t size = 0;
    std::uint64_t flops_windowed = 0;
    std::uint64_t flops_global = 0;
    double seconds_windowed = 0;  // median per call
    double seconds_global = 0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    double slope_windowed = 0;  // d log t / d log (H*W)
    double slope_global = 0;

    std::string table() const;
};

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Times single-head windowed attention (window partition, projections,
// per-window softmax attention, merge) against the streaming global
// reference on the same tokens.
BenchResult bench_attention(const BenchOptions& opt);

}  // namespace witu
