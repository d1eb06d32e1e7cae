#pragma once

// Straightforward reference implementations, written independently of the
// library kernels and accumulated in double.

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "witu/autograd.hpp"
#include "witu/window_ops.hpp"

namespace witu::test {

// Weights of one multi-head attention layer, fused over heads like the
// library (rows h*dk..(h+1)*dk of wq/wk/wv belong to head h).
struct AttentionWeights {
    std::size_t heads = 1;
    std::size_t window = 1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor table;  // [heads, 2M-1, 2M-1]; zeros for no bias

    static AttentionWeights random(std::size_t channels, std::size_t heads, std::size_t window, Rng& rng,
                                   bool with_bias_table = false) {
        AttentionWeights a;
        a.heads = heads;
        a.window = window;
        const double s = 1.0 / std::sqrt(double(channels));
        a.wq = random_tensor({channels, channels}, rng, -s, s);
        a.wk = random_tensor({channels, channels}, rng, -s, s);
        a.wv = random_tensor({channels, channels}, rng, -s, s);
        a.wo = random_tensor({channels, channels}, rng, -s, s);
        a.bq = random_tensor({channels}, rng, -0.1, 0.1);
        a.bk = random_tensor({channels}, rng, -0.1, 0.1);
        a.bv = random_tensor({channels}, rng, -0.1, 0.1);
        a.bo = random_tensor({channels}, rng, -0.1, 0.1);
        const std::size_t side = 2 * window - 1;
        a.table = with_bias_table ? random_tensor({heads, side, side}, rng, -1, 1) : Tensor({heads, side, side});
        return a;
    }

    AttentionVars leaves(Tape<float>& t) const {
        AttentionVars v;
        v.heads = heads;
        v.window = window;
        v.wq = t.leaf(wq);
        v.bq = t.leaf(bq);
        v.wk = t.leaf(wk);
        v.bk = t.leaf(bk);
        v.wv = t.leaf(wv);
        v.bv = t.leaf(bv);
        v.wo = t.leaf(wo);
        v.bo = t.leaf(bo);
        v.bias_table = t.leaf(table);
        return v;
    }
};

// y = W x + b for a row vector x.
inline std::vector<double> affine(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
    const std::size_t out = w.dim(0), in = w.dim(1);
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += double(w[o * in + i]) * x[i];
        y[o] = acc;
    }
    return y;
}

// Global multi-head self-attention over the tokens [T, C] of one sequence.
// When `grid` is non-zero the tokens are an M x M raster and the bias table
// is looked up by displacement (row_i - row_j + M - 1, col_i - col_j + M - 1).
// Tokens whose `valid` flag is false are excluded as keys.
inline Tensor mha_oracle(const Tensor& x, const AttentionWeights& a, bool use_table = false,
                         const std::vector<bool>& valid = {}) {
    const std::size_t n = x.dim(0), c = x.dim(1), dk = c / a.heads, m = a.window, side = 2 * m - 1;
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> row(x.ptr() + t * c, x.ptr() + (t + 1) * c);
        q[t] = affine(a.wq, a.bq, row);
        k[t] = affine(a.wk, a.bk, row);
        v[t] = affine(a.wv, a.bv, row);
    }
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> concat(c, 0.0);
        for (std::size_t h = 0; h < a.heads; ++h) {
            std::vector<double> score(n, -INFINITY);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                if (!valid.empty() && !valid[j]) continue;
                double s = 0;
                for (std::size_t d = 0; d < dk; ++d) s += q[i][h * dk + d] * k[j][h * dk + d];
                s /= std::sqrt(double(dk));
                if (use_table) {
                    const std::size_t r = i / m + m - 1 - j / m, col = i % m + m - 1 - j % m;
                    s += a.table[(h * side + r) * side + col];
                }
                score[j] = s;
                mx = std::max(mx, s);
            }
            double z = 0;
            for (std::size_t j = 0; j < n; ++j) {
                score[j] = std::isinf(score[j]) ? 0.0 : std::exp(score[j] - mx);
                z += score[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t d = 0; d < dk; ++d) concat[h * dk + d] += score[j] / z * v[j][h * dk + d];
        }
        auto y = affine(a.wo, a.bo, concat);
        for (std::size_t o = 0; o < c; ++o) out[i * c + o] = float(y[o]);
    }
    return out;
}

// Tokens of an N,C,H,W image with H = W = M, raster order: [H*W, C] for item n.
inline Tensor image_tokens(const Tensor& img, std::size_t n) {
    const std::size_t c = img.dim(1), hw = img.dim(2) * img.dim(3);
    Tensor t({hw, c});
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) t[p * c + ch] = img[(n * c + ch) * hw + p];
    return t;
}

inline double mse_oracle(const Tensor& x, const Tensor& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = double(x[i]) - double(y[i]);
        s += d * d;
    }
    return s / double(x.numel());
}

inline double psnr_oracle(const Tensor& x, const Tensor& y, double max) {
    return 10.0 * std::log10(max * max / mse_oracle(x, y));
}

inline double rmse_oracle(const Tensor& x, const Tensor& y) { return std::sqrt(mse_oracle(x, y)); }

// Whole-image SSIM with biased (1/N) statistics.
inline double ssim_oracle(const Tensor& x, const Tensor& y, double max) {
    const double n = double(x.numel());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    const double c1 = (0.01 * max) * (0.01 * max), c2 = (0.03 * max) * (0.03 * max);
    return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace witu::test
