#include "witu/window_ops.hpp"

#include <algorithm>
#include <cmath>

namespace witu {

WindowGrid WindowGrid::make(std::size_t height, std::size_t width, std::size_t window) {
    if (window == 0) throw ConfigError("window size must be positive");
    if (height % window || width % window) {
        throw PreconditionError("window partition: extent " + std::to_string(height) + "x" +
                                std::to_string(width) + " is not divisible by window " +
                                std::to_string(window) +
                                "; zero-pad bottom/right to a multiple of the window first");
    }
    return WindowGrid{window, height, width};
}

template <typename T>
BasicTensor<T> window_partition(const BasicTensor<T>& x, std::size_t window) {
    if (x.ndim() != 4) {
        throw ShapeError("window_partition: expected N,C,H,W, got " + dims_to_string(x.dims()));
    }
    const std::size_t n_b = x.dim(0), c_n = x.dim(1);
    auto grid = WindowGrid::make(x.dim(2), x.dim(3), window);
    const std::size_t nw = grid.count(), tok = grid.tokens(), h = grid.height, w = grid.width;
    BasicTensor<T> y({n_b * nw, tok, c_n});
    for (std::size_t n = 0; n < n_b; ++n) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* plane = x.ptr() + (n * c_n + c) * h * w;
            for (std::size_t wi = 0; wi < nw; ++wi) {
                auto [r0, c0] = grid.origin(wi);
                T* dst = y.ptr() + (n * nw + wi) * tok * c_n + c;
                for (std::size_t i = 0; i < window; ++i) {
                    const T* src = plane + (r0 + i) * w + c0;
                    for (std::size_t j = 0; j < window; ++j) dst[(i * window + j) * c_n] = src[j];
                }
            }
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> window_merge(const BasicTensor<T>& tokens, std::size_t window, std::size_t height,
                            std::size_t width) {
    auto grid = WindowGrid::make(height, width, window);
    if (tokens.ndim() != 3 || tokens.dim(1) != grid.tokens() || tokens.dim(0) % grid.count()) {
        throw ShapeError("window_merge: tokens " + dims_to_string(tokens.dims()) +
                         " inconsistent with " + std::to_string(height) + "x" +
                         std::to_string(width) + " map and window " + std::to_string(window));
    }
    const std::size_t nw = grid.count(), tok = grid.tokens(), c_n = tokens.dim(2);
    const std::size_t n_b = tokens.dim(0) / nw;
    BasicTensor<T> y({n_b, c_n, height, width});
    for (std::size_t n = 0; n < n_b; ++n) {
        for (std::size_t c = 0; c < c_n; ++c) {
            T* plane = y.ptr() + (n * c_n + c) * height * width;
            for (std::size_t wi = 0; wi < nw; ++wi) {
                auto [r0, c0] = grid.origin(wi);
                const T* src = tokens.ptr() + (n * nw + wi) * tok * c_n + c;
                for (std::size_t i = 0; i < window; ++i) {
                    T* dst = plane + (r0 + i) * width + c0;
                    for (std::size_t j = 0; j < window; ++j) dst[j] = src[(i * window + j) * c_n];
                }
            }
        }
    }
    return y;
}

RelativePositionIndex relative_position_index(std::size_t window) {
    if (window == 0) throw ConfigError("relative_position_index: window must be >= 1");
    RelativePositionIndex idx;
    idx.window = window;
    const std::size_t tok = window * window;
    idx.cells.reserve(tok * tok);
    for (std::size_t i = 0; i < tok; ++i) {
        for (std::size_t j = 0; j < tok; ++j) {
            const std::size_t dr = i / window + window - 1 - j / window;
            const std::size_t dc = i % window + window - 1 - j % window;
            idx.cells.emplace_back(static_cast<std::uint32_t>(dr), static_cast<std::uint32_t>(dc));
        }
    }
    return idx;
}

KeyMask padding_mask(const WindowGrid& grid, std::size_t valid_h, std::size_t valid_w) {
    KeyMask mask;
    if (valid_h >= grid.height && valid_w >= grid.width) return mask;
    mask.windows = grid.count();
    mask.padded.assign(grid.count() * grid.tokens(), 0);
    for (std::size_t wi = 0; wi < grid.count(); ++wi) {
        auto [r0, c0] = grid.origin(wi);
        for (std::size_t t = 0; t < grid.tokens(); ++t) {
            const std::size_t r = r0 + t / grid.window, c = c0 + t % grid.window;
            mask.padded[wi * grid.tokens() + t] = (r >= valid_h || c >= valid_w) ? 1 : 0;
        }
    }
    return mask;
}

namespace ag {

namespace {

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// [B, T, h, dk] <-> [B, h, T, dk]
template <typename T>
BasicTensor<T> swap_axes_1_2(const BasicTensor<T>& x) {
    const std::size_t b_n = x.dim(0), a = x.dim(1), c = x.dim(2), d = x.dim(3);
    BasicTensor<T> y({b_n, c, a, d});
    for (std::size_t b = 0; b < b_n; ++b) {
        for (std::size_t i = 0; i < a; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                std::copy_n(x.ptr() + ((b * a + i) * c + j) * d, d, y.ptr() + ((b * c + j) * a + i) * d);
            }
        }
    }
    return y;
}

}  // namespace

template <typename T>
Var window_partition(Tape<T>& t, Var x, std::size_t window) {
    const std::size_t h = t.value(x).dim(2), w = t.value(x).dim(3);
    return t.record("window_partition", witu::window_partition(t.value(x), window), {x},
                    [x, window, h, w](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(x), witu::window_merge(tp.grad(Var{self}), window, h, w));
                    });
}

template <typename T>
Var window_merge(Tape<T>& t, Var tokens, std::size_t window, std::size_t height, std::size_t width) {
    return t.record("window_merge", witu::window_merge(t.value(tokens), window, height, width),
                    {tokens}, [tokens, window](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(tokens),
                                   witu::window_partition(tp.grad(Var{self}), window));
                    });
}

template <typename T>
Var split_heads(Tape<T>& t, Var x, std::size_t heads) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 3) throw ShapeError("split_heads: expected [B,T,C]");
    if (heads == 0 || xv.dim(2) % heads) {
        throw ConfigError("split_heads: channels " + std::to_string(xv.dim(2)) +
                          " not divisible by head count " + std::to_string(heads));
    }
    const std::size_t dk = xv.dim(2) / heads;
    auto y = swap_axes_1_2(xv.reshaped({xv.dim(0), xv.dim(1), heads, dk}));
    return t.record("split_heads", std::move(y), {x}, [x](Tape<T>& tp, std::size_t self) {
        auto& gx = tp.grad_slot(x);
        auto g = swap_axes_1_2(tp.grad(Var{self}));
        accumulate(gx, g);
    });
}

template <typename T>
Var merge_heads(Tape<T>& t, Var x) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 4) throw ShapeError("merge_heads: expected [B,h,T,dk]");
    const std::size_t b_n = xv.dim(0), h = xv.dim(1), tok = xv.dim(2), dk = xv.dim(3);
    auto y = swap_axes_1_2(xv).reshaped({b_n, tok, h * dk});
    return t.record("merge_heads", std::move(y), {x}, [x, b_n, h, tok, dk](Tape<T>& tp, std::size_t self) {
        auto g = swap_axes_1_2(tp.grad(Var{self}).reshaped({b_n, tok, h, dk}));
        accumulate(tp.grad_slot(x), g);
    });
}

template <typename T>
Var add_position_bias(Tape<T>& t, Var scores, Var table, const RelativePositionIndex& index,
                      const KeyMask& mask) {
    const auto& s = t.value(scores);
    const auto& tb = t.value(table);
    const std::size_t tok = index.window * index.window, side = index.table_side();
    if (s.ndim() != 4 || s.dim(2) != tok || s.dim(3) != tok) {
        throw ShapeError("add_position_bias: scores " + dims_to_string(s.dims()) +
                         " do not match window " + std::to_string(index.window));
    }
    const std::size_t b_n = s.dim(0), heads = s.dim(1);
    if (tb.ndim() != 3 || tb.dim(1) != side || tb.dim(2) != side ||
        (tb.dim(0) != heads && tb.dim(0) != 1)) {
        throw ShapeError("add_position_bias: bias table " + dims_to_string(tb.dims()) +
                         " must be [heads or 1, 2M-1, 2M-1]");
    }
    if (!mask.empty() && mask.padded.size() != mask.windows * tok) {
        throw ShapeError("add_position_bias: mask size mismatch");
    }
    const bool shared = tb.dim(0) == 1 && heads != 1;
    const std::size_t plane = side * side;
    std::vector<std::size_t> flat(tok * tok);
    for (std::size_t i = 0; i < tok; ++i) {
        for (std::size_t j = 0; j < tok; ++j) flat[i * tok + j] = index.flat(i, j);
    }
    BasicTensor<T> y = s;
    for (std::size_t b = 0; b < b_n; ++b) {
        const std::uint8_t* m =
            mask.empty() ? nullptr : mask.padded.data() + (b % mask.windows) * tok;
        for (std::size_t h = 0; h < heads; ++h) {
            const T* tab = tb.ptr() + (shared ? 0 : h) * plane;
            T* row = y.ptr() + (b * heads + h) * tok * tok;
            for (std::size_t i = 0; i < tok; ++i) {
                for (std::size_t j = 0; j < tok; ++j) {
                    row[i * tok + j] += tab[flat[i * tok + j]];
                    if (m && m[j]) row[i * tok + j] += static_cast<T>(kMaskedLogit);
                }
            }
        }
    }
    return t.record("add_position_bias", std::move(y), {scores, table},
                    [scores, table, flat, shared, b_n, heads, tok, plane](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.grad(Var{self});
                        if (tp.requires_grad(scores)) accumulate(tp.grad_slot(scores), g);
                        if (!tp.requires_grad(table)) return;
                        auto& gt = tp.grad_slot(table);
                        for (std::size_t b = 0; b < b_n; ++b) {
                            for (std::size_t h = 0; h < heads; ++h) {
                                T* gtab = gt.ptr() + (shared ? 0 : h) * plane;
                                const T* row = g.ptr() + (b * heads + h) * tok * tok;
                                for (std::size_t k = 0; k < tok * tok; ++k) gtab[flat[k]] += row[k];
                            }
                        }
                    });
}

}  // namespace ag

template <typename T>
Var w_msa(Tape<T>& t, Var tokens, const AttentionVars& p, const KeyMask& mask) {
    const auto& x = t.value(tokens);
    if (x.ndim() != 3) throw ShapeError("w_msa: tokens must be [B, M*M, C]");
    const std::size_t c_n = x.dim(2);
    if (p.heads == 0 || c_n % p.heads) {
        throw ConfigError("w_msa: channels " + std::to_string(c_n) +
                          " not divisible by head count " + std::to_string(p.heads));
    }
    if (x.dim(1) != p.window * p.window) {
        throw ShapeError("w_msa: token count " + std::to_string(x.dim(1)) + " != window^2 " +
                         std::to_string(p.window * p.window));
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(c_n / p.heads));
    Var q = ag::split_heads(t, ag::linear(t, tokens, p.wq, p.bq), p.heads);
    Var k = ag::split_heads(t, ag::linear(t, tokens, p.wk, p.bk), p.heads);
    Var v = ag::split_heads(t, ag::linear(t, tokens, p.wv, p.bv), p.heads);
    Var scores = ag::scale(t, ag::matmul(t, q, k, true), inv_sqrt_dk);
    scores = ag::add_position_bias(t, scores, p.bias_table, relative_position_index(p.window), mask);
    Var attn = ag::softmax(t, scores);
    Var heads_out = ag::matmul(t, attn, v, false);
    return ag::linear(t, ag::merge_heads(t, heads_out), p.wo, p.bo);
}

template <typename T>
Var windowed_attention(Tape<T>& t, Var x, const AttentionVars& p) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 4) throw ShapeError("windowed_attention: expected N,C,H,W");
    const std::size_t h = xv.dim(2), w = xv.dim(3), m = p.window;
    const std::size_t ph = (m - h % m) % m, pw = (m - w % m) % m;
    auto grid = WindowGrid::make(h + ph, w + pw, m);
    Var padded = ag::pad_hw(t, x, ph, pw);
    Var tokens = ag::window_partition(t, padded, m);
    Var out = w_msa(t, tokens, p, padding_mask(grid, h, w));
    Var merged = ag::window_merge(t, out, m, grid.height, grid.width);
    return ag::crop_hw(t, merged, h, w);
}

AttentionFlops attention_flops(std::uint64_t height, std::uint64_t width, std::uint64_t channels,
                               std::uint64_t window) {
    if (!height || !width || !channels || !window) {
        throw ConfigError("attention_flops: extents must be positive");
    }
    const std::uint64_t hw = height * width;
    return {2 * window * window * hw * channels, 2 * hw * hw * channels};
}

Tensor global_attention_streaming(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.ndim() != 3 || q.dims() != k.dims() || q.dims() != v.dims()) {
        throw ShapeError("global_attention_streaming: q, k, v must share [N, T, C]");
    }
    const std::size_t n_b = q.dim(0), tok = q.dim(1), c_n = q.dim(2);
    const float scale = 1.0f / std::sqrt(static_cast<float>(c_n));
    Tensor out(q.dims());
    std::vector<float> row(tok);
    for (std::size_t b = 0; b < n_b; ++b) {
        const float* Q = q.ptr() + b * tok * c_n;
        const float* K = k.ptr() + b * tok * c_n;
        const float* V = v.ptr() + b * tok * c_n;
        for (std::size_t i = 0; i < tok; ++i) {
            const float* qi = Q + i * c_n;
            float mx = -INFINITY;
            for (std::size_t j = 0; j < tok; ++j) {
                const float* kj = K + j * c_n;
                float acc = 0;
                for (std::size_t c = 0; c < c_n; ++c) acc += qi[c] * kj[c];
                row[j] = acc * scale;
                mx = std::max(mx, row[j]);
            }
            float sum = 0;
            for (std::size_t j = 0; j < tok; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            float* oi = out.ptr() + (b * tok + i) * c_n;
            for (std::size_t j = 0; j < tok; ++j) {
                const float a = row[j] / sum;
                const float* vj = V + j * c_n;
                for (std::size_t c = 0; c < c_n; ++c) oi[c] += a * vj[c];
            }
        }
    }
    return out;
}

#define WITU_INSTANTIATE_WINDOW(T)                                                             \
    template BasicTensor<T> window_partition(const BasicTensor<T>&, std::size_t);              \
    template BasicTensor<T> window_merge(const BasicTensor<T>&, std::size_t, std::size_t,      \
                                         std::size_t);                                         \
    template Var ag::window_partition(Tape<T>&, Var, std::size_t);                             \
    template Var ag::window_merge(Tape<T>&, Var, std::size_t, std::size_t, std::size_t);       \
    template Var ag::split_heads(Tape<T>&, Var, std::size_t);                                  \
    template Var ag::merge_heads(Tape<T>&, Var);                                               \
    template Var ag::add_position_bias(Tape<T>&, Var, Var, const RelativePositionIndex&,       \
                                       const KeyMask&);                                        \
    template Var w_msa(Tape<T>&, Var, const AttentionVars&, const KeyMask&);                   \
    template Var windowed_attention(Tape<T>&, Var, const AttentionVars&);

WITU_INSTANTIATE_WINDOW(float)
WITU_INSTANTIATE_WINDOW(double)

#undef WITU_INSTANTIATE_WINDOW

}  // namespace witu
