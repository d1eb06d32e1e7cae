#include "witu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace witu::ops {

namespace {

std::string axis_msg(const char* op, const char* axis, std::size_t expected, std::size_t got) {
    return std::string(op) + ": " + axis + " mismatch (expected " + std::to_string(expected) +
           ", got " + std::to_string(got) + ")";
}

template <typename T>
BasicTensor<T>& ensure_grad(BasicTensor<T>* g, const Dims& dims) {
    if (g->empty()) *g = BasicTensor<T>(dims);
    require_dims(g->dims(), dims, "gradient buffer");
    return *g;
}

// Output columns [lo, hi) whose input column ow*stride - pad + k lies in [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                std::size_t pad, std::size_t k) {
    long long lo_num = static_cast<long long>(pad) - static_cast<long long>(k);
    long long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long long>(stride) - 1) / stride;
    long long hi_num = static_cast<long long>(in) - 1 + static_cast<long long>(pad) -
                       static_cast<long long>(k);
    long long hi = hi_num < 0 ? 0 : hi_num / static_cast<long long>(stride) + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check_conv_shapes(const Dims& x, const Dims& w, const Dims& b, const ConvSpec& spec) {
    if (x.size() != 4) throw ShapeError("conv2d: input must be N,C,H,W, got " + dims_to_string(x));
    if (spec.groups == 0 || spec.in_channels % spec.groups || spec.out_channels % spec.groups) {
        throw ConfigError("conv2d: channels not divisible by groups");
    }
    if (spec.stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (x[1] != spec.in_channels) {
        throw ShapeError(axis_msg("conv2d", "input channel axis 1", spec.in_channels, x[1]));
    }
    auto wd = spec.weight_dims();
    if (w.size() != 4) throw ShapeError("conv2d: weight must be rank 4");
    const char* names[] = {"weight axis 0 (out channels)", "weight axis 1 (in channels/group)",
                           "weight axis 2 (kernel h)", "weight axis 3 (kernel w)"};
    for (int i = 0; i < 4; ++i) {
        if (w[i] != wd[i]) throw ShapeError(axis_msg("conv2d", names[i], wd[i], w[i]));
    }
    if (b != Dims{spec.out_channels}) {
        throw ShapeError("conv2d: bias must be [" + std::to_string(spec.out_channels) + "], got " +
                         dims_to_string(b));
    }
}

}  // namespace

std::size_t ConvSpec::out_extent(std::size_t in, std::size_t kernel) const {
    if (in + 2 * padding < kernel) {
        throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
}

Dims ConvSpec::weight_dims() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      const ConvSpec& spec) {
    check_conv_shapes(x.dims(), w.dims(), b.dims(), spec);
    const std::size_t n_batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh_n = spec.out_extent(h, spec.kernel_h);
    const std::size_t ow_n = spec.out_extent(wd, spec.kernel_w);
    const std::size_t cin_g = spec.in_channels / spec.groups;
    const std::size_t cout_g = spec.out_channels / spec.groups;
    const std::size_t s = spec.stride, p = spec.padding;
    BasicTensor<T> y({n_batch, spec.out_channels, oh_n, ow_n});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t co = 0; co < spec.out_channels; ++co) {
            T* out = y.ptr() + (n * spec.out_channels + co) * oh_n * ow_n;
            std::fill(out, out + oh_n * ow_n, b[co]);
            const std::size_t g = co / cout_g;
            for (std::size_t cl = 0; cl < cin_g; ++cl) {
                const std::size_t ci = g * cin_g + cl;
                const T* in = x.ptr() + (n * spec.in_channels + ci) * h * wd;
                for (std::size_t kh = 0; kh < spec.kernel_h; ++kh) {
                    auto [oh_lo, oh_hi] = valid_range(oh_n, h, s, p, kh);
                    for (std::size_t kw = 0; kw < spec.kernel_w; ++kw) {
                        const T wv = w[((co * cin_g + cl) * spec.kernel_h + kh) * spec.kernel_w + kw];
                        auto [ow_lo, ow_hi] = valid_range(ow_n, wd, s, p, kw);
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* in_row = in + (oh * s + kh - p) * wd;
                            T* out_row = out + oh * ow_n;
                            if (s == 1) {
                                const T* src = in_row + (ow_lo + kw - p);
                                T* dst = out_row + ow_lo;
                                for (std::size_t i = 0; i < ow_hi - ow_lo; ++i) dst[i] += wv * src[i];
                            } else {
                                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                    out_row[ow] += wv * in_row[ow * s + kw - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvSpec& spec,
                     const BasicTensor<T>& gy, BasicTensor<T>* gx, BasicTensor<T>* gw,
                     BasicTensor<T>* gb) {
    check_conv_shapes(x.dims(), w.dims(), Dims{spec.out_channels}, spec);
    const std::size_t n_batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh_n = spec.out_extent(h, spec.kernel_h);
    const std::size_t ow_n = spec.out_extent(wd, spec.kernel_w);
    require_dims(gy.dims(), {n_batch, spec.out_channels, oh_n, ow_n}, "conv2d backward: grad output");
    const std::size_t cin_g = spec.in_channels / spec.groups;
    const std::size_t cout_g = spec.out_channels / spec.groups;
    const std::size_t s = spec.stride, p = spec.padding;
    if (gx) ensure_grad(gx, x.dims());
    if (gw) ensure_grad(gw, w.dims());
    if (gb) ensure_grad(gb, Dims{spec.out_channels});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t co = 0; co < spec.out_channels; ++co) {
            const T* g_out = gy.ptr() + (n * spec.out_channels + co) * oh_n * ow_n;
            if (gb) {
                T acc = 0;
                for (std::size_t i = 0; i < oh_n * ow_n; ++i) acc += g_out[i];
                (*gb)[co] += acc;
            }
            const std::size_t g = co / cout_g;
            for (std::size_t cl = 0; cl < cin_g; ++cl) {
                const std::size_t ci = g * cin_g + cl;
                const std::size_t in_off = (n * spec.in_channels + ci) * h * wd;
                const T* in = x.ptr() + in_off;
                T* g_in = gx ? gx->ptr() + in_off : nullptr;
                for (std::size_t kh = 0; kh < spec.kernel_h; ++kh) {
                    auto [oh_lo, oh_hi] = valid_range(oh_n, h, s, p, kh);
                    for (std::size_t kw = 0; kw < spec.kernel_w; ++kw) {
                        const std::size_t w_idx =
                            ((co * cin_g + cl) * spec.kernel_h + kh) * spec.kernel_w + kw;
                        const T wv = w[w_idx];
                        auto [ow_lo, ow_hi] = valid_range(ow_n, wd, s, p, kw);
                        T gw_acc = 0;
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const std::size_t row = (oh * s + kh - p) * wd;
                            const T* g_row = g_out + oh * ow_n;
                            if (s == 1) {
                                const std::size_t len = ow_hi - ow_lo;
                                const T* src = in + row + ow_lo + kw - p;
                                const T* g = g_row + ow_lo;
                                if (gw) {
#pragma omp simd reduction(+ : gw_acc)
                                    for (std::size_t i = 0; i < len; ++i) gw_acc += g[i] * src[i];
                                }
                                if (g_in) {
                                    T* dst = g_in + row + ow_lo + kw - p;
                                    for (std::size_t i = 0; i < len; ++i) dst[i] += wv * g[i];
                                }
                                continue;
                            }
                            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                const std::size_t col = ow * s + kw - p;
                                gw_acc += g_row[ow] * in[row + col];
                                if (g_in) g_in[row + col] += wv * g_row[ow];
                            }
                        }
                        if (gw) (*gw)[w_idx] += gw_acc;
                    }
                }
            }
        }
    }
}

namespace {

void check_convt_shapes(const Dims& x, const Dims& w, const Dims& b, std::size_t stride) {
    if (x.size() != 4) {
        throw ShapeError("conv_transpose2d: input must be N,C,H,W, got " + dims_to_string(x));
    }
    if (w.size() != 4) throw ShapeError("conv_transpose2d: weight must be [Cin,Cout,kh,kw]");
    if (w[0] != x[1]) {
        throw ShapeError(axis_msg("conv_transpose2d", "weight axis 0 (in channels)", x[1], w[0]));
    }
    if (b != Dims{w[1]}) {
        throw ShapeError("conv_transpose2d: bias must be [" + std::to_string(w[1]) + "], got " +
                         dims_to_string(b));
    }
    if (stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
}

}  // namespace

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& b, std::size_t stride) {
    check_convt_shapes(x.dims(), w.dims(), b.dims(), stride);
    const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1), kh_n = w.dim(2), kw_n = w.dim(3);
    const std::size_t oh_n = (h - 1) * stride + kh_n, ow_n = (wd - 1) * stride + kw_n;
    BasicTensor<T> y({n_batch, cout, oh_n, ow_n});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
            T* out = y.ptr() + (n * cout + co) * oh_n * ow_n;
            std::fill(out, out + oh_n * ow_n, b[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* in = x.ptr() + (n * cin + ci) * h * wd;
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const T wv = w[((ci * cout + co) * kh_n + kh) * kw_n + kw];
                        for (std::size_t ih = 0; ih < h; ++ih) {
                            T* out_row = out + (ih * stride + kh) * ow_n + kw;
                            const T* in_row = in + ih * wd;
                            for (std::size_t iw = 0; iw < wd; ++iw) out_row[iw * stride] += wv * in_row[iw];
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
void conv_transpose2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                               std::size_t stride, const BasicTensor<T>& gy,
                               BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb) {
    check_convt_shapes(x.dims(), w.dims(), Dims{w.dim(1)}, stride);
    const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1), kh_n = w.dim(2), kw_n = w.dim(3);
    const std::size_t oh_n = (h - 1) * stride + kh_n, ow_n = (wd - 1) * stride + kw_n;
    require_dims(gy.dims(), {n_batch, cout, oh_n, ow_n}, "conv_transpose2d backward: grad output");
    if (gx) ensure_grad(gx, x.dims());
    if (gw) ensure_grad(gw, w.dims());
    if (gb) ensure_grad(gb, Dims{cout});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
            const T* g_out = gy.ptr() + (n * cout + co) * oh_n * ow_n;
            if (gb) {
                T acc = 0;
                for (std::size_t i = 0; i < oh_n * ow_n; ++i) acc += g_out[i];
                (*gb)[co] += acc;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t in_off = (n * cin + ci) * h * wd;
                const T* in = x.ptr() + in_off;
                T* g_in = gx ? gx->ptr() + in_off : nullptr;
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const std::size_t w_idx = ((ci * cout + co) * kh_n + kh) * kw_n + kw;
                        const T wv = w[w_idx];
                        T gw_acc = 0;
                        for (std::size_t ih = 0; ih < h; ++ih) {
                            const T* g_row = g_out + (ih * stride + kh) * ow_n + kw;
                            for (std::size_t iw = 0; iw < wd; ++iw) {
                                const T g = g_row[iw * stride];
                                gw_acc += g * in[ih * wd + iw];
                                if (g_in) g_in[ih * wd + iw] += wv * g;
                            }
                        }
                        if (gw) (*gw)[w_idx] += gw_acc;
                    }
                }
            }
        }
    }
}

namespace {

void check_linear(const Dims& x, const Dims& w, const Dims& b) {
    if (w.size() != 2) throw ShapeError("linear: weight must be [Dout, Din]");
    if (x.back() != w[1]) throw ShapeError(axis_msg("linear", "trailing dim", w[1], x.back()));
    if (b != Dims{w[0]}) {
        throw ShapeError("linear: bias must be [" + std::to_string(w[0]) + "], got " +
                         dims_to_string(b));
    }
}

}  // namespace

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    check_linear(x.dims(), w.dims(), b.dims());
    const std::size_t din = w.dim(1), dout = w.dim(0), rows = x.numel() / din;
    Dims out_dims = x.dims();
    out_dims.back() = dout;
    BasicTensor<T> y(out_dims);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * din;
        T* yr = y.ptr() + r * dout;
        for (std::size_t o = 0; o < dout; ++o) {
            const T* wr = w.ptr() + o * din;
            T acc = 0;
            for (std::size_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
            yr[o] = acc + b[o];
        }
    }
    return y;
}

template <typename T>
void linear_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                     BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb) {
    check_linear(x.dims(), w.dims(), Dims{w.dim(0)});
    const std::size_t din = w.dim(1), dout = w.dim(0), rows = x.numel() / din;
    Dims out_dims = x.dims();
    out_dims.back() = dout;
    require_dims(gy.dims(), out_dims, "linear backward: grad output");
    if (gx) ensure_grad(gx, x.dims());
    if (gw) ensure_grad(gw, w.dims());
    if (gb) ensure_grad(gb, Dims{dout});
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * din;
        const T* gr = gy.ptr() + r * dout;
        T* gxr = gx ? gx->ptr() + r * din : nullptr;
        for (std::size_t o = 0; o < dout; ++o) {
            const T g = gr[o];
            if (gb) (*gb)[o] += g;
            if (gxr) {
                const T* wr = w.ptr() + o * din;
                for (std::size_t i = 0; i < din; ++i) gxr[i] += g * wr[i];
            }
            if (gw) {
                T* gwr = gw->ptr() + o * din;
                for (std::size_t i = 0; i < din; ++i) gwr[i] += g * xr[i];
            }
        }
    }
}

namespace {

template <typename T>
void check_ln(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
              double eps) {
    const std::size_t d = x.dims().back();
    require_dims(gamma.dims(), {d}, "layer_norm: gamma");
    require_dims(beta.dims(), {d}, "layer_norm: beta");
    if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
}

// Mean and 1/sqrt(biased var + eps) of one row, accumulated in double.
template <typename T>
std::pair<double, double> row_stats(const T* row, std::size_t d, double eps) {
    double mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) {
        const double c = row[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(d);
    return {mean, 1.0 / std::sqrt(var + eps)};
}

}  // namespace

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
    check_ln(x, gamma, beta, eps);
    const std::size_t d = x.dims().back(), rows = x.numel() / d;
    BasicTensor<T> y(x.dims());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * d;
        T* yr = y.ptr() + r * d;
        auto [mean, rstd] = row_stats(xr, d, eps);
        for (std::size_t i = 0; i < d; ++i) {
            yr[i] = static_cast<T>((xr[i] - mean) * rstd) * gamma[i] + beta[i];
        }
    }
    return y;
}

template <typename T>
void layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, double eps,
                         const BasicTensor<T>& gy, BasicTensor<T>* gx, BasicTensor<T>* ggamma,
                         BasicTensor<T>* gbeta) {
    const std::size_t d = x.dims().back(), rows = x.numel() / d;
    require_dims(gamma.dims(), {d}, "layer_norm backward: gamma");
    require_dims(gy.dims(), x.dims(), "layer_norm backward: grad output");
    if (gx) ensure_grad(gx, x.dims());
    if (ggamma) ensure_grad(ggamma, Dims{d});
    if (gbeta) ensure_grad(gbeta, Dims{d});
    std::vector<double> xhat(d), gxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * d;
        const T* gr = gy.ptr() + r * d;
        auto [mean, rstd] = row_stats(xr, d, eps);
        double mean_g = 0, mean_gx = 0;
        for (std::size_t i = 0; i < d; ++i) {
            xhat[i] = (xr[i] - mean) * rstd;
            gxhat[i] = static_cast<double>(gr[i]) * gamma[i];
            mean_g += gxhat[i];
            mean_gx += gxhat[i] * xhat[i];
            if (ggamma) (*ggamma)[i] += static_cast<T>(gr[i] * xhat[i]);
            if (gbeta) (*gbeta)[i] += gr[i];
        }
        if (!gx) continue;
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        T* gxr = gx->ptr() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            gxr[i] += static_cast<T>(rstd * (gxhat[i] - mean_g - xhat[i] * mean_gx));
        }
    }
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
    const std::size_t d = x.dims().back(), rows = x.numel() / d;
    BasicTensor<T> y(x.dims());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * d;
        T* yr = y.ptr() + r * d;
        const T mx = *std::max_element(xr, xr + d);
        T sum = 0;
        for (std::size_t i = 0; i < d; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        const T inv = T(1) / sum;
        for (std::size_t i = 0; i < d; ++i) yr[i] *= inv;
    }
    return y;
}

template <typename T>
void softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& gy, BasicTensor<T>& gx) {
    require_dims(gy.dims(), y.dims(), "softmax backward: grad output");
    ensure_grad(&gx, y.dims());
    const std::size_t d = y.dims().back(), rows = y.numel() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = y.ptr() + r * d;
        const T* gr = gy.ptr() + r * d;
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += yr[i] * gr[i];
        T* gxr = gx.ptr() + r * d;
        for (std::size_t i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
}

namespace {
constexpr double kGeluC = 0.044715;
constexpr double kSqrt2OverPi = 0.7978845608028654;  // sqrt(2/pi)
}  // namespace

template <typename T>
T gelu_scalar(T x) {
    const T u = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluC) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T u = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluC) * x * x * x);
    const T t = std::tanh(u);
    const T du = static_cast<T>(kSqrt2OverPi) * (T(1) + T(3) * static_cast<T>(kGeluC) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
    BasicTensor<T> y(x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

template <typename T>
void gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& gy, BasicTensor<T>& gx) {
    require_dims(gy.dims(), x.dims(), "gelu backward: grad output");
    ensure_grad(&gx, x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] * gelu_grad_scalar(x[i]);
}

namespace {

struct MatmulShape {
    std::size_t batch, m, k, n;
};

MatmulShape matmul_shape(const Dims& a, const Dims& b, bool trans_b) {
    if (a.size() < 2 || a.size() != b.size()) {
        throw ShapeError("matmul: operands must share rank >= 2, got " + dims_to_string(a) +
                         " and " + dims_to_string(b));
    }
    const std::size_t r = a.size();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (a[i] != b[i]) throw ShapeError(axis_msg("matmul", "batch axis", a[i], b[i]));
    }
    MatmulShape s{dims_product(Dims(a.begin(), a.end() - 2)), a[r - 2], a[r - 1],
                  trans_b ? b[r - 2] : b[r - 1]};
    const std::size_t bk = trans_b ? b[r - 1] : b[r - 2];
    if (bk != s.k) throw ShapeError(axis_msg("matmul", "inner dim", s.k, bk));
    return s;
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b) {
    auto s = matmul_shape(a.dims(), b.dims(), trans_b);
    Dims out = a.dims();
    out.back() = s.n;
    BasicTensor<T> y(out);
    for (std::size_t bi = 0; bi < s.batch; ++bi) {
        const T* A = a.ptr() + bi * s.m * s.k;
        const T* B = b.ptr() + bi * s.k * s.n;
        T* Y = y.ptr() + bi * s.m * s.n;
        for (std::size_t i = 0; i < s.m; ++i) {
            const T* ar = A + i * s.k;
            T* yr = Y + i * s.n;
            if (trans_b) {
                for (std::size_t j = 0; j < s.n; ++j) {
                    const T* br = B + j * s.k;
                    T acc = 0;
                    for (std::size_t l = 0; l < s.k; ++l) acc += ar[l] * br[l];
                    yr[j] = acc;
                }
            } else {
                for (std::size_t l = 0; l < s.k; ++l) {
                    const T av = ar[l];
                    const T* br = B + l * s.n;
                    for (std::size_t j = 0; j < s.n; ++j) yr[j] += av * br[j];
                }
            }
        }
    }
    return y;
}

template <typename T>
void matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b,
                     const BasicTensor<T>& gy, BasicTensor<T>* ga, BasicTensor<T>* gb) {
    auto s = matmul_shape(a.dims(), b.dims(), trans_b);
    Dims out = a.dims();
    out.back() = s.n;
    require_dims(gy.dims(), out, "matmul backward: grad output");
    if (ga) ensure_grad(ga, a.dims());
    if (gb) ensure_grad(gb, b.dims());
    for (std::size_t bi = 0; bi < s.batch; ++bi) {
        const T* A = a.ptr() + bi * s.m * s.k;
        const T* B = b.ptr() + bi * s.k * s.n;
        const T* G = gy.ptr() + bi * s.m * s.n;
        T* GA = ga ? ga->ptr() + bi * s.m * s.k : nullptr;
        T* GB = gb ? gb->ptr() + bi * s.k * s.n : nullptr;
        for (std::size_t i = 0; i < s.m; ++i) {
            const T* gr = G + i * s.n;
            const T* ar = A + i * s.k;
            for (std::size_t j = 0; j < s.n; ++j) {
                const T g = gr[j];
                if (trans_b) {
                    // y[i,j] = sum_l a[i,l] b[j,l]
                    if (GA) {
                        const T* br = B + j * s.k;
                        T* gar = GA + i * s.k;
                        for (std::size_t l = 0; l < s.k; ++l) gar[l] += g * br[l];
                    }
                    if (GB) {
                        T* gbr = GB + j * s.k;
                        for (std::size_t l = 0; l < s.k; ++l) gbr[l] += g * ar[l];
                    }
                } else {
                    // y[i,j] = sum_l a[i,l] b[l,j]
                    if (GA) {
                        T* gar = GA + i * s.k;
                        for (std::size_t l = 0; l < s.k; ++l) gar[l] += g * B[l * s.n + j];
                    }
                    if (GB) {
                        for (std::size_t l = 0; l < s.k; ++l) GB[l * s.n + j] += g * ar[l];
                    }
                }
            }
        }
    }
}

template <typename T>
BasicTensor<T> nchw_to_nhwc(const BasicTensor<T>& x) {
    if (x.ndim() != 4) throw ShapeError("nchw_to_nhwc: expected rank 4, got " + dims_to_string(x.dims()));
    const std::size_t n_b = x.dim(0), c_n = x.dim(1), hw = x.dim(2) * x.dim(3);
    BasicTensor<T> y({n_b, x.dim(2), x.dim(3), c_n});
    for (std::size_t n = 0; n < n_b; ++n) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* src = x.ptr() + (n * c_n + c) * hw;
            T* dst = y.ptr() + n * hw * c_n + c;
            for (std::size_t i = 0; i < hw; ++i) dst[i * c_n] = src[i];
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> nhwc_to_nchw(const BasicTensor<T>& x) {
    if (x.ndim() != 4) throw ShapeError("nhwc_to_nchw: expected rank 4, got " + dims_to_string(x.dims()));
    const std::size_t n_b = x.dim(0), c_n = x.dim(3), hw = x.dim(1) * x.dim(2);
    BasicTensor<T> y({n_b, c_n, x.dim(1), x.dim(2)});
    for (std::size_t n = 0; n < n_b; ++n) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* src = x.ptr() + n * hw * c_n + c;
            T* dst = y.ptr() + (n * c_n + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i * c_n];
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> pad_hw(const BasicTensor<T>& x, std::size_t pad_h, std::size_t pad_w) {
    if (x.ndim() != 4) throw ShapeError("pad_hw: expected rank 4");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h + pad_h, ow = w + pad_w;
    BasicTensor<T> y({x.dim(0), x.dim(1), oh, ow});
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
            std::copy_n(x.ptr() + (p * h + r) * w, w, y.ptr() + (p * oh + r) * ow);
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> crop_hw(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
    if (x.ndim() != 4) throw ShapeError("crop_hw: expected rank 4");
    const std::size_t planes = x.dim(0) * x.dim(1), ih = x.dim(2), iw = x.dim(3);
    if (h > ih || w > iw) throw ShapeError("crop_hw: crop larger than input");
    BasicTensor<T> y({x.dim(0), x.dim(1), h, w});
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
            std::copy_n(x.ptr() + (p * ih + r) * iw, w, y.ptr() + (p * h + r) * w);
        }
    }
    return y;
}

#define WITU_INSTANTIATE_OPS(T)                                                                  \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                   const BasicTensor<T>&, const ConvSpec&);                      \
    template void conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&, \
                                  const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,       \
                                  BasicTensor<T>*);                                              \
    template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                             const BasicTensor<T>&, std::size_t);                \
    template void conv_transpose2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                            std::size_t, const BasicTensor<T>&,                  \
                                            BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);  \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                   const BasicTensor<T>&);                                       \
    template void linear_backward(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                  const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,       \
                                  BasicTensor<T>*);                                              \
    template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                       const BasicTensor<T>&, double);                           \
    template void layer_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&, double,      \
                                      const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,   \
                                      BasicTensor<T>*);                                          \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                      \
    template void softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                   BasicTensor<T>&);                                             \
    template T gelu_scalar(T);                                                                   \
    template T gelu_grad_scalar(T);                                                              \
    template BasicTensor<T> gelu(const BasicTensor<T>&);                                         \
    template void gelu_backward(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>&);  \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool);          \
    template void matmul_backward(const BasicTensor<T>&, const BasicTensor<T>&, bool,            \
                                  const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*);      \
    template BasicTensor<T> nchw_to_nhwc(const BasicTensor<T>&);                                 \
    template BasicTensor<T> nhwc_to_nchw(const BasicTensor<T>&);                                 \
    template BasicTensor<T> pad_hw(const BasicTensor<T>&, std::size_t, std::size_t);             \
    template BasicTensor<T> crop_hw(const BasicTensor<T>&, std::size_t, std::size_t);

WITU_INSTANTIATE_OPS(float)
WITU_INSTANTIATE_OPS(double)

#undef WITU_INSTANTIATE_OPS

}  // namespace witu::ops
