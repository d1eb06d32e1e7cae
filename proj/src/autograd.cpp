#include "witu/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace witu {

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: invalid variable handle");
    return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: invalid variable handle");
    return nodes_[v.id];
}

template <typename T>
Var Tape<T>::leaf(TensorT value, bool requires_grad) {
    if (consumed_) throw StateError("tape: cannot record after backward");
    auto& n = nodes_.emplace_back();
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
    Var v = leaf(p.value, grad_enabled_);
    nodes_[v.id].op = "param";
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
}

template <typename T>
Var Tape<T>::record(std::string op, TensorT value, const std::vector<Var>& inputs, BackwardFn fn) {
    if (consumed_) throw StateError("tape: cannot record after backward");
    bool req = false;
    for (auto in : inputs) req = req || node(in).requires_grad;
    auto& n = nodes_.emplace_back();
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = req;
    if (req) n.backward = std::move(fn);
    return Var{nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::TensorT& Tape<T>::grad_slot(Var v) {
    auto& n = node(v);
    if (n.grad.empty()) n.grad = TensorT(n.value.dims());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
    if (nodes_.empty()) throw StateError("backward called before any forward was recorded");
    if (node(loss).value.numel() != 1) {
        throw StateError("backward(loss) requires a scalar loss, got " +
                         dims_to_string(node(loss).value.dims()));
    }
    backward(loss, TensorT(node(loss).value.dims(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var out, const TensorT& seed) {
    if (nodes_.empty()) throw StateError("backward called before any forward was recorded");
    if (consumed_) throw StateError("tape: backward already ran");
    require_dims(seed.dims(), node(out).value.dims(), "backward seed");
    consumed_ = true;
    auto& g = grad_slot(out);
    for (std::size_t i = 0; i < seed.numel(); ++i) g[i] += seed[i];
    for (std::size_t id = out.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        if (!fault_op_.empty() && n.op == fault_op_) {
            for (auto& v : n.grad.storage()) v = -v;
        }
        n.backward(*this, id);
    }
    for (auto& n : nodes_) {
        if (!n.param) continue;
        auto& p = *n.param;
        if (!n.grad.empty()) {
            for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += n.grad[i];
        }
        p.has_grad = true;
    }
}

template class Tape<float>;
template class Tape<double>;

namespace ag {

template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, const ops::ConvSpec& spec) {
    auto y = ops::conv2d(t.value(x), t.value(w), t.value(b), spec);
    return t.record("conv2d", std::move(y), {x, w, b}, [x, w, b, spec](Tape<T>& tp, std::size_t self) {
        auto* gx = tp.requires_grad(x) ? &tp.grad_slot(x) : nullptr;
        auto* gw = tp.requires_grad(w) ? &tp.grad_slot(w) : nullptr;
        auto* gb = tp.requires_grad(b) ? &tp.grad_slot(b) : nullptr;
        ops::conv2d_backward(tp.value(x), tp.value(w), spec, tp.grad(Var{self}), gx, gw, gb);
    });
}

template <typename T>
Var conv_transpose2d(Tape<T>& t, Var x, Var w, Var b, std::size_t stride) {
    auto y = ops::conv_transpose2d(t.value(x), t.value(w), t.value(b), stride);
    return t.record("conv_transpose2d", std::move(y), {x, w, b},
                    [x, w, b, stride](Tape<T>& tp, std::size_t self) {
                        auto* gx = tp.requires_grad(x) ? &tp.grad_slot(x) : nullptr;
                        auto* gw = tp.requires_grad(w) ? &tp.grad_slot(w) : nullptr;
                        auto* gb = tp.requires_grad(b) ? &tp.grad_slot(b) : nullptr;
                        ops::conv_transpose2d_backward(tp.value(x), tp.value(w), stride,
                                                       tp.grad(Var{self}), gx, gw, gb);
                    });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
    auto y = ops::linear(t.value(x), t.value(w), t.value(b));
    return t.record("linear", std::move(y), {x, w, b}, [x, w, b](Tape<T>& tp, std::size_t self) {
        auto* gx = tp.requires_grad(x) ? &tp.grad_slot(x) : nullptr;
        auto* gw = tp.requires_grad(w) ? &tp.grad_slot(w) : nullptr;
        auto* gb = tp.requires_grad(b) ? &tp.grad_slot(b) : nullptr;
        ops::linear_backward(tp.value(x), tp.value(w), tp.grad(Var{self}), gx, gw, gb);
    });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, double eps) {
    auto y = ops::layer_norm(t.value(x), t.value(gamma), t.value(beta), eps);
    return t.record("layer_norm", std::move(y), {x, gamma, beta},
                    [x, gamma, beta, eps](Tape<T>& tp, std::size_t self) {
                        auto* gx = tp.requires_grad(x) ? &tp.grad_slot(x) : nullptr;
                        auto* gg = tp.requires_grad(gamma) ? &tp.grad_slot(gamma) : nullptr;
                        auto* gb = tp.requires_grad(beta) ? &tp.grad_slot(beta) : nullptr;
                        ops::layer_norm_backward(tp.value(x), tp.value(gamma), eps,
                                                 tp.grad(Var{self}), gx, gg, gb);
                    });
}

template <typename T>
Var softmax(Tape<T>& t, Var x) {
    auto y = ops::softmax(t.value(x));
    return t.record("softmax", std::move(y), {x}, [x](Tape<T>& tp, std::size_t self) {
        ops::softmax_backward(tp.value(Var{self}), tp.grad(Var{self}), tp.grad_slot(x));
    });
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
    auto y = ops::gelu(t.value(x));
    return t.record("gelu", std::move(y), {x}, [x](Tape<T>& tp, std::size_t self) {
        ops::gelu_backward(tp.value(x), tp.grad(Var{self}), tp.grad_slot(x));
    });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    require_dims(bv.dims(), av.dims(), "add");
    BasicTensor<T> y = av;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
    return t.record("add", std::move(y), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(Var{self});
        for (Var in : {a, b}) {
            if (!tp.requires_grad(in)) continue;
            auto& gi = tp.grad_slot(in);
            for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& t, Var a, double s) {
    BasicTensor<T> y = t.value(a);
    const T sv = static_cast<T>(s);
    for (auto& v : y.storage()) v *= sv;
    return t.record("scale", std::move(y), {a}, [a, sv](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(Var{self});
        auto& gi = tp.grad_slot(a);
        for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += sv * g[i];
    });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Dims dims) {
    auto y = t.value(x).reshaped(std::move(dims));
    return t.record("reshape", std::move(y), {x}, [x](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(Var{self});
        auto& gi = tp.grad_slot(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    });
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b, bool trans_b) {
    auto y = ops::matmul(t.value(a), t.value(b), trans_b);
    return t.record("matmul", std::move(y), {a, b}, [a, b, trans_b](Tape<T>& tp, std::size_t self) {
        auto* ga = tp.requires_grad(a) ? &tp.grad_slot(a) : nullptr;
        auto* gb = tp.requires_grad(b) ? &tp.grad_slot(b) : nullptr;
        ops::matmul_backward(tp.value(a), tp.value(b), trans_b, tp.grad(Var{self}), ga, gb);
    });
}

template <typename T>
Var concat_channels(Tape<T>& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& first = t.value(xs.front());
    if (first.ndim() != 4) throw ShapeError("concat_channels: inputs must be N,C,H,W");
    const std::size_t n_b = first.dim(0), hw = first.dim(2) * first.dim(3);
    std::size_t total_c = 0;
    for (Var v : xs) {
        const auto& d = t.value(v).dims();
        if (d.size() != 4 || d[0] != n_b || d[2] != first.dim(2) || d[3] != first.dim(3)) {
            throw ShapeError("concat_channels: input " + dims_to_string(d) +
                             " does not match N,H,W of " + dims_to_string(first.dims()));
        }
        total_c += d[1];
    }
    BasicTensor<T> y({n_b, total_c, first.dim(2), first.dim(3)});
    std::vector<std::size_t> chans;
    for (std::size_t n = 0, off = 0; n < n_b; ++n) {
        for (Var v : xs) {
            const auto& xv = t.value(v);
            const std::size_t block = xv.dim(1) * hw;
            std::copy_n(xv.ptr() + n * block, block, y.ptr() + off);
            off += block;
        }
    }
    for (Var v : xs) chans.push_back(t.value(v).dim(1));
    return t.record("concat_channels", std::move(y), xs,
                    [xs, chans, n_b, hw, total_c](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.grad(Var{self});
                        std::size_t c0 = 0;
                        for (std::size_t i = 0; i < xs.size(); ++i) {
                            const std::size_t block = chans[i] * hw;
                            if (tp.requires_grad(xs[i])) {
                                auto& gi = tp.grad_slot(xs[i]);
                                for (std::size_t n = 0; n < n_b; ++n) {
                                    const T* src = g.ptr() + (n * total_c + c0) * hw;
                                    T* dst = gi.ptr() + n * block;
                                    for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                                }
                            }
                            c0 += chans[i];
                        }
                    });
}

namespace {

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var nchw_to_nhwc(Tape<T>& t, Var x) {
    return t.record("nchw_to_nhwc", ops::nchw_to_nhwc(t.value(x)), {x},
                    [x](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(x), ops::nhwc_to_nchw(tp.grad(Var{self})));
                    });
}

template <typename T>
Var nhwc_to_nchw(Tape<T>& t, Var x) {
    return t.record("nhwc_to_nchw", ops::nhwc_to_nchw(t.value(x)), {x},
                    [x](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(x), ops::nchw_to_nhwc(tp.grad(Var{self})));
                    });
}

template <typename T>
Var pad_hw(Tape<T>& t, Var x, std::size_t pad_h, std::size_t pad_w) {
    if (pad_h == 0 && pad_w == 0) return x;
    const std::size_t h = t.value(x).dim(2), w = t.value(x).dim(3);
    return t.record("pad_hw", ops::pad_hw(t.value(x), pad_h, pad_w), {x},
                    [x, h, w](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(x), ops::crop_hw(tp.grad(Var{self}), h, w));
                    });
}

template <typename T>
Var crop_hw(Tape<T>& t, Var x, std::size_t h, std::size_t w) {
    const std::size_t ih = t.value(x).dim(2), iw = t.value(x).dim(3);
    if (ih == h && iw == w) return x;
    return t.record("crop_hw", ops::crop_hw(t.value(x), h, w), {x},
                    [x, ih, iw, h, w](Tape<T>& tp, std::size_t self) {
                        accumulate(tp.grad_slot(x), ops::pad_hw(tp.grad(Var{self}), ih - h, iw - w));
                    });
}

template <typename T>
Var mse_loss(Tape<T>& t, Var pred, const BasicTensor<T>& target) {
    const auto& p = t.value(pred);
    require_dims(target.dims(), p.dims(), "mse_loss: target");
    double acc = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double d = static_cast<double>(p[i]) - target[i];
        acc += d * d;
    }
    const double count = static_cast<double>(p.numel());
    BasicTensor<T> y({1}, static_cast<T>(acc / count));
    return t.record("mse_loss", std::move(y), {pred},
                    [pred, target, count](Tape<T>& tp, std::size_t self) {
                        const T g = tp.grad(Var{self})[0];
                        const auto& pv = tp.value(pred);
                        auto& gp = tp.grad_slot(pred);
                        const T k = static_cast<T>(2.0 / count) * g;
                        for (std::size_t i = 0; i < pv.numel(); ++i) gp[i] += k * (pv[i] - target[i]);
                    });
}

template <typename T>
Var weighted_sum(Tape<T>& t, Var x, const BasicTensor<T>& weights) {
    const auto& xv = t.value(x);
    require_dims(weights.dims(), xv.dims(), "weighted_sum: weights");
    double acc = 0;
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xv[i]) * weights[i];
    BasicTensor<T> y({1}, static_cast<T>(acc));
    return t.record("weighted_sum", std::move(y), {x}, [x, weights](Tape<T>& tp, std::size_t self) {
        const T g = tp.grad(Var{self})[0];
        auto& gx = tp.grad_slot(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * weights[i];
    });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
    return weighted_sum(t, x, BasicTensor<T>(t.value(x).dims(), T(1)));
}

#define WITU_INSTANTIATE_AG(T)                                                             \
    template Var conv2d(Tape<T>&, Var, Var, Var, const ops::ConvSpec&);                    \
    template Var conv_transpose2d(Tape<T>&, Var, Var, Var, std::size_t);                   \
    template Var linear(Tape<T>&, Var, Var, Var);                                          \
    template Var layer_norm(Tape<T>&, Var, Var, Var, double);                              \
    template Var softmax(Tape<T>&, Var);                                                   \
    template Var gelu(Tape<T>&, Var);                                                      \
    template Var add(Tape<T>&, Var, Var);                                                  \
    template Var scale(Tape<T>&, Var, double);                                             \
    template Var reshape(Tape<T>&, Var, Dims);                                             \
    template Var matmul(Tape<T>&, Var, Var, bool);                                         \
    template Var concat_channels(Tape<T>&, const std::vector<Var>&);                       \
    template Var nchw_to_nhwc(Tape<T>&, Var);                                              \
    template Var nhwc_to_nchw(Tape<T>&, Var);                                              \
    template Var pad_hw(Tape<T>&, Var, std::size_t, std::size_t);                          \
    template Var crop_hw(Tape<T>&, Var, std::size_t, std::size_t);                         \
    template Var mse_loss(Tape<T>&, Var, const BasicTensor<T>&);                           \
    template Var weighted_sum(Tape<T>&, Var, const BasicTensor<T>&);                       \
    template Var sum(Tape<T>&, Var);

WITU_INSTANTIATE_AG(float)
WITU_INSTANTIATE_AG(double)

#undef WITU_INSTANTIATE_AG

}  // namespace ag

}  // namespace witu
