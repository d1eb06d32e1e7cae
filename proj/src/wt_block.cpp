#include "witu/wt_block.hpp"

#include <cmath>

namespace witu {

template <typename T>
BasicTensor<T> uniform_fan_in(const Dims& dims, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    BasicTensor<T> out(dims);
    for (auto& v : out.storage()) v = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
Var layer_norm_channels(Tape<T>& t, Var x, Var gamma, Var beta, double eps) {
    return ag::nhwc_to_nchw(t, ag::layer_norm(t, ag::nchw_to_nhwc(t, x), gamma, beta, eps));
}

template <typename T>
Var lipe(Tape<T>& t, Var x, const LiPeVars& p) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 4) throw ShapeError("lipe: expected N,C,H,W, got " + dims_to_string(xv.dims()));
    const auto& ew = t.value(p.expand_w);
    if (ew.ndim() != 2 || ew.dim(1) != xv.dim(1)) {
        throw ShapeError("lipe: expand weight " + dims_to_string(ew.dims()) +
                         " does not accept " + std::to_string(xv.dim(1)) + " channels");
    }
    const std::size_t hidden = ew.dim(0);
    Var tokens = ag::gelu(t, ag::linear(t, ag::nchw_to_nhwc(t, x), p.expand_w, p.expand_b));
    Var fmap = ag::nhwc_to_nchw(t, tokens);
    ops::ConvSpec spec{hidden, hidden, 3, 3, 1, 1, p.depthwise ? hidden : 1};
    fmap = ag::gelu(t, ag::conv2d(t, fmap, p.conv_w, p.conv_b, spec));
    Var out = ag::linear(t, ag::nchw_to_nhwc(t, fmap), p.restore_w, p.restore_b);
    return ag::nhwc_to_nchw(t, out);
}

template <typename T>
Var mlp_ffn(Tape<T>& t, Var x, const MlpVars& p) {
    Var h = ag::gelu(t, ag::linear(t, ag::nchw_to_nhwc(t, x), p.fc1_w, p.fc1_b));
    return ag::nhwc_to_nchw(t, ag::linear(t, h, p.fc2_w, p.fc2_b));
}

template <typename T>
Var wt_block(Tape<T>& t, Var x, const WTBlockVars& p) {
    Var normed = layer_norm_channels(t, x, p.ln1_gamma, p.ln1_beta, p.ln_eps);
    Var mid = ag::add(t, windowed_attention(t, normed, p.attn), x);
    Var normed2 = layer_norm_channels(t, mid, p.ln2_gamma, p.ln2_beta, p.ln_eps);
    Var ffn = p.use_lipe ? lipe(t, normed2, p.lipe) : mlp_ffn(t, normed2, p.mlp);
    return ag::add(t, ffn, mid);
}

template <typename T>
Var channel_projection(Tape<T>& t, Var x, const ProjectionVars& p) {
    const auto& w = t.value(p.weight);
    if (w.ndim() != 4 || w.dim(2) != 1 || w.dim(3) != 1) {
        throw ShapeError("channel_projection: weight must be [Cout, Cin, 1, 1], got " +
                         dims_to_string(w.dims()));
    }
    const std::size_t cout = w.dim(0), cin = w.dim(1);
    if (cout == 0 || cin < cout) {
        throw ShapeError("channel_projection: requires Cin >= Cout >= 1 (Cin=" +
                         std::to_string(cin) + ", Cout=" + std::to_string(cout) + ")");
    }
    return ag::conv2d(t, x, p.weight, p.bias, ops::ConvSpec{cin, cout, 1, 1, 1, 0, 1});
}

template <typename T>
Var wt_stack(Tape<T>& t, Var x, const std::vector<WTBlockVars>& blocks,
             const std::optional<ProjectionVars>& projection, bool projection_after) {
    if (blocks.empty()) throw ConfigError("wt_stack: needs at least one block");
    if (projection && !projection_after) x = channel_projection(t, x, *projection);
    for (const auto& b : blocks) x = wt_block(t, x, b);
    if (projection && projection_after) x = channel_projection(t, x, *projection);
    return x;
}

namespace {

std::size_t bias_tables(const BlockOptions& opt) { return opt.shared_bias_table ? 1 : opt.heads; }

void validate(const BlockOptions& opt) {
    if (opt.heads == 0 || opt.channels % opt.heads) {
        throw ConfigError("WT block: channels " + std::to_string(opt.channels) +
                          " not divisible by head count " + std::to_string(opt.heads));
    }
    if (opt.window == 0) throw ConfigError("WT block: window must be >= 1");
    if (opt.expansion == 0) throw ConfigError("WT block: LiPe expansion must be >= 1");
}

}  // namespace

std::size_t wt_block_param_count(const BlockOptions& opt) {
    validate(opt);
    const std::size_t c = opt.channels, e = opt.expansion * c, side = 2 * opt.window - 1;
    std::size_t n = 4 * c;                                  // two layer norms
    n += 4 * (c * c + c) + bias_tables(opt) * side * side;  // q, k, v, out + bias tables
    if (opt.use_lipe) {
        n += c * e + e;                                     // expand
        n += (opt.depthwise_lipe ? e * 9 : e * e * 9) + e;  // 3x3 conv
        n += e * c + c;                                     // restore
    } else {
        n += c * e + e + e * c + c;
    }
    return n;
}

template <typename T>
void register_wt_block(ParamStore<T>& store, const std::string& prefix, const BlockOptions& opt,
                       Rng& rng) {
    validate(opt);
    const std::size_t c = opt.channels, e = opt.expansion * c, side = 2 * opt.window - 1;
    store.add(prefix + ".ln1.gamma", BasicTensor<T>({c}, T(1)));
    store.add(prefix + ".ln1.beta", BasicTensor<T>({c}));
    for (const char* n : {"q", "k", "v", "o"}) {
        store.add(prefix + ".attn.w" + n, uniform_fan_in<T>({c, c}, c, rng));
        store.add(prefix + ".attn.b" + n, BasicTensor<T>({c}));
    }
    store.add(prefix + ".attn.bias_table", BasicTensor<T>({bias_tables(opt), side, side}));
    store.add(prefix + ".ln2.gamma", BasicTensor<T>({c}, T(1)));
    store.add(prefix + ".ln2.beta", BasicTensor<T>({c}));
    if (opt.use_lipe) {
        store.add(prefix + ".lipe.expand.w", uniform_fan_in<T>({e, c}, c, rng));
        store.add(prefix + ".lipe.expand.b", BasicTensor<T>({e}));
        const std::size_t cin_g = opt.depthwise_lipe ? 1 : e;
        store.add(prefix + ".lipe.conv.w", uniform_fan_in<T>({e, cin_g, 3, 3}, cin_g * 9, rng));
        store.add(prefix + ".lipe.conv.b", BasicTensor<T>({e}));
        store.add(prefix + ".lipe.restore.w", uniform_fan_in<T>({c, e}, e, rng));
        store.add(prefix + ".lipe.restore.b", BasicTensor<T>({c}));
    } else {
        store.add(prefix + ".mlp.fc1.w", uniform_fan_in<T>({e, c}, c, rng));
        store.add(prefix + ".mlp.fc1.b", BasicTensor<T>({e}));
        store.add(prefix + ".mlp.fc2.w", uniform_fan_in<T>({c, e}, e, rng));
        store.add(prefix + ".mlp.fc2.b", BasicTensor<T>({c}));
    }
}

template <typename T>
WTBlockVars bind_wt_block(Tape<T>& t, ParamStore<T>& store, const std::string& prefix,
                          const BlockOptions& opt) {
    validate(opt);
    auto p = [&](const std::string& name) { return t.param(store.at(prefix + name)); };
    WTBlockVars v;
    v.ln1_gamma = p(".ln1.gamma");
    v.ln1_beta = p(".ln1.beta");
    v.ln2_gamma = p(".ln2.gamma");
    v.ln2_beta = p(".ln2.beta");
    v.attn.heads = opt.heads;
    v.attn.window = opt.window;
    v.attn.wq = p(".attn.wq");
    v.attn.bq = p(".attn.bq");
    v.attn.wk = p(".attn.wk");
    v.attn.bk = p(".attn.bk");
    v.attn.wv = p(".attn.wv");
    v.attn.bv = p(".attn.bv");
    v.attn.wo = p(".attn.wo");
    v.attn.bo = p(".attn.bo");
    v.attn.bias_table = p(".attn.bias_table");
    v.use_lipe = opt.use_lipe;
    v.ln_eps = opt.ln_eps;
    if (opt.use_lipe) {
        v.lipe.expand_w = p(".lipe.expand.w");
        v.lipe.expand_b = p(".lipe.expand.b");
        v.lipe.conv_w = p(".lipe.conv.w");
        v.lipe.conv_b = p(".lipe.conv.b");
        v.lipe.restore_w = p(".lipe.restore.w");
        v.lipe.restore_b = p(".lipe.restore.b");
        v.lipe.depthwise = opt.depthwise_lipe;
    } else {
        v.mlp.fc1_w = p(".mlp.fc1.w");
        v.mlp.fc1_b = p(".mlp.fc1.b");
        v.mlp.fc2_w = p(".mlp.fc2.w");
        v.mlp.fc2_b = p(".mlp.fc2.b");
    }
    return v;
}

template <typename T>
void register_projection(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                         std::size_t cout, Rng& rng) {
    store.add(prefix + ".w", uniform_fan_in<T>({cout, cin, 1, 1}, cin, rng));
    store.add(prefix + ".b", BasicTensor<T>({cout}));
}

template <typename T>
ProjectionVars bind_projection(Tape<T>& t, ParamStore<T>& store, const std::string& prefix) {
    return {t.param(store.at(prefix + ".w")), t.param(store.at(prefix + ".b"))};
}

#define WITU_INSTANTIATE_BLOCK(T)                                                              \
    template BasicTensor<T> uniform_fan_in(const Dims&, std::size_t, Rng&);                   \
    template Var layer_norm_channels(Tape<T>&, Var, Var, Var, double);                        \
    template Var lipe(Tape<T>&, Var, const LiPeVars&);                                        \
    template Var mlp_ffn(Tape<T>&, Var, const MlpVars&);                                      \
    template Var wt_block(Tape<T>&, Var, const WTBlockVars&);                                 \
    template Var channel_projection(Tape<T>&, Var, const ProjectionVars&);                    \
    template Var wt_stack(Tape<T>&, Var, const std::vector<WTBlockVars>&,                     \
                          const std::optional<ProjectionVars>&, bool);                        \
    template void register_wt_block(ParamStore<T>&, const std::string&, const BlockOptions&,  \
                                    Rng&);                                                    \
    template WTBlockVars bind_wt_block(Tape<T>&, ParamStore<T>&, const std::string&,          \
                                       const BlockOptions&);                                  \
    template void register_projection(ParamStore<T>&, const std::string&, std::size_t,        \
                                      std::size_t, Rng&);                                     \
    template ProjectionVars bind_projection(Tape<T>&, ParamStore<T>&, const std::string&);

WITU_INSTANTIATE_BLOCK(float)
WITU_INSTANTIATE_BLOCK(double)

#undef WITU_INSTANTIATE_BLOCK

}  // namespace witu
