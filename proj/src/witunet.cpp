#include "witu/witunet.hpp"

#include <algorithm>
#include <map>

namespace witu {

NodeRole node_role(const NodeId& id, const NetConfig& cfg) {
    if (id.k == cfg.depth) return NodeRole::bottleneck;
    if (id.v == 0) return NodeRole::encoder;
    if (id.k + id.v == cfg.depth) return NodeRole::decoder;
    return NodeRole::intermediate;
}

std::string node_name(const NodeId& id) {
    return "x_{" + std::to_string(id.k) + "," + std::to_string(id.v) + "}";
}

std::size_t NodeGraph::in_degree(const NodeId& id) const {
    return static_cast<std::size_t>(
        std::count_if(edges.begin(), edges.end(), [&](const NodeEdge& e) { return e.to == id; }));
}

std::vector<NodeEdge> NodeGraph::inputs_of(const NodeId& id) const {
    std::vector<NodeEdge> out;
    for (const auto& e : edges) {
        if (e.to == id && e.kind != EdgeKind::up) out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const NodeEdge& a, const NodeEdge& b) { return a.from.v < b.from.v; });
    for (const auto& e : edges) {
        if (e.to == id && e.kind == EdgeKind::up) out.push_back(e);
    }
    return out;
}

bool NodeGraph::contains(const NodeId& id) const {
    return std::find(nodes.begin(), nodes.end(), id) != nodes.end();
}

NodeGraph node_graph(const NetConfig& cfg) {
    if (cfg.depth == 0) throw ConfigError("node_graph: depth must be >= 1");
    const std::size_t d = cfg.depth;
    NodeGraph g;
    for (std::size_t k = 0; k <= d; ++k) {
        g.nodes.push_back({k, 0});
        if (k > 0) g.edges.push_back({{k - 1, 0}, {k, 0}, EdgeKind::down});
    }
    for (std::size_t v = 1; v <= d; ++v) {
        for (std::size_t k = 0; k + v <= d; ++k) {
            const bool decoder = k + v == d;
            if (!cfg.use_nested && !decoder) continue;
            NodeId id{k, v};
            g.nodes.push_back(id);
            if (cfg.use_nested) {
                for (std::size_t i = 0; i < v; ++i) g.edges.push_back({{k, i}, id, EdgeKind::skip});
            } else {
                g.edges.push_back({{k, 0}, id, EdgeKind::skip});
            }
            g.edges.push_back({{k + 1, v - 1}, id, EdgeKind::up});
        }
    }
    return g;
}

namespace {

BlockOptions block_options(const NetConfig& cfg, std::size_t width) {
    BlockOptions o;
    o.channels = width;
    o.heads = cfg.heads_for(width);
    o.window = cfg.window;
    o.expansion = cfg.lipe_expansion;
    o.use_lipe = cfg.use_lipe;
    o.depthwise_lipe = cfg.depthwise_lipe;
    o.shared_bias_table = cfg.shared_bias_table;
    o.ln_eps = cfg.ln_eps;
    return o;
}

std::string level_tag(const NodeId& id) {
    return ".k" + std::to_string(id.k) + ".v" + std::to_string(id.v);
}

std::string stack_prefix(const NodeId& id, const NetConfig& cfg) {
    switch (node_role(id, cfg)) {
        case NodeRole::encoder: return "enc.k" + std::to_string(id.k);
        case NodeRole::bottleneck: return "bottleneck";
        case NodeRole::decoder: return "dec.k" + std::to_string(id.k);
        default: return "node" + level_tag(id);
    }
}

// Width the decoder WT blocks run at.
std::size_t decoder_block_width(const NetConfig& cfg, std::size_t k) {
    return cfg.projection_after ? cfg.decoder_input_channels(k) : cfg.channels_at(k);
}

}  // namespace

std::size_t param_count(const NetConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.base_channels, d = cfg.depth, nb = cfg.blocks_per_level;
    std::size_t n = 9 * c + c;  // input embedding 3x3, 1 -> C
    for (std::size_t k = 0; k <= d; ++k) {
        const std::size_t ck = cfg.channels_at(k);
        n += nb * wt_block_param_count(block_options(cfg, ck));
        if (k > 0) n += 16 * (ck / 2) * ck + ck;  // 4x4 stride-2 downsample
    }
    for (const auto& id : node_graph(cfg).nodes) {
        if (id.v == 0) continue;
        const std::size_t ck = cfg.channels_at(id.k);
        n += 4 * (2 * ck) * ck + ck;  // 2x2 transposed upsample
        if (node_role(id, cfg) == NodeRole::decoder) {
            const std::size_t cin = cfg.decoder_input_channels(id.k);
            n += cin * ck + ck;  // 1x1 channel projection
            n += nb * wt_block_param_count(block_options(cfg, decoder_block_width(cfg, id.k)));
        } else {
            n += 9 * (id.v + 1) * ck * ck + ck;  // conv1
            n += 9 * ck * ck + ck;               // conv2
        }
    }
    n += 9 * c + 1;  // output projection 3x3, C -> 1
    return n;
}

template <typename T>
ParamStore<T> build_params(const NetConfig& cfg, const InitOptions& init) {
    cfg.validate();
    Rng rng(init.seed);
    ParamStore<T> s;
    const std::size_t c = cfg.base_channels, d = cfg.depth, nb = cfg.blocks_per_level;
    s.add("embed.w", uniform_fan_in<T>({c, 1, 3, 3}, 9, rng));
    s.add("embed.b", BasicTensor<T>({c}));
    for (std::size_t k = 0; k <= d; ++k) {
        const std::size_t ck = cfg.channels_at(k);
        if (k > 0) {
            const std::string p = "down.k" + std::to_string(k);
            s.add(p + ".w", uniform_fan_in<T>({ck, ck / 2, 4, 4}, ck / 2 * 16, rng));
            s.add(p + ".b", BasicTensor<T>({ck}));
        }
        const std::string prefix = stack_prefix({k, 0}, cfg);
        for (std::size_t i = 0; i < nb; ++i) {
            register_wt_block(s, prefix + ".blk" + std::to_string(i), block_options(cfg, ck), rng);
        }
    }
    for (const auto& id : node_graph(cfg).nodes) {
        if (id.v == 0) continue;
        const std::size_t ck = cfg.channels_at(id.k);
        const std::string up = "up" + level_tag(id);
        s.add(up + ".w", uniform_fan_in<T>({2 * ck, ck, 2, 2}, 2 * ck * 4, rng));
        s.add(up + ".b", BasicTensor<T>({ck}));
        const std::string prefix = stack_prefix(id, cfg);
        if (node_role(id, cfg) == NodeRole::decoder) {
            const std::size_t cin = cfg.decoder_input_channels(id.k);
            const std::size_t bw = decoder_block_width(cfg, id.k);
            register_projection(s, prefix + ".proj", cin, ck, rng);
            for (std::size_t i = 0; i < nb; ++i) {
                register_wt_block(s, prefix + ".blk" + std::to_string(i), block_options(cfg, bw), rng);
            }
        } else {
            const std::size_t cin = (id.v + 1) * ck;
            s.add(prefix + ".conv1.w", uniform_fan_in<T>({ck, cin, 3, 3}, cin * 9, rng));
            s.add(prefix + ".conv1.b", BasicTensor<T>({ck}));
            s.add(prefix + ".conv2.w", uniform_fan_in<T>({ck, ck, 3, 3}, ck * 9, rng));
            s.add(prefix + ".conv2.b", BasicTensor<T>({ck}));
        }
    }
    if (init.zero_output_projection) {
        s.add("out.w", BasicTensor<T>({1, c, 3, 3}));
    } else {
        s.add("out.w", uniform_fan_in<T>({1, c, 3, 3}, c * 9, rng));
    }
    s.add("out.b", BasicTensor<T>({1}));
    return s;
}

const NodeTrace* ForwardTrace::find(const NodeId& id) const {
    for (const auto& n : nodes) {
        if (n.id == id) return &n;
    }
    return nullptr;
}

template <typename T>
Var input_embed(Tape<T>& t, Var y, Var w, Var b) {
    const auto& yv = t.value(y);
    if (yv.ndim() != 4 || yv.dim(1) != 1) {
        throw ShapeError("input_embed: expected single-channel N,1,H,W input, got " +
                         dims_to_string(yv.dims()));
    }
    const std::size_t c = t.value(w).dim(0);
    return ag::conv2d(t, y, w, b, ops::ConvSpec{1, c, 3, 3, 1, 1, 1});
}

template <typename T>
Var downsample(Tape<T>& t, Var x, Var w, Var b) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 4) throw ShapeError("downsample: expected N,C,H,W");
    if (xv.dim(2) % 2 || xv.dim(3) % 2) {
        throw PreconditionError("downsample: spatial extents " + std::to_string(xv.dim(2)) + "x" +
                                std::to_string(xv.dim(3)) + " must be even");
    }
    const std::size_t cin = xv.dim(1);
    return ag::conv2d(t, x, w, b, ops::ConvSpec{cin, 2 * cin, 4, 4, 2, 1, 1});
}

template <typename T>
Var upsample(Tape<T>& t, Var x, Var w, Var b) {
    const auto& xv = t.value(x);
    if (xv.ndim() != 4) throw ShapeError("upsample: expected N,C,H,W");
    if (xv.dim(1) % 2) {
        throw ConfigError("upsample: channel count " + std::to_string(xv.dim(1)) + " must be even");
    }
    const auto& wv = t.value(w);
    if (wv.ndim() != 4 || wv.dim(1) * 2 != xv.dim(1) || wv.dim(2) != 2 || wv.dim(3) != 2) {
        throw ShapeError("upsample: weight " + dims_to_string(wv.dims()) + " must be [C, C/2, 2, 2]");
    }
    return ag::conv_transpose2d(t, x, w, b, 2);
}

template <typename T>
Var intermediate_node(Tape<T>& t, const std::vector<Var>& inputs, Var upsampled, Var w1, Var b1,
                      Var w2, Var b2) {
    std::vector<Var> all = inputs;
    all.push_back(upsampled);
    const Dims& ref = t.value(upsampled).dims();
    for (Var v : inputs) require_dims(t.value(v).dims(), ref, "intermediate_node input");
    Var cat = ag::concat_channels(t, all);
    const std::size_t cin = t.value(cat).dim(1), c = t.value(w1).dim(0);
    Var h = ag::gelu(t, ag::conv2d(t, cat, w1, b1, ops::ConvSpec{cin, c, 3, 3, 1, 1, 1}));
    return ag::conv2d(t, h, w2, b2, ops::ConvSpec{c, c, 3, 3, 1, 1, 1});
}

namespace {

template <typename T>
std::vector<WTBlockVars> bind_stack(Tape<T>& t, ParamStore<T>& s, const std::string& prefix,
                                    const NetConfig& cfg, std::size_t width) {
    std::vector<WTBlockVars> blocks;
    for (std::size_t i = 0; i < cfg.blocks_per_level; ++i) {
        blocks.push_back(bind_wt_block(t, s, prefix + ".blk" + std::to_string(i), block_options(cfg, width)));
    }
    return blocks;
}

}  // namespace

template <typename T>
Var forward(Tape<T>& t, Var y, ParamStore<T>& s, const NetConfig& cfg, ForwardTrace* trace) {
    cfg.validate();
    const auto& yv = t.value(y);
    if (yv.ndim() != 4 || yv.dim(1) != 1) {
        throw ShapeError("forward: expected N,1,H,W input, got " + dims_to_string(yv.dims()));
    }
    const std::size_t h = yv.dim(2), w = yv.dim(3), mult = cfg.spatial_multiple();
    Var yp = ag::pad_hw(t, y, (mult - h % mult) % mult, (mult - w % mult) % mult);
    auto p = [&](const std::string& name) { return t.param(s.at(name)); };
    const NodeGraph graph = node_graph(cfg);
    std::map<std::pair<std::size_t, std::size_t>, Var> out;
    auto record = [&](const NodeId& id, std::size_t concat) {
        if (!trace) return;
        trace->nodes.push_back({id, node_role(id, cfg), graph.in_degree(id), concat,
                                t.value(out.at({id.k, id.v})).dims()});
    };

    for (std::size_t k = 0; k <= cfg.depth; ++k) {
        const NodeId id{k, 0};
        Var x = k == 0 ? input_embed(t, yp, p("embed.w"), p("embed.b"))
                       : downsample(t, out.at({k - 1, 0}), p("down.k" + std::to_string(k) + ".w"),
                                    p("down.k" + std::to_string(k) + ".b"));
        out[{k, 0}] = wt_stack(t, x, bind_stack(t, s, stack_prefix(id, cfg), cfg, cfg.channels_at(k)));
        record(id, 0);
    }
    for (const auto& id : graph.nodes) {
        if (id.v == 0) continue;
        std::vector<Var> skips;
        Var up;
        for (const auto& e : graph.inputs_of(id)) {
            if (e.kind == EdgeKind::up) {
                const std::string name = "up" + level_tag(id);
                up = upsample(t, out.at({e.from.k, e.from.v}), p(name + ".w"), p(name + ".b"));
            } else {
                skips.push_back(out.at({e.from.k, e.from.v}));
            }
        }
        const std::string prefix = stack_prefix(id, cfg);
        std::size_t concat = 0;
        if (node_role(id, cfg) == NodeRole::decoder) {
            std::vector<Var> all = skips;
            all.push_back(up);
            Var cat = ag::concat_channels(t, all);
            concat = t.value(cat).dim(1);
            ProjectionVars proj = bind_projection(t, s, prefix + ".proj");
            auto blocks = bind_stack(t, s, prefix, cfg, decoder_block_width(cfg, id.k));
            out[{id.k, id.v}] = wt_stack(t, cat, blocks, proj, cfg.projection_after);
        } else {
            concat = (skips.size() + 1) * t.value(up).dim(1);
            out[{id.k, id.v}] = intermediate_node(t, skips, up, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"),
                                                  p(prefix + ".conv2.w"), p(prefix + ".conv2.b"));
        }
        record(id, concat);
    }
    Var top = out.at({0, cfg.depth});
    Var r = ag::conv2d(t, top, p("out.w"), p("out.b"), ops::ConvSpec{cfg.base_channels, 1, 3, 3, 1, 1, 1});
    r = ag::crop_hw(t, r, h, w);
    return ag::add(t, y, r);
}

Tensor denoise(const Tensor& y, ParamStore<float>& store, const NetConfig& cfg) {
    Tensor in = y;
    const bool squeeze = y.ndim() == 3;
    if (squeeze) in = y.reshaped({1, y.dim(0), y.dim(1), y.dim(2)});
    Tape<float> tape(false);
    Var x = tape.leaf(in);
    Var out = forward(tape, x, store, cfg);
    const auto& v = tape.value(out);
    return squeeze ? v.reshaped(y.dims()) : v;
}

#define WITU_INSTANTIATE_NET(T)                                                              \
    template ParamStore<T> build_params(const NetConfig&, const InitOptions&);              \
    template Var input_embed(Tape<T>&, Var, Var, Var);                                      \
    template Var downsample(Tape<T>&, Var, Var, Var);                                       \
    template Var upsample(Tape<T>&, Var, Var, Var);                                         \
    template Var intermediate_node(Tape<T>&, const std::vector<Var>&, Var, Var, Var, Var,   \
                                   Var);                                                    \
    template Var forward(Tape<T>&, Var, ParamStore<T>&, const NetConfig&, ForwardTrace*);

WITU_INSTANTIATE_NET(float)
WITU_INSTANTIATE_NET(double)

#undef WITU_INSTANTIATE_NET

}  // namespace witu
