#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "witu/autograd.hpp"
#include "witu/net_config.hpp"
#include "witu/param_store.hpp"
#include "witu/wt_block.hpp"

namespace witu {

enum class NodeRole { encoder, intermediate, decoder, bottleneck };

// Node X_{k,v}: k is the downsampling depth, v the lateral position.
struct NodeId {
    std::size_t k = 0;
    std::size_t v = 0;
    bool operator==(const NodeId&) const = default;
};

NodeRole node_role(const NodeId& id, const NetConfig& cfg);
std::string node_name(const NodeId& id);  // "x_{k,v}"

enum class EdgeKind { down, skip, up };

struct NodeEdge {
    NodeId from;
    NodeId to;
    EdgeKind kind;
};

struct NodeGraph {
    std::vector<NodeId> nodes;  // topological order
    std::vector<NodeEdge> edges;

    std::size_t in_degree(const NodeId& id) const;
    // Sources of `id` in concatenation order (skips by v, then the upsample).
    std::vector<NodeEdge> inputs_of(const NodeId& id) const;
    bool contains(const NodeId& id) const;
};

// Nested mode: every (k, v) with k + v <= D; x_{k,v} (v > 0) consumes
// x_{k,0..v-1} and U(x_{k+1,v-1}). Plain mode keeps only the encoder column
// and the decoder nodes v = D - k, each fed by x_{k,0} and U(x_{k+1,D-k-1}).
NodeGraph node_graph(const NetConfig& cfg);

// Closed-form parameter count (see README for the per-component formulas).
std::size_t param_count(const NetConfig& cfg);

struct InitOptions {
    std::uint64_t seed = 0;
    // Zero output projection makes the initial network the identity x^ = y.
    bool zero_output_projection = true;
};

template <typename T>
ParamStore<T> build_params(const NetConfig& cfg, const InitOptions& init = {});

// Instrumentation filled by forward() when requested.
struct NodeTrace {
    NodeId id;
    NodeRole role;
    std::size_t in_degree = 0;
    std::size_t concat_channels = 0;  // width after concatenation (0 for encoder/bottleneck)
    Dims output;                      // N,C,H,W of x_{k,v}
};

struct ForwardTrace {
    std::vector<NodeTrace> nodes;
    const NodeTrace* find(const NodeId& id) const;
};

// Building blocks, exposed for tests.
template <typename T>
Var input_embed(Tape<T>& t, Var y, Var w, Var b);
template <typename T>
Var downsample(Tape<T>& t, Var x, Var w, Var b);
template <typename T>
Var upsample(Tape<T>& t, Var x, Var w, Var b);
// Concatenates inputs + upsampled along channels, then conv3x3 -> GELU -> conv3x3.
template <typename T>
Var intermediate_node(Tape<T>& t, const std::vector<Var>& inputs, Var upsampled, Var w1, Var b1,
                      Var w2, Var b2);

// y [N,1,H,W] -> x^ = y + r. Extents not divisible by 2^D are zero-padded
// bottom/right for the trunk and the residual is cropped back.
template <typename T>
Var forward(Tape<T>& t, Var y, ParamStore<T>& store, const NetConfig& cfg,
            ForwardTrace* trace = nullptr);

// Inference convenience: input [N,1,H,W] or [1,H,W].
Tensor denoise(const Tensor& y, ParamStore<float>& store, const NetConfig& cfg);

}  // namespace witu
