#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "witu/autograd.hpp"
#include "witu/param_store.hpp"
#include "witu/rng.hpp"
#include "witu/window_ops.hpp"

namespace witu {

// Hyperparameters of one Window Transformer block at a given width.
struct BlockOptions {
    std::size_t channels = 32;
    std::size_t heads = 2;
    std::size_t window = 8;
    std::size_t expansion = 2;
    bool use_lipe = true;            // false: plain 2-layer MLP feed-forward
    bool depthwise_lipe = false;     // LiPe 3x3 conv as depthwise instead of full
    bool shared_bias_table = false;  // one (2M-1)^2 table for all heads
    double ln_eps = ops::kLayerNormEps;
};

// Expand (C -> eC linear) -> GELU -> 3x3 conv (pad 1) -> GELU -> restore (eC -> C).
struct LiPeVars {
    Var expand_w, expand_b;
    Var conv_w, conv_b;
    Var restore_w, restore_b;
    bool depthwise = false;
};

struct MlpVars {
    Var fc1_w, fc1_b, fc2_w, fc2_b;
};

struct WTBlockVars {
    Var ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    AttentionVars attn;
    bool use_lipe = true;
    LiPeVars lipe;
    MlpVars mlp;
    double ln_eps = ops::kLayerNormEps;
};

struct ProjectionVars {
    Var weight;  // [Cout, Cin, 1, 1]
    Var bias;    // [Cout]
};

// Layer norm over the channel axis of an N,C,H,W tensor.
template <typename T>
Var layer_norm_channels(Tape<T>& t, Var x, Var gamma, Var beta, double eps);

template <typename T>
Var lipe(Tape<T>& t, Var x, const LiPeVars& p);

template <typename T>
Var mlp_ffn(Tape<T>& t, Var x, const MlpVars& p);

// X* = W-MSA(LN(X)) + X ; X' = FFN(LN(X*)) + X*
template <typename T>
Var wt_block(Tape<T>& t, Var x, const WTBlockVars& p);

// 1x1 pointwise channel map; requires Cin >= Cout >= 1.
template <typename T>
Var channel_projection(Tape<T>& t, Var x, const ProjectionVars& p);

// Sequential WT blocks; with a projection it runs before the blocks, or
// after them when projection_after is set.
template <typename T>
Var wt_stack(Tape<T>& t, Var x, const std::vector<WTBlockVars>& blocks,
             const std::optional<ProjectionVars>& projection = std::nullopt,
             bool projection_after = false);

// Parameter registration/binding under a name prefix ("enc.k0.blk1", ...).
// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases and bias tables 0,
// layer-norm gamma 1 / beta 0.
template <typename T>
void register_wt_block(ParamStore<T>& store, const std::string& prefix, const BlockOptions& opt,
                       Rng& rng);
template <typename T>
WTBlockVars bind_wt_block(Tape<T>& t, ParamStore<T>& store, const std::string& prefix,
                          const BlockOptions& opt);
std::size_t wt_block_param_count(const BlockOptions& opt);

template <typename T>
void register_projection(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                         std::size_t cout, Rng& rng);
template <typename T>
ProjectionVars bind_projection(Tape<T>& t, ParamStore<T>& store, const std::string& prefix);

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename T>
BasicTensor<T> uniform_fan_in(const Dims& dims, std::size_t fan_in, Rng& rng);

}  // namespace witu
