#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "witu/autograd.hpp"
#include "witu/tensor.hpp"

namespace witu {

// Non-overlapping M x M tiling of an H x W map. Windows are numbered
// row-major over the grid; tokens row-major within a window.
struct WindowGrid {
    std::size_t window = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    // Throws PreconditionError unless M divides H and W.
    static WindowGrid make(std::size_t height, std::size_t width, std::size_t window);

    std::size_t rows() const { return height / window; }
    std::size_t cols() const { return width / window; }
    std::size_t count() const { return rows() * cols(); }
    std::size_t tokens() const { return window * window; }
    // Top-left pixel of window w.
    std::pair<std::size_t, std::size_t> origin(std::size_t w) const {
        return {(w / cols()) * window, (w % cols()) * window};
    }
};

// x [N,C,H,W] -> [N*nw, M*M, C]
template <typename T>
BasicTensor<T> window_partition(const BasicTensor<T>& x, std::size_t window);
// tokens [N*nw, M*M, C] -> [N,C,H,W]
template <typename T>
BasicTensor<T> window_merge(const BasicTensor<T>& tokens, std::size_t window, std::size_t height,
                            std::size_t width);

// Maps each token pair (i, j) of an M x M window to a cell of the
// (2M-1) x (2M-1) bias table: (row_i - row_j + M - 1, col_i - col_j + M - 1).
struct RelativePositionIndex {
    std::size_t window = 1;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> cells;  // M^2 * M^2, row-major (i, j)

    std::size_t table_side() const { return 2 * window - 1; }
    std::pair<std::uint32_t, std::uint32_t> at(std::size_t i, std::size_t j) const {
        return cells[i * window * window + j];
    }
    std::size_t flat(std::size_t i, std::size_t j) const {
        auto [r, c] = at(i, j);
        return r * table_side() + c;
    }
};

RelativePositionIndex relative_position_index(std::size_t window);

// Projection weights are stored fused over heads: rows [h*dk, (h+1)*dk) of
// wq/wk/wv are head h's projection (i.e. the transpose of its C x dk matrix).
// bias_table is [tables, 2M-1, 2M-1] with tables == heads, or 1 when one
// table is shared by all heads.
struct AttentionVars {
    std::size_t heads = 1;
    std::size_t window = 1;
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    Var bias_table;
};

// Per-window key mask: mask[w * M*M + t] != 0 marks token t of window w
// (within one image) as padding. Windows of batch item b use w = b % windows.
struct KeyMask {
    std::size_t windows = 0;
    std::vector<std::uint8_t> padded;
    bool empty() const { return padded.empty(); }
};

// Builds the mask for an image of valid extent (h, w) padded up to the grid.
KeyMask padding_mask(const WindowGrid& grid, std::size_t valid_h, std::size_t valid_w);

inline constexpr float kMaskedLogit = -1e9f;

namespace ag {

template <typename T>
Var window_partition(Tape<T>& t, Var x, std::size_t window);
template <typename T>
Var window_merge(Tape<T>& t, Var tokens, std::size_t window, std::size_t height, std::size_t width);
// [B, T, C] -> [B, heads, T, C/heads]
template <typename T>
Var split_heads(Tape<T>& t, Var x, std::size_t heads);
// [B, heads, T, dk] -> [B, T, heads*dk]
template <typename T>
Var merge_heads(Tape<T>& t, Var x);
// scores [B, heads, M^2, M^2] + gathered bias table (+ mask logits on padded keys).
template <typename T>
Var add_position_bias(Tape<T>& t, Var scores, Var table, const RelativePositionIndex& index,
                      const KeyMask& mask);

}  // namespace ag

// Windowed multi-head self-attention over windowed tokens [B, M^2, C]:
// per head softmax(Q K^T / sqrt(dk) + B) V, heads concatenated per token,
// then the output projection.
template <typename T>
Var w_msa(Tape<T>& t, Var tokens, const AttentionVars& p, const KeyMask& mask = {});

// Pads x [N,C,H,W] up to the window grid, runs w_msa on every window and
// merges/crops back to [N,C,H,W]. No normalization or residual.
template <typename T>
Var windowed_attention(Tape<T>& t, Var x, const AttentionVars& p);

struct AttentionFlops {
    std::uint64_t windowed = 0;
    std::uint64_t global = 0;
};

// Multiply counts of the score (QK^T) and apply (AV) products:
// windowed 2*M^2*H*W*C, global 2*(H*W)^2*C. Projections are excluded.
AttentionFlops attention_flops(std::uint64_t height, std::uint64_t width, std::uint64_t channels,
                               std::uint64_t window);

// Single-head global softmax(QK^T/sqrt(C))V over tokens [N, T, C], no bias.
// Streams one query row at a time (O(T) scratch) so very large T fits.
Tensor global_attention_streaming(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace witu
