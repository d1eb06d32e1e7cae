#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace witu {

struct NetConfig {
    std::size_t base_channels = 32;    // C
    std::size_t depth = 4;             // D
    std::size_t window = 8;            // M
    std::size_t blocks_per_level = 2;  // WT blocks per stack
    std::size_t head_dim = 16;         // heads at width w = w / head_dim
    std::size_t lipe_expansion = 2;
    bool use_lipe = true;              // false: MLP feed-forward (ablation 1)
    bool use_nested = true;            // false: plain U-Net skips (ablation 2)
    bool projection_after = false;     // decoder channel projection after the WT blocks
    bool depthwise_lipe = false;
    bool shared_bias_table = false;
    double ln_eps = 1e-5;

    // D=2, C=8, M=4, one block per level, head_dim 4.
    static NetConfig desk();

    void validate() const;
    std::size_t channels_at(std::size_t level) const { return base_channels << level; }
    std::size_t heads_for(std::size_t width) const { return width / head_dim; }
    // Input extents must be multiples of this (the network pads otherwise).
    std::size_t spatial_multiple() const { return std::size_t{1} << depth; }
    // Channel width entering the decoder WT stack at level k.
    std::size_t decoder_input_channels(std::size_t level) const;

    nlohmann::json to_json() const;
    static NetConfig from_json(const nlohmann::json& j);
    bool operator==(const NetConfig&) const = default;
};

}  // namespace witu
