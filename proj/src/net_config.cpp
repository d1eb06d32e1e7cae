#include "witu/net_config.hpp"

#include "witu/errors.hpp"

namespace witu {

NetConfig NetConfig::desk() {
    NetConfig c;
    c.base_channels = 8;
    c.depth = 2;
    c.window = 4;
    c.blocks_per_level = 1;
    c.head_dim = 4;
    return c;
}

void NetConfig::validate() const {
    if (base_channels == 0) throw ConfigError("base_channels must be >= 1");
    if (depth == 0 || depth > 8) throw ConfigError("depth must be in 1..8");
    if (window == 0) throw ConfigError("window must be >= 1");
    if (blocks_per_level == 0) throw ConfigError("blocks_per_level must be >= 1");
    if (lipe_expansion == 0) throw ConfigError("lipe_expansion must be >= 1");
    if (head_dim == 0 || base_channels % head_dim) {
        throw ConfigError("base_channels (" + std::to_string(base_channels) +
                          ") must be divisible by head_dim (" + std::to_string(head_dim) + ")");
    }
    if (!(ln_eps > 0)) throw ConfigError("ln_eps must be positive");
}

std::size_t NetConfig::decoder_input_channels(std::size_t level) const {
    const std::size_t sources = use_nested ? depth - level + 1 : 2;
    return sources * channels_at(level);
}

nlohmann::json NetConfig::to_json() const {
    return nlohmann::json{{"base_channels", base_channels},
                          {"depth", depth},
                          {"window", window},
                          {"blocks_per_level", blocks_per_level},
                          {"head_dim", head_dim},
                          {"lipe_expansion", lipe_expansion},
                          {"use_lipe", use_lipe},
                          {"use_nested", use_nested},
                          {"projection_after", projection_after},
                          {"depthwise_lipe", depthwise_lipe},
                          {"shared_bias_table", shared_bias_table},
                          {"ln_eps", ln_eps}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
    NetConfig c;
    try {
        c.base_channels = j.at("base_channels").get<std::size_t>();
        c.depth = j.at("depth").get<std::size_t>();
        c.window = j.at("window").get<std::size_t>();
        c.blocks_per_level = j.at("blocks_per_level").get<std::size_t>();
        c.head_dim = j.at("head_dim").get<std::size_t>();
        c.lipe_expansion = j.at("lipe_expansion").get<std::size_t>();
        c.use_lipe = j.at("use_lipe").get<bool>();
        c.use_nested = j.at("use_nested").get<bool>();
        c.projection_after = j.at("projection_after").get<bool>();
        c.depthwise_lipe = j.value("depthwise_lipe", false);
        c.shared_bias_table = j.value("shared_bias_table", false);
        c.ln_eps = j.value("ln_eps", 1e-5);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid network config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace witu
