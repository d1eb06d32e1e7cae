#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "witu/net_config.hpp"
#include "witu/param_store.hpp"

namespace witu {

// WITU layout (little-endian):
//   "WITU" | u32 version (=1) | u32 blob length | UTF-8 JSON blob
//   | u32 tensor count | per tensor: u32 name length, name, u32 ndim,
//   ndim x u64 extents, f32 data
// The blob is {"net": NetConfig, "train": {...}}. Optimizer moments, when
// present, are stored as "optim.m.<name>" / "optim.v.<name>" tensors and the
// step count under train.step.
inline constexpr std::uint32_t kWituVersion = 1;

struct Checkpoint {
    NetConfig net;
    ParamStore<float> params;
    nlohmann::json train = nlohmann::json::object();
};

void write_checkpoint(std::ostream& os, const NetConfig& net, const ParamStore<float>& params,
                      const nlohmann::json& train = nlohmann::json::object());
// Validates every expected parameter name and shape against the stored config.
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const NetConfig& net,
                     const ParamStore<float>& params,
                     const nlohmann::json& train = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace witu
