#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "witu/tensor.hpp"

namespace witu {

// WTEN layout (little-endian):
//   "WTEN" | u32 version (=1) | u32 ndim | ndim x u64 extents | numel x f32
inline constexpr std::uint32_t kWtenVersion = 1;

void write_wten(std::ostream& os, const Tensor& t);
Tensor read_wten(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Writes to "<path>.tmp" then renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// 8-bit binary PGM (P5) of the last two axes of a [H,W] / [1,H,W] /
// [1,1,H,W] image, mapping [lo, hi] linearly onto [0, 255] with clamping.
std::string encode_pgm(const Tensor& img, double lo = 0.0, double hi = 1.0);

namespace le {

void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f32(std::ostream& os, float v);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
float get_f32(std::istream& is);

}  // namespace le

}  // namespace witu
