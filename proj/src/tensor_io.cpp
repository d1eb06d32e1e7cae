#include "witu/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace witu {

namespace le {

namespace {

template <typename U>
void put(std::ostream& os, U v) {
    std::array<char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    os.write(buf.data(), buf.size());
}

template <typename U>
U get(std::istream& is) {
    std::array<unsigned char, sizeof(U)> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!is) throw IoError("unexpected end of stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void put_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void put_f32(std::ostream& os, float v) { put(os, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t get_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get<std::uint64_t>(is); }
float get_f32(std::istream& is) { return std::bit_cast<float>(get<std::uint32_t>(is)); }

}  // namespace le

void write_wten(std::ostream& os, const Tensor& t) {
    if (t.empty()) throw ShapeError("cannot serialize an empty tensor");
    os.write("WTEN", 4);
    le::put_u32(os, kWtenVersion);
    le::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims()) le::put_u64(os, d);
    for (float v : t.data()) le::put_f32(os, v);
}

Tensor read_wten(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || std::string(magic.data(), 4) != "WTEN") throw IoError("bad WTEN magic");
    auto version = le::get_u32(is);
    if (version != kWtenVersion) {
        throw IoError("unsupported WTEN version " + std::to_string(version));
    }
    auto ndim = le::get_u32(is);
    if (ndim == 0 || ndim > 16) throw IoError("bad WTEN rank " + std::to_string(ndim));
    Dims dims(ndim);
    for (auto& d : dims) d = le::get_u64(is);
    std::size_t n = dims_product(dims);
    std::vector<float> data(n);
    for (auto& v : data) v = le::get_f32(is);
    return Tensor(std::move(dims), std::move(data));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_wten(os, t);
    write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::istringstream is(read_file(path), std::ios::binary);
    try {
        return read_wten(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace witu

namespace witu {

std::string encode_pgm(const Tensor& img, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("PGM window: hi must exceed lo");
    if (img.ndim() < 2) throw ShapeError("PGM export needs an image, got " + dims_to_string(img.dims()));
    const std::size_t h = img.dim(img.ndim() - 2), w = img.dim(img.ndim() - 1);
    if (img.numel() != h * w) {
        throw ShapeError("PGM export needs a single-channel image, got " + dims_to_string(img.dims()));
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + h * w);
    for (float v : img.data()) {
        const double t = std::clamp((static_cast<double>(v) - lo) / (hi - lo), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    return out;
}

}  // namespace witu
