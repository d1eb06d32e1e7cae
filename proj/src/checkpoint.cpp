#include "witu/checkpoint.hpp"

#include <array>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "witu/tensor_io.hpp"
#include "witu/witunet.hpp"

namespace witu {

namespace {

constexpr const char* kMomentM = "optim.m.";
constexpr const char* kMomentV = "optim.v.";

void put_string(std::ostream& os, const std::string& s) {
    le::put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::size_t limit) {
    auto n = le::get_u32(is);
    if (n > limit) throw IoError("WITU: string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("WITU: truncated string");
    return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_string(os, name);
    le::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.dims()) le::put_u64(os, d);
    for (float v : t.data()) le::put_f32(os, v);
}

}  // namespace

void write_checkpoint(std::ostream& os, const NetConfig& net, const ParamStore<float>& params,
                      const nlohmann::json& train) {
    nlohmann::json blob{{"net", net.to_json()}, {"train", train}};
    blob["train"]["step"] = params.step;
    bool moments = params.step > 0;
    for (const auto& p : params) moments = moments && !p.m.empty() && !p.v.empty();
    std::size_t count = params.size() * (moments ? 3 : 1);

    os.write("WITU", 4);
    le::put_u32(os, kWituVersion);
    put_string(os, blob.dump());
    le::put_u32(os, static_cast<std::uint32_t>(count));
    for (const auto& p : params) put_tensor(os, p.name, p.value);
    if (moments) {
        for (const auto& p : params) put_tensor(os, kMomentM + p.name, p.m);
        for (const auto& p : params) put_tensor(os, kMomentV + p.name, p.v);
    }
}

Checkpoint read_checkpoint(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (!is || std::string(magic.data(), 4) != "WITU") throw IoError("bad WITU magic");
    if (auto v = le::get_u32(is); v != kWituVersion) {
        throw IoError("unsupported WITU version " + std::to_string(v));
    }
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(get_string(is, 1u << 24));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("WITU: config blob is not valid JSON: ") + e.what());
    }
    if (!blob.contains("net")) throw IoError("WITU: config blob lacks \"net\"");
    Checkpoint ck;
    ck.net = NetConfig::from_json(blob["net"]);
    ck.train = blob.value("train", nlohmann::json::object());
    ck.params = build_params<float>(ck.net);
    ck.params.step = ck.train.value("step", std::size_t{0});

    std::set<std::string> seen;
    auto count = le::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(is, 4096);
        auto ndim = le::get_u32(is);
        if (ndim == 0 || ndim > 16) throw IoError("WITU: bad rank for tensor " + name);
        Dims dims(ndim);
        for (auto& d : dims) d = le::get_u64(is);
        std::vector<float> data(dims_product(dims));
        for (auto& v : data) v = le::get_f32(is);
        Tensor t(dims, std::move(data));

        std::string base = name;
        int slot = 0;
        if (name.starts_with(kMomentM)) {
            base = name.substr(std::string(kMomentM).size());
            slot = 1;
        } else if (name.starts_with(kMomentV)) {
            base = name.substr(std::string(kMomentV).size());
            slot = 2;
        }
        auto* p = ck.params.find(base);
        if (!p) throw ConfigError("checkpoint tensor '" + name + "' is not part of the configured network");
        require_dims(t.dims(), p->value.dims(), "checkpoint tensor '" + name + "'");
        if (slot == 0) {
            p->value = std::move(t);
            seen.insert(base);
        } else if (slot == 1) {
            p->m = std::move(t);
        } else {
            p->v = std::move(t);
        }
    }
    for (const auto& p : ck.params) {
        if (!seen.contains(p.name)) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetConfig& net,
                     const ParamStore<float>& params, const nlohmann::json& train) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, net, params, train);
    write_file_atomic(path, os.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::istringstream is(read_file(path), std::ios::binary);
    return read_checkpoint(is);
}

}  // namespace witu
