#include "witu/cli_config.hpp"

#include <algorithm>
#include <sstream>

#include "witu/errors.hpp"

namespace witu {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
    std::vector<ConfigEntry> out;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        if (e.key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (e.value.size() >= 2 && e.value.front() == '"' && e.value.back() == '"') {
            e.value = e.value.substr(1, e.value.size() - 2);
        }
        out.push_back(std::move(e));
    }
    return out;
}

void require_known_keys(const std::vector<ConfigEntry>& entries, const std::vector<std::string>& known) {
    for (const auto& e : entries) {
        if (std::find(known.begin(), known.end(), e.key) != known.end()) continue;
        std::string list;
        for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("config line " + std::to_string(e.line) + ": unknown key '" + e.key +
                          "'; known keys: " + list);
    }
}

}  // namespace witu
