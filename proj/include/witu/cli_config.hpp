#pragma once

#include <string>
#include <utility>
#include <vector>

namespace witu {

struct ConfigEntry {
    std::string key;
    std::string value;
    int line = 0;
};

// "key = value" lines; '#' starts a comment; blank lines ignored. Keys use
// the long flag names without dashes. Malformed lines throw ConfigError.
std::vector<ConfigEntry> parse_config_text(const std::string& text);

// Throws ConfigError naming the first unknown key and listing all known keys.
void require_known_keys(const std::vector<ConfigEntry>& entries, const std::vector<std::string>& known);

}  // namespace witu
