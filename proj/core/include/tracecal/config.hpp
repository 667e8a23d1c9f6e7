#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

namespace tracecal {

// Parses the TOML subset used for run configs: [table] and [a.b] headers,
// key = value pairs with bare or quoted keys, basic and literal strings,
// integers, floats, booleans, and (possibly nested, multi-line) arrays.
// Inline tables, dates and multi-line strings are rejected with a
// ConfigError naming the line.
nlohmann::json parse_toml(std::string_view text);

// Loads a .json or .toml config file. Missing files raise IoError.
nlohmann::json load_config(const std::filesystem::path& path);

}  // namespace tracecal
