#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace optounet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses one `key=value` per line. Blank lines and lines starting with '#'
/// are skipped; whitespace around keys and values is trimmed.
KeyValues parse_kv(std::string_view text);
KeyValues read_kv_file(const std::filesystem::path& path);

std::size_t parse_size(const std::string& key, std::string_view value);
std::uint64_t parse_u64(const std::string& key, std::string_view value);
double parse_double(const std::string& key, std::string_view value);
bool parse_bool(const std::string& key, std::string_view value);

}  // namespace optounet
