#include "optounet/model_config.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "optounet/error.hpp"
#include "optounet/kv_config.hpp"

namespace optounet {

std::string to_string(Variant v) { return v == Variant::Opto ? "opto" : "baseline"; }

Variant parse_variant(std::string_view text) {
  if (text == "opto") return Variant::Opto;
  if (text == "baseline") return Variant::Baseline;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected opto or baseline)");
}

ModelConfig ModelConfig::opto_default() { return ModelConfig{}; }

ModelConfig ModelConfig::baseline_default() {
  ModelConfig c;
  c.variant = Variant::Baseline;
  c.compress.clear();
  c.decoder.clear();
  return c;
}

void ModelConfig::validate() const {
  if (levels == 0 || levels > 10) throw ConfigError("levels must be in [1, 10]");
  if (in_channels == 0) throw ConfigError("in_channels must be >= 1");
  if (channels.size() != levels) throw ConfigError("channels list length must equal levels");
  for (auto c : channels) {
    if (c == 0) throw ConfigError("channel widths must be >= 1");
  }
  if (variant == Variant::Opto) {
    if (compress.size() != levels || decoder.size() != levels) {
      throw ConfigError("compress and decoder lists must have one entry per level");
    }
    for (auto c : decoder) {
      if (c == 0) throw ConfigError("decoder widths must be >= 1");
    }
    if (atrous_kernel == 0 || atrous_dilation == 0 || separable_kernel == 0 || separable_dilation == 0) {
      throw ConfigError("bridge kernels and dilations must be >= 1");
    }
  }
  if (height == 0 || width == 0 || height % divisor() != 0 || width % divisor() != 0) {
    throw ConfigError("input extents " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by 2^levels = " + std::to_string(divisor()));
  }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& key, std::string_view text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    out.push_back(parse_size(key, piece));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << '\n'
     << "in_channels=" << in_channels << '\n'
     << "levels=" << levels << '\n'
     << "channels=" << join(channels) << '\n'
     << "compress=" << join(compress) << '\n'
     << "decoder=" << join(decoder) << '\n'
     << "atrous_kernel=" << atrous_kernel << '\n'
     << "atrous_dilation=" << atrous_dilation << '\n'
     << "separable_kernel=" << separable_kernel << '\n'
     << "separable_dilation=" << separable_dilation << '\n'
     << "height=" << height << '\n'
     << "width=" << width << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig c;
  for (const auto& [key, value] : parse_kv(text)) {
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "in_channels") c.in_channels = parse_size(key, value);
    else if (key == "levels") c.levels = parse_size(key, value);
    else if (key == "channels") c.channels = split_sizes(key, value);
    else if (key == "compress") c.compress = split_sizes(key, value);
    else if (key == "decoder") c.decoder = split_sizes(key, value);
    else if (key == "atrous_kernel") c.atrous_kernel = parse_size(key, value);
    else if (key == "atrous_dilation") c.atrous_dilation = parse_size(key, value);
    else if (key == "separable_kernel") c.separable_kernel = parse_size(key, value);
    else if (key == "separable_dilation") c.separable_dilation = parse_size(key, value);
    else if (key == "height") c.height = parse_size(key, value);
    else if (key == "width") c.width = parse_size(key, value);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ModelConfig::digest() const { return fnv1a64(canonical()); }

}  // namespace optounet
