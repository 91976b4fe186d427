#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace optounet {

enum class Variant { Opto, Baseline };

std::string to_string(Variant v);
Variant parse_variant(std::string_view text);

/// Declarative description of a network. Per-level lists run from the
/// shallowest (full resolution) level to the deepest.
struct ModelConfig {
  Variant variant = Variant::Opto;
  std::size_t in_channels = 1;
  std::size_t levels = 4;
  /// Encoder block widths. The baseline bottleneck is twice the last entry.
  std::vector<std::size_t> channels{64, 128, 256, 512};
  /// Opto decoder: width of the 1x1 conv applied after each concatenation
  /// (0 = no compression conv) and output width of the following block.
  std::vector<std::size_t> compress{40, 80, 160, 320};
  std::vector<std::size_t> decoder{32, 64, 128, 256};
  std::size_t atrous_kernel = 2;
  std::size_t atrous_dilation = 2;
  std::size_t separable_kernel = 3;
  std::size_t separable_dilation = 2;
  /// Input extents the model is trained for; part of the digest.
  std::size_t height = 128;
  std::size_t width = 64;

  static ModelConfig opto_default();
  static ModelConfig baseline_default();

  /// Throws ConfigError when lists and levels disagree or extents are not
  /// divisible by 2^levels.
  void validate() const;
  std::size_t divisor() const { return std::size_t{1} << levels; }

  /// Canonical key=value text; round-trips through parse().
  std::string canonical() const;
  static ModelConfig parse(std::string_view text);
  /// FNV-1a 64 of canonical().
  std::uint64_t digest() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace optounet
