#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "optounet/io.hpp"
#include "optounet/rng.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

/// Synthetic B-scan of a vessel cross-section: an elliptical wall (the
/// foreground) around a dark lumen on a background that darkens with depth,
/// under multiplicative speckle. Fractions are relative to the image extents.
struct PhantomParams {
  std::size_t count = 240;
  std::size_t height = 128;
  std::size_t width = 64;
  bool annulus = true;
  bool speckle = true;

  double center_lo = 0.25;
  double center_hi = 0.75;
  double semi_axis_lo = 0.15;
  double semi_axis_hi = 0.35;
  /// Wall thickness as a fraction of the smaller outer semi-axis.
  double wall_lo = 0.10;
  double wall_hi = 0.25;
  double wall_intensity = 0.7;
  double wall_jitter = 0.1;
  double lumen_intensity = 0.15;
  double background_top = 0.3;
  double background_bottom = 0.05;
  /// Speckle factor = speckle_base + speckle_scale * Exponential(1).
  double speckle_base = 0.7;
  double speckle_scale = 0.3;

  double min_foreground = 0.02;
  double max_foreground = 0.30;
  std::size_t max_attempts = 1000;

  void validate() const;
};

struct PhantomSample {
  Tensor4<float> image;
  Tensor4<float> mask;
};

/// One (1,1,h,w) image/mask pair. Geometries whose foreground fraction falls
/// outside [min_foreground, max_foreground] are redrawn; ConfigError after
/// max_attempts rejections.
PhantomSample generate_phantom(Rng& rng, const PhantomParams& params);

/// Split sizes for a dataset of n images in the proportions 6:1:1
/// (val = test = n / 8, train = the rest).
struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};
SplitSizes default_split(std::size_t n);

/// Writes count image/mask tensor files plus manifest.csv into dir.
std::vector<ManifestEntry> gen_phantom(std::uint64_t seed, const PhantomParams& params,
                                       const std::filesystem::path& dir);

}  // namespace optounet
