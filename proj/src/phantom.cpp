#include "optounet/phantom.hpp"

#include <algorithm>
#include <cstdio>

namespace optounet {

void PhantomParams::validate() const {
  if (count == 0) throw ConfigError("phantom count must be >= 1");
  if (height == 0 || width == 0) throw ConfigError("phantom extents must be >= 1");
  if (!(center_lo <= center_hi && semi_axis_lo <= semi_axis_hi && wall_lo <= wall_hi)) {
    throw ConfigError("phantom geometry ranges must have lo <= hi");
  }
  if (!(min_foreground <= max_foreground) || max_attempts == 0) {
    throw ConfigError("phantom foreground bounds are invalid");
  }
}

namespace {

struct Geometry {
  double cy, cx;        // centre, pixels
  double ay, ax;        // outer semi-axes
  double iy, ix;        // inner semi-axes
};

bool inside(double y, double x, double cy, double cx, double ay, double ax) {
  if (ay <= 0 || ax <= 0) return false;
  const double dy = (y - cy) / ay;
  const double dx = (x - cx) / ax;
  return dy * dy + dx * dx <= 1.0;
}

Geometry draw_geometry(Rng& rng, const PhantomParams& p) {
  const double h = static_cast<double>(p.height);
  const double w = static_cast<double>(p.width);
  Geometry g{};
  g.cy = rng.uniform(p.center_lo, p.center_hi) * h;
  g.cx = rng.uniform(p.center_lo, p.center_hi) * w;
  g.ay = rng.uniform(p.semi_axis_lo, p.semi_axis_hi) * h;
  g.ax = rng.uniform(p.semi_axis_lo, p.semi_axis_hi) * w;
  const double thickness = rng.uniform(p.wall_lo, p.wall_hi) * std::min(g.ay, g.ax);
  g.iy = g.ay - thickness;
  g.ix = g.ax - thickness;
  return g;
}

}  // namespace

PhantomSample generate_phantom(Rng& rng, const PhantomParams& p) {
  p.validate();
  const Dims d{1, 1, p.height, p.width};
  auto mask = Tensor4<float>::zeros(d);
  std::size_t attempt = 0;
  Geometry g{};
  for (;; ++attempt) {
    if (attempt == p.max_attempts) {
      throw ConfigError("phantom: no geometry with foreground fraction in [" + std::to_string(p.min_foreground) +
                        ", " + std::to_string(p.max_foreground) + "] after " + std::to_string(p.max_attempts) +
                        " attempts");
    }
    g = draw_geometry(rng, p);
    std::size_t fg = 0;
    for (std::size_t y = 0; y < p.height; ++y) {
      for (std::size_t x = 0; x < p.width; ++x) {
        const double py = y + 0.5, px = x + 0.5;
        const bool wall = p.annulus && inside(py, px, g.cy, g.cx, g.ay, g.ax) &&
                          !inside(py, px, g.cy, g.cx, g.iy, g.ix);
        mask(0, 0, y, x) = wall ? 1.0f : 0.0f;
        fg += wall;
      }
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(d.plane());
    if (fg > 0 && frac >= p.min_foreground && frac <= p.max_foreground) break;
  }

  const double wall_level = p.wall_intensity + rng.uniform(-p.wall_jitter, p.wall_jitter);
  auto image = Tensor4<float>::zeros(d);
  for (std::size_t y = 0; y < p.height; ++y) {
    const double depth = p.height > 1 ? static_cast<double>(y) / static_cast<double>(p.height - 1) : 0.0;
    const double background = p.background_top + (p.background_bottom - p.background_top) * depth;
    for (std::size_t x = 0; x < p.width; ++x) {
      double v = background;
      if (mask(0, 0, y, x) != 0.0f) {
        v = wall_level;
      } else if (p.annulus && inside(y + 0.5, x + 0.5, g.cy, g.cx, g.iy, g.ix)) {
        v = p.lumen_intensity;
      }
      if (p.speckle) v *= p.speckle_base + p.speckle_scale * rng.exponential();
      image(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return PhantomSample{std::move(image), std::move(mask)};
}

SplitSizes default_split(std::size_t n) {
  SplitSizes s;
  s.val = n / 8;
  s.test = n / 8;
  s.train = n - s.val - s.test;
  return s;
}

std::vector<ManifestEntry> gen_phantom(std::uint64_t seed, const PhantomParams& params,
                                       const std::filesystem::path& dir) {
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create dataset directory " + dir.string());
  }
  Rng rng(seed);
  const SplitSizes sizes = default_split(params.count);
  std::vector<PhantomSample> samples;
  samples.reserve(params.count);
  for (std::size_t i = 0; i < params.count; ++i) samples.push_back(generate_phantom(rng, params));

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < params.count; ++i) {
    char image_name[32], mask_name[32];
    std::snprintf(image_name, sizeof image_name, "image_%04zu.ot4", i);
    std::snprintf(mask_name, sizeof mask_name, "mask_%04zu.ot4", i);
    save_tensor(dir / image_name, samples[i].image);
    save_tensor(dir / mask_name, samples[i].mask);
    const Split split = i < sizes.train ? Split::Train : (i < sizes.train + sizes.val ? Split::Val : Split::Test);
    entries.push_back(ManifestEntry{image_name, mask_name, split});
  }
  save_manifest(dir / kManifestName, entries);
  return entries;
}

}  // namespace optounet
