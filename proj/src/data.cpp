#include "fspnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fspnet/errors.hpp"
#include "fspnet/image_io.hpp"
#include "fspnet/random.hpp"
#include "fspnet/threads.hpp"

namespace fs = std::filesystem;

namespace fspnet {

namespace {

// Smooth field: coarse normal grid, bilinearly interpolated, squashed into
// (0.25, 0.75) so later mean shifts never leave [0,1].
std::vector<double> smooth_texture(Rng& rng, std::size_t h, std::size_t w) {
  constexpr std::size_t kCell = 8;
  const std::size_t gh = h / kCell + 2, gw = w / kCell + 2;
  std::vector<double> grid(gh * gw);
  for (double& v : grid) v = rng.next_normal();
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / kCell;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / kCell;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const double wx = fx - static_cast<double>(x0);
      const double v00 = grid[y0 * gw + x0];
      const double v01 = grid[y0 * gw + x0 + 1];
      const double v10 = grid[(y0 + 1) * gw + x0];
      const double v11 = grid[(y0 + 1) * gw + x0 + 1];
      const double v = (v00 * (1 - wx) + v01 * wx) * (1 - wy) +
                       (v10 * (1 - wx) + v11 * wx) * wy;
      out[y * w + x] = 0.5 + 0.25 * std::tanh(v);
    }
  }
  return out;
}

std::vector<std::uint8_t> draw_blob(Rng& rng, std::size_t h, std::size_t w) {
  const double min_dim = static_cast<double>(std::min(h, w));
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::uint8_t> mask(h * w, 0);
    const std::size_t n_ellipses = 1 + rng.next_below(3);
    for (std::size_t e = 0; e < n_ellipses; ++e) {
      const double cx = rng.next_uniform(0.25, 0.75) * static_cast<double>(w);
      const double cy = rng.next_uniform(0.25, 0.75) * static_cast<double>(h);
      const double rx = rng.next_uniform(0.10, 0.28) * min_dim;
      const double ry = rng.next_uniform(0.10, 0.28) * min_dim;
      const double theta = rng.next_uniform(0.0, 3.14159265358979323846);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          const double u = (dx * ct + dy * st) / rx;
          const double v = (-dx * st + dy * ct) / ry;
          if (u * u + v * v <= 1.0) mask[y * w + x] = 1;
        }
    }
    std::size_t fg = 0;
    for (std::uint8_t m : mask) fg += m;
    const double frac = static_cast<double>(fg) / static_cast<double>(h * w);
    if (frac >= 0.02 && frac <= 0.60) return mask;
  }
  // Deterministic fallback: centered circle, ~19.6% coverage.
  std::vector<std::uint8_t> mask(h * w, 0);
  const double r = 0.25 * min_dim;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - static_cast<double>(w) / 2.0;
      const double dy = static_cast<double>(y) - static_cast<double>(h) / 2.0;
      if (dx * dx + dy * dy <= r * r) mask[y * w + x] = 1;
    }
  return mask;
}

SyntheticSample make_sample(Rng rng, std::size_t h, std::size_t w) {
  const std::vector<std::uint8_t> blob = draw_blob(rng, h, w);
  const std::vector<double> bg_tex = smooth_texture(rng, h, w);
  const std::vector<double> fg_tex = smooth_texture(rng, h, w);
  const double contrast = rng.next_uniform(0.02, 0.08);

  std::size_t n_fg = 0;
  for (std::uint8_t m : blob) n_fg += m;
  const std::size_t n_bg = h * w - n_fg;

  std::vector<double> image(3 * h * w);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double tint = rng.next_uniform(0.85, 1.0);
    double* plane = image.data() + ch * h * w;
    double bg_mean = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
      plane[i] = 0.5 + tint * (bg_tex[i] - 0.5);
      if (!blob[i]) bg_mean += plane[i];
    }
    bg_mean /= static_cast<double>(n_bg);

    // Foreground: same texture family, recentered so the fg/bg mean
    // difference is exactly the drawn contrast; deviations scaled to stay
    // inside [0,1].
    double fg_mean = 0.0;
    for (std::size_t i = 0; i < h * w; ++i)
      if (blob[i]) fg_mean += fg_tex[i];
    fg_mean /= static_cast<double>(n_fg);
    const double center = bg_mean + contrast;
    double max_dev = 0.0;
    for (std::size_t i = 0; i < h * w; ++i)
      if (blob[i]) max_dev = std::max(max_dev, std::fabs(fg_tex[i] - fg_mean));
    double scale = tint;
    if (max_dev > 0.0) {
      const double room = std::min(0.99 - center, center - 0.01);
      scale = std::min(scale, room / max_dev);
    }
    for (std::size_t i = 0; i < h * w; ++i)
      if (blob[i]) plane[i] = center + scale * (fg_tex[i] - fg_mean);
  }

  SyntheticSample s;
  s.image = Tensor::from_data({3, h, w}, std::move(image));
  s.mask = BinaryMask{h, w, blob};
  return s;
}

}  // namespace

std::vector<SyntheticSample> gen_synthetic(std::size_t count, std::size_t h,
                                           std::size_t w, std::uint64_t seed) {
  if (h % 16 != 0 || w % 16 != 0) {
    throw ConfigError("gen_synthetic: dimensions " + std::to_string(h) + "x" +
                      std::to_string(w) + " are not divisible by the patch "
                      "size 16");
  }
  if (count == 0) throw ConfigError("gen_synthetic: count must be positive");
  std::vector<SyntheticSample> out(count);
  Rng root(seed);
  parallel_for(count, [&](std::size_t i) {
    out[i] = make_sample(root.fork(i), h, w);
  });
  return out;
}

void save_dataset(const std::string& dir,
                  const std::vector<SyntheticSample>& samples) {
  fs::create_directories(dir);
  char name[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "image_%04zu.png", i);
    save_image_rgb((fs::path(dir) / name).string(), samples[i].image);
    std::snprintf(name, sizeof(name), "mask_%04zu.png", i);
    save_mask((fs::path(dir) / name).string(), samples[i].mask);
  }
}

std::vector<DatasetPair> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("load_dataset: not a directory: " + dir);
  }
  std::vector<std::string> image_files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    if (fname.rfind("image_", 0) == 0 &&
        (has_suffix(fname, ".png") || has_suffix(fname, ".pgm")))
      image_files.push_back(fname);
  }
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty()) {
    throw DataError("load_dataset: no image_*.png files in " + dir);
  }
  std::vector<DatasetPair> out;
  for (const std::string& fname : image_files) {
    DatasetPair pair;
    pair.name = fname.substr(0, fname.size() - 4);
    pair.image = load_image_rgb((fs::path(dir) / fname).string());
    const std::string mask_name = "mask_" + fname.substr(6);
    const fs::path mask_path = fs::path(dir) / mask_name;
    if (!fs::exists(mask_path)) {
      throw DataError("load_dataset: missing mask for " + fname);
    }
    pair.mask = load_mask(mask_path.string());
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace fspnet
