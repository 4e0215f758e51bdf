#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fspnet/metrics.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

struct Image8 {
  std::size_t h = 0, w = 0, channels = 1;  // 1 gray, 3 interleaved RGB
  std::vector<std::uint8_t> px;
};

// Minimal PNG codec: 8-bit grayscale and RGB, no interlace. Deterministic
// output bytes for identical input.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

// Plain (P2) PGM out, P2/P5 in.
void write_pgm(const std::string& path, const Image8& img);
Image8 read_pgm(const std::string& path);

bool has_suffix(const std::string& s, const std::string& suffix);

/// Scores map to [0,1] by /255; masks binarize at 0.5 on load.
ScoreMap to_score_map(const Image8& img);
Image8 from_score_map(const ScoreMap& map);
BinaryMask to_binary_mask(const Image8& img);
Image8 from_binary_mask(const BinaryMask& mask);

/// Dispatch on extension (.png / .pgm).
ScoreMap load_score(const std::string& path);
void save_score(const std::string& path, const ScoreMap& map);
BinaryMask load_mask(const std::string& path);
void save_mask(const std::string& path, const BinaryMask& mask);

/// 3 x H x W tensor in [0,1] from an RGB or grayscale file.
Tensor load_image_rgb(const std::string& path);
void save_image_rgb(const std::string& path, const Tensor& image);

}  // namespace fspnet
