#pragma once

#include <cstdint>
#include <string>

#include "fspnet/encoder.hpp"

namespace fspnet {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t n_vertices = 16;
  std::size_t decoder_width = 32;
  std::uint64_t seed = 7;
  double learning_rate = 1e-4;
  std::size_t lr_decay_epochs = 50;
  double lr_decay_factor = 10.0;
  std::size_t epochs = 125;
  std::size_t batch_size = 2;

  void validate() const;
};

/// Flat key = value text; '#' starts a comment; unknown keys are rejected.
ModelConfig parse_config_text(const std::string& text);
ModelConfig load_config(const std::string& path);

/// Canonical round-trippable form (fixed key order, full precision).
std::string serialize_config(const ModelConfig& cfg);

}  // namespace fspnet
