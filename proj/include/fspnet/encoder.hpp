#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fspnet/nn.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

struct EncoderConfig {
  std::size_t image_c = 3;
  std::size_t image_h = 96;
  std::size_t image_w = 96;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 12;
  std::size_t num_heads = 2;
  double mlp_ratio = 4.0;
  /// Optional terminal layer norm on the last encoder output (off by
  /// default; the decoder consumes the raw residual stream).
  bool final_norm = false;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_tokens() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * image_c; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
  }

  void validate() const;
};

/// l x c patch-embedding matrix plus the grid it came from.
struct TokenSequence {
  Tensor tokens;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

/// Cuts a C x H x W image into non-overlapping s x s patches, row-major over
/// the grid, each flattened (channel, then patch row, then column) into a row
/// of the result: (HW/s^2) x (s^2 C). Pure index permutation.
Tensor patchify(const Tensor& image, std::size_t patch_size);

/// Exact inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t patch_size,
                  std::size_t channels, std::size_t height, std::size_t width);

/// Reshapes an l x c token matrix into a c x grid_h x grid_w feature map,
/// tokens in row-major grid order.
Tensor deserialize_tokens(const TokenSequence& seq);

/// Inverse of deserialize_tokens.
TokenSequence serialize_feature(const Tensor& feature);

struct PatchEmbed {
  Parameter weight;  // patch_dim x embed_dim
  Parameter bias;    // embed_dim
  std::size_t patch_size = 16;

  PatchEmbed() = default;
  PatchEmbed(const EncoderConfig& cfg, Rng& rng);
  TokenSequence forward(const Tensor& image) const;
};

struct PositionalEmbedding {
  Parameter table;  // num_tokens x embed_dim

  PositionalEmbedding() = default;
  PositionalEmbedding(const EncoderConfig& cfg, Rng& rng);
};

TokenSequence add_positional(const TokenSequence& tokens,
                             const PositionalEmbedding& e);

/// Pre-norm transformer layer: x + MSA(LN(x)), then y + MLP(LN(y)).
struct TransformerLayer {
  Parameter ln1_gamma, ln1_beta;
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter ln2_gamma, ln2_beta;
  Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::size_t num_heads = 1;

  TransformerLayer() = default;
  TransformerLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng);

  /// attn_out, when given, receives one row-stochastic l x l attention
  /// matrix per head.
  TokenSequence forward(const TokenSequence& x,
                        std::vector<Tensor>* attn_out = nullptr) const;

  void collect(std::vector<Parameter*>& out);
};

struct Encoder {
  EncoderConfig cfg;
  PatchEmbed patch_embed;
  PositionalEmbedding pos;
  std::vector<TransformerLayer> layers;
  Parameter final_gamma, final_beta;  // used only when cfg.final_norm

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  /// Output of every layer in order; element n-1 is the final encoder
  /// output. Grid provenance is preserved throughout.
  std::vector<TokenSequence> encode(
      const Tensor& image,
      std::vector<std::vector<Tensor>>* attn_out = nullptr) const;

  void collect(std::vector<Parameter*>& out);
};

}  // namespace fspnet
