#include "fspnet/encoder.hpp"

#include <cmath>

namespace fspnet {

void EncoderConfig::validate() const {
  if (image_c == 0 || image_h == 0 || image_w == 0 || patch_size == 0 ||
      embed_dim == 0 || num_layers == 0 || num_heads == 0 || mlp_ratio <= 0) {
    throw ShapeError("encoder config: all dimensions must be positive");
  }
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ShapeError("encoder config: patch size " +
                     std::to_string(patch_size) + " does not divide image " +
                     std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  if (embed_dim % num_heads != 0) {
    throw ShapeError("encoder config: embed dim " + std::to_string(embed_dim) +
                     " not divisible by " + std::to_string(num_heads) +
                     " heads");
  }
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) {
    throw ShapeError("patchify: image must be C x H x W, got " +
                     shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("patchify: patch size " + std::to_string(patch_size) +
                     " does not divide image " + shape_str(image.shape()));
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t l = gh * gw, d = patch_size * patch_size * c;
  std::vector<double> out(l * d);
  std::size_t idx = 0;
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < patch_size; ++py)
          for (std::size_t px = 0; px < patch_size; ++px)
            out[idx++] = image.values()[(ch * h + gy * patch_size + py) * w +
                                        gx * patch_size + px];
  auto in = image.node();
  return make_op_result(
      "patchify", {l, d}, std::move(out), {image},
      [in, c, h, w, patch_size, gh, gw](detail::Node& self) {
        if (!in->requires_grad) return;
        in->ensure_grad();
        std::size_t idx = 0;
        for (std::size_t gy = 0; gy < gh; ++gy)
          for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t py = 0; py < patch_size; ++py)
                for (std::size_t px = 0; px < patch_size; ++px)
                  in->grad[(ch * h + gy * patch_size + py) * w +
                           gx * patch_size + px] += self.grad[idx++];
      });
}

Tensor unpatchify(const Tensor& patches, std::size_t patch_size,
                  std::size_t channels, std::size_t height,
                  std::size_t width) {
  const std::size_t gh = height / patch_size, gw = width / patch_size;
  const std::size_t l = gh * gw, d = patch_size * patch_size * channels;
  if (patches.rank() != 2 || patches.dim(0) != l || patches.dim(1) != d) {
    throw ShapeError("unpatchify: expected " + std::to_string(l) + "x" +
                     std::to_string(d) + " patches, got " +
                     shape_str(patches.shape()));
  }
  std::vector<double> out(channels * height * width);
  std::size_t idx = 0;
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t py = 0; py < patch_size; ++py)
          for (std::size_t px = 0; px < patch_size; ++px)
            out[(ch * height + gy * patch_size + py) * width +
                gx * patch_size + px] = patches.values()[idx++];
  auto in = patches.node();
  return make_op_result(
      "unpatchify", {channels, height, width}, std::move(out), {patches},
      [in, channels, height, width, patch_size, gh, gw](detail::Node& self) {
        if (!in->requires_grad) return;
        in->ensure_grad();
        std::size_t idx = 0;
        for (std::size_t gy = 0; gy < gh; ++gy)
          for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t ch = 0; ch < channels; ++ch)
              for (std::size_t py = 0; py < patch_size; ++py)
                for (std::size_t px = 0; px < patch_size; ++px)
                  in->grad[idx++] +=
                      self.grad[(ch * height + gy * patch_size + py) * width +
                                gx * patch_size + px];
      });
}

Tensor deserialize_tokens(const TokenSequence& seq) {
  const Tensor& t = seq.tokens;
  if (seq.grid_h == 0 || seq.grid_w == 0) {
    throw ShapeError("deserialize_tokens: token sequence has no grid");
  }
  if (t.rank() != 2 || t.dim(0) != seq.grid_h * seq.grid_w) {
    throw ShapeError("deserialize_tokens: tokens " + shape_str(t.shape()) +
                     " do not match grid " + std::to_string(seq.grid_h) + "x" +
                     std::to_string(seq.grid_w));
  }
  const std::size_t l = t.dim(0), c = t.dim(1);
  std::vector<double> out(c * l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * l + i] = t.values()[i * c + j];
  auto in = t.node();
  return make_op_result("deserialize_tokens", {c, seq.grid_h, seq.grid_w},
                        std::move(out), {t}, [in, l, c](detail::Node& self) {
                          if (!in->requires_grad) return;
                          in->ensure_grad();
                          for (std::size_t i = 0; i < l; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              in->grad[i * c + j] += self.grad[j * l + i];
                        });
}

TokenSequence serialize_feature(const Tensor& feature) {
  if (feature.rank() != 3) {
    throw ShapeError("serialize_feature: expected C x H x W, got " +
                     shape_str(feature.shape()));
  }
  const std::size_t c = feature.dim(0), gh = feature.dim(1),
                    gw = feature.dim(2);
  const std::size_t l = gh * gw;
  std::vector<double> out(l * c);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < l; ++i)
      out[i * c + j] = feature.values()[j * l + i];
  auto in = feature.node();
  Tensor tokens = make_op_result(
      "serialize_feature", {l, c}, std::move(out), {feature},
      [in, l, c](detail::Node& self) {
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t i = 0; i < l; ++i)
            in->grad[j * l + i] += self.grad[i * c + j];
      });
  return TokenSequence{tokens, gh, gw};
}

PatchEmbed::PatchEmbed(const EncoderConfig& cfg, Rng& rng)
    : weight(make_param_trunc_normal("patch_embed.weight",
                                     {cfg.patch_dim(), cfg.embed_dim}, 0.02,
                                     rng)),
      bias(make_param_const("patch_embed.bias", {cfg.embed_dim}, 0.0)),
      patch_size(cfg.patch_size) {}

TokenSequence PatchEmbed::forward(const Tensor& image) const {
  Tensor raw = patchify(image, patch_size);
  Tensor tokens = linear(raw, weight.tensor, bias.tensor);
  return TokenSequence{tokens, image.dim(1) / patch_size,
                       image.dim(2) / patch_size};
}

PositionalEmbedding::PositionalEmbedding(const EncoderConfig& cfg, Rng& rng)
    : table(make_param_trunc_normal("pos_embed",
                                    {cfg.num_tokens(), cfg.embed_dim}, 0.02,
                                    rng)) {}

TokenSequence add_positional(const TokenSequence& tokens,
                             const PositionalEmbedding& e) {
  return TokenSequence{add(tokens.tokens, e.table.tensor), tokens.grid_h,
                       tokens.grid_w};
}

TransformerLayer::TransformerLayer(const std::string& name,
                                   const EncoderConfig& cfg, Rng& rng)
    : ln1_gamma(make_param_const(name + ".ln1.gamma", {cfg.embed_dim}, 1.0)),
      ln1_beta(make_param_const(name + ".ln1.beta", {cfg.embed_dim}, 0.0)),
      wq(make_param_trunc_normal(name + ".attn.wq",
                                 {cfg.embed_dim, cfg.embed_dim}, 0.02, rng)),
      bq(make_param_const(name + ".attn.bq", {cfg.embed_dim}, 0.0)),
      wk(make_param_trunc_normal(name + ".attn.wk",
                                 {cfg.embed_dim, cfg.embed_dim}, 0.02, rng)),
      bk(make_param_const(name + ".attn.bk", {cfg.embed_dim}, 0.0)),
      wv(make_param_trunc_normal(name + ".attn.wv",
                                 {cfg.embed_dim, cfg.embed_dim}, 0.02, rng)),
      bv(make_param_const(name + ".attn.bv", {cfg.embed_dim}, 0.0)),
      wo(make_param_trunc_normal(name + ".attn.wo",
                                 {cfg.embed_dim, cfg.embed_dim}, 0.02, rng)),
      bo(make_param_const(name + ".attn.bo", {cfg.embed_dim}, 0.0)),
      ln2_gamma(make_param_const(name + ".ln2.gamma", {cfg.embed_dim}, 1.0)),
      ln2_beta(make_param_const(name + ".ln2.beta", {cfg.embed_dim}, 0.0)),
      mlp_w1(make_param_trunc_normal(name + ".mlp.w1",
                                     {cfg.embed_dim, cfg.mlp_hidden()}, 0.02,
                                     rng)),
      mlp_b1(make_param_const(name + ".mlp.b1", {cfg.mlp_hidden()}, 0.0)),
      mlp_w2(make_param_trunc_normal(name + ".mlp.w2",
                                     {cfg.mlp_hidden(), cfg.embed_dim}, 0.02,
                                     rng)),
      mlp_b2(make_param_const(name + ".mlp.b2", {cfg.embed_dim}, 0.0)),
      num_heads(cfg.num_heads) {}

TokenSequence TransformerLayer::forward(const TokenSequence& x,
                                        std::vector<Tensor>* attn_out) const {
  const std::size_t c = x.tokens.dim(1);
  const std::size_t head_dim = c / num_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor h = layer_norm(x.tokens, ln1_gamma.tensor, ln1_beta.tensor);
  Tensor q = linear(h, wq.tensor, bq.tensor);
  Tensor k = linear(h, wk.tensor, bk.tensor);
  Tensor v = linear(h, wv.tensor, bv.tensor);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(num_heads);
  for (std::size_t hd = 0; hd < num_heads; ++hd) {
    Tensor qh = slice(q, 1, hd * head_dim, head_dim);
    Tensor kh = slice(k, 1, hd * head_dim, head_dim);
    Tensor vh = slice(v, 1, hd * head_dim, head_dim);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    Tensor attn = softmax(scores, 1);
    if (attn_out) attn_out->push_back(attn);
    head_outputs.push_back(matmul(attn, vh));
  }
  Tensor attn_cat =
      head_outputs.size() == 1 ? head_outputs[0] : concat(head_outputs, 1);
  Tensor msa = linear(attn_cat, wo.tensor, bo.tensor);
  Tensor y = add(x.tokens, msa);

  Tensor h2 = layer_norm(y, ln2_gamma.tensor, ln2_beta.tensor);
  Tensor mlp = linear(gelu(linear(h2, mlp_w1.tensor, mlp_b1.tensor)),
                      mlp_w2.tensor, mlp_b2.tensor);
  return TokenSequence{add(y, mlp), x.grid_h, x.grid_w};
}

void TransformerLayer::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv,
                       &wo, &bo, &ln2_gamma, &ln2_beta, &mlp_w1, &mlp_b1,
                       &mlp_w2, &mlp_b2})
    out.push_back(p);
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  patch_embed = PatchEmbed(cfg, rng);
  pos = PositionalEmbedding(cfg, rng);
  layers.reserve(cfg.num_layers);
  for (std::size_t i = 0; i < cfg.num_layers; ++i)
    layers.emplace_back("encoder.layer" + std::to_string(i + 1), cfg, rng);
  final_gamma = make_param_const("encoder.final.gamma", {cfg.embed_dim}, 1.0);
  final_beta = make_param_const("encoder.final.beta", {cfg.embed_dim}, 0.0);
}

std::vector<TokenSequence> Encoder::encode(
    const Tensor& image, std::vector<std::vector<Tensor>>* attn_out) const {
  if (image.rank() != 3 || image.dim(0) != cfg.image_c) {
    throw ShapeError("encode: image " + shape_str(image.shape()) +
                     " does not match config channels " +
                     std::to_string(cfg.image_c));
  }
  TokenSequence t = add_positional(patch_embed.forward(image), pos);
  std::vector<TokenSequence> outputs;
  outputs.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::vector<Tensor> attn;
    t = layers[i].forward(t, attn_out ? &attn : nullptr);
    if (attn_out) attn_out->push_back(std::move(attn));
    outputs.push_back(t);
  }
  if (cfg.final_norm && !outputs.empty()) {
    TokenSequence& last = outputs.back();
    last.tokens = layer_norm(last.tokens, final_gamma.tensor, final_beta.tensor);
  }
  return outputs;
}

void Encoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&patch_embed.weight);
  out.push_back(&patch_embed.bias);
  out.push_back(&pos.table);
  for (auto& layer : layers) layer.collect(out);
  if (cfg.final_norm) {
    out.push_back(&final_gamma);
    out.push_back(&final_beta);
  }
}

}  // namespace fspnet
