#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fspnet/encoder.hpp"
#include "fspnet/gradcheck.hpp"
#include "test_util.hpp"

using namespace fspnet;
using testutil::rand_uniform;

namespace {

EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.image_c = 3;
  cfg.image_h = 32;
  cfg.image_w = 32;
  cfg.patch_size = 16;
  cfg.embed_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

void zero_all(Encoder& enc) {
  std::vector<Parameter*> params;
  enc.collect(params);
  for (Parameter* p : params)
    std::fill(p->tensor.mutable_values().begin(),
              p->tensor.mutable_values().end(), 0.0);
}

}  // namespace

TEST_CASE("serialization arithmetic at paper scale") {
  Rng rng(21);
  SUBCASE("384x384, s=16: 576 tokens of dim 768") {
    Tensor image = rand_uniform(rng, {3, 384, 384}, 0.0, 1.0);
    Tensor patches = patchify(image, 16);
    CHECK(patches.shape() == Shape{576, 768});
  }
  SUBCASE("96x96, s=16: 36 tokens, 6x6 grid") {
    EncoderConfig cfg;
    CHECK(cfg.num_tokens() == 36);
    CHECK(cfg.grid_h() == 6);
    CHECK(cfg.grid_w() == 6);
  }
  SUBCASE("indivisible size errors") {
    Tensor image = Tensor::zeros({3, 100, 96});
    CHECK_THROWS_AS(patchify(image, 16), ShapeError);
    EncoderConfig cfg;
    cfg.image_h = 100;
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
  }
}

TEST_CASE("patchify / unpatchify round trip is bit-exact") {
  Rng rng(22);
  Tensor image = rand_uniform(rng, {3, 96, 96}, 0.0, 1.0);
  Tensor back = unpatchify(patchify(image, 16), 16, 3, 96, 96);
  CHECK(back.values() == image.values());
}

TEST_CASE("identity projection keeps raw patches exactly") {
  Rng rng(23);
  Tensor image = rand_uniform(rng, {3, 32, 32}, 0.0, 1.0);
  Tensor raw = patchify(image, 16);
  Tensor projected =
      linear(raw, Tensor::eye(raw.dim(1)), Tensor::zeros({raw.dim(1)}));
  CHECK(projected.values() == raw.values());
  Tensor back = unpatchify(projected, 16, 3, 32, 32);
  CHECK(back.values() == image.values());
}

TEST_CASE("add_positional") {
  Rng rng(24);
  EncoderConfig cfg = toy_config();
  PositionalEmbedding pos(cfg, rng);
  TokenSequence t{rand_uniform(rng, {4, 8}), 2, 2};

  SUBCASE("zero embedding leaves tokens unchanged") {
    std::fill(pos.table.tensor.mutable_values().begin(),
              pos.table.tensor.mutable_values().end(), 0.0);
    CHECK(add_positional(t, pos).tokens.values() == t.tokens.values());
  }
  SUBCASE("zero tokens return the embedding") {
    TokenSequence z{Tensor::zeros({4, 8}), 2, 2};
    CHECK(add_positional(z, pos).tokens.values() ==
          pos.table.tensor.values());
  }
  SUBCASE("random pair matches elementwise addition") {
    TokenSequence out = add_positional(t, pos);
    for (std::size_t i = 0; i < out.tokens.size(); ++i)
      CHECK(out.tokens.values()[i] ==
            t.tokens.values()[i] + pos.table.tensor.values()[i]);
    CHECK(out.grid_h == 2);
    CHECK(out.grid_w == 2);
  }
}

TEST_CASE("transformer layer basics") {
  Rng rng(25);
  EncoderConfig cfg = toy_config();

  SUBCASE("zero weights reduce to the residual identity") {
    TransformerLayer layer("t", cfg, rng);
    for (Parameter* p : {&layer.wq, &layer.bq, &layer.wk, &layer.bk, &layer.wv,
                         &layer.bv, &layer.wo, &layer.bo, &layer.mlp_w1,
                         &layer.mlp_b1, &layer.mlp_w2, &layer.mlp_b2})
      std::fill(p->tensor.mutable_values().begin(),
                p->tensor.mutable_values().end(), 0.0);
    TokenSequence x{rand_uniform(rng, {4, 8}), 2, 2};
    CHECK(layer.forward(x).tokens.values() == x.tokens.values());
  }
  SUBCASE("shape preserved for random weights") {
    TransformerLayer layer("t", cfg, rng);
    TokenSequence x{rand_uniform(rng, {4, 8}), 2, 2};
    CHECK(layer.forward(x).tokens.shape() == Shape{4, 8});
  }
  SUBCASE("single-token attention weight is exactly one") {
    TransformerLayer layer("t", cfg, rng);
    TokenSequence x{rand_uniform(rng, {1, 8}), 1, 1};
    std::vector<Tensor> attn;
    layer.forward(x, &attn);
    REQUIRE(attn.size() == cfg.num_heads);
    for (const Tensor& a : attn) {
      CHECK(a.shape() == Shape{1, 1});
      CHECK(a.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("attention matrices are row-stochastic") {
    TransformerLayer layer("t", cfg, rng);
    TokenSequence x{rand_uniform(rng, {4, 8}, -3.0, 3.0), 2, 2};
    std::vector<Tensor> attn;
    layer.forward(x, &attn);
    for (const Tensor& a : attn)
      for (std::size_t i = 0; i < a.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.dim(1); ++j) s += a.at({i, j});
        CHECK(std::fabs(s - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("encode returns every layer in order") {
  Rng rng(26);
  EncoderConfig cfg = toy_config();
  cfg.num_layers = 5;
  Encoder enc(cfg, rng);
  Tensor image = rand_uniform(rng, {3, 32, 32}, 0.0, 1.0);
  auto outs = enc.encode(image);
  CHECK(outs.size() == 5);
  for (const TokenSequence& t : outs) {
    CHECK(t.tokens.shape() == Shape{4, 8});
    CHECK(t.grid_h == 2);
    CHECK(t.grid_w == 2);
  }
}

TEST_CASE("zero-weight encoder passes serialized+positional input through") {
  Rng rng(27);
  EncoderConfig cfg = toy_config();
  Encoder enc(cfg, rng);
  zero_all(enc);
  // Keep a non-trivial patch projection and positional table.
  Rng rng2(99);
  enc.patch_embed.weight.tensor = rand_uniform(rng2, {768, 8}, -0.1, 0.1, true);
  enc.pos.table.tensor = rand_uniform(rng2, {4, 8}, -0.1, 0.1, true);

  Tensor image = rand_uniform(rng2, {3, 32, 32}, 0.0, 1.0);
  auto outs = enc.encode(image);
  TokenSequence expected =
      add_positional(enc.patch_embed.forward(image), enc.pos);
  for (const TokenSequence& t : outs)
    CHECK(t.tokens.values() == expected.tokens.values());
}

TEST_CASE("encode is deterministic for a fixed seed") {
  EncoderConfig cfg = toy_config();
  Rng rng_a(31), rng_b(31), rng_x(5);
  Encoder a(cfg, rng_a), b(cfg, rng_b);
  Tensor image = rand_uniform(rng_x, {3, 32, 32}, 0.0, 1.0);
  auto oa = a.encode(image);
  auto ob = b.encode(image);
  for (std::size_t i = 0; i < oa.size(); ++i)
    CHECK(oa[i].tokens.values() == ob[i].tokens.values());
}

TEST_CASE("final norm flag only touches the last output") {
  Rng rng(32);
  EncoderConfig cfg = toy_config();
  cfg.final_norm = true;
  Encoder enc(cfg, rng);
  Rng rng2(33);
  Tensor image = rand_uniform(rng2, {3, 32, 32}, 0.0, 1.0);
  auto outs = enc.encode(image);
  cfg.final_norm = false;
  Rng rng3(32);
  Encoder plain(cfg, rng3);
  auto plain_outs = plain.encode(image);
  CHECK(outs[0].tokens.values() == plain_outs[0].tokens.values());
  CHECK(outs[1].tokens.values() != plain_outs[1].tokens.values());
}

TEST_CASE("gradient through a 2-layer toy encoder") {
  Rng rng(34);
  EncoderConfig cfg = toy_config();
  for (int trial = 0; trial < 5; ++trial) {
    Rng seed(rng.next_u64());
    Encoder enc(cfg, seed);
    Tensor probe = rand_uniform(seed, {3, 32, 32}, 0.0, 1.0);
    Tensor weights = rand_uniform(seed, {4, 8}, -1.0, 1.0);
    auto f = [&](const Tensor& img) {
      auto outs = enc.encode(img);
      return sum(mul(outs.back().tokens, weights));
    };
    const double err = check_gradient(f, probe, 1e-5);
    INFO("encoder trial " << trial);
    CHECK(err < 1e-4);
  }
}
