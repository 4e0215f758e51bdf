#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fspnet/gradcheck.hpp"
#include "fspnet/nl_tem.hpp"
#include "test_util.hpp"

using namespace fspnet;
using testutil::rand_uniform;

namespace {

NlTem toy_module(Rng& rng, std::size_t c = 8, std::size_t n_vertices = 4) {
  return NlTem("t", c, n_vertices, rng);
}

void share_branches(NlTem& m) {
  m.wv2.tensor = m.wv1.tensor.detach();
  m.wv2.tensor.set_requires_grad(true);
  m.wk2.tensor = m.wk1.tensor.detach();
  m.wk2.tensor.set_requires_grad(true);
}

}  // namespace

TEST_CASE("fuse_query concatenates along the feature axis") {
  Rng rng(41);
  SUBCASE("zeros fuse to zeros") {
    Tensor z = Tensor::zeros({4, 8});
    Tensor q = fuse_query(z, z);
    CHECK(q.shape() == Shape{4, 16});
    for (double v : q.values()) CHECK(v == 0.0);
  }
  SUBCASE("slices recover the operands") {
    Tensor a = rand_uniform(rng, {4, 8});
    Tensor b = rand_uniform(rng, {4, 8});
    Tensor q = fuse_query(a, b);
    CHECK(slice(q, 1, 0, 8).values() == a.values());
    CHECK(slice(q, 1, 8, 8).values() == b.values());
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(fuse_query(Tensor::zeros({4, 8}), Tensor::zeros({3, 8})),
                    ShapeError);
  }
}

TEST_CASE("weighted_pool") {
  Rng rng(42);
  SUBCASE("zero projection gives a uniform weight map: T_k / (c/2)") {
    // softmax of zeros over c/2 = 4 channels weighs every entry by 1/4,
    // and n_vertices = l makes pooling the identity.
    Tensor t_k = rand_uniform(rng, {6, 4});
    Tensor t_q = rand_uniform(rng, {6, 16});
    Tensor w_q = Tensor::zeros({16, 4});
    Tensor pooled = weighted_pool(t_k, t_q, w_q, 6);
    REQUIRE(pooled.shape() == Shape{6, 4});
    for (std::size_t i = 0; i < pooled.size(); ++i)
      CHECK(pooled.values()[i] ==
            doctest::Approx(t_k.values()[i] / 4.0).epsilon(1e-12));
  }
  SUBCASE("constant rows survive any binning") {
    Tensor t_k = Tensor::full({8, 4}, 2.0);
    Tensor t_q = Tensor::zeros({8, 16});
    Tensor w_q = Tensor::zeros({16, 4});
    Tensor pooled = weighted_pool(t_k, t_q, w_q, 3);
    for (double v : pooled.values())
      CHECK(v == doctest::Approx(0.5).epsilon(1e-12));  // 2.0 * 1/4
  }
  SUBCASE("matches the composition of the primitive ops") {
    Tensor t_k = rand_uniform(rng, {6, 4});
    Tensor t_q = rand_uniform(rng, {6, 16});
    Tensor w_q = rand_uniform(rng, {16, 4});
    Tensor pooled = weighted_pool(t_k, t_q, w_q, 3);
    Tensor expect = adaptive_avg_pool_seq(
        mul(t_k, softmax(matmul(t_q, w_q), 1)), 3);
    CHECK(testutil::max_abs_diff(pooled.values(), expect.values()) == 0.0);
  }
}

TEST_CASE("attention_map") {
  Rng rng(43);
  SUBCASE("zero scores give uniform rows") {
    Tensor a = attention_map(Tensor::zeros({3, 4}), Tensor::zeros({6, 4}));
    REQUIRE(a.shape() == Shape{3, 6});
    for (double v : a.values())
      CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("rows sum to one on random input") {
    Tensor a = attention_map(rand_uniform(rng, {3, 4}, -2.0, 2.0),
                             rand_uniform(rng, {6, 4}, -2.0, 2.0));
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += a.at({i, j});
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
  SUBCASE("a dominant score approaches one-hot") {
    // Scores (10, 0, 0, ...) via t_q_prime = 10 * e_1, t_k rows = identity.
    Tensor q = Tensor::from_data({1, 3}, {10.0, 0.0, 0.0});
    Tensor k = Tensor::eye(3);
    Tensor a = attention_map(q, k);
    CHECK(a.at({0, 0}) > 0.9999);
    CHECK(a.at({0, 1}) < 1e-4);
  }
}

TEST_CASE("graph_project") {
  Rng rng(44);
  SUBCASE("one-hot rows select token features") {
    Tensor t_v = rand_uniform(rng, {4, 3});
    Tensor t_a = Tensor::from_data({2, 4}, {0, 0, 1, 0, 1, 0, 0, 0});
    Tensor g = graph_project(t_v, t_a);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(g.at({0, j}) == t_v.at({2, j}));
      CHECK(g.at({1, j}) == t_v.at({0, j}));
    }
  }
  SUBCASE("uniform rows average token features") {
    Tensor t_v = rand_uniform(rng, {4, 3});
    Tensor t_a = Tensor::full({2, 4}, 0.25);
    Tensor g = graph_project(t_v, t_a);
    for (std::size_t j = 0; j < 3; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < 4; ++i) m += t_v.at({i, j}) / 4.0;
      CHECK(g.at({0, j}) == doctest::Approx(m).epsilon(1e-12));
    }
  }
  SUBCASE("random input equals the direct product") {
    Tensor t_v = rand_uniform(rng, {5, 3});
    Tensor t_a = rand_uniform(rng, {2, 5});
    CHECK(graph_project(t_v, t_a).values() == matmul(t_a, t_v).values());
  }
}

TEST_CASE("gcn") {
  Rng rng(45);
  SUBCASE("zero adjacency and identity weight pass nonnegatives through") {
    Tensor t_g = rand_uniform(rng, {4, 4}, 0.0, 1.0);
    Tensor out = gcn(t_g, Tensor::zeros({4, 4}), Tensor::eye(4));
    CHECK(out.values() == t_g.values());
  }
  SUBCASE("identity adjacency kills the propagation") {
    Tensor t_g = rand_uniform(rng, {4, 4});
    Tensor out = gcn(t_g, Tensor::eye(4), rand_uniform(rng, {4, 4}));
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("matches the dense formula on a random instance") {
    Tensor t_g = rand_uniform(rng, {4, 3});
    Tensor a = rand_uniform(rng, {4, 4}, -0.3, 0.3);
    Tensor w = rand_uniform(rng, {3, 3});
    Tensor expect = relu(matmul(matmul(sub(Tensor::eye(4), a), t_g), w));
    CHECK(gcn(t_g, a, w).values() == expect.values());
  }
  SUBCASE("output is elementwise nonnegative") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor out = gcn(rand_uniform(rng, {4, 5}), rand_uniform(rng, {4, 4}),
                       rand_uniform(rng, {5, 5}));
      for (double v : out.values()) CHECK(v >= 0.0);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(
        gcn(Tensor::zeros({4, 3}), Tensor::zeros({3, 3}), Tensor::zeros({3, 3})),
        ShapeError);
  }
}

TEST_CASE("reproject_and_deserialize") {
  Rng rng(46);
  SUBCASE("zero GCN output is the pure residual") {
    TokenSequence original{rand_uniform(rng, {6, 8}), 2, 3};
    Tensor t_a = softmax(rand_uniform(rng, {4, 6}), 1);
    Tensor out = reproject_and_deserialize(Tensor::zeros({4, 4}), t_a,
                                           original, rand_uniform(rng, {4, 8}));
    CHECK(out.values() == deserialize_tokens(original).values());
  }
  SUBCASE("output shape is c x grid_h x grid_w") {
    TokenSequence original{rand_uniform(rng, {36, 32}), 6, 6};
    Tensor t_a = softmax(rand_uniform(rng, {4, 36}), 1);
    Tensor out = reproject_and_deserialize(rand_uniform(rng, {4, 16}), t_a,
                                           original, rand_uniform(rng, {16, 32}));
    CHECK(out.shape() == Shape{32, 6, 6});
  }
  SUBCASE("serialize then deserialize is the identity") {
    Tensor feature = rand_uniform(rng, {8, 3, 4});
    TokenSequence seq = serialize_feature(feature);
    CHECK(deserialize_tokens(seq).values() == feature.values());
  }
  SUBCASE("missing grid provenance errors") {
    TokenSequence bad{rand_uniform(rng, {6, 8}), 0, 0};
    CHECK_THROWS_AS(deserialize_tokens(bad), ShapeError);
  }
}

TEST_CASE("nl_tem forward shapes and identities") {
  Rng rng(47);
  NlTem mod = toy_module(rng);
  TokenSequence t1{rand_uniform(rng, {16, 8}), 4, 4};
  TokenSequence t2{rand_uniform(rng, {16, 8}), 4, 4};

  SUBCASE("both outputs are c x grid_h x grid_w") {
    auto [o1, o2] = mod.forward(t1, t2);
    CHECK(o1.shape() == Shape{8, 4, 4});
    CHECK(o2.shape() == Shape{8, 4, 4});
  }
  SUBCASE("identical inputs and shared branch parameters agree") {
    share_branches(mod);
    auto [o1, o2] = mod.forward(t1, t1);
    CHECK(o1.values() == o2.values());
  }
  SUBCASE("zero GCN weight reduces to deserialized inputs") {
    std::fill(mod.gcn_weight.tensor.mutable_values().begin(),
              mod.gcn_weight.tensor.mutable_values().end(), 0.0);
    auto [o1, o2] = mod.forward(t1, t2);
    CHECK(o1.values() == deserialize_tokens(t1).values());
    CHECK(o2.values() == deserialize_tokens(t2).values());
  }
  SUBCASE("attention rows stay stochastic across random inputs") {
    for (int trial = 0; trial < 100; ++trial) {
      TokenSequence a{rand_uniform(rng, {16, 8}, -2.0, 2.0), 4, 4};
      TokenSequence b{rand_uniform(rng, {16, 8}, -2.0, 2.0), 4, 4};
      NlTemIntermediates im1, im2;
      mod.forward(a, b, &im1, &im2);
      for (const NlTemIntermediates* im : {&im1, &im2})
        for (std::size_t i = 0; i < im->t_a.dim(0); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < im->t_a.dim(1); ++j)
            s += im->t_a.at({i, j});
          CHECK(std::fabs(s - 1.0) < 1e-6);
        }
    }
  }
}

TEST_CASE("nl_tem permutation equivariance with identity pooling") {
  // With n_vertices = l the pooling is the identity and the default zero
  // adjacency commutes with permutations, so permuting the input tokens
  // permutes the output pixels and changes nothing else.
  Rng rng(48);
  NlTem mod("t", 8, 16, rng);
  TokenSequence t1{rand_uniform(rng, {16, 8}), 4, 4};
  TokenSequence t2{rand_uniform(rng, {16, 8}), 4, 4};
  auto [o1, o2] = mod.forward(t1, t2);

  // Deterministic permutation of the 16 tokens.
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 5 + 3) % 16;
  auto permute_tokens = [&](const Tensor& t) {
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        out[i * 8 + j] = t.values()[perm[i] * 8 + j];
    return Tensor::from_data({16, 8}, std::move(out));
  };
  TokenSequence p1{permute_tokens(t1.tokens), 4, 4};
  TokenSequence p2{permute_tokens(t2.tokens), 4, 4};
  auto [q1, q2] = mod.forward(p1, p2);

  // Output channel planes must be the permuted originals.
  auto check_permuted = [&](const Tensor& orig, const Tensor& permuted) {
    for (std::size_t ch = 0; ch < 8; ++ch)
      for (std::size_t i = 0; i < 16; ++i) {
        const double a = permuted.values()[ch * 16 + i];
        const double b = orig.values()[ch * 16 + perm[i]];
        CHECK(a == doctest::Approx(b).epsilon(1e-9));
      }
  };
  check_permuted(o1, q1);
  check_permuted(o2, q2);
}

TEST_CASE("nl_tem full-module gradient check at toy dims") {
  Rng rng(49);
  for (int trial = 0; trial < 5; ++trial) {
    Rng seed(rng.next_u64());
    NlTem mod("t", 8, 4, seed);
    Tensor base2 = rand_uniform(seed, {16, 8});
    Tensor weights = rand_uniform(seed, {8, 4, 4});
    auto f = [&](const Tensor& x) {
      auto [o1, o2] = mod.forward(TokenSequence{x, 4, 4},
                                  TokenSequence{base2, 4, 4});
      return add(sum(mul(o1, weights)), sum(mul(o2, weights)));
    };
    const double err = check_gradient(f, rand_uniform(seed, {16, 8}), 1e-5);
    INFO("nl_tem trial " << trial);
    CHECK(err < 1e-4);
  }
}
