#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <set>

#include "doctest.h"
#include "fspnet/fsd.hpp"
#include "fspnet/gradcheck.hpp"
#include "test_util.hpp"

using namespace fspnet;
using testutil::rand_uniform;

TEST_CASE("schedule structure matches the shrinkage pyramid") {
  DecodeSchedule s = DecodeSchedule::build(12);
  CHECK(s.aim_counts == std::vector<std::size_t>{6, 3, 2, 1});
  CHECK(s.aims.size() == 12);

  SUBCASE("every layer-0 input is consumed exactly once") {
    std::map<std::size_t, int> uses;
    for (const AimWiring& w : s.aims) {
      if (w.in_hi.gen == 0 && !w.in_hi.is_df) uses[w.in_hi.index]++;
      if (w.in_lo.gen == 0 && !w.in_lo.is_df) uses[w.in_lo.index]++;
    }
    CHECK(uses.size() == 12);
    for (const auto& [idx, count] : uses) {
      INFO("input F0_" << idx);
      CHECK(count == 1);
    }
  }

  SUBCASE("dF chains have lengths 6, 3, 2, 1 and stay within a layer") {
    std::map<std::size_t, int> df_per_layer;
    for (const AimWiring& w : s.aims) {
      df_per_layer[w.layer]++;
      if (w.in_df) {
        CHECK(w.in_df->gen == w.layer);
        CHECK(w.in_df->index == w.n + 1);
      } else {
        CHECK(w.n == s.aim_counts[w.layer]);  // fresh chain per layer
      }
    }
    CHECK(df_per_layer[0] == 6);
    CHECK(df_per_layer[1] == 3);
    CHECK(df_per_layer[2] == 2);
    CHECK(df_per_layer[3] == 1);
  }

  SUBCASE("wiring is a DAG: inputs exist before every AIM runs") {
    std::set<std::string> produced;
    for (std::size_t i = 1; i <= 12; ++i)
      produced.insert(FeatureRef{0, i, false}.str());
    for (const AimWiring& w : s.aims) {
      CHECK(produced.count(w.in_hi.str()) == 1);
      CHECK(produced.count(w.in_lo.str()) == 1);
      if (w.in_df) CHECK(produced.count(w.in_df->str()) == 1);
      produced.insert(w.out_df.str());
      produced.insert(w.out_f.str());
    }
  }

  SUBCASE("layer 2 clamps to the 3 available features") {
    const AimWiring& a10 = s.aims[9];   // layer 2, n = 2
    const AimWiring& a11 = s.aims[10];  // layer 2, n = 1
    CHECK(a10.in_hi.index == 3);
    CHECK(a10.in_lo.index == 2);
    CHECK(a11.in_hi.index == 2);
    CHECK(a11.in_lo.index == 1);
  }

  SUBCASE("unsupported input counts error") {
    CHECK_THROWS_AS(DecodeSchedule::build(8), ShapeError);
    CHECK_THROWS_AS(DecodeSchedule::build(16), ShapeError);
  }

  SUBCASE("dump names all twelve AIMs") {
    const std::string table = s.dump();
    CHECK(table.find("12 AIMs") != std::string::npos);
    CHECK(table.find("[6, 3, 2, 1]") != std::string::npos);
    CHECK(table.find("F0_12") != std::string::npos);
    CHECK(table.find("lateral P3 <- dF3_1") != std::string::npos);
  }
}

TEST_CASE("overlap variant comparison") {
  ScheduleComparison cmp = compare_with_overlap_variant(12);
  CHECK(cmp.shrinkage_layers == 4);
  CHECK(cmp.shrinkage_aims == 12);
  CHECK(cmp.overlap_layers == 11);
  CHECK(cmp.overlap_aims == 66);
}

TEST_CASE("aim shapes and nonnegativity") {
  Rng rng(51);
  Aim aim("a", 8, true, rng);
  Tensor prev = rand_uniform(rng, {8, 6, 6});
  Tensor f_i = rand_uniform(rng, {8, 6, 6});
  Tensor f_im1 = rand_uniform(rng, {8, 6, 6});
  auto [f_p, f_out] = aim.forward(prev, f_i, f_im1, true);
  CHECK(f_p.shape() == Shape{8, 6, 6});
  CHECK(f_out.shape() == Shape{8, 12, 12});
  for (double v : f_p.values()) CHECK(v >= 0.0);
  for (double v : f_out.values()) CHECK(v >= 0.0);

  SUBCASE("first AIM of a layer takes no pass feature") {
    Aim lead("l", 8, false, rng);
    auto [p2, o2] = lead.forward(std::nullopt, f_i, f_im1, true);
    CHECK(p2.shape() == Shape{8, 6, 6});
    CHECK(o2.shape() == Shape{8, 12, 12});
    CHECK_THROWS_AS(lead.forward(prev, f_i, f_im1, true), ShapeError);
  }
  SUBCASE("spatial mismatch errors") {
    CHECK_THROWS_AS(aim.forward(prev, f_i, rand_uniform(rng, {8, 5, 6}), true),
                    ShapeError);
  }
}

TEST_CASE("aim gradient check at toy dims") {
  Rng rng(52);
  for (int trial = 0; trial < 5; ++trial) {
    Rng seed(rng.next_u64());
    Aim aim("a", 4, true, seed);
    // Bias the batch-norm shifts positive so finite differences stay away
    // from relu kinks; the relu gradient itself is covered separately.
    for (Cbr* cbr : {&aim.fuse1, &aim.fuse2, &aim.out})
      for (double& v : cbr->bn.beta.tensor.mutable_values())
        v = seed.next_uniform(0.6, 1.2);
    Tensor prev = rand_uniform(seed, {4, 2, 2});
    Tensor f_im1 = rand_uniform(seed, {4, 2, 2});
    Tensor weights = rand_uniform(seed, {4, 4, 4});
    auto f = [&](const Tensor& x) {
      auto [f_p, f_out] = aim.forward(prev, x, f_im1, true);
      return add(sum(mul(f_out, weights)), sum(f_p));
    };
    const double err = check_gradient(f, rand_uniform(seed, {4, 2, 2}), 1e-5);
    INFO("aim trial " << trial);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("lateral head") {
  Rng rng(53);
  LateralHead head("h", 8);
  Tensor df = rand_uniform(rng, {8, 6, 6});

  SUBCASE("zero-initialized head predicts exactly 0.5") {
    LateralPrediction p = head.forward(df, 96, 96);
    CHECK(p.logits.shape() == Shape{1, 12, 12});
    CHECK(p.prob.shape() == Shape{1, 96, 96});
    for (double v : p.prob.values()) CHECK(v == 0.5);
  }
  SUBCASE("probabilities stay in (0,1) for random weights") {
    Rng wr(54);
    head.w.tensor = rand_uniform(wr, {1, 8, 1, 1}, -2.0, 2.0, true);
    head.b.tensor = rand_uniform(wr, {1}, -1.0, 1.0, true);
    LateralPrediction p = head.forward(df, 48, 48);
    for (double v : p.prob.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  SUBCASE("gradient check") {
    Rng wr(55);
    head.w.tensor = rand_uniform(wr, {1, 8, 1, 1}, -0.5, 0.5, true);
    for (int trial = 0; trial < 5; ++trial) {
      Rng seed(wr.next_u64());
      Tensor weights = rand_uniform(seed, {1, 8, 8});
      auto f = [&](const Tensor& x) {
        return sum(mul(head.forward(x, 8, 8).prob, weights));
      };
      const double err = check_gradient(f, rand_uniform(seed, {8, 2, 2}), 1e-5);
      INFO("head trial " << trial);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("decode runs the full pyramid") {
  Rng rng(56);
  Decoder dec("d", 16, 8, rng);
  std::vector<Tensor> features;
  for (int i = 0; i < 12; ++i)
    features.push_back(rand_uniform(rng, {16, 6, 6}, 0.0, 1.0));

  SUBCASE("twelve AIM invocations, lateral logits at 12/24/48/96") {
    DecodeTrace trace;
    auto laterals = dec.decode(features, 96, 96, true, &trace);
    CHECK(trace.aim_invocations == 12);
    REQUIRE(trace.lateral_logit_shapes.size() == 4);
    CHECK(trace.lateral_logit_shapes[0] == Shape{1, 12, 12});
    CHECK(trace.lateral_logit_shapes[1] == Shape{1, 24, 24});
    CHECK(trace.lateral_logit_shapes[2] == Shape{1, 48, 48});
    CHECK(trace.lateral_logit_shapes[3] == Shape{1, 96, 96});
    for (const LateralPrediction& p : laterals)
      CHECK(p.prob.shape() == Shape{1, 96, 96});
  }
  SUBCASE("deterministic given identical construction") {
    Rng rng_a(57), rng_b(57);
    Decoder a("d", 16, 8, rng_a), b("d", 16, 8, rng_b);
    auto la = a.decode(features, 96, 96, true);
    auto lb = b.decode(features, 96, 96, true);
    for (int i = 0; i < 4; ++i)
      CHECK(la[i].prob.values() == lb[i].prob.values());
  }
  SUBCASE("wrong feature count errors") {
    features.pop_back();
    CHECK_THROWS_AS(dec.decode(features, 96, 96, true), ShapeError);
  }
  SUBCASE("wrong channel count errors") {
    features[3] = rand_uniform(rng, {8, 6, 6});
    CHECK_THROWS_AS(dec.decode(features, 96, 96, true), ShapeError);
  }
}

TEST_CASE("decode gradient check at toy dims") {
  Rng rng(58);
  for (int trial = 0; trial < 3; ++trial) {
    Rng seed(rng.next_u64());
    Decoder dec("d", 4, 3, seed);
    for (Aim& aim : dec.aims)
      for (Cbr* cbr : {&aim.fuse1, &aim.fuse2, &aim.out})
        for (double& v : cbr->bn.beta.tensor.mutable_values())
          v = seed.next_uniform(0.6, 1.2);
    std::vector<Tensor> features;
    for (int i = 0; i < 12; ++i)
      features.push_back(rand_uniform(seed, {4, 2, 2}, 0.0, 1.0));
    Tensor weights = rand_uniform(seed, {1, 8, 8});
    auto f = [&](const Tensor& x) {
      std::vector<Tensor> feats = features;
      feats[5] = x;
      auto laterals = dec.decode(feats, 8, 8, true);
      Tensor acc = sum(mul(laterals[0].prob, weights));
      for (int i = 1; i < 4; ++i)
        acc = add(acc, sum(mul(laterals[i].prob, weights)));
      return acc;
    };
    const double err = check_gradient(f, rand_uniform(seed, {4, 2, 2}), 1e-5);
    INFO("decode trial " << trial);
    CHECK(err < 1e-4);
  }
}
