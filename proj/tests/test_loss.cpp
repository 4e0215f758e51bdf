#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fspnet/gradcheck.hpp"
#include "fspnet/loss.hpp"
#include "fspnet/nn.hpp"
#include "test_util.hpp"

using namespace fspnet;
using testutil::rand_uniform;

namespace {

SupervisionBundle make_bundle(const std::array<double, 4>& fill, double g) {
  SupervisionBundle b;
  for (int i = 0; i < 4; ++i) b.predictions[i] = Tensor::full({1, 4, 4}, fill[i]);
  b.ground_truth = Tensor::full({1, 4, 4}, g);
  return b;
}

Tensor random_binary(Rng& rng, Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_uniform() < 0.5 ? 0.0 : 1.0;
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("supervision weights are 2^(i-4) and 1") {
  const auto w = supervision_weights();
  CHECK(w[0] == 1.0 / 16.0);
  CHECK(w[1] == 1.0 / 8.0);
  CHECK(w[2] == 1.0 / 4.0);
  CHECK(w[3] == 1.0);
}

TEST_CASE("all-0.5 predictions against binary truth give (23/16) log 2") {
  SupervisionBundle b = make_bundle({0.5, 0.5, 0.5, 0.5}, 1.0);
  const double expected = (1.0 / 16 + 1.0 / 8 + 1.0 / 4 + 1.0) * std::log(2.0);
  CHECK(total_loss(b).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("perfect predictions sit at the clamp floor") {
  SupervisionBundle b = make_bundle({1.0, 1.0, 1.0, 1.0}, 1.0);
  const double v = total_loss(b).item();
  CHECK(v >= 0.0);
  CHECK(v < 1e-6);
}

TEST_CASE("removing the P3 term subtracts exactly bce(P3, G)") {
  Rng rng(61);
  SupervisionBundle b;
  for (int i = 0; i < 4; ++i)
    b.predictions[i] = rand_uniform(rng, {1, 5, 5}, 0.05, 0.95);
  b.ground_truth = random_binary(rng, {1, 5, 5});
  const double full = total_loss(b).item();
  const double p3 = bce(b.predictions[3], b.ground_truth).item();
  // What remains is the weighted sum of the three shallow terms.
  double shallow = 0.0;
  const auto weights = supervision_weights();
  for (int i = 0; i < 3; ++i)
    shallow += weights[i] * bce(b.predictions[i], b.ground_truth).item();
  CHECK(full - p3 == doctest::Approx(shallow).epsilon(1e-12));
}

TEST_CASE("errors: shape mismatch and non-binary ground truth") {
  SupervisionBundle b = make_bundle({0.5, 0.5, 0.5, 0.5}, 1.0);
  b.predictions[2] = Tensor::full({1, 2, 2}, 0.5);
  CHECK_THROWS_AS(total_loss(b), ShapeError);
  SupervisionBundle c = make_bundle({0.5, 0.5, 0.5, 0.5}, 0.25);
  CHECK_THROWS_AS(total_loss(c), ShapeError);
}

TEST_CASE("loss is nonnegative and monotone in each per-layer bce") {
  Rng rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    SupervisionBundle b;
    Tensor g = random_binary(rng, {1, 4, 4});
    for (int i = 0; i < 4; ++i)
      b.predictions[i] = rand_uniform(rng, {1, 4, 4}, 0.05, 0.95);
    b.ground_truth = g;
    const double before = total_loss(b).item();
    CHECK(before >= 0.0);
    // Improving one layer toward the truth cannot increase the total.
    for (int i = 0; i < 4; ++i) {
      SupervisionBundle better = b;
      std::vector<double> pv = b.predictions[i].values();
      for (std::size_t k = 0; k < pv.size(); ++k)
        pv[k] = 0.5 * (pv[k] + g.values()[k] * 0.9 + 0.05);
      better.predictions[i] = Tensor::from_data({1, 4, 4}, pv);
      if (bce(better.predictions[i], g).item() <=
          bce(b.predictions[i], g).item()) {
        CHECK(total_loss(better).item() <= before + 1e-12);
      }
    }
  }
}

TEST_CASE("total_loss gradient check") {
  Rng rng(63);
  for (int trial = 0; trial < 20; ++trial) {
    Rng seed(rng.next_u64());
    Tensor g = random_binary(seed, {1, 3, 3});
    Tensor p1 = rand_uniform(seed, {1, 3, 3}, 0.05, 0.95);
    Tensor p2 = rand_uniform(seed, {1, 3, 3}, 0.05, 0.95);
    Tensor p3 = rand_uniform(seed, {1, 3, 3}, 0.05, 0.95);
    auto f = [&](const Tensor& x) {
      SupervisionBundle b;
      b.predictions = {sigmoid(x), p1, p2, p3};
      b.ground_truth = g;
      return total_loss(b);
    };
    const double err = check_gradient(f, rand_uniform(seed, {1, 3, 3}), 1e-5);
    INFO("loss trial " << trial);
    CHECK(err < 1e-4);
  }
}
