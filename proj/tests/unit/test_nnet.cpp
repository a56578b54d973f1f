#include <cmath>
#include <random>

#include "doctest.h"
#include "../helpers.hpp"
#include "../oracle.hpp"
#include "permweld/error.hpp"

using namespace permweld;

namespace {

oracle::Vec to_double(const FlatVector& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_SUITE("nnet") {
  TEST_CASE("spec validation") {
    CHECK_THROWS_AS(testing::spec_of({4}).validate(), ValidationError);
    CHECK_THROWS_AS(testing::spec_of({4, 0, 2}).validate(), ValidationError);
    CHECK_NOTHROW(testing::spec_of({4, 3, 2}).validate());
    CHECK(testing::spec_of({4, 3, 2}).flat_size() == 4 * 3 + 3 + 3 * 2 + 2);
    CHECK(testing::spec_of({4, 3, 2}, false).flat_size() == 4 * 3 + 3 * 2);
  }

  TEST_CASE("init is seeded and well formed") {
    const MlpSpec spec = testing::spec_of({6, 5, 4, 3});
    const MlpParams a = init_params(spec, 1), b = init_params(spec, 1), c = init_params(spec, 2);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK_NOTHROW(a.validate());
    CHECK(flatten(zero_params(spec)) == FlatVector(spec.flat_size(), 0.0f));
  }

  TEST_CASE("validate rejects broken shapes and non-finite values") {
    MlpParams p = init_params(testing::spec_of({3, 4, 2}), 0);
    p.layers[1].weight = Matrix(2, 5);
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p = init_params(testing::spec_of({3, 4, 2}), 0);
    p.layers[0].bias[1] = std::nanf("");
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }

  TEST_CASE("flatten and unflatten round trip") {
    const MlpSpec spec = testing::spec_of({5, 7, 3});
    const MlpParams p = init_params(spec, 4);
    const FlatVector v = flatten(p);
    CHECK(v.size() == spec.flat_size());
    CHECK(unflatten(spec, v) == p);
    CHECK(v[0] == p.layers[0].weight(0, 0));
    CHECK(v[5 * 7] == p.layers[0].bias[0]);
    CHECK_THROWS_AS(unflatten(spec, FlatVector(3)), ValidationError);
  }

  TEST_CASE("forward and loss match the double oracle") {
    for (const bool bias : {true, false}) {
      std::mt19937_64 rng(11);
      const MlpSpec spec = testing::spec_of({8, 6, 5, 4}, bias);
      const MlpParams p = init_params(spec, 3);
      const Matrix x = testing::random_matrix(9, 8, rng, 0, 1);
      const auto y = testing::random_labels(9, 4, rng);
      const oracle::Net net = oracle::from(p);
      const oracle::Mat z = oracle::logits(net, oracle::rows_of(x));
      const Matrix got = forward(p, x);
      for (std::size_t r = 0; r < 9; ++r) {
        for (std::size_t c = 0; c < 4; ++c) CHECK(got(r, c) == doctest::Approx(z[r][c]).epsilon(1e-5));
      }
      const GradBundle g = loss_and_grad(p, x, y);
      CHECK(g.loss == doctest::Approx(oracle::loss(net, oracle::rows_of(x), y)).epsilon(1e-6));
      CHECK(oracle::rel_error(to_double(flatten(g)), oracle::grad(net, oracle::rows_of(x), y)) < 1e-5);
      CHECK(evaluate_batch(p, x, y).loss == doctest::Approx(g.loss).epsilon(1e-6));
    }
  }

  TEST_CASE("the oracle gradient matches central differences") {
    std::mt19937_64 rng(5);
    const MlpSpec spec = testing::spec_of({4, 5, 3});
    const oracle::Net net = oracle::from(init_params(spec, 9));
    const oracle::Mat x = oracle::rows_of(testing::random_matrix(6, 4, rng, 0, 1));
    const auto y = testing::random_labels(6, 3, rng);
    const oracle::Vec g = oracle::grad(net, x, y);
    oracle::Vec w = oracle::flat(net), fd(w.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < w.size(); ++i) {
      oracle::Net plus = net, minus = net;
      oracle::Vec wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      oracle::set_flat(plus, wp);
      oracle::set_flat(minus, wm);
      fd[i] = (oracle::loss(plus, x, y) - oracle::loss(minus, x, y)) / (2 * h);
    }
    CHECK(oracle::rel_error(g, fd) < 1e-6);
  }

  TEST_CASE("predictions, accuracy and argmax ties") {
    MlpParams p = zero_params(testing::spec_of({2, 3, 3}));
    const Matrix x(2, 2, {0.5f, 0.5f, 0.1f, 0.9f});
    const std::vector<Label> y{0, 1};
    // All logits equal: the first class wins.
    CHECK(evaluate_batch(p, x, y).accuracy == doctest::Approx(0.5));
    const Matrix prob = predict_proba(p, x);
    CHECK(prob(0, 0) == doctest::Approx(1.0 / 3));
    CHECK(evaluate_batch(p, x, y).loss == doctest::Approx(std::log(3.0)));
  }

  TEST_CASE("permuting hidden units preserves the function") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const MlpSpec spec = testing::spec_of({7, 9, 6, 3}, trial % 2 == 0);
      const MlpParams p = init_params(spec, trial);
      const PermutationSet pi = testing::random_permutation_set(spec, rng);
      const Matrix x = testing::random_matrix(5, 7, rng, 0, 1);
      const Matrix z1 = forward(p, x), z2 = forward(apply_permutation(p, pi), x);
      for (std::size_t i = 0; i < z1.size(); ++i) CHECK(std::abs(z1.values()[i] - z2.values()[i]) <= 1e-5);
    }
  }

  TEST_CASE("gradient distance") {
    std::mt19937_64 rng(2);
    const MlpSpec spec = testing::spec_of({4, 5, 3});
    const MlpParams p = init_params(spec, 1);
    const Matrix x1 = testing::random_matrix(6, 4, rng, 0, 1), x2 = testing::random_matrix(6, 4, rng, 0, 1);
    const auto y = testing::random_labels(6, 3, rng);
    const GradBundle g1 = loss_and_grad(p, x1, y), g2 = loss_and_grad(p, x2, y);
    CHECK(gradient_distance(g1, g1) == doctest::Approx(0.0).epsilon(1e-6));
    const double want = oracle::layer_cosine_distance(to_double(flatten(g1)), to_double(flatten(g2)),
                                                      oracle::blocks(oracle::from(p)));
    CHECK(gradient_distance(g1, g2) == doctest::Approx(want).epsilon(1e-6));
    CHECK(gradient_distance(g1, zero_grad(spec)) == doctest::Approx(2.0));
  }

  TEST_CASE("distance input gradient matches central differences away from kinks") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      std::mt19937_64 rng(100 + seed);
      const MlpSpec spec = testing::spec_of({5, 6, 4, 3}, seed % 2 == 0);
      const MlpParams p = init_params(spec, seed);
      const Matrix real = testing::random_matrix(8, 5, rng, 0, 1);
      const auto real_y = testing::random_labels(8, 3, rng);
      const GradBundle real_grad = loss_and_grad(p, real, real_y);
      const Matrix syn = testing::random_matrix(4, 5, rng, 0, 1);
      const auto syn_y = testing::random_labels(4, 3, rng);

      const DistanceGradient dg = grad_of_grad_distance(p, syn, syn_y, real_grad);
      const oracle::Net net = oracle::from(p);
      const oracle::Vec target = to_double(flatten(real_grad));
      const auto sizes = oracle::blocks(net);
      const auto dist = [&](const oracle::Mat& x) {
        return oracle::layer_cosine_distance(oracle::grad(net, x, syn_y), target, sizes);
      };
      const oracle::Mat x0 = oracle::rows_of(syn);
      CHECK(dg.distance == doctest::Approx(dist(x0)).epsilon(1e-5));

      oracle::Vec got, want;
      const double h = 1e-6;
      for (std::size_t r = 0; r < x0.size(); ++r) {
        for (std::size_t c = 0; c < x0[r].size(); ++c) {
          oracle::Mat xp = x0, xm = x0;
          xp[r][c] += h;
          xm[r][c] -= h;
          if (!oracle::same_pattern(net, xp, xm)) continue;
          want.push_back((dist(xp) - dist(xm)) / (2 * h));
          got.push_back(dg.input_grad(r, c));
        }
      }
      REQUIRE(!want.empty());
      CHECK(oracle::rel_error(got, want) <= 1e-3);
    }
  }
}
