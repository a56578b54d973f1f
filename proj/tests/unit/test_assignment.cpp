#include <random>

#include "doctest.h"
#include "../helpers.hpp"
#include "../oracle.hpp"
#include "permweld/assignment.hpp"
#include "permweld/error.hpp"

using namespace permweld;

namespace {

MatrixD to_matrix(const std::vector<oracle::Vec>& s) {
  MatrixD m(s.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) m(i, j) = s[i][j];
  }
  return m;
}

}  // namespace

TEST_SUITE("assignment") {
  TEST_CASE("permutation basics") {
    const Permutation p({2, 0, 1});
    CHECK(p.size() == 3);
    CHECK(p[0] == 2);
    CHECK_FALSE(p.is_identity());
    CHECK(p.inverse().mapping() == std::vector<std::size_t>{1, 2, 0});
    CHECK(Permutation::identity(4).is_identity());
    CHECK_THROWS_AS(Permutation({0, 0, 1}), ValidationError);
    CHECK_THROWS_AS(Permutation({0, 3}), ValidationError);
  }

  TEST_CASE("matches exhaustive search in both senses") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + trial % 7;
      std::vector<oracle::Vec> s(n, oracle::Vec(n));
      // Integer scores in a small range force many ties.
      std::uniform_int_distribution<int> u(-4, 4);
      std::normal_distribution<double> g;
      for (auto& row : s) {
        for (double& v : row) v = trial % 2 ? u(rng) : g(rng);
      }
      const Assignment best = solve_lap(to_matrix(s), Sense::maximize);
      CHECK(best.objective == doctest::Approx(oracle::brute_force_max(s)).epsilon(1e-12));
      double check = 0;
      for (std::size_t i = 0; i < n; ++i) check += s[i][best.permutation[i]];
      CHECK(check == doctest::Approx(best.objective).epsilon(1e-12));

      std::vector<oracle::Vec> neg = s;
      for (auto& row : neg) {
        for (double& v : row) v = -v;
      }
      const Assignment low = solve_lap(to_matrix(s), Sense::minimize);
      CHECK(low.objective == doctest::Approx(-oracle::brute_force_max(neg)).epsilon(1e-12));
    }
  }

  TEST_CASE("ties resolve to the lexicographically smallest optimum") {
    CHECK(solve_lap(MatrixD(5, 5, 0.0), Sense::maximize).permutation.is_identity());
    // Optima (1,0,2) and (2,0,1) both score 3.
    MatrixD s(3, 3, {0, 1, 1,
                     1, 0, 0,
                     0, 1, 1});
    const Assignment a = solve_lap(s, Sense::maximize);
    CHECK(a.objective == doctest::Approx(3));
    CHECK(a.permutation.mapping() == std::vector<std::size_t>{1, 0, 2});
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + trial % 5;
      MatrixD m(n, n);
      for (double& v : m.values()) v = std::uniform_int_distribution<int>(0, 1)(rng);
      const Assignment got = solve_lap(m, Sense::maximize);
      std::vector<std::size_t> p(n);
      std::iota(p.begin(), p.end(), std::size_t{0});
      do {
        double v = 0;
        for (std::size_t i = 0; i < n; ++i) v += m(i, p[i]);
        if (v == got.objective) break;
      } while (std::next_permutation(p.begin(), p.end()));
      CHECK(got.permutation.mapping() == p);
    }
  }

  TEST_CASE("bad input") {
    CHECK_THROWS_AS(solve_lap(MatrixD(2, 3), Sense::maximize), ValidationError);
    CHECK_THROWS_AS(solve_lap(MatrixD(), Sense::maximize), ValidationError);
    MatrixD m(2, 2, 1.0);
    m(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(solve_lap(m, Sense::minimize), ValidationError);
  }

  TEST_CASE("large instance is a valid optimum against a shifted copy") {
    std::mt19937_64 rng(8);
    const std::size_t n = 200;
    MatrixD m(n, n);
    for (double& v : m.values()) v = std::normal_distribution<double>()(rng);
    const Assignment a = solve_lap(m, Sense::maximize);
    // Adding a constant to a row must not change the optimal permutation.
    MatrixD shifted = m;
    for (std::size_t j = 0; j < n; ++j) shifted(7, j) += 3.5;
    const Assignment b = solve_lap(shifted, Sense::maximize);
    CHECK(b.permutation == a.permutation);
    CHECK(b.objective == doctest::Approx(a.objective + 3.5));
  }
}
