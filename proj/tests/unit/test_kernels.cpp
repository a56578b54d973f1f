#include <cmath>
#include <random>

#include "doctest.h"
#include "../helpers.hpp"
#include "permweld/kernels.hpp"

using namespace permweld;
namespace ref = permweld::kernels::reference;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.values()[i]) - b.values()[i]));
  return m;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("parallel kernels agree with the serial reference") {
    std::mt19937_64 rng(7);
    for (const auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 5, 7}, {64, 33, 17}, {130, 200, 65}}) {
      const Matrix x = testing::random_matrix(n, k, rng);
      const Matrix w = testing::random_matrix(m, k, rng);
      const Matrix kn = testing::random_matrix(k, m, rng);
      const Matrix tn = testing::random_matrix(n, m, rng);
      std::vector<float> bias(m);
      for (float& b : bias) b = std::uniform_real_distribution<float>(-1, 1)(rng);

      Matrix got(n, m), want(n, m);
      kernels::affine_rows(x, w, bias, got);
      ref::affine_rows(x, w, bias, want);
      CHECK(max_abs_diff(got, want) < 1e-4);

      kernels::affine_rows(x, w, {}, got);
      ref::affine_rows(x, w, {}, want);
      CHECK(max_abs_diff(got, want) < 1e-4);

      kernels::matmul_nn(x, kn, got);
      ref::matmul_nn(x, kn, want);
      CHECK(max_abs_diff(got, want) < 1e-4);

      Matrix g2(k, m), w2(k, m);
      kernels::matmul_tn(x, tn, g2);
      ref::matmul_tn(x, tn, w2);
      CHECK(max_abs_diff(g2, w2) < 1e-4);

      const MatrixD cg = kernels::cross_gram(x, w), cw = ref::cross_gram(x, w);
      for (std::size_t i = 0; i < cg.size(); ++i) CHECK(cg.values()[i] == doctest::Approx(cw.values()[i]).epsilon(1e-12));

      std::vector<float> s1(k), s2(k);
      kernels::column_sums(x, s1);
      ref::column_sums(x, s2);
      for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("results do not depend on the thread count") {
    std::mt19937_64 rng(3);
    const Matrix x = testing::random_matrix(257, 129, rng), w = testing::random_matrix(65, 129, rng);
    const int before = kernels::max_threads();
    Matrix one(257, 65), many(257, 65);
    kernels::set_num_threads(1);
    kernels::affine_rows(x, w, {}, one);
    kernels::set_num_threads(4);
    kernels::affine_rows(x, w, {}, many);
    kernels::set_num_threads(before);
    CHECK(one == many);
  }

  TEST_CASE("matrix basics") {
    Matrix m(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m(1, 0) == 4);
    const Matrix t = m.transposed();
    CHECK(t.rows() == 3);
    CHECK(t(2, 1) == 6);
    const std::vector<std::size_t> idx{1, 1, 0};
    const Matrix g = gather_rows(m, std::span<const std::size_t>(idx));
    CHECK(g.rows() == 3);
    CHECK(g(0, 2) == 6);
    CHECK(g(2, 0) == 1);
  }
}
