#pragma once

// Dense kernels behind the network, the alignment scores, and the evaluation
// loops. Two implementations share every signature:
//
//   kernels::            OpenMP-parallel, row-blocked, used by the library
//   kernels::reference:: plain serial loops with 64-bit accumulation, kept as
//                        the test oracle and the benchmark baseline
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed order, so results are bit-identical for any
// thread count.

#include <span>

#include "permweld/tensor.hpp"

namespace permweld::kernels {

// out = x * w^T + bias   (x: n x k, w: m x k, out: n x m). Empty bias means none.
void affine_rows(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out);

// out = a * b   (a: n x k, b: k x m)
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);

// out = a^T * b   (a: k x n, b: k x m, out: n x m)
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);

// out = a * b^T with 64-bit accumulation   (a: n x k, b: m x k)
MatrixD cross_gram(const Matrix& a, const Matrix& b);

// out[j] = sum_i m(i, j) with 64-bit accumulation.
void column_sums(const Matrix& m, std::span<float> out);

// Maximum number of threads the parallel kernels will use.
int max_threads();
void set_num_threads(int n);

namespace reference {

void affine_rows(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out);
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
MatrixD cross_gram(const Matrix& a, const Matrix& b);
void column_sums(const Matrix& m, std::span<float> out);

}  // namespace reference

}  // namespace permweld::kernels
