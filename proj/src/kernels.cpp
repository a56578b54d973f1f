#include "permweld/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "permweld/error.hpp"

namespace permweld::kernels {

namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1 << 15;

void check(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("kernel shape mismatch: ") + what);
}

inline void axpy(float alpha, const float* __restrict x, float* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

inline void axpy_wide(double alpha, const float* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * static_cast<double>(x[j]);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void affine_rows(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out) {
  check(x.cols() == w.cols(), "affine_rows inner dimension");
  check(bias.empty() || bias.size() == w.rows(), "affine_rows bias");
  const std::size_t n = x.rows(), k = x.cols(), m = w.rows();
  if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
  const Matrix wt = w.transposed();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    float* o = out.data() + r * m;
    if (bias.empty()) {
      std::fill(o, o + m, 0.0f);
    } else {
      std::copy(bias.begin(), bias.end(), o);
    }
    const float* xr = x.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const float a = xr[i];
      if (a == 0.0f) continue;
      axpy(a, wt.data() + i * m, o, m);
    }
  }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows(), "matmul_nn inner dimension");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    float* o = out.data() + r * m;
    std::fill(o, o + m, 0.0f);
    const float* ar = a.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const float s = ar[i];
      if (s == 0.0f) continue;
      axpy(s, b.data() + i * m, o, m);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows(), "matmul_tn inner dimension");
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
  const Matrix at = a.transposed();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    float* o = out.data() + r * m;
    std::fill(o, o + m, 0.0f);
    const float* ar = at.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const float s = ar[i];
      if (s == 0.0f) continue;
      axpy(s, b.data() + i * m, o, m);
    }
  }
}

MatrixD cross_gram(const Matrix& a, const Matrix& b) {
  check(a.cols() == b.cols(), "cross_gram inner dimension");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  MatrixD out(n, m);
  const Matrix bt = b.transposed();
  const long long rows = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    double* o = out.data() + r * m;
    const float* ar = a.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const double s = ar[i];
      if (s == 0.0) continue;
      axpy_wide(s, bt.data() + i * m, o, m);
    }
  }
  return out;
}

void column_sums(const Matrix& m, std::span<float> out) {
  check(out.size() == m.cols(), "column_sums output");
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) axpy_wide(1.0, m.data() + r * m.cols(), acc.data(), m.cols());
  std::transform(acc.begin(), acc.end(), out.begin(), [](double v) { return static_cast<float>(v); });
}

namespace reference {

void affine_rows(const Matrix& x, const Matrix& w, std::span<const float> bias, Matrix& out) {
  check(x.cols() == w.cols(), "affine_rows inner dimension");
  check(bias.empty() || bias.size() == w.rows(), "affine_rows bias");
  out = Matrix(x.rows(), w.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < w.rows(); ++c) {
      double acc = bias.empty() ? 0.0 : bias[c];
      for (std::size_t i = 0; i < x.cols(); ++i) acc += static_cast<double>(x(r, i)) * w(c, i);
      out(r, c) = static_cast<float>(acc);
    }
  }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows(), "matmul_nn inner dimension");
  out = Matrix(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.cols(); ++i) acc += static_cast<double>(a(r, i)) * b(i, c);
      out(r, c) = static_cast<float>(acc);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows(), "matmul_tn inner dimension");
  out = Matrix(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.cols(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) acc += static_cast<double>(a(i, r)) * b(i, c);
      out(r, c) = static_cast<float>(acc);
    }
  }
}

MatrixD cross_gram(const Matrix& a, const Matrix& b) {
  check(a.cols() == b.cols(), "cross_gram inner dimension");
  MatrixD out(a.rows(), b.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < b.rows(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.cols(); ++i) acc += static_cast<double>(a(r, i)) * b(c, i);
      out(r, c) = acc;
    }
  }
  return out;
}

void column_sums(const Matrix& m, std::span<float> out) {
  check(out.size() == m.cols(), "column_sums output");
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) acc += m(r, c);
    out[c] = static_cast<float>(acc);
  }
}

}  // namespace reference

}  // namespace permweld::kernels
