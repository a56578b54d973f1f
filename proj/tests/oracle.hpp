#pragma once

// Independent double-precision reference for the network maths and a
// brute-force assignment solver. Shares nothing with the library beyond the
// parameter containers it reads from.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "permweld/nnet.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows x cols

struct Net {
  std::vector<Mat> w;  // out x in
  std::vector<Vec> b;  // empty when there is no bias
};

inline Net from(const permweld::MlpParams& p) {
  Net n;
  for (const auto& layer : p.layers) {
    Mat w(layer.weight.rows(), Vec(layer.weight.cols()));
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < w[i].size(); ++j) w[i][j] = layer.weight(i, j);
    }
    n.w.push_back(w);
    n.b.emplace_back(layer.bias.begin(), layer.bias.end());
  }
  return n;
}

inline Mat rows_of(const permweld::Matrix& m) {
  Mat x(m.rows(), Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) x[i][j] = m(i, j);
  }
  return x;
}

// Flat layout: layers in order, W row-major then b.
inline Vec flat(const Net& n) {
  Vec v;
  for (std::size_t l = 0; l < n.w.size(); ++l) {
    for (const auto& row : n.w[l]) v.insert(v.end(), row.begin(), row.end());
    v.insert(v.end(), n.b[l].begin(), n.b[l].end());
  }
  return v;
}

inline void set_flat(Net& n, const Vec& v) {
  std::size_t k = 0;
  for (std::size_t l = 0; l < n.w.size(); ++l) {
    for (auto& row : n.w[l]) {
      for (double& x : row) x = v[k++];
    }
    for (double& x : n.b[l]) x = v[k++];
  }
}

struct Trace {
  std::vector<Mat> pre;  // per layer
  std::vector<Mat> in;   // input to each layer
};

inline Trace run(const Net& n, const Mat& x) {
  Trace t;
  Mat cur = x;
  for (std::size_t l = 0; l < n.w.size(); ++l) {
    t.in.push_back(cur);
    Mat z(cur.size(), Vec(n.w[l].size(), 0.0));
    for (std::size_t r = 0; r < cur.size(); ++r) {
      for (std::size_t o = 0; o < n.w[l].size(); ++o) {
        double s = n.b[l].empty() ? 0.0 : n.b[l][o];
        for (std::size_t i = 0; i < cur[r].size(); ++i) s += n.w[l][o][i] * cur[r][i];
        z[r][o] = s;
      }
    }
    t.pre.push_back(z);
    if (l + 1 < n.w.size()) {
      for (auto& row : z) {
        for (double& v : row) v = std::max(v, 0.0);
      }
    }
    cur = z;
  }
  return t;
}

inline Mat logits(const Net& n, const Mat& x) { return run(n, x).pre.back(); }

inline Mat softmax(const Mat& z) {
  Mat p = z;
  for (auto& row : p) {
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) s += (v = std::exp(v - m));
    for (double& v : row) v /= s;
  }
  return p;
}

inline double loss(const Net& n, const Mat& x, const std::vector<permweld::Label>& y) {
  const Mat z = logits(n, x);
  double total = 0.0;
  for (std::size_t r = 0; r < z.size(); ++r) {
    const double m = *std::max_element(z[r].begin(), z[r].end());
    double s = 0.0;
    for (const double v : z[r]) s += std::exp(v - m);
    total += m + std::log(s) - z[r][y[r]];
  }
  return total / static_cast<double>(z.size());
}

// Reverse-mode gradient of the mean loss, flat layout.
inline Vec grad(const Net& n, const Mat& x, const std::vector<permweld::Label>& y) {
  const Trace t = run(n, x);
  const std::size_t rows = x.size(), L = n.w.size();
  Mat delta = softmax(t.pre.back());
  for (std::size_t r = 0; r < rows; ++r) {
    delta[r][y[r]] -= 1.0;
    for (double& v : delta[r]) v /= static_cast<double>(rows);
  }
  std::vector<Mat> gw(L);
  std::vector<Vec> gb(L);
  for (std::size_t l = L; l-- > 0;) {
    const Mat& in = t.in[l];
    gw[l].assign(n.w[l].size(), Vec(n.w[l][0].size(), 0.0));
    gb[l].assign(n.b[l].size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < n.w[l].size(); ++o) {
        for (std::size_t i = 0; i < in[r].size(); ++i) gw[l][o][i] += delta[r][o] * in[r][i];
        if (!gb[l].empty()) gb[l][o] += delta[r][o];
      }
    }
    if (l == 0) break;
    Mat prev(rows, Vec(n.w[l][0].size(), 0.0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < prev[r].size(); ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < n.w[l].size(); ++o) s += delta[r][o] * n.w[l][o][i];
        prev[r][i] = t.pre[l - 1][r][i] > 0.0 ? s : 0.0;
      }
    }
    delta = prev;
  }
  Vec v;
  for (std::size_t l = 0; l < L; ++l) {
    for (const auto& row : gw[l]) v.insert(v.end(), row.begin(), row.end());
    v.insert(v.end(), gb[l].begin(), gb[l].end());
  }
  return v;
}

// Sizes of each layer's block (W and b together) in the flat layout.
inline std::vector<std::size_t> blocks(const Net& n) {
  std::vector<std::size_t> s;
  for (std::size_t l = 0; l < n.w.size(); ++l) s.push_back(n.w[l].size() * n.w[l][0].size() + n.b[l].size());
  return s;
}

inline double layer_cosine_distance(const Vec& g1, const Vec& g2, const std::vector<std::size_t>& sizes) {
  double total = 0.0;
  std::size_t k = 0;
  for (const std::size_t s : sizes) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = k; i < k + s; ++i) {
      ab += g1[i] * g2[i];
      aa += g1[i] * g1[i];
      bb += g2[i] * g2[i];
    }
    total += (aa == 0.0 || bb == 0.0) ? 1.0 : 1.0 - ab / std::sqrt(aa * bb);
    k += s;
  }
  return total;
}

// True when both inputs give every hidden unit the same on/off state.
inline bool same_pattern(const Net& n, const Mat& x1, const Mat& x2) {
  const Trace a = run(n, x1), b = run(n, x2);
  for (std::size_t l = 0; l + 1 < n.w.size(); ++l) {
    for (std::size_t r = 0; r < x1.size(); ++r) {
      for (std::size_t o = 0; o < a.pre[l][r].size(); ++o) {
        if ((a.pre[l][r][o] > 0.0) != (b.pre[l][r][o] > 0.0)) return false;
      }
    }
  }
  return true;
}

// True when both networks give every hidden unit the same on/off state on x.
inline bool same_pattern(const Net& n1, const Net& n2, const Mat& x) {
  const Trace a = run(n1, x), b = run(n2, x);
  for (std::size_t l = 0; l + 1 < n1.w.size(); ++l) {
    for (std::size_t r = 0; r < x.size(); ++r) {
      for (std::size_t o = 0; o < a.pre[l][r].size(); ++o) {
        if ((a.pre[l][r][o] > 0.0) != (b.pre[l][r][o] > 0.0)) return false;
      }
    }
  }
  return true;
}

// Central-difference gradient of the mean loss over the flat parameters.
// Coordinates whose perturbation flips a hidden unit are marked in `kept`
// as false and left at zero.
inline Vec fd_param_grad(const Net& net, const Mat& x, const std::vector<permweld::Label>& y, double h,
                         std::vector<bool>& kept) {
  const Vec w = flat(net);
  Vec g(w.size(), 0.0);
  kept.assign(w.size(), false);
  Net plus = net, minus = net;
  for (std::size_t i = 0; i < w.size(); ++i) {
    Vec wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    set_flat(plus, wp);
    set_flat(minus, wm);
    if (!same_pattern(plus, minus, x)) continue;
    kept[i] = true;
    g[i] = (loss(plus, x, y) - loss(minus, x, y)) / (2 * h);
  }
  return g;
}

inline double rel_error(const Vec& got, const Vec& want) {
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    d += (got[i] - want[i]) * (got[i] - want[i]);
    n += want[i] * want[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(n), 1e-12);
}

// Exhaustive assignment optimum (maximise).
inline double brute_force_max(const std::vector<Vec>& s) {
  std::vector<std::size_t> p(s.size());
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best = -std::numeric_limits<double>::infinity();
  do {
    double v = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) v += s[i][p[i]];
    best = std::max(best, v);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace oracle
