#include "permweld/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "permweld/error.hpp"

namespace permweld {

Permutation::Permutation(std::vector<std::size_t> mapping) : p_(std::move(mapping)) {
  std::vector<bool> seen(p_.size(), false);
  for (const std::size_t j : p_) {
    if (j >= p_.size() || seen[j]) throw ValidationError("permutation is not a bijection");
    seen[j] = true;
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return Permutation(std::move(p));
}

bool Permutation::is_identity() const noexcept {
  for (std::size_t i = 0; i < p_.size(); ++i) {
    if (p_[i] != i) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> q(p_.size());
  for (std::size_t i = 0; i < p_.size(); ++i) q[p_[i]] = i;
  return Permutation(std::move(q));
}

namespace {

struct Duals {
  std::vector<double> u, v;
  std::vector<std::size_t> row_to_col;
};

// Minimum-cost assignment with dual potentials (1-based e-maxx formulation).
Duals hungarian(const MatrixD& cost) {
  const std::size_t n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Duals d;
  d.u.assign(u.begin() + 1, u.end());
  d.v.assign(v.begin() + 1, v.end());
  d.row_to_col.resize(n);
  for (std::size_t j = 1; j <= n; ++j) d.row_to_col[p[j] - 1] = j - 1;
  return d;
}

// Every optimal assignment uses only edges that are tight under optimal duals,
// and every perfect matching on tight edges is optimal. Walk the rows in order
// and give each the smallest tight column that still leaves a perfect matching
// of the later rows, repairing the current matching by an alternating path.
std::vector<std::size_t> lexicographic_optimum(const MatrixD& cost, const Duals& d) {
  const std::size_t n = cost.rows();
  double scale = 0.0;
  for (const double x : cost.values()) scale = std::max(scale, std::abs(x));
  const double tol = 1e-9 * std::max(1.0, scale) * static_cast<double>(n);

  std::vector<std::vector<std::size_t>> tight(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (cost(i, j) - d.u[i] - d.v[j] <= tol) tight[i].push_back(j);
    }
  }
  std::vector<std::size_t> match = d.row_to_col;
  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[match[i]] = i;
  std::vector<char> col_fixed(n, 0);
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();

  std::vector<std::size_t> parent_col(n), via_row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const std::size_t j : tight[i]) {
      if (col_fixed[j]) continue;
      if (j == match[i]) break;
      // Row r gives up j; find a path from r to the column i releases.
      const std::size_t freed = match[i];
      const std::size_t r = owner[j];
      std::fill(parent_col.begin(), parent_col.end(), none);
      std::deque<std::size_t> queue{r};
      std::vector<char> row_seen(n, 0);
      row_seen[r] = 1;
      bool found = false;
      while (!queue.empty() && !found) {
        const std::size_t row = queue.front();
        queue.pop_front();
        for (const std::size_t c : tight[row]) {
          if (col_fixed[c] || c == j || parent_col[c] != none) continue;
          parent_col[c] = row;
          if (c == freed) {
            found = true;
            break;
          }
          const std::size_t next = owner[c];
          if (next > i && !row_seen[next]) {
            row_seen[next] = 1;
            queue.push_back(next);
          }
        }
      }
      if (!found) continue;
      for (std::size_t c = freed;;) {
        const std::size_t row = parent_col[c];
        const std::size_t prev = match[row];
        match[row] = c;
        owner[c] = row;
        if (row == r) break;
        c = prev;
      }
      match[i] = j;
      owner[j] = i;
      break;
    }
    col_fixed[match[i]] = 1;
  }
  return match;
}

}  // namespace

Assignment solve_lap(const MatrixD& score, Sense sense) {
  if (score.rows() != score.cols()) throw ValidationError("solve_lap: score matrix is not square");
  if (score.rows() == 0) throw ValidationError("solve_lap: empty score matrix");
  for (const double x : score.values()) {
    if (!std::isfinite(x)) throw ValidationError("solve_lap: non-finite score");
  }
  const std::size_t n = score.rows();
  MatrixD cost(n, n);
  const double sign = sense == Sense::maximize ? -1.0 : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Row and column shifts leave the optimal set unchanged; centring each
    // row keeps the tightness tolerance meaningful.
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) lo = std::min(lo, sign * score(i, j));
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = sign * score(i, j) - lo;
  }
  const Duals duals = hungarian(cost);
  Assignment result;
  result.permutation = Permutation(lexicographic_optimum(cost, duals));
  for (std::size_t i = 0; i < n; ++i) result.objective += score(i, result.permutation[i]);
  return result;
}

}  // namespace permweld
