#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "permweld/tensor.hpp"

namespace permweld {

// p[i] is the column assigned to row i. Always a bijection on 0..n-1.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> mapping);  // throws ValidationError unless bijective

  static Permutation identity(std::size_t n);

  std::size_t size() const noexcept { return p_.size(); }
  std::size_t operator[](std::size_t i) const { return p_[i]; }
  const std::vector<std::size_t>& mapping() const noexcept { return p_; }
  bool is_identity() const noexcept;
  Permutation inverse() const;

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> p_;
};

enum class Sense { maximize, minimize };

struct Assignment {
  Permutation permutation;
  double objective = 0.0;  // sum_i score(i, p[i])
};

// Exact linear assignment by shortest augmenting paths, O(n^3). Among optimal
// assignments the lexicographically smallest permutation is returned.
Assignment solve_lap(const MatrixD& score, Sense sense);

}  // namespace permweld
