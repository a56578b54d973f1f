#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "permweld/assignment.hpp"
#include "permweld/dataset.hpp"
#include "permweld/nnet.hpp"

namespace permweld {

// One permutation per hidden layer; input and output units never move.
// layers[k] reorders the outputs of affine layer k.
struct PermutationSet {
  std::vector<Permutation> layers;

  static PermutationSet identity(const MlpSpec& spec);
  void validate(const MlpSpec& spec) const;
  bool is_identity() const noexcept;

  friend bool operator==(const PermutationSet&, const PermutationSet&) = default;
};

nlohmann::json to_json(const PermutationSet& pi);

struct AlignConfig {
  std::size_t wm_max_sweeps = 100;
  double fwm_beta = 0.01;
  double ste_learning_rate = 0.5;
  double ste_momentum = 0.9;
  std::size_t ste_epochs = 10;
  std::size_t ste_batch_size = 128;
  double ste_lambda = 0.5;
  // Keep the epoch-end projection (or the WM start) with the lowest
  // full-mixture loss at the ste_lambda merge instead of the last one.
  bool ste_keep_best = true;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const AlignConfig& config);
AlignConfig align_config_from_json(const nlohmann::json& j);

// Rows of W_k and entries of b_k reordered by P_k, columns of W_{k+1} by the
// same P_k: W'_k[i][m] = W_k[p_k[i]][p_{k-1}[m]]. The network function is
// unchanged.
MlpParams apply_permutation(const MlpParams& params, const PermutationSet& pi);
GradBundle apply_permutation(const GradBundle& grad, const MlpSpec& spec, const PermutationSet& pi);

// (1 - lambda) a + lambda b, elementwise.
MlpParams merge_interpolate(const MlpParams& params_a, const MlpParams& params_b, double lambda);

// ||vec(a) - vec(b)||^2 accumulated in double.
double squared_distance(const MlpParams& params_a, const MlpParams& params_b);

struct WmTrace {
  std::size_t sweeps = 0;
  // Squared distance before the first update and after every accepted one.
  std::vector<double> objective;
};

// Coordinate descent over hidden layers; each step solves one layer's LAP
// exactly with the other permutations fixed. `start` warm-starts the search.
PermutationSet weight_matching(const MlpParams& params_a, const MlpParams& params_b, const AlignConfig& config,
                               const PermutationSet* start = nullptr, WmTrace* trace = nullptr);

// WM with the linear flatness term: minimises
//   beta ||a - pi(b)||^2 + (1 - beta) (a - pi(b)) . pi(grad_b)
// where grad_b is the loss gradient of model B at b. beta = 1 is exactly WM.
PermutationSet flat_weight_matching(const MlpParams& params_a, const MlpParams& params_b, const GradBundle& grad_b,
                                    const AlignConfig& config, WmTrace* trace = nullptr);

struct SteState {
  MlpParams free_params;     // relaxed copy of model B
  PermutationSet projected;  // nearest permutation of B to free_params
};

struct SteEpoch {
  std::size_t epoch = 0;
  double minibatch_loss = 0.0;  // mean over the epoch's steps
  double mixture_loss = 0.0;    // full training mixture at the projected merge
  std::size_t changed_layers = 0;
};

struct SteTrace {
  double initial_mixture_loss = 0.0;
  std::vector<SteEpoch> epochs;
  std::size_t selected_epoch = 0;  // 0 is the WM start, e is the end of epoch e
};

// Straight-through alignment: optimises a relaxed copy of B through the
// projected merge (1 - lambda) a + lambda proj(free), starting from WM.
PermutationSet ste_align(const MlpParams& params_a, const MlpParams& params_b, const MixedDataset& mix,
                         const AlignConfig& config, SteTrace* trace = nullptr);

// Diagonal Fisher information laid out like flatten(params).
struct FisherDiagonal {
  std::vector<double> values;
  std::string source;
  std::size_t sample_count = 0;
};

// Elementwise (F_A w_A + F_B w_B) / (F_A + F_B + damping); entries where
// both Fisher values are zero take the average.
MlpParams fisher_merge(const MlpParams& params_a, const MlpParams& params_b_permuted, const FisherDiagonal& fisher_a,
                       const FisherDiagonal& fisher_b, double damping);

}  // namespace permweld
