#pragma once

#include <cstdint>
#include <vector>

#include "permweld/align.hpp"
#include "permweld/dataset.hpp"
#include "permweld/nnet.hpp"

namespace permweld {

// Losses and accuracies of the interpolation (1 - lambda) a + lambda b on
// both parts of a mixture and on the mixture itself.
struct SweepReport {
  double alpha = 0.5;
  std::vector<double> lambdas;
  std::vector<double> loss_a, loss_b, loss_ab;
  std::vector<double> acc_a, acc_b, acc_ab;

  std::size_t size() const noexcept { return lambdas.size(); }
  // Largest mixture loss along the path.
  double peak_loss() const;
  // Throws ValidationError unless the grid is sorted with endpoints 0 and 1,
  // columns have equal lengths, and loss_ab is the alpha-mix within tol.
  void validate(double tol = 1e-6) const;

  friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

SweepReport sweep(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& mix,
                  std::size_t grid_size = 25);

// Mixture loss at the midpoint of the two weight vectors.
double barrier(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& mix);

// Gradient of the mean loss over all rows of `dataset`.
GradBundle full_gradient(const MlpParams& params, const Dataset& dataset);

// 1/2 [(w_B - w_A) . grad L_A(w_A) + (w_A - w_B) . grad L_B(w_B)], gradients
// over the full datasets.
double sharpness(const MlpParams& params_a, const MlpParams& params_b, const Dataset& data_a, const Dataset& data_b);
// Same, with the gradients already computed.
double sharpness(const MlpParams& params_a, const MlpParams& params_b, const GradBundle& grad_a,
                 const GradBundle& grad_b);

struct L2Distance {
  double raw = 0.0;        // squared distance of the flat vectors
  double per_param = 0.0;  // raw / flat length
};

L2Distance l2_distance(const MlpParams& params_a, const MlpParams& params_b);

// Empirical Fisher: the mean elementwise square of per-example gradients of
// -log p(y | x) at the true label. When the dataset has more than
// max_samples rows a seeded random subset is used; larger budgets extend the
// same ordering.
FisherDiagonal fisher_diagonal(const MlpParams& params, const Dataset& dataset, std::size_t max_samples,
                               std::uint64_t seed);
// Alpha-weighted combination of the per-part diagonals.
FisherDiagonal fisher_diagonal(const MlpParams& params, const MixedDataset& mix, std::size_t max_samples,
                               std::uint64_t seed);

// Cosine similarity of two Fisher diagonals, in [0, 1].
double importance_overlap(const FisherDiagonal& fisher_a, const FisherDiagonal& fisher_b);
// Cosine similarity of the flat weight vectors, in [-1, 1].
double weight_overlap(const MlpParams& params_a, const MlpParams& params_b);

// Rank correlation with average ranks for ties. Returns 0 when either input
// is constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct MergeMetrics {
  double l2_raw = 0.0;
  double l2_per_param = 0.0;
  double barrier = 0.0;
  double sharpness = 0.0;
  double flipped_acc = 0.0;
  double best_lambda_acc = 0.0;
  double midpoint_acc = 0.0;
};

// Metrics of merging `a` with an already aligned `b`. Barrier and sharpness
// use the training mixture, accuracies use the evaluation mixture.
MergeMetrics merge_metrics(const MlpParams& params_a, const MlpParams& params_b_permuted, const MixedDataset& train,
                           const MixedDataset& eval, std::size_t grid_size = 25);

struct PopulationConfig {
  std::vector<double> betas{1.0};
  std::vector<std::size_t> sweep_caps{300};
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

struct PopulationMember {
  PermutationSet permutation;
  MergeMetrics metrics;
  double test_loss = 0.0;  // evaluation-mixture loss at the midpoint
  // Grid point that first produced this permutation set.
  double beta = 1.0;
  std::size_t sweep_cap = 0;
  std::uint64_t seed = 0;
  std::size_t multiplicity = 0;  // how many grid points produced it
};

// Runs FWM over betas x sweep caps x seeds (beta = 1 is plain WM), keeps the
// distinct permutation sets in grid order, and scores each one.
std::vector<PopulationMember> generate_permutation_population(const MlpParams& params_a, const MlpParams& params_b,
                                                              const MixedDataset& train, const MixedDataset& eval,
                                                              const PopulationConfig& config);

}  // namespace permweld
