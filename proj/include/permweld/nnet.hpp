#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "permweld/dataset.hpp"
#include "permweld/tensor.hpp"

namespace permweld {

enum class Activation { relu };

// Layer sizes [d_0, d_1, ..., d_L]: input width, hidden widths, class count.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  bool use_bias = true;

  void validate() const;
  std::size_t num_layers() const noexcept { return layer_sizes.size() - 1; }
  std::size_t input_dim() const noexcept { return layer_sizes.front(); }
  std::size_t num_classes() const noexcept { return layer_sizes.back(); }
  std::size_t flat_size() const noexcept;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// One affine layer: weight is (outputs x inputs), bias has `outputs` entries
// or is empty when the spec has no bias.
struct Layer {
  Matrix weight;
  std::vector<float> bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Layer> layers;

  // Throws ValidationError unless shapes chain per spec and values are finite.
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Gradient of the mean cross-entropy, laid out like the parameters.
struct GradBundle {
  std::vector<Layer> layers;
  double loss = 0.0;
};

// Canonical vec(w): layers in order, each W row-major followed by b.
using FlatVector = std::vector<float>;

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed);
MlpParams zero_params(const MlpSpec& spec);

Matrix forward(const MlpParams& params, const Matrix& batch);

// Mean cross-entropy and its exact gradient. When `correct` is given it
// receives the number of rows whose argmax matches the label.
GradBundle loss_and_grad(const MlpParams& params, const Matrix& features, std::span<const Label> labels,
                         std::size_t* correct = nullptr);

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and argmax accuracy over all rows, evaluated in chunks.
// Ties in the argmax go to the lowest class index.
LossAccuracy evaluate_batch(const MlpParams& params, const Matrix& features, std::span<const Label> labels);

double predict_accuracy(const MlpParams& params, const Dataset& dataset);

// Per-row softmax probabilities.
Matrix predict_proba(const MlpParams& params, const Matrix& features);

FlatVector flatten(const MlpParams& params);
FlatVector flatten(const GradBundle& grad);
MlpParams unflatten(const MlpSpec& spec, std::span<const float> flat);

enum class GradientDistance { layerwise_cosine };

// Sum over layers of (1 - cos) between the per-layer gradients (W and b of a
// layer form one vector). A layer with a zero-norm side contributes 1.
double gradient_distance(const GradBundle& g1, const GradBundle& g2,
                         GradientDistance mode = GradientDistance::layerwise_cosine);

struct DistanceGradient {
  double distance = 0.0;
  Matrix input_grad;  // d distance / d synthetic features
};

// Derivative of gradient_distance(grad_w L(synthetic), real_grad) with respect
// to the synthetic feature values, by analytic double backpropagation.
DistanceGradient grad_of_grad_distance(const MlpParams& params, const Matrix& synthetic_features,
                                       std::span<const Label> synthetic_labels, const GradBundle& real_grad,
                                       GradientDistance mode = GradientDistance::layerwise_cosine);

// Shape helpers shared by the alignment code.
GradBundle zero_grad(const MlpSpec& spec);
MlpParams as_params(const MlpSpec& spec, const GradBundle& grad);

}  // namespace permweld
