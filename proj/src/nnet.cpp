#include "permweld/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "permweld/error.hpp"
#include "permweld/kernels.hpp"

namespace permweld {

namespace {

constexpr std::size_t kEvalChunk = 1024;

struct ForwardTrace {
  std::vector<Matrix> pre;   // z_l for every layer
  std::vector<Matrix> post;  // relu(z_l) for hidden layers
};

const Matrix& layer_input(const ForwardTrace& t, const Matrix& x, std::size_t l) {
  return l == 0 ? x : t.post[l - 1];
}

void check_batch(const MlpParams& params, const Matrix& batch) {
  if (batch.cols() != params.spec.input_dim()) {
    throw ValidationError("batch width " + std::to_string(batch.cols()) + " does not match input dimension " +
                          std::to_string(params.spec.input_dim()));
  }
}

void check_labels(const MlpParams& params, const Matrix& batch, std::span<const Label> labels) {
  if (labels.size() != batch.rows()) throw ValidationError("label count does not match batch rows");
  for (const Label y : labels) {
    if (y >= params.spec.num_classes()) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(params.spec.num_classes()) + ")");
    }
  }
}

ForwardTrace run_forward(const MlpParams& params, const Matrix& x) {
  const std::size_t n_layers = params.layers.size();
  ForwardTrace t;
  t.pre.resize(n_layers);
  t.post.resize(n_layers - 1);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = params.layers[l];
    kernels::affine_rows(layer_input(t, x, l), layer.weight, layer.bias, t.pre[l]);
    if (l + 1 < n_layers) {
      Matrix h = t.pre[l];
      for (float& v : h.values()) v = v > 0.0f ? v : 0.0f;
      t.post[l] = std::move(h);
    }
  }
  return t;
}

// Per-row log-sum-exp of the logits and the loss sum over rows.
double softmax_rows(const Matrix& logits, std::span<const Label> labels, Matrix* probs) {
  double total = 0.0;
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (const float v : z) sum += std::exp(static_cast<double>(v) - zmax);
    const double lse = zmax + std::log(sum);
    if (!labels.empty()) total += lse - z[labels[r]];
    if (probs != nullptr) {
      auto p = probs->row(r);
      for (std::size_t j = 0; j < c; ++j) p[j] = static_cast<float>(std::exp(static_cast<double>(z[j]) - lse));
    }
  }
  return total;
}

std::size_t count_correct(const Matrix& logits, std::span<const Label> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (best == labels[r]) ++correct;
  }
  return correct;
}

void mask_relu(Matrix& grad, const Matrix& pre) {
  float* g = grad.data();
  const float* z = pre.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(z[i] > 0.0f)) g[i] = 0.0f;
  }
}

// Cotangents of the distance with respect to each layer gradient.
struct LayerCotangent {
  Matrix weight;
  std::vector<float> bias;
};

double layer_dot(const Layer& a, const Layer& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.weight.size(); ++i) s += static_cast<double>(a.weight.data()[i]) * b.weight.data()[i];
  for (std::size_t i = 0; i < a.bias.size(); ++i) s += static_cast<double>(a.bias[i]) * b.bias[i];
  return s;
}

void check_grad_shapes(const GradBundle& g1, const GradBundle& g2) {
  bool ok = g1.layers.size() == g2.layers.size();
  for (std::size_t l = 0; ok && l < g1.layers.size(); ++l) {
    ok = g1.layers[l].weight.rows() == g2.layers[l].weight.rows() &&
         g1.layers[l].weight.cols() == g2.layers[l].weight.cols() &&
         g1.layers[l].bias.size() == g2.layers[l].bias.size();
  }
  if (!ok) throw ValidationError("gradient bundles have different shapes");
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ValidationError("MlpSpec needs at least an input and an output size");
  for (const std::size_t d : layer_sizes) {
    if (d == 0) throw ValidationError("MlpSpec layer sizes must be positive");
  }
}

std::size_t MlpSpec::flat_size() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    n += layer_sizes[l] * layer_sizes[l - 1] + (use_bias ? layer_sizes[l] : 0);
  }
  return n;
}

void MlpParams::validate() const {
  spec.validate();
  if (layers.size() != spec.num_layers()) throw ValidationError("layer count does not match spec");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    if (layer.weight.rows() != spec.layer_sizes[l + 1] || layer.weight.cols() != spec.layer_sizes[l]) {
      throw ValidationError("layer " + std::to_string(l) + " weight shape does not match spec");
    }
    if (layer.bias.size() != (spec.use_bias ? spec.layer_sizes[l + 1] : 0)) {
      throw ValidationError("layer " + std::to_string(l) + " bias shape does not match spec");
    }
    const auto finite = [](float v) { return std::isfinite(v); };
    if (!std::all_of(layer.weight.values().begin(), layer.weight.values().end(), finite) ||
        !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) {
      throw ValidationError("layer " + std::to_string(l) + " has non-finite entries");
    }
  }
}

MlpParams zero_params(const MlpSpec& spec) {
  spec.validate();
  MlpParams p;
  p.spec = spec;
  for (std::size_t l = 1; l < spec.layer_sizes.size(); ++l) {
    Layer layer;
    layer.weight = Matrix(spec.layer_sizes[l], spec.layer_sizes[l - 1]);
    if (spec.use_bias) layer.bias.assign(spec.layer_sizes[l], 0.0f);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams p = zero_params(spec);
  std::mt19937_64 rng(seed);
  for (Layer& layer : p.layers) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(layer.weight.cols()));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& w : layer.weight.values()) w = dist(rng);
  }
  return p;
}

Matrix forward(const MlpParams& params, const Matrix& batch) {
  check_batch(params, batch);
  ForwardTrace t = run_forward(params, batch);
  return std::move(t.pre.back());
}

GradBundle loss_and_grad(const MlpParams& params, const Matrix& features, std::span<const Label> labels,
                         std::size_t* correct) {
  check_batch(params, features);
  check_labels(params, features, labels);
  if (features.rows() == 0) throw ValidationError("loss_and_grad: empty batch");

  const std::size_t n = features.rows();
  const std::size_t n_layers = params.layers.size();
  const ForwardTrace t = run_forward(params, features);

  GradBundle out;
  out.layers.resize(n_layers);

  Matrix delta(n, params.spec.num_classes());
  out.loss = softmax_rows(t.pre.back(), labels, &delta) / static_cast<double>(n);
  if (correct != nullptr) *correct = count_correct(t.pre.back(), labels);
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto d = delta.row(r);
    d[labels[r]] -= 1.0f;
    for (float& v : d) v *= inv_n;
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const Layer& layer = params.layers[l];
    Layer& g = out.layers[l];
    kernels::matmul_tn(delta, layer_input(t, features, l), g.weight);
    if (params.spec.use_bias) {
      g.bias.assign(layer.bias.size(), 0.0f);
      kernels::column_sums(delta, g.bias);
    }
    if (l > 0) {
      Matrix prev;
      kernels::matmul_nn(delta, layer.weight, prev);
      mask_relu(prev, t.pre[l - 1]);
      delta = std::move(prev);
    }
  }
  return out;
}

LossAccuracy evaluate_batch(const MlpParams& params, const Matrix& features, std::span<const Label> labels) {
  check_batch(params, features);
  check_labels(params, features, labels);
  if (features.rows() == 0) throw ValidationError("evaluate: empty dataset");

  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < features.rows(); start += kEvalChunk) {
    const std::size_t stop = std::min(features.rows(), start + kEvalChunk);
    idx.resize(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Matrix chunk = gather_rows(features, idx);
    const Matrix logits = forward(params, chunk);
    const auto chunk_labels = labels.subspan(start, stop - start);
    loss += softmax_rows(logits, chunk_labels, nullptr);
    correct += count_correct(logits, chunk_labels);
  }
  const auto n = static_cast<double>(features.rows());
  return {loss / n, static_cast<double>(correct) / n};
}

double predict_accuracy(const MlpParams& params, const Dataset& dataset) {
  if (dataset.size() == 0) throw ValidationError("predict_accuracy: empty dataset");
  if (dataset.num_classes != params.spec.num_classes()) {
    throw ValidationError("predict_accuracy: dataset class count does not match the model");
  }
  return evaluate_batch(params, dataset.features, dataset.labels).accuracy;
}

Matrix predict_proba(const MlpParams& params, const Matrix& features) {
  const Matrix logits = forward(params, features);
  Matrix probs(logits.rows(), logits.cols());
  softmax_rows(logits, {}, &probs);
  return probs;
}

FlatVector flatten(const MlpParams& params) {
  FlatVector flat;
  flat.reserve(params.spec.flat_size());
  for (const Layer& layer : params.layers) {
    flat.insert(flat.end(), layer.weight.values().begin(), layer.weight.values().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

FlatVector flatten(const GradBundle& grad) {
  FlatVector flat;
  for (const Layer& layer : grad.layers) {
    flat.insert(flat.end(), layer.weight.values().begin(), layer.weight.values().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

MlpParams unflatten(const MlpSpec& spec, std::span<const float> flat) {
  MlpParams p = zero_params(spec);
  if (flat.size() != spec.flat_size()) {
    throw ValidationError("unflatten: expected " + std::to_string(spec.flat_size()) + " values, got " +
                          std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (Layer& layer : p.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), layer.weight.size(), layer.weight.data());
    off += layer.weight.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), layer.bias.size(), layer.bias.begin());
    off += layer.bias.size();
  }
  return p;
}

GradBundle zero_grad(const MlpSpec& spec) {
  GradBundle g;
  g.layers = zero_params(spec).layers;
  return g;
}

MlpParams as_params(const MlpSpec& spec, const GradBundle& grad) {
  MlpParams p;
  p.spec = spec;
  p.layers = grad.layers;
  return p;
}

double gradient_distance(const GradBundle& g1, const GradBundle& g2, GradientDistance mode) {
  (void)mode;
  check_grad_shapes(g1, g2);
  double total = 0.0;
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    const double n1 = layer_dot(g1.layers[l], g1.layers[l]);
    const double n2 = layer_dot(g2.layers[l], g2.layers[l]);
    if (n1 == 0.0 || n2 == 0.0) {
      total += 1.0;
      continue;
    }
    total += 1.0 - layer_dot(g1.layers[l], g2.layers[l]) / std::sqrt(n1 * n2);
  }
  return total;
}

DistanceGradient grad_of_grad_distance(const MlpParams& params, const Matrix& x, std::span<const Label> labels,
                                       const GradBundle& real_grad, GradientDistance mode) {
  check_batch(params, x);
  check_labels(params, x, labels);
  if (x.rows() == 0) throw ValidationError("grad_of_grad_distance: empty synthetic batch");
  for (const float v : x.values()) {
    if (!std::isfinite(v)) throw ValidationError("grad_of_grad_distance: non-finite synthetic feature");
  }

  const std::size_t n = x.rows();
  const std::size_t n_layers = params.layers.size();
  const bool bias = params.spec.use_bias;
  const ForwardTrace t = run_forward(params, x);

  // Primal backward pass, keeping every delta.
  std::vector<Matrix> deltas(n_layers);
  Matrix probs(n, params.spec.num_classes());
  softmax_rows(t.pre.back(), labels, &probs);
  {
    Matrix d = probs;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = d.row(r);
      row[labels[r]] -= 1.0f;
      for (float& v : row) v *= inv_n;
    }
    deltas.back() = std::move(d);
  }
  GradBundle syn;
  syn.layers.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    kernels::matmul_tn(deltas[l], layer_input(t, x, l), syn.layers[l].weight);
    if (bias) {
      syn.layers[l].bias.assign(params.layers[l].bias.size(), 0.0f);
      kernels::column_sums(deltas[l], syn.layers[l].bias);
    }
    if (l > 0) {
      kernels::matmul_nn(deltas[l], params.layers[l].weight, deltas[l - 1]);
      mask_relu(deltas[l - 1], t.pre[l - 1]);
    }
  }

  DistanceGradient out;
  out.distance = gradient_distance(syn, real_grad, mode);

  // d distance / d (layer gradient).
  std::vector<LayerCotangent> cot(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Layer& g = syn.layers[l];
    const Layer& r = real_grad.layers[l];
    cot[l].weight = Matrix(g.weight.rows(), g.weight.cols());
    cot[l].bias.assign(g.bias.size(), 0.0f);
    const double gg = layer_dot(g, g);
    const double rr = layer_dot(r, r);
    if (gg == 0.0 || rr == 0.0) continue;
    const double gnorm = std::sqrt(gg), rnorm = std::sqrt(rr);
    const double cosine = layer_dot(g, r) / (gnorm * rnorm);
    const double a = -1.0 / (gnorm * rnorm);
    const double b = cosine / gg;
    for (std::size_t i = 0; i < g.weight.size(); ++i) {
      cot[l].weight.data()[i] = static_cast<float>(a * r.weight.data()[i] + b * g.weight.data()[i]);
    }
    for (std::size_t i = 0; i < g.bias.size(); ++i) {
      cot[l].bias[i] = static_cast<float>(a * r.bias[i] + b * g.bias[i]);
    }
  }

  // Reverse through the backward pass: adjoints of every delta, in forward
  // order since delta_{l-1} depends on delta_l.
  std::vector<Matrix> adj_delta(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::span<const float> cb = bias ? std::span<const float>(cot[l].bias) : std::span<const float>();
    kernels::affine_rows(layer_input(t, x, l), cot[l].weight, cb, adj_delta[l]);
    if (l > 0) {
      Matrix masked = adj_delta[l - 1];
      mask_relu(masked, t.pre[l - 1]);
      Matrix carried;
      kernels::affine_rows(masked, params.layers[l].weight, {}, carried);
      for (std::size_t i = 0; i < carried.size(); ++i) adj_delta[l].data()[i] += carried.data()[i];
    }
  }

  // Adjoints of the layer inputs through gW_l = delta_l^T in_l.
  std::vector<Matrix> adj_in(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) kernels::matmul_nn(deltas[l], cot[l].weight, adj_in[l]);

  // Softmax Jacobian: delta_L = (p - onehot) / n.
  Matrix adj_z(n, params.spec.num_classes());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = probs.row(r);
    const auto a = adj_delta.back().row(r);
    double pa = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) pa += static_cast<double>(p[j]) * a[j];
    auto out_row = adj_z.row(r);
    for (std::size_t j = 0; j < p.size(); ++j) out_row[j] = static_cast<float>(p[j] * (a[j] - pa) * inv_n);
  }

  // Ordinary reverse pass through the forward network.
  for (std::size_t l = n_layers; l-- > 0;) {
    Matrix adj_prev;
    kernels::matmul_nn(adj_z, params.layers[l].weight, adj_prev);
    for (std::size_t i = 0; i < adj_prev.size(); ++i) adj_in[l].data()[i] += adj_prev.data()[i];
    if (l > 0) {
      adj_z = adj_in[l];
      mask_relu(adj_z, t.pre[l - 1]);
    }
  }
  out.input_grad = std::move(adj_in[0]);
  return out;
}

}  // namespace permweld
