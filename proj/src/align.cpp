#include "permweld/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "permweld/error.hpp"
#include "permweld/kernels.hpp"
#include "permweld/train.hpp"

namespace permweld {

namespace {

void check_same_spec(const MlpParams& a, const MlpParams& b, const char* what) {
  if (!(a.spec == b.spec)) throw ValidationError(std::string(what) + ": model specs differ");
}

// Reorders one layer: out[i][m] = w[rows(i)][cols(m)], where a null
// permutation means identity.
Layer permute_layer(const Layer& layer, const Permutation* rows, const Permutation* cols) {
  const std::size_t n = layer.weight.rows(), k = layer.weight.cols();
  Layer out{Matrix(n, k), std::vector<float>(layer.bias.size())};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = rows ? (*rows)[i] : i;
    const auto in = layer.weight.row(src);
    auto dst = out.weight.row(i);
    if (cols) {
      for (std::size_t m = 0; m < k; ++m) dst[m] = in[(*cols)[m]];
    } else {
      std::copy(in.begin(), in.end(), dst.begin());
    }
    if (!layer.bias.empty()) out.bias[i] = layer.bias[src];
  }
  return out;
}

std::vector<Layer> permute_layers(const std::vector<Layer>& layers, const PermutationSet& pi) {
  const std::size_t count = layers.size();
  std::vector<Layer> out;
  out.reserve(count);
  for (std::size_t l = 0; l < count; ++l) {
    const Permutation* rows = l + 1 < count ? &pi.layers[l] : nullptr;
    const Permutation* cols = l > 0 ? &pi.layers[l - 1] : nullptr;
    out.push_back(permute_layer(layers[l], rows, cols));
  }
  return out;
}

double inner(const std::vector<Layer>& a, const std::vector<Layer>& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const auto& wa = a[l].weight.values();
    const auto& wb = b[l].weight.values();
    for (std::size_t i = 0; i < wa.size(); ++i) s += static_cast<double>(wa[i]) * wb[i];
    for (std::size_t i = 0; i < a[l].bias.size(); ++i) s += static_cast<double>(a[l].bias[i]) * b[l].bias[i];
  }
  return s;
}

// LAP score of hidden layer k against `c`: entry (i, j) is the inner product
// gained by placing c's unit j at position i, other layers held at `pi`.
MatrixD layer_score(const MlpParams& a, const MlpParams& c, const PermutationSet& pi, std::size_t k) {
  const Layer& in_a = a.layers[k];
  const Layer& in_c = c.layers[k];
  const Permutation* prev = k > 0 ? &pi.layers[k - 1] : nullptr;
  const Permutation* next = k + 1 < pi.layers.size() ? &pi.layers[k + 1] : nullptr;

  MatrixD s = kernels::cross_gram(in_a.weight, permute_layer(in_c, nullptr, prev).weight);
  const std::size_t n = s.rows();
  for (std::size_t i = 0; i < in_a.bias.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) s(i, j) += static_cast<double>(in_a.bias[i]) * in_c.bias[j];
  }
  const Matrix out_a = a.layers[k + 1].weight.transposed();
  const Matrix out_c = permute_layer(c.layers[k + 1], next, nullptr).weight.transposed();
  const MatrixD s2 = kernels::cross_gram(out_a, out_c);
  for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] += s2.data()[i];
  return s;
}

// Maximises <a, pi(c)> by coordinate descent. The reported objective is
// offset - 2 <a, pi(c)>, which is the caller's distance-like loss.
PermutationSet match_engine(const MlpParams& a, const MlpParams& c, const AlignConfig& config,
                            const PermutationSet* start, double offset, WmTrace* trace) {
  const std::size_t hidden = a.spec.num_layers() - 1;
  PermutationSet pi = start ? *start : PermutationSet::identity(a.spec);
  pi.validate(a.spec);
  const auto objective = [&] { return offset - 2.0 * inner(a.layers, permute_layers(c.layers, pi)); };
  if (trace) {
    *trace = {};
    trace->objective.push_back(objective());
  }
  if (hidden == 0) return pi;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(hidden);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t sweep = 0; sweep < config.wm_max_sweeps; ++sweep) {
    std::shuffle(order.begin(), order.end(), rng);
    bool changed = false;
    for (const std::size_t k : order) {
      const MatrixD s = layer_score(a, c, pi, k);
      double current = 0.0;
      for (std::size_t i = 0; i < s.rows(); ++i) current += s(i, pi.layers[k][i]);
      Assignment best = solve_lap(s, Sense::maximize);
      if (best.permutation == pi.layers[k]) continue;
      if (!(best.objective > current + 1e-12 * std::max(1.0, std::abs(current)))) continue;
      pi.layers[k] = std::move(best.permutation);
      changed = true;
      if (trace) trace->objective.push_back(objective());
    }
    if (trace) trace->sweeps = sweep + 1;
    if (!changed) break;
  }
  return pi;
}

MlpParams combine(const MlpParams& a, const MlpParams& b, double wa, double wb) {
  MlpParams out = a;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& w = out.layers[l].weight.values();
    const auto& x = a.layers[l].weight.values();
    const auto& y = b.layers[l].weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(wa * x[i] + wb * y[i]);
    auto& bias = out.layers[l].bias;
    for (std::size_t i = 0; i < bias.size(); ++i) {
      bias[i] = static_cast<float>(wa * a.layers[l].bias[i] + wb * b.layers[l].bias[i]);
    }
  }
  return out;
}

}  // namespace

PermutationSet PermutationSet::identity(const MlpSpec& spec) {
  PermutationSet pi;
  for (std::size_t k = 1; k + 1 < spec.layer_sizes.size(); ++k) {
    pi.layers.push_back(Permutation::identity(spec.layer_sizes[k]));
  }
  return pi;
}

void PermutationSet::validate(const MlpSpec& spec) const {
  if (layers.size() + 2 != spec.layer_sizes.size()) {
    throw ValidationError("permutation set has " + std::to_string(layers.size()) + " layers, model has " +
                          std::to_string(spec.layer_sizes.size() - 2) + " hidden layers");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].size() != spec.layer_sizes[k + 1]) {
      throw ValidationError("permutation " + std::to_string(k) + " has the wrong size");
    }
  }
}

bool PermutationSet::is_identity() const noexcept {
  return std::all_of(layers.begin(), layers.end(), [](const Permutation& p) { return p.is_identity(); });
}

nlohmann::json to_json(const PermutationSet& pi) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pi.layers) j.push_back(p.mapping());
  return j;
}

void AlignConfig::validate() const {
  if (!(fwm_beta >= 0.0 && fwm_beta <= 1.0)) throw ValidationError("fwm_beta must lie in [0, 1]");
  if (!(ste_lambda >= 0.0 && ste_lambda <= 1.0)) throw ValidationError("ste_lambda must lie in [0, 1]");
  if (!(ste_learning_rate > 0.0)) throw ValidationError("ste_learning_rate must be positive");
  if (ste_batch_size < 1) throw ValidationError("ste_batch_size must be at least 1");
}

nlohmann::json to_json(const AlignConfig& c) {
  return {{"wm_max_sweeps", c.wm_max_sweeps},   {"fwm_beta", c.fwm_beta},
          {"ste_learning_rate", c.ste_learning_rate}, {"ste_momentum", c.ste_momentum},
          {"ste_epochs", c.ste_epochs},         {"ste_batch_size", c.ste_batch_size},
          {"ste_lambda", c.ste_lambda},         {"ste_keep_best", c.ste_keep_best},
          {"seed", c.seed}};
}

AlignConfig align_config_from_json(const nlohmann::json& j) {
  AlignConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "wm_max_sweeps") {
      c.wm_max_sweeps = value.get<std::size_t>();
    } else if (key == "fwm_beta") {
      c.fwm_beta = value.get<double>();
    } else if (key == "ste_learning_rate") {
      c.ste_learning_rate = value.get<double>();
    } else if (key == "ste_momentum") {
      c.ste_momentum = value.get<double>();
    } else if (key == "ste_epochs") {
      c.ste_epochs = value.get<std::size_t>();
    } else if (key == "ste_batch_size") {
      c.ste_batch_size = value.get<std::size_t>();
    } else if (key == "ste_lambda") {
      c.ste_lambda = value.get<double>();
    } else if (key == "ste_keep_best") {
      c.ste_keep_best = value.get<bool>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown key align." + key);
    }
  }
  return c;
}

MlpParams apply_permutation(const MlpParams& params, const PermutationSet& pi) {
  pi.validate(params.spec);
  MlpParams out;
  out.spec = params.spec;
  out.layers = permute_layers(params.layers, pi);
  return out;
}

GradBundle apply_permutation(const GradBundle& grad, const MlpSpec& spec, const PermutationSet& pi) {
  pi.validate(spec);
  GradBundle out;
  out.loss = grad.loss;
  out.layers = permute_layers(grad.layers, pi);
  return out;
}

MlpParams merge_interpolate(const MlpParams& params_a, const MlpParams& params_b, double lambda) {
  check_same_spec(params_a, params_b, "merge_interpolate");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("merge_interpolate: lambda must lie in [0, 1]");
  if (lambda == 0.0) return params_a;
  if (lambda == 1.0) return params_b;
  return combine(params_a, params_b, 1.0 - lambda, lambda);
}

double squared_distance(const MlpParams& params_a, const MlpParams& params_b) {
  check_same_spec(params_a, params_b, "squared_distance");
  double s = 0.0;
  for (std::size_t l = 0; l < params_a.layers.size(); ++l) {
    const auto& x = params_a.layers[l].weight.values();
    const auto& y = params_b.layers[l].weight.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x[i]) - y[i];
      s += d * d;
    }
    const auto& bx = params_a.layers[l].bias;
    const auto& by = params_b.layers[l].bias;
    for (std::size_t i = 0; i < bx.size(); ++i) {
      const double d = static_cast<double>(bx[i]) - by[i];
      s += d * d;
    }
  }
  return s;
}

PermutationSet weight_matching(const MlpParams& params_a, const MlpParams& params_b, const AlignConfig& config,
                               const PermutationSet* start, WmTrace* trace) {
  check_same_spec(params_a, params_b, "weight_matching");
  config.validate();
  const double offset = inner(params_a.layers, params_a.layers) + inner(params_b.layers, params_b.layers);
  return match_engine(params_a, params_b, config, start, offset, trace);
}

PermutationSet flat_weight_matching(const MlpParams& params_a, const MlpParams& params_b, const GradBundle& grad_b,
                                    const AlignConfig& config, WmTrace* trace) {
  check_same_spec(params_a, params_b, "flat_weight_matching");
  config.validate();
  const MlpParams g = as_params(params_b.spec, grad_b);
  g.validate();
  const double beta = config.fwm_beta;
  if (beta == 1.0) return weight_matching(params_a, params_b, config, nullptr, trace);
  // beta |a - pi b|^2 + (1 - beta)(a - pi b).pi g
  //   = const - 2 <a, pi(beta b - (1 - beta)/2 g)>
  const MlpParams surrogate = combine(params_b, g, beta, -(1.0 - beta) / 2.0);
  const double offset = beta * (inner(params_a.layers, params_a.layers) + inner(params_b.layers, params_b.layers)) -
                        (1.0 - beta) * inner(params_b.layers, g.layers);
  return match_engine(params_a, surrogate, config, nullptr, offset, trace);
}

PermutationSet ste_align(const MlpParams& params_a, const MlpParams& params_b, const MixedDataset& mix,
                         const AlignConfig& config, SteTrace* trace) {
  check_same_spec(params_a, params_b, "ste_align");
  config.validate();
  if (!mix.part_a || !mix.part_b) throw ValidationError("ste_align: mixture is missing a part");
  const Dataset& da = *mix.part_a;
  const Dataset& db = *mix.part_b;
  for (const Dataset* d : {&da, &db}) {
    if (d->num_classes != params_a.spec.num_classes()) {
      throw ValidationError("ste_align: dataset '" + d->name + "' class count does not match the model");
    }
    if (d->size() == 0) throw ValidationError("ste_align: dataset '" + d->name + "' is empty");
  }
  const double lambda = config.ste_lambda;
  const double alpha = mix.alpha;

  PermutationSet pi = weight_matching(params_a, params_b, config);
  MlpParams free = apply_permutation(params_b, pi);

  const auto mixture_loss = [&](const PermutationSet& p) {
    return evaluate(merge_interpolate(params_a, apply_permutation(params_b, p), lambda), mix).loss;
  };
  PermutationSet best = pi;
  double best_loss = mixture_loss(pi);
  if (trace) {
    *trace = {};
    trace->initial_mixture_loss = best_loss;
  }

  TrainConfig opt_config;
  opt_config.optimizer = OptimizerKind::sgd_momentum;
  opt_config.learning_rate = config.ste_learning_rate;
  opt_config.momentum = config.ste_momentum;
  opt_config.weight_decay = 0.0;
  opt_config.cosine_decay = true;
  Optimizer opt(opt_config, params_b.spec);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order_a(da.size()), order_b(db.size());
  std::iota(order_a.begin(), order_a.end(), std::size_t{0});
  std::iota(order_b.begin(), order_b.end(), std::size_t{0});
  const std::size_t bs = config.ste_batch_size;
  const std::size_t steps = (std::max(da.size(), db.size()) + bs - 1) / bs;
  const std::size_t total = steps * config.ste_epochs;
  std::size_t step = 0;

  const auto batch = [bs](const Dataset& d, const std::vector<std::size_t>& order, std::size_t s,
                          std::vector<Label>& labels) {
    const std::size_t n = std::min(bs, d.size());
    std::vector<std::size_t> rows(n);
    for (std::size_t t = 0; t < n; ++t) rows[t] = order[(s * bs + t) % d.size()];
    labels.resize(n);
    for (std::size_t t = 0; t < n; ++t) labels[t] = d.labels[rows[t]];
    return gather_rows(d.features, rows);
  };

  std::vector<Label> ya, yb;
  for (std::size_t epoch = 1; epoch <= config.ste_epochs; ++epoch) {
    std::shuffle(order_a.begin(), order_a.end(), rng);
    std::shuffle(order_b.begin(), order_b.end(), rng);
    double loss_sum = 0.0;
    std::size_t changed = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const PermutationSet next = weight_matching(free, params_b, config, &pi);
      for (std::size_t k = 0; k < next.layers.size(); ++k) changed += next.layers[k] == pi.layers[k] ? 0 : 1;
      pi = next;
      const MlpParams merged = merge_interpolate(params_a, apply_permutation(params_b, pi), lambda);
      const Matrix xa = batch(da, order_a, s, ya);
      const Matrix xb = batch(db, order_b, s, yb);
      const GradBundle ga = loss_and_grad(merged, xa, ya);
      const GradBundle gb = loss_and_grad(merged, xb, yb);
      GradBundle g = ga;
      g.loss = (1.0 - alpha) * ga.loss + alpha * gb.loss;
      if (!std::isfinite(g.loss)) {
        throw NumericError("ste_align: non-finite mixture loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(s) + " (loss A " + std::to_string(ga.loss) + ", loss B " +
                           std::to_string(gb.loss) + ")");
      }
      // d merged / d proj = lambda; passed straight through to the free copy.
      const auto wa = static_cast<float>(lambda * (1.0 - alpha)), wb = static_cast<float>(lambda * alpha);
      for (std::size_t l = 0; l < g.layers.size(); ++l) {
        auto& w = g.layers[l].weight.values();
        const auto& x = ga.layers[l].weight.values();
        const auto& y = gb.layers[l].weight.values();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = wa * x[i] + wb * y[i];
        auto& b = g.layers[l].bias;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = wa * ga.layers[l].bias[i] + wb * gb.layers[l].bias[i];
      }
      loss_sum += g.loss;
      opt.step(free, g, scheduled_rate(opt_config, step++, total));
    }
    pi = weight_matching(free, params_b, config, &pi);
    const double loss = mixture_loss(pi);
    if (trace) trace->epochs.push_back({epoch, loss_sum / static_cast<double>(steps), loss, changed});
    if (!config.ste_keep_best || loss < best_loss) {
      best_loss = loss;
      best = pi;
      if (trace) trace->selected_epoch = epoch;
    }
  }
  return best;
}

MlpParams fisher_merge(const MlpParams& params_a, const MlpParams& params_b_permuted, const FisherDiagonal& fisher_a,
                       const FisherDiagonal& fisher_b, double damping) {
  check_same_spec(params_a, params_b_permuted, "fisher_merge");
  const std::size_t n = params_a.spec.flat_size();
  if (fisher_a.values.size() != n || fisher_b.values.size() != n) {
    throw ValidationError("fisher_merge: Fisher vectors do not match the flat parameter layout");
  }
  if (!(damping >= 0.0)) throw ValidationError("fisher_merge: damping must be nonnegative");
  const FlatVector wa = flatten(params_a);
  const FlatVector wb = flatten(params_b_permuted);
  FlatVector out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double fa = fisher_a.values[i], fb = fisher_b.values[i];
    // A weight neither model's data exercises keeps the plain average.
    out[i] = fa + fb > 0.0 ? static_cast<float>((fa * wa[i] + fb * wb[i]) / (fa + fb + damping))
                           : static_cast<float>(0.5 * (static_cast<double>(wa[i]) + wb[i]));
  }
  return unflatten(params_a.spec, out);
}

}  // namespace permweld
