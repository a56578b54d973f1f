#include "permweld/condense.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "permweld/error.hpp"

namespace permweld {

void CondenseConfig::validate() const {
  if (ipc < 1) throw ValidationError("condense: ipc must be at least 1");
  if (!(lr_synthetic > 0.0) || !(lr_net > 0.0)) throw ValidationError("condense: learning rates must be positive");
  if (net_reinit_period < 1) throw ValidationError("condense: net_reinit_period must be at least 1");
  if (real_batch_per_class < 1) throw ValidationError("condense: real_batch_per_class must be at least 1");
  if (!(momentum_synthetic >= 0.0 && momentum_synthetic < 1.0)) {
    throw ValidationError("condense: momentum_synthetic must lie in [0, 1)");
  }
}

nlohmann::json to_json(const CondenseConfig& c) {
  return {{"ipc", c.ipc},
          {"outer_iterations", c.outer_iterations},
          {"net_reinit_period", c.net_reinit_period},
          {"inner_net_steps", c.inner_net_steps},
          {"lr_synthetic", c.lr_synthetic},
          {"momentum_synthetic", c.momentum_synthetic},
          {"lr_net", c.lr_net},
          {"real_batch_per_class", c.real_batch_per_class},
          {"seed", c.seed}};
}

CondenseConfig condense_config_from_json(const nlohmann::json& j) {
  CondenseConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "ipc") {
      c.ipc = value.get<std::size_t>();
    } else if (key == "outer_iterations") {
      c.outer_iterations = value.get<std::size_t>();
    } else if (key == "net_reinit_period") {
      c.net_reinit_period = value.get<std::size_t>();
    } else if (key == "inner_net_steps") {
      c.inner_net_steps = value.get<std::size_t>();
    } else if (key == "lr_synthetic") {
      c.lr_synthetic = value.get<double>();
    } else if (key == "momentum_synthetic") {
      c.momentum_synthetic = value.get<double>();
    } else if (key == "lr_net") {
      c.lr_net = value.get<double>();
    } else if (key == "real_batch_per_class") {
      c.real_batch_per_class = value.get<std::size_t>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown key condense." + key);
    }
  }
  return c;
}

std::string condensed_name(const std::string& source, std::size_t ipc) {
  return source + "-cond" + std::to_string(ipc);
}

CondensedDataset condense(const Dataset& dataset, const MlpSpec& spec, const CondenseConfig& config,
                          const std::function<void(std::size_t, double)>& on_iteration) {
  config.validate();
  spec.validate();
  if (dataset.num_classes != spec.num_classes()) {
    throw ValidationError("condense: dataset '" + dataset.name + "' class count does not match the model");
  }
  if (dataset.dim() != spec.input_dim()) throw ValidationError("condense: dataset width does not match the model");
  const std::size_t classes = dataset.num_classes, dim = dataset.dim(), ipc = config.ipc;

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t r = 0; r < dataset.size(); ++r) by_class[dataset.labels[r]].push_back(r);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty()) throw ValidationError("condense: class " + std::to_string(c) + " has no rows");
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.5, 0.1);
  // One block of ipc rows per class.
  std::vector<Matrix> synthetic(classes, Matrix(ipc, dim));
  std::vector<Matrix> velocity(classes, Matrix(ipc, dim));
  for (auto& block : synthetic) {
    for (float& v : block.values()) v = static_cast<float>(noise(rng));
  }
  std::vector<std::vector<Label>> block_labels(classes);
  for (std::size_t c = 0; c < classes; ++c) block_labels[c].assign(ipc, static_cast<Label>(c));

  std::vector<std::size_t> cursor(classes, 0);
  for (auto& rows : by_class) std::shuffle(rows.begin(), rows.end(), rng);
  const auto real_batch = [&](std::size_t c) {
    auto& rows = by_class[c];
    const std::size_t n = std::min(config.real_batch_per_class, rows.size());
    if (cursor[c] + n > rows.size()) {
      std::shuffle(rows.begin(), rows.end(), rng);
      cursor[c] = 0;
    }
    std::span<const std::size_t> pick(rows.data() + cursor[c], n);
    cursor[c] += n;
    return gather_rows(dataset.features, pick);
  };

  std::vector<Label> all_labels;
  for (std::size_t c = 0; c < classes; ++c) all_labels.insert(all_labels.end(), ipc, static_cast<Label>(c));
  const auto assemble = [&] {
    Matrix all(classes * ipc, dim);
    for (std::size_t c = 0; c < classes; ++c) {
      std::copy(synthetic[c].values().begin(), synthetic[c].values().end(), all.data() + c * ipc * dim);
    }
    return all;
  };

  MlpParams net;
  const auto mu = static_cast<float>(config.momentum_synthetic);
  const auto lr_syn = static_cast<float>(config.lr_synthetic);
  const auto lr_net = static_cast<float>(config.lr_net);
  std::vector<Label> real_labels;
  for (std::size_t it = 0; it < config.outer_iterations; ++it) {
    if (it % config.net_reinit_period == 0) net = init_params(spec, rng());
    double distance = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const Matrix xr = real_batch(c);
      real_labels.assign(xr.rows(), static_cast<Label>(c));
      const GradBundle real = loss_and_grad(net, xr, real_labels);
      const DistanceGradient dg = grad_of_grad_distance(net, synthetic[c], block_labels[c], real);
      distance += dg.distance;
      auto& v = velocity[c].values();
      auto& x = synthetic[c].values();
      for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] = mu * v[i] + dg.input_grad.data()[i];
        x[i] -= lr_syn * v[i];
        if (!std::isfinite(x[i])) {
          throw NumericError("condense: synthetic features diverged at iteration " + std::to_string(it) +
                             ", class " + std::to_string(c));
        }
      }
    }
    if (on_iteration) on_iteration(it, distance);
    if (config.inner_net_steps > 0 && (it + 1) % config.net_reinit_period != 0) {
      const Matrix all = assemble();
      for (std::size_t s = 0; s < config.inner_net_steps; ++s) {
        const GradBundle g = loss_and_grad(net, all, all_labels);
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
          auto& w = net.layers[l].weight.values();
          const auto& gw = g.layers[l].weight.values();
          for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_net * gw[i];
          auto& b = net.layers[l].bias;
          for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr_net * g.layers[l].bias[i];
        }
      }
    }
  }

  CondensedDataset out;
  out.source_name = dataset.name;
  out.ipc = ipc;
  out.data.name = condensed_name(dataset.name, ipc);
  out.data.num_classes = classes;
  out.data.features = assemble();
  out.data.labels = all_labels;
  return out;
}

MixedDataset build_condensed_mix(const CondensedDataset& cond_a, const CondensedDataset& cond_b) {
  if (cond_a.data.num_classes != cond_b.data.num_classes) {
    throw ValidationError("build_condensed_mix: class counts differ");
  }
  if (cond_a.data.dim() != cond_b.data.dim()) throw ValidationError("build_condensed_mix: feature widths differ");
  return {std::make_shared<const Dataset>(cond_a.data), std::make_shared<const Dataset>(cond_b.data), 0.5};
}

}  // namespace permweld
