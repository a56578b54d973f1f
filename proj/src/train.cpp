#include "permweld/train.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "permweld/error.hpp"

namespace permweld {

namespace {

constexpr std::uint32_t kPmckVersion = 1;

template <typename Fn>
void for_each_value(MlpParams& params, const GradBundle& grad, std::vector<Layer>& s1, std::vector<Layer>& s2,
                    Fn&& fn) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Layer& p = params.layers[l];
    const Layer& g = grad.layers[l];
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      fn(p.weight.data()[i], g.weight.data()[i], s1[l].weight.data()[i], s2[l].weight.data()[i]);
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) fn(p.bias[i], g.bias[i], s1[l].bias[i], s2[l].bias[i]);
  }
}

void check_classes(const MlpParams& params, const Dataset& dataset) {
  if (dataset.num_classes != params.spec.num_classes()) {
    throw ValidationError("dataset '" + dataset.name + "' has " + std::to_string(dataset.num_classes) +
                          " classes but the model has " + std::to_string(params.spec.num_classes()) + " outputs");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be nonnegative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd_momentum"},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"weight_decay", c.weight_decay},
          {"cosine_decay", c.cosine_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "optimizer") {
      const auto name = value.get<std::string>();
      if (name == "sgd_momentum") {
        c.optimizer = OptimizerKind::sgd_momentum;
      } else if (name == "adam") {
        c.optimizer = OptimizerKind::adam;
      } else {
        throw ConfigError("train.optimizer must be sgd_momentum or adam");
      }
    } else if (key == "learning_rate") {
      c.learning_rate = value.get<double>();
    } else if (key == "momentum") {
      c.momentum = value.get<double>();
    } else if (key == "beta1") {
      c.beta1 = value.get<double>();
    } else if (key == "beta2") {
      c.beta2 = value.get<double>();
    } else if (key == "epsilon") {
      c.epsilon = value.get<double>();
    } else if (key == "weight_decay") {
      c.weight_decay = value.get<double>();
    } else if (key == "cosine_decay") {
      c.cosine_decay = value.get<bool>();
    } else if (key == "epochs") {
      c.epochs = value.get<std::size_t>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<std::size_t>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown key train." + key);
    }
  }
  return c;
}

Optimizer::Optimizer(const TrainConfig& config, const MlpSpec& spec) : config_(config) {
  first_ = zero_params(spec).layers;
  second_ = first_;  // unused by SGD, kept so both share one update loop
}

void Optimizer::step(MlpParams& params, const GradBundle& grad, double learning_rate) {
  ++steps_;
  const auto wd = static_cast<float>(config_.weight_decay);
  const auto lr = static_cast<float>(learning_rate);
  if (config_.optimizer == OptimizerKind::sgd_momentum) {
    const auto mu = static_cast<float>(config_.momentum);
    for_each_value(params, grad, first_, second_, [&](float& w, float g, float& v, float&) {
      const float d = g + wd * w;
      v = mu * v + d;
      w -= lr * v;
    });
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const auto c1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(steps_)));
  const auto c2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(steps_)));
  const auto fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
  const auto eps = static_cast<float>(config_.epsilon);
  for_each_value(params, grad, first_, second_, [&](float& w, float g, float& m, float& v) {
    const float d = g + wd * w;
    m = fb1 * m + (1.0f - fb1) * d;
    v = fb2 * v + (1.0f - fb2) * d * d;
    w -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
  });
}

double scheduled_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (!config.cosine_decay || total_steps == 0) return config.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

TrainResult train(const Dataset& dataset, const MlpSpec& spec, const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  spec.validate();
  TrainResult result;
  result.checkpoint.spec = spec;
  result.checkpoint.params = init_params(spec, config.seed);
  MlpParams& params = result.checkpoint.params;
  check_classes(params, dataset);
  if (dataset.dim() != spec.input_dim()) throw ValidationError("dataset width does not match the model input");
  if (dataset.size() == 0) throw ValidationError("train: empty dataset");

  Optimizer opt(config, spec);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches = (dataset.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::size_t step = 0;
  std::vector<Label> labels;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct_sum = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(dataset.size(), lo + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
      const Matrix x = gather_rows(dataset.features, rows);
      labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = dataset.labels[rows[i]];
      std::size_t correct = 0;
      const GradBundle g = loss_and_grad(params, x, labels, &correct);
      if (!std::isfinite(g.loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      loss_sum += g.loss * static_cast<double>(rows.size());
      correct_sum += correct;
      opt.step(params, g, scheduled_rate(config, step++, total_steps));
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(dataset.size()),
                     static_cast<double>(correct_sum) / static_cast<double>(dataset.size())};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.checkpoint.metadata["dataset"] = dataset.name;
  result.checkpoint.metadata["train_config"] = to_json(config);
  return result;
}

LossAccuracy evaluate(const MlpParams& params, const Dataset& dataset) {
  check_classes(params, dataset);
  return evaluate_batch(params, dataset.features, dataset.labels);
}

LossAccuracy evaluate(const MlpParams& params, const MixedDataset& mixed) {
  const LossAccuracy a = evaluate(params, *mixed.part_a);
  const LossAccuracy b = evaluate(params, *mixed.part_b);
  const double w = mixed.alpha;
  return {(1.0 - w) * a.loss + w * b.loss, (1.0 - w) * a.accuracy + w * b.accuracy};
}

double ensemble_accuracy(const MlpParams& params_a, const MlpParams& params_b, const Dataset& dataset) {
  if (!(params_a.spec == params_b.spec)) throw ValidationError("ensemble_accuracy: model specs differ");
  check_classes(params_a, dataset);
  if (dataset.size() == 0) throw ValidationError("ensemble_accuracy: empty dataset");
  const Matrix pa = predict_proba(params_a, dataset.features);
  const Matrix pb = predict_proba(params_b, dataset.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    std::size_t best = 0;
    double best_p = -1.0;
    for (std::size_t c = 0; c < pa.cols(); ++c) {
      const double p = 0.5 * (static_cast<double>(pa(r, c)) + pb(r, c));
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    if (best == dataset.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

double ensemble_accuracy(const MlpParams& params_a, const MlpParams& params_b, const MixedDataset& mixed) {
  const double a = ensemble_accuracy(params_a, params_b, *mixed.part_a);
  const double b = ensemble_accuracy(params_a, params_b, *mixed.part_b);
  return (1.0 - mixed.alpha) * a + mixed.alpha * b;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.params.validate();
  if (!(ckpt.params.spec == ckpt.spec)) throw ValidationError("checkpoint params do not match its spec");
  detail::ByteWriter w;
  w.bytes("PMCK");
  w.u32(kPmckVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.spec.layer_sizes.size()));
  for (const std::size_t d : ckpt.spec.layer_sizes) w.u32(static_cast<std::uint32_t>(d));
  w.u8(ckpt.spec.use_bias ? 1 : 0);
  for (const Layer& layer : ckpt.params.layers) {
    for (const float v : layer.weight.values()) w.f32(v);
    for (const float v : layer.bias) w.f32(v);
  }
  const std::string meta = ckpt.metadata.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  detail::write_file(path, w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.need(4);
  if (r.bytes(4) != "PMCK") throw FormatError(path.string() + ": not a PMCK checkpoint");
  if (const std::uint32_t v = r.u32(); v != kPmckVersion) {
    throw FormatError(path.string() + ": unsupported PMCK version " + std::to_string(v));
  }
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  if (count < 2 || count > 64) throw FormatError(path.string() + ": implausible layer count");
  for (std::uint32_t i = 0; i < count; ++i) ckpt.spec.layer_sizes.push_back(r.u32());
  const std::uint8_t bias = r.u8();
  if (bias > 1) throw FormatError(path.string() + ": bad use_bias flag");
  ckpt.spec.use_bias = bias == 1;
  try {
    ckpt.spec.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  r.need(ckpt.spec.flat_size() * 4);
  ckpt.params = zero_params(ckpt.spec);
  for (Layer& layer : ckpt.params.layers) {
    for (float& v : layer.weight.values()) v = r.f32();
    for (float& v : layer.bias) v = r.f32();
  }
  const std::uint32_t meta_len = r.u32();
  const std::string meta = r.bytes(meta_len);
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata JSON: " + e.what());
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after metadata");
  return ckpt;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string file_digest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace permweld
