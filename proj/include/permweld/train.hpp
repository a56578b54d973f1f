#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "permweld/dataset.hpp"
#include "permweld/nnet.hpp"

namespace permweld {

enum class OptimizerKind { sgd_momentum, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  bool cosine_decay = true;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// First-order optimiser state for one parameter set. Weight decay is
// coupled (added to the gradient).
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const MlpSpec& spec);

  // One update with the given step size.
  void step(MlpParams& params, const GradBundle& grad, double learning_rate);

 private:
  TrainConfig config_;
  std::vector<Layer> first_;
  std::vector<Layer> second_;
  std::size_t steps_ = 0;
};

// Learning rate at `step` of `total_steps` under the config's schedule.
double scheduled_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct Checkpoint {
  MlpSpec spec;
  MlpParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean minibatch loss over the epoch
  double accuracy = 0.0;  // running minibatch accuracy over the epoch
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

// Deterministic minibatch training from init_params(spec, config.seed).
// Epoch shuffling draws only from config.seed.
TrainResult train(const Dataset& dataset, const MlpSpec& spec, const TrainConfig& config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

LossAccuracy evaluate(const MlpParams& params, const Dataset& dataset);
// Alpha-weighted combination of the per-part metrics.
LossAccuracy evaluate(const MlpParams& params, const MixedDataset& mixed);

// Accuracy of the argmax of the averaged softmax outputs of two models.
double ensemble_accuracy(const MlpParams& params_a, const MlpParams& params_b, const Dataset& dataset);
double ensemble_accuracy(const MlpParams& params_a, const MlpParams& params_b, const MixedDataset& mixed);

// PMCK1: "PMCK", u32 version = 1, u32 count of layer sizes, u32 sizes,
// u8 use_bias, per layer W row-major f32 then b f32, u32-length-prefixed
// UTF-8 JSON metadata. All little-endian.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace permweld
