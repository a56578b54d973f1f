#pragma once

#include <cstdint>
#include <functional>

#include "json.hpp"
#include "permweld/dataset.hpp"
#include "permweld/nnet.hpp"

namespace permweld {

struct CondenseConfig {
  std::size_t ipc = 10;
  std::size_t outer_iterations = 1000;
  std::size_t net_reinit_period = 100;
  std::size_t inner_net_steps = 10;
  double lr_synthetic = 10.0;
  double momentum_synthetic = 0.5;
  double lr_net = 0.01;
  std::size_t real_batch_per_class = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const CondenseConfig& config);
CondenseConfig condense_config_from_json(const nlohmann::json& j);

// Gradient matching: synthetic rows start as N(0.5, 0.1) noise and are moved
// so that, class by class, the network gradient they induce points along the
// gradient of a real batch. The network is re-drawn every net_reinit_period
// iterations and trained on the synthetic set in between. Features are left
// unclamped; save_dataset clamps on export.
CondensedDataset condense(const Dataset& dataset, const MlpSpec& spec, const CondenseConfig& config,
                          const std::function<void(std::size_t, double)>& on_iteration = {});

// Name used for condensed sets: "<source>-cond<ipc>".
std::string condensed_name(const std::string& source, std::size_t ipc);

// Equal-weight mixture of two condensed sets.
MixedDataset build_condensed_mix(const CondensedDataset& cond_a, const CondensedDataset& cond_b);

}  // namespace permweld
