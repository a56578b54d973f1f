#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "permweld/align.hpp"
#include "permweld/condense.hpp"
#include "permweld/landscape.hpp"
#include "permweld/train.hpp"

namespace permweld {

// Names of the datasets a pair experiment runs on.
struct PairConfig {
  std::string a, b;            // training sets
  std::string a_test, b_test;  // evaluation sets
  double alpha = 0.5;
};

struct Table1Config {
  std::string base, base_test;
  std::vector<double> angles{0, 15, 30, 45, 60, 75, 90};
  std::vector<std::uint64_t> seeds;  // empty: the top-level seed
  std::size_t height = 28, width = 28;
};

struct Table2Config {
  // Alignment settings for STE on condensed mixtures (a tiny set gives one
  // step per epoch, so it usually wants more epochs).
  AlignConfig ste_condensed;
  // Schedule for the model trained from scratch on the condensed union.
  TrainConfig data_cond_train;
};

struct FisherConfig {
  std::size_t max_samples = 1000;
  double damping = 1e-8;
};

// Parsed experiment document. Every section is optional; unknown keys at any
// level are rejected with a ConfigError.
class ExperimentConfig {
 public:
  static ExperimentConfig parse(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);
  // Settings used when no --config is given.
  static ExperimentConfig defaults();

  nlohmann::json document = nlohmann::json::object();
  std::filesystem::path base_dir;
  std::filesystem::path data_root;

  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  std::vector<std::size_t> hidden{128, 128};
  TrainConfig train;
  AlignConfig align;
  CondenseConfig condense;
  std::size_t sweep_grid = 25;
  std::optional<PairConfig> pair;
  std::optional<Table1Config> table1;
  Table2Config table2;
  PopulationConfig population;
  FisherConfig fisher;

  // Applies --seed: the top-level seed and every sub-config seed derived
  // from it.
  void override_seed(std::uint64_t seed);

  // Dataset by config name, or a PMDS path (anything containing '/' or
  // ending in .pmds). Built once and cached; thread-safe.
  DatasetPtr dataset(const std::string& name_or_path) const;
  bool has_dataset(const std::string& name) const;
  std::vector<std::string> dataset_names() const;

  // [input width, hidden..., class count] for models trained on `data`.
  MlpSpec model_spec(const Dataset& data) const;
  PairConfig require_pair() const;

  // SHA-256 of the effective configuration (document plus overrides),
  // excluding out_dir.
  std::string digest() const;
  nlohmann::json effective() const;

  std::filesystem::path resolve(const std::string& path) const;

 private:
  DatasetPtr build(const std::string& name, std::vector<std::string>& stack) const;

  std::map<std::string, nlohmann::json> datasets_;
  mutable std::shared_ptr<std::mutex> mutex_ = std::make_shared<std::mutex>();
  mutable std::shared_ptr<std::map<std::string, DatasetPtr>> cache_ =
      std::make_shared<std::map<std::string, DatasetPtr>>();
};

}  // namespace permweld
