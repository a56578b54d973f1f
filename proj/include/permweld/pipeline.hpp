#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "permweld/config.hpp"
#include "permweld/report.hpp"

namespace permweld {

using Logger = std::function<void(const std::string&)>;

// Independent seed for role `k` of an experiment seeded with `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k);

// Runs fn(0..n-1) on up to `jobs` threads; the first exception (by index) is
// rethrown after all tasks finish.
void parallel_tasks(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Trains and records final metrics (evaluate on the full train set and, if
// given, the test set) plus the config digest in the checkpoint metadata.
Checkpoint train_checkpoint(const Dataset& train_set, const Dataset* test_set, const MlpSpec& spec,
                            const TrainConfig& config, const std::string& config_digest);

struct PairData {
  DatasetPtr a_train, b_train, a_test, b_test;
  double alpha = 0.5;

  MixedDataset train() const { return {a_train, b_train, alpha}; }
  MixedDataset test() const { return {a_test, b_test, alpha}; }
};

PairData load_pair(const ExperimentConfig& config);

enum class MergeMethod { naive, wm, fwm, ste, fisher };

MergeMethod parse_merge_method(const std::string& name);
std::string method_name(MergeMethod method);
// ste and fisher learn from data; the others only look at weights.
bool method_needs_data(MergeMethod method);

struct MergeOutcome {
  PermutationSet permutation;
  MlpParams b_aligned;
  MlpParams merged;  // lambda = 1/2 average, or the Fisher-weighted merge
  nlohmann::json details = nlohmann::json::object();
};

// `data` is the alignment mixture (required by ste and fisher). fwm needs
// `b_grad_data`, the data model B's loss gradient is taken on.
MergeOutcome run_merge(MergeMethod method, const MlpParams& a, const MlpParams& b, const MixedDataset* data,
                       const Dataset* b_grad_data, const ExperimentConfig& config);

// Report for a merge: L2 and weight overlap always; barrier, sharpness and
// the sweep when evaluation data is available.
MergeReport build_merge_report(MergeMethod method, const MlpParams& a, const MlpParams& b,
                               const MergeOutcome& outcome, const MixedDataset* train, const MixedDataset* eval,
                               const ExperimentConfig& config);

struct Table1Result {
  std::vector<Table1Row> rows;   // one per (seed, angle), seed-major
  std::vector<Table1Row> means;  // seed-averaged, one per angle
  std::map<std::string, double> spearman_vs_acc;  // pooled over rows

  nlohmann::json to_json() const;
};

Table1Result run_table1(const ExperimentConfig& config, int jobs, const Logger& log);

struct Table2Result {
  std::vector<std::pair<std::string, double>> rows;
  std::map<std::string, double> extra;
  std::map<std::string, SweepReport> train_sweeps;  // on the training mixture
  std::map<std::string, SweepReport> test_sweeps;   // on the evaluation mixture

  double row(const std::string& name) const;
  nlohmann::json to_json() const;
};

// Rows: model_a, model_b, model_ab, ensemble, data_cond, naive, wm, ste_full,
// ste_data_cond; accuracies on the evaluation mixture at lambda = 1/2.
Table2Result run_table2(const ExperimentConfig& config, int jobs, const Logger& log);

struct PopulationResult {
  std::vector<PopulationMember> members;
  std::size_t runs = 0;
  double spearman_barrier_test_loss = 0.0;
  double spearman_l2_test_loss = 0.0;

  std::string csv() const;
  nlohmann::json to_json() const;
};

PopulationResult run_population(const ExperimentConfig& config, int jobs, const Logger& log);

struct OverlapRow {
  std::string method;
  double importance_overlap = 0.0;
  double weight_overlap = 0.0;
  double midpoint_acc = 0.0;
};

// Fisher importance overlap and weight overlap between A and B aligned by
// naive, WM and STE.
std::vector<OverlapRow> run_overlap(const ExperimentConfig& config, int jobs, const Logger& log);

}  // namespace permweld
