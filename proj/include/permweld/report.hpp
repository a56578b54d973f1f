#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "permweld/landscape.hpp"

namespace permweld {

extern const char* const kToolVersion;

struct MergeReport {
  std::string tool_version = kToolVersion;
  std::string config_digest;
  std::string method;
  std::map<std::string, double> metrics;
  std::optional<SweepReport> sweep;
  nlohmann::json provenance = nlohmann::json::object();

  friend bool operator==(const MergeReport&, const MergeReport&) = default;
};

std::map<std::string, double> metrics_map(const MergeMetrics& m);

nlohmann::json to_json(const SweepReport& sweep);
SweepReport sweep_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MergeReport& report);
MergeReport merge_report_from_json(const nlohmann::json& j);

// lambda,loss_a,loss_b,loss_ab,acc_a,acc_b,acc_ab
std::string sweep_csv(const SweepReport& sweep);

// Two panels over lambda: the three losses and the three accuracies.
std::string sweep_svg(const SweepReport& sweep, const std::string& title);

struct Table1Row {
  double degree = 0.0;
  std::uint64_t seed = 0;
  double l2_raw = 0.0;
  double l2_per_param = 0.0;
  double barrier = 0.0;
  double naive_barrier = 0.0;
  double facc = 0.0;
  double acc_wm = 0.0;
  double sharpness = 0.0;
};

// degree,l2_raw,l2_per_param,barrier,facc,acc_wm (one line per row given).
std::string table1_csv(const std::vector<Table1Row>& rows);

// row,acc with acc in percent.
std::string table2_csv(const std::vector<std::pair<std::string, double>>& rows);

// Writes `text` to `path`, creating parent directories.
void write_output(const std::filesystem::path& path, const std::string& text);

}  // namespace permweld
