// permweld: train, align, merge and diagnose small MLPs.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "permweld/data.hpp"
#include "permweld/error.hpp"
#include "permweld/kernels.hpp"
#include "permweld/pipeline.hpp"

namespace fs = std::filesystem;
using namespace permweld;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = 1;
};

void log_line(const std::string& msg) { std::cerr << "[permweld] " << msg << "\n"; }

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig::defaults() : ExperimentConfig::load(g.config_path);
  if (g.seed) c.override_seed(*g.seed);
  if (!g.out_dir.empty()) c.out_dir = g.out_dir;
  if (g.jobs < 1) throw ConfigError("--jobs must be at least 1");
  return c;
}

std::pair<std::string, std::string> split_pair(const std::string& s, const char* flag) {
  const auto comma = s.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == s.size()) {
    throw ConfigError(std::string(flag) + " expects two datasets as A,B");
  }
  return {s.substr(0, comma), s.substr(comma + 1)};
}

MixedDataset mixture(const ExperimentConfig& c, const std::string& arg, const char* flag) {
  const auto [a, b] = split_pair(arg, flag);
  const double alpha = c.pair ? c.pair->alpha : 0.5;
  return {c.dataset(a), c.dataset(b), alpha};
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

void write_sweep_files(const fs::path& dir, const SweepReport& s, const std::string& title) {
  write_output(dir / "sweep.csv", sweep_csv(s));
  write_output(dir / "sweep.svg", sweep_svg(s, title));
}

int cmd_gen_data(const Globals& g, const std::vector<std::string>& names) {
  const ExperimentConfig c = load_config(g);
  const std::vector<std::string> todo = names.empty() ? c.dataset_names() : names;
  if (todo.empty()) throw ConfigError("no datasets to generate (config has no 'datasets' section)");
  for (const auto& name : todo) {
    const DatasetPtr d = c.dataset(name);
    const fs::path out = c.out_dir / "data" / (name + ".pmds");
    fs::create_directories(out.parent_path());
    save_dataset(*d, out);
    log_line("wrote " + out.string() + " (" + std::to_string(d->size()) + " rows)");
  }
  return 0;
}

int cmd_train(const Globals& g, const std::string& dataset, const std::string& test, std::string out) {
  const ExperimentConfig c = load_config(g);
  const DatasetPtr d = c.dataset(dataset);
  const DatasetPtr t = test.empty() ? nullptr : c.dataset(test);
  if (out.empty()) out = (c.out_dir / (d->name + ".pmck")).string();
  TrainConfig tc = c.train;
  const Checkpoint ck = train_checkpoint(*d, t.get(), c.model_spec(*d), tc, c.digest());
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_checkpoint(ck, out);
  write_output(out + ".history.json", ck.metadata.dump(2) + "\n");
  log_line("wrote " + out + ": train acc " + std::to_string(ck.metadata["train_accuracy"].get<double>()));
  return 0;
}

int cmd_merge(const Globals& g, const std::string& method_arg, const std::string& path_a, const std::string& path_b,
              const std::string& data_arg, const std::string& eval_arg, const std::string& grad_arg) {
  const ExperimentConfig c = load_config(g);
  const MergeMethod method = parse_merge_method(method_arg);
  if (method_needs_data(method) && data_arg.empty()) {
    throw ConfigError(method_arg + " learns the permutation from data and needs --data A,B (real or condensed)");
  }
  const Checkpoint a = read_checkpoint(path_a), b = read_checkpoint(path_b);
  std::optional<MixedDataset> data, eval;
  if (!data_arg.empty()) data = mixture(c, data_arg, "--data");
  if (!eval_arg.empty()) eval = mixture(c, eval_arg, "--eval");
  DatasetPtr grad;
  if (method == MergeMethod::fwm) {
    std::string name = grad_arg;
    if (name.empty() && b.metadata.contains("dataset")) name = b.metadata["dataset"].get<std::string>();
    if (name.empty() || (!c.has_dataset(name) && grad_arg.empty())) {
      throw ConfigError("fwm needs model B's training data for its gradient: pass --grad-data");
    }
    grad = c.dataset(name);
  }
  const MergeOutcome out = run_merge(method, a.params, b.params, data ? &*data : nullptr, grad.get(), c);
  MergeReport r = build_merge_report(method, a.params, b.params, out, data ? &*data : nullptr,
                                     eval ? &*eval : (data ? &*data : nullptr), c);
  r.provenance["checkpoint_a"] = {{"path", path_a}, {"sha256", file_digest(path_a)}};
  r.provenance["checkpoint_b"] = {{"path", path_b}, {"sha256", file_digest(path_b)}};
  const fs::path dir = c.out_dir / ("merge-" + method_arg);
  write_output(dir / "report.json", to_json(r).dump(2) + "\n");
  if (r.sweep) write_sweep_files(dir, *r.sweep, method_arg + " merge");
  Checkpoint merged{a.spec, out.merged, {{"method", method_arg}, {"config_digest", r.config_digest}}};
  save_checkpoint(merged, dir / "merged.pmck");
  log_line("wrote " + dir.string() +
           (r.metrics.count("merged_acc") ? ": merged acc " + std::to_string(r.metrics["merged_acc"]) : ""));
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& path_a, const std::string& path_b, const std::string& eval_arg,
              const std::string& align) {
  const ExperimentConfig c = load_config(g);
  if (align != "none" && align != "wm") throw ConfigError("--align must be none or wm");
  const Checkpoint a = read_checkpoint(path_a), b = read_checkpoint(path_b);
  const MixedDataset eval = mixture(c, eval_arg, "--eval");
  const MlpParams bw = align == "wm" ? apply_permutation(b.params, weight_matching(a.params, b.params, c.align))
                                     : b.params;
  const SweepReport s = sweep(a.params, bw, eval, c.sweep_grid);
  const fs::path dir = c.out_dir / "sweep";
  write_sweep_files(dir, s, "interpolation (" + align + ")");
  write_output(dir / "sweep.json", json{{"tool_version", kToolVersion}, {"config_digest", c.digest()},
                                        {"align", align}, {"sweep", to_json(s)}}
                                           .dump(2) + "\n");
  log_line("wrote " + dir.string() + ": peak mixture loss " + std::to_string(s.peak_loss()));
  return 0;
}

int cmd_condense(const Globals& g, const std::string& dataset, std::size_t ipc) {
  ExperimentConfig c = load_config(g);
  if (ipc > 0) c.condense.ipc = ipc;
  const DatasetPtr d = c.dataset(dataset);
  const CondensedDataset cd = condense(*d, c.model_spec(*d), c.condense, [](std::size_t it, double dist) {
    if ((it + 1) % 100 == 0) log_line("condense: iteration " + std::to_string(it + 1) + " distance " + std::to_string(dist));
  });
  const fs::path out = c.out_dir / (cd.data.name + ".pmds");
  fs::create_directories(c.out_dir);
  save_dataset(cd.data, out);
  log_line("wrote " + out.string() + " (" + std::to_string(cd.data.size()) + " rows)");
  return 0;
}

int cmd_table1(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const Table1Result r = run_table1(c, g.jobs, log_line);
  write_output(c.out_dir / "table1.csv", table1_csv(r.means));
  json j = r.to_json();
  j["tool_version"] = kToolVersion;
  j["config_digest"] = c.digest();
  write_output(c.out_dir / "table1.json", j.dump(2) + "\n");
  for (const auto& [k, v] : r.spearman_vs_acc) log_line("spearman(" + k + ", acc_wm) = " + std::to_string(v));
  return 0;
}

int cmd_table2(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const Table2Result r = run_table2(c, g.jobs, log_line);
  write_output(c.out_dir / "table2.csv", table2_csv(r.rows));
  json j = r.to_json();
  j["tool_version"] = kToolVersion;
  j["config_digest"] = c.digest();
  write_output(c.out_dir / "table2.json", j.dump(2) + "\n");
  for (const auto& [name, s] : r.train_sweeps) {
    write_output(c.out_dir / ("sweep-" + name + ".csv"), sweep_csv(r.test_sweeps.at(name)));
    write_output(c.out_dir / ("sweep-" + name + ".svg"), sweep_svg(r.test_sweeps.at(name), name));
  }
  return 0;
}

int cmd_population(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const PopulationResult r = run_population(c, g.jobs, log_line);
  write_output(c.out_dir / "population.csv", r.csv());
  json j = r.to_json();
  j["tool_version"] = kToolVersion;
  j["config_digest"] = c.digest();
  write_output(c.out_dir / "population.json", j.dump(2) + "\n");
  log_line("spearman(barrier, test loss) = " + std::to_string(r.spearman_barrier_test_loss) +
           ", spearman(l2, test loss) = " + std::to_string(r.spearman_l2_test_loss));
  return 0;
}

int cmd_overlap(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const auto rows = run_overlap(c, g.jobs, log_line);
  std::string csv = "method,importance_overlap,weight_overlap,midpoint_acc\n";
  json j = {{"tool_version", kToolVersion}, {"config_digest", c.digest()}, {"rows", json::array()}};
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g\n", r.method.c_str(), r.importance_overlap,
                  r.weight_overlap, r.midpoint_acc);
    csv += buf;
    j["rows"].push_back({{"method", r.method},
                         {"importance_overlap", r.importance_overlap},
                         {"weight_overlap", r.weight_overlap},
                         {"midpoint_acc", r.midpoint_acc}});
  }
  write_output(c.out_dir / "overlap.csv", csv);
  write_output(c.out_dir / "overlap.json", j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"permweld: permutation-aligned merging of small MLPs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Globals g;
  app.add_option("--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override every seed in the config");
  app.add_option("--out-dir", g.out_dir, "Output directory (default: config out_dir)");
  app.add_option("--jobs", g.jobs, "Parallel trainings/alignments");

  std::vector<std::string> gen_names;
  auto* gen = app.add_subcommand("gen-data", "Materialise config datasets as PMDS1 files");
  gen->add_option("--dataset", gen_names, "Dataset names (default: all)");

  std::string train_data, train_test, train_out;
  auto* tr = app.add_subcommand("train", "Train one model and write a PMCK1 checkpoint");
  tr->add_option("--dataset", train_data, "Training dataset name or PMDS path")->required();
  tr->add_option("--test", train_test, "Evaluation dataset recorded in the metadata");
  tr->add_option("--out", train_out, "Checkpoint path");

  std::string method, ck_a, ck_b, data_arg, eval_arg, grad_arg;
  auto* mg = app.add_subcommand("merge", "Align model B to model A and merge");
  mg->add_option("--method", method, "naive, wm, fwm, ste or fisher")->required();
  mg->add_option("a", ck_a, "Model A checkpoint")->required();
  mg->add_option("b", ck_b, "Model B checkpoint")->required();
  mg->add_option("--data", data_arg, "Alignment mixture A,B (required by ste and fisher)");
  mg->add_option("--eval", eval_arg, "Evaluation mixture A,B for metrics and the sweep");
  mg->add_option("--grad-data", grad_arg, "Model B's training data for the fwm gradient");

  std::string sw_a, sw_b, sw_eval, sw_align = "none";
  auto* sw = app.add_subcommand("sweep", "Interpolation sweep between two checkpoints");
  sw->add_option("a", sw_a, "Model A checkpoint")->required();
  sw->add_option("b", sw_b, "Model B checkpoint")->required();
  sw->add_option("--eval", sw_eval, "Evaluation mixture A,B")->required();
  sw->add_option("--align", sw_align, "none or wm");

  std::string cd_data;
  std::size_t cd_ipc = 0;
  auto* cd = app.add_subcommand("condense", "Gradient-matching condensation to a PMDS1 file");
  cd->add_option("--dataset", cd_data, "Dataset to condense")->required();
  cd->add_option("--ipc", cd_ipc, "Rows per class (default: config)");

  auto* t1 = app.add_subcommand("table1", "Rotation family: L2, barrier, FAcc and WM accuracy");
  auto* t2 = app.add_subcommand("table2", "Merge comparison on one dataset pair");
  auto* pop = app.add_subcommand("population", "Permutation population from FWM/WM grids");
  auto* ov = app.add_subcommand("overlap", "Fisher importance overlap under naive, WM and STE");
  for (auto* sub : {gen, tr, mg, sw, cd, t1, t2, pop, ov}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::usage);
  }

  try {
    if (*gen) return cmd_gen_data(g, gen_names);
    if (*tr) return cmd_train(g, train_data, train_test, train_out);
    if (*mg) return cmd_merge(g, method, ck_a, ck_b, data_arg, eval_arg, grad_arg);
    if (*sw) return cmd_sweep(g, sw_a, sw_b, sw_eval, sw_align);
    if (*cd) return cmd_condense(g, cd_data, cd_ipc);
    if (*t1) return cmd_table1(g);
    if (*t2) return cmd_table2(g);
    if (*pop) return cmd_population(g);
    if (*ov) return cmd_overlap(g);
  } catch (const Error& e) {
    std::cerr << "permweld: error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "permweld: error: malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "permweld: error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}
