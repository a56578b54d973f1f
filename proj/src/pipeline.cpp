#include "permweld/pipeline.hpp"

#include <omp.h>

#include <cmath>
#include <exception>

#include "permweld/data.hpp"
#include "permweld/error.hpp"

namespace permweld {

using nlohmann::json;

namespace {

enum Role : std::uint64_t { model_a = 1, model_b, model_ab, cond_a, cond_b, data_cond, align_run };

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string pct(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * acc);
  return buf;
}

TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k) {
  // splitmix64 finaliser
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void parallel_tasks(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const int threads = std::max(1, jobs);
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Checkpoint train_checkpoint(const Dataset& train_set, const Dataset* test_set, const MlpSpec& spec,
                            const TrainConfig& config, const std::string& config_digest) {
  TrainResult r = train(train_set, spec, config);
  Checkpoint& ck = r.checkpoint;
  const LossAccuracy tr = evaluate(ck.params, train_set);
  ck.metadata["config_digest"] = config_digest;
  ck.metadata["train_loss"] = tr.loss;
  ck.metadata["train_accuracy"] = tr.accuracy;
  if (test_set) {
    const LossAccuracy te = evaluate(ck.params, *test_set);
    ck.metadata["test_dataset"] = test_set->name;
    ck.metadata["test_loss"] = te.loss;
    ck.metadata["test_accuracy"] = te.accuracy;
  }
  json history = json::array();
  for (const auto& e : r.history) history.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  ck.metadata["history"] = history;
  return ck;
}

PairData load_pair(const ExperimentConfig& config) {
  const PairConfig p = config.require_pair();
  PairData d;
  d.a_train = config.dataset(p.a);
  d.b_train = config.dataset(p.b);
  d.a_test = config.dataset(p.a_test);
  d.b_test = config.dataset(p.b_test);
  d.alpha = p.alpha;
  if (d.a_train->num_classes != d.b_train->num_classes || d.a_train->dim() != d.b_train->dim()) {
    throw ConfigError("pair datasets '" + p.a + "' and '" + p.b + "' differ in width or class count");
  }
  return d;
}

MergeMethod parse_merge_method(const std::string& name) {
  if (name == "naive") return MergeMethod::naive;
  if (name == "wm") return MergeMethod::wm;
  if (name == "fwm") return MergeMethod::fwm;
  if (name == "ste") return MergeMethod::ste;
  if (name == "fisher") return MergeMethod::fisher;
  throw ConfigError("unknown merge method '" + name + "' (naive, wm, fwm, ste, fisher)");
}

std::string method_name(MergeMethod m) {
  switch (m) {
    case MergeMethod::naive: return "naive";
    case MergeMethod::wm: return "wm";
    case MergeMethod::fwm: return "fwm";
    case MergeMethod::ste: return "ste";
    case MergeMethod::fisher: return "fisher";
  }
  return "?";
}

bool method_needs_data(MergeMethod m) { return m == MergeMethod::ste || m == MergeMethod::fisher; }

MergeOutcome run_merge(MergeMethod method, const MlpParams& a, const MlpParams& b, const MixedDataset* data,
                       const Dataset* b_grad_data, const ExperimentConfig& config) {
  if (method_needs_data(method) && !data) {
    throw ConfigError(method_name(method) + " learns from data: pass --data with the mixture to align on");
  }
  MergeOutcome out;
  switch (method) {
    case MergeMethod::naive:
      out.permutation = PermutationSet::identity(a.spec);
      break;
    case MergeMethod::wm: {
      WmTrace trace;
      out.permutation = weight_matching(a, b, config.align, nullptr, &trace);
      out.details["wm_sweeps"] = trace.sweeps;
      out.details["wm_objective"] = trace.objective;
      break;
    }
    case MergeMethod::fwm: {
      if (!b_grad_data) throw ConfigError("fwm needs model B's training data for its gradient: pass --grad-data");
      WmTrace trace;
      out.permutation = flat_weight_matching(a, b, full_gradient(b, *b_grad_data), config.align, &trace);
      out.details["fwm_beta"] = config.align.fwm_beta;
      out.details["wm_sweeps"] = trace.sweeps;
      break;
    }
    case MergeMethod::ste:
    case MergeMethod::fisher: {
      SteTrace trace;
      out.permutation = ste_align(a, b, *data, config.align, &trace);
      json epochs = json::array();
      for (const auto& e : trace.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"minibatch_loss", e.minibatch_loss},
                          {"mixture_loss", e.mixture_loss},
                          {"changed_layers", e.changed_layers}});
      }
      out.details["ste_initial_mixture_loss"] = trace.initial_mixture_loss;
      out.details["ste_epochs"] = epochs;
      out.details["ste_selected_epoch"] = trace.selected_epoch;
      break;
    }
  }
  out.b_aligned = apply_permutation(b, out.permutation);
  if (method == MergeMethod::fisher) {
    const FisherDiagonal fa = fisher_diagonal(a, *data->part_a, config.fisher.max_samples, config.seed);
    const FisherDiagonal fb = fisher_diagonal(out.b_aligned, *data->part_b, config.fisher.max_samples, config.seed);
    out.merged = fisher_merge(a, out.b_aligned, fa, fb, config.fisher.damping);
    out.details["fisher_damping"] = config.fisher.damping;
    out.details["fisher_samples"] = {fa.sample_count, fb.sample_count};
  } else {
    out.merged = merge_interpolate(a, out.b_aligned, 0.5);
  }
  return out;
}

MergeReport build_merge_report(MergeMethod method, const MlpParams& a, const MlpParams& b,
                               const MergeOutcome& outcome, const MixedDataset* train, const MixedDataset* eval,
                               const ExperimentConfig& config) {
  MergeReport r;
  r.config_digest = config.digest();
  r.method = method_name(method);
  const L2Distance l2 = l2_distance(a, outcome.b_aligned);
  r.metrics["l2_raw"] = l2.raw;
  r.metrics["l2_per_param"] = l2.per_param;
  r.metrics["l2_raw_unaligned"] = l2_distance(a, b).raw;
  r.metrics["weight_overlap"] = weight_overlap(a, outcome.b_aligned);
  if (!train) train = eval;
  if (eval) {
    for (const auto& [k, v] : metrics_map(merge_metrics(a, outcome.b_aligned, *train, *eval, config.sweep_grid))) {
      r.metrics[k] = v;
    }
    const LossAccuracy m = evaluate(outcome.merged, *eval);
    r.metrics["merged_loss"] = m.loss;
    r.metrics["merged_acc"] = m.accuracy;
    r.sweep = sweep(a, outcome.b_aligned, *eval, config.sweep_grid);
  }
  r.provenance["permutation"] = to_json(outcome.permutation);
  r.provenance["details"] = outcome.details;
  r.provenance["align"] = to_json(config.align);
  if (train) r.provenance["train_data"] = {train->part_a->name, train->part_b->name, train->alpha};
  if (eval) r.provenance["eval_data"] = {eval->part_a->name, eval->part_b->name, eval->alpha};
  return r;
}

json Table1Result::to_json() const {
  const auto row_json = [](const Table1Row& r) {
    return json{{"degree", r.degree},       {"seed", r.seed},     {"l2_raw", r.l2_raw},
                {"l2_per_param", r.l2_per_param}, {"barrier", r.barrier}, {"naive_barrier", r.naive_barrier},
                {"facc", r.facc},           {"acc_wm", r.acc_wm}, {"sharpness", r.sharpness}};
  };
  json j;
  j["rows"] = json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["means"] = json::array();
  for (const auto& r : means) j["means"].push_back(row_json(r));
  j["spearman_vs_acc_wm"] = spearman_vs_acc;
  return j;
}

Table1Result run_table1(const ExperimentConfig& config, int jobs, const Logger& log) {
  if (!config.table1) throw ConfigError("table1 needs a 'table1' section in the config");
  const Table1Config& t = *config.table1;
  const std::vector<std::uint64_t> seeds = t.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : t.seeds;
  const DatasetPtr base = config.dataset(t.base);
  const DatasetPtr base_test = config.dataset(t.base_test);
  const MlpSpec spec = config.model_spec(*base);
  const std::string digest = config.digest();

  const std::size_t na = t.angles.size(), ns = seeds.size();
  std::vector<DatasetPtr> rot(na), rot_test(na);
  parallel_tasks(na, jobs, [&](std::size_t i) {
    rot[i] = std::make_shared<const Dataset>(rotate(*base, t.angles[i], t.height, t.width));
    rot_test[i] = std::make_shared<const Dataset>(rotate(*base_test, t.angles[i], t.height, t.width));
  });

  // Model slots: per seed, A first, then one B per angle.
  std::vector<MlpParams> models(ns * (na + 1));
  parallel_tasks(models.size(), jobs, [&](std::size_t i) {
    const std::size_t s = i / (na + 1), k = i % (na + 1);
    const Dataset& data = k == 0 ? *base : *rot[k - 1];
    const std::uint64_t role = k == 0 ? model_a : 1000 + static_cast<std::uint64_t>(std::llround(t.angles[k - 1] * 100));
    models[i] = train_checkpoint(data, nullptr, spec, seeded(config.train, derive_seed(seeds[s], role)), digest).params;
    say(log, "table1: trained " + data.name + (k == 0 ? "" : " rotated " + std::to_string(t.angles[k - 1])) +
                 " seed " + std::to_string(seeds[s]));
  });

  Table1Result res;
  res.rows.resize(ns * na);
  parallel_tasks(ns * na, jobs, [&](std::size_t i) {
    const std::size_t s = i / na, k = i % na;
    const MlpParams& a = models[s * (na + 1)];
    const MlpParams& b = models[s * (na + 1) + k + 1];
    AlignConfig ac = config.align;
    ac.seed = derive_seed(seeds[s], align_run);
    const MlpParams bw = apply_permutation(b, weight_matching(a, b, ac));
    const MixedDataset train{base, rot[k], 0.5}, test{base_test, rot_test[k], 0.5};
    Table1Row r;
    r.degree = t.angles[k];
    r.seed = seeds[s];
    const L2Distance l2 = l2_distance(a, bw);
    r.l2_raw = l2.raw;
    r.l2_per_param = l2.per_param;
    r.barrier = barrier(a, bw, train);
    r.naive_barrier = barrier(a, b, train);
    r.facc = flipped_accuracy(a, bw, *base_test, *rot_test[k]);
    r.acc_wm = evaluate(merge_interpolate(a, bw, 0.5), test).accuracy;
    r.sharpness = sharpness(a, bw, *base, *rot[k]);
    res.rows[i] = r;
  });
  for (std::size_t k = 0; k < na; ++k) {
    Table1Row m;
    m.degree = t.angles[k];
    for (std::size_t s = 0; s < ns; ++s) {
      const Table1Row& r = res.rows[s * na + k];
      m.l2_raw += r.l2_raw / ns;
      m.l2_per_param += r.l2_per_param / ns;
      m.barrier += r.barrier / ns;
      m.naive_barrier += r.naive_barrier / ns;
      m.facc += r.facc / ns;
      m.acc_wm += r.acc_wm / ns;
      m.sharpness += r.sharpness / ns;
    }
    res.means.push_back(m);
    say(log, "table1: " + std::to_string(m.degree) + " deg barrier " + std::to_string(m.barrier) + " facc " +
                 pct(m.facc) + " acc_wm " + pct(m.acc_wm));
  }
  if (res.rows.size() >= 2) {
    std::vector<double> acc;
    for (const auto& r : res.rows) acc.push_back(r.acc_wm);
    const auto column = [&](double Table1Row::*field) {
      std::vector<double> v;
      for (const auto& r : res.rows) v.push_back(r.*field);
      return spearman(v, acc);
    };
    res.spearman_vs_acc = {{"l2_raw", column(&Table1Row::l2_raw)},
                           {"barrier", column(&Table1Row::barrier)},
                           {"naive_barrier", column(&Table1Row::naive_barrier)},
                           {"facc", column(&Table1Row::facc)},
                           {"sharpness", column(&Table1Row::sharpness)}};
  }
  return res;
}

double Table2Result::row(const std::string& name) const {
  for (const auto& [k, v] : rows) {
    if (k == name) return v;
  }
  throw ValidationError("table2 has no row '" + name + "'");
}

json Table2Result::to_json() const {
  json j;
  j["rows"] = json::array();
  for (const auto& [k, v] : rows) j["rows"].push_back({{"row", k}, {"acc", v}});
  j["extra"] = extra;
  j["train_sweeps"] = json::object();
  for (const auto& [k, s] : train_sweeps) j["train_sweeps"][k] = permweld::to_json(s);
  j["test_sweeps"] = json::object();
  for (const auto& [k, s] : test_sweeps) j["test_sweeps"][k] = permweld::to_json(s);
  return j;
}

Table2Result run_table2(const ExperimentConfig& config, int jobs, const Logger& log) {
  const PairData pair = load_pair(config);
  const MlpSpec spec = config.model_spec(*pair.a_train);
  const std::string digest = config.digest();
  const std::uint64_t seed = config.seed;
  const MixedDataset train_mix = pair.train(), test_mix = pair.test();

  // Independent work first: the three models and both condensations.
  MlpParams a, b, ab;
  CondensedDataset ca, cb;
  parallel_tasks(5, jobs, [&](std::size_t i) {
    switch (i) {
      case 0:
        a = train_checkpoint(*pair.a_train, nullptr, spec, seeded(config.train, derive_seed(seed, model_a)), digest)
                .params;
        say(log, "table2: trained model A");
        break;
      case 1:
        b = train_checkpoint(*pair.b_train, nullptr, spec, seeded(config.train, derive_seed(seed, model_b)), digest)
                .params;
        say(log, "table2: trained model B");
        break;
      case 2: {
        const Dataset both = balanced_concat(train_mix, derive_seed(seed, model_ab));
        ab = train_checkpoint(both, nullptr, spec, seeded(config.train, derive_seed(seed, model_ab)), digest).params;
        say(log, "table2: trained model AB");
        break;
      }
      case 3:
      case 4: {
        CondenseConfig cc = config.condense;
        cc.seed = derive_seed(seed, i == 3 ? cond_a : cond_b);
        CondensedDataset c = condense(i == 3 ? *pair.a_train : *pair.b_train, spec, cc);
        c.data = clamp_unit(c.data);  // as exported to PMDS1
        (i == 3 ? ca : cb) = std::move(c);
        say(log, std::string("table2: condensed ") + (i == 3 ? "A" : "B"));
        break;
      }
    }
  });
  const MixedDataset cond_mix = build_condensed_mix(ca, cb);

  Table2Result res;
  const auto acc = [&](const MlpParams& p) { return evaluate(p, test_mix).accuracy; };
  res.rows.emplace_back("model_a", acc(a));
  res.rows.emplace_back("model_b", acc(b));
  res.rows.emplace_back("model_ab", acc(ab));
  res.rows.emplace_back("ensemble", ensemble_accuracy(a, b, test_mix));

  TrainConfig dc = config.table2.data_cond_train;
  dc.seed = derive_seed(seed, data_cond);
  const Dataset cond_union = balanced_concat(cond_mix, dc.seed);
  res.rows.emplace_back("data_cond", acc(train(cond_union, spec, dc).checkpoint.params));
  say(log, "table2: data_cond " + pct(res.row("data_cond")));

  AlignConfig ac = config.align;
  ac.seed = derive_seed(seed, align_run);
  AlignConfig ac_cond = config.table2.ste_condensed;
  ac_cond.seed = ac.seed;

  PermutationSet pi_wm, pi_ste, pi_ste_cond;
  SteTrace ste_trace, ste_cond_trace;
  parallel_tasks(3, jobs, [&](std::size_t i) {
    if (i == 0) pi_wm = weight_matching(a, b, ac);
    if (i == 1) pi_ste = ste_align(a, b, train_mix, ac, &ste_trace);
    if (i == 2) pi_ste_cond = ste_align(a, b, cond_mix, ac_cond, &ste_cond_trace);
  });
  const std::map<std::string, MlpParams> aligned{{"naive", b},
                                                 {"wm", apply_permutation(b, pi_wm)},
                                                 {"ste_full", apply_permutation(b, pi_ste)},
                                                 {"ste_data_cond", apply_permutation(b, pi_ste_cond)}};
  for (const char* name : {"naive", "wm", "ste_full", "ste_data_cond"}) {
    res.rows.emplace_back(name, acc(merge_interpolate(a, aligned.at(name), 0.5)));
    say(log, std::string("table2: ") + name + " " + pct(res.row(name)));
  }

  // FWM and Fisher are reported beside the table.
  AlignConfig af = ac;
  const PermutationSet pi_fwm = flat_weight_matching(a, b, full_gradient(b, *pair.b_train), af);
  res.extra["fwm"] = acc(merge_interpolate(a, apply_permutation(b, pi_fwm), 0.5));
  const MlpParams& b_ste = aligned.at("ste_full");
  const FisherDiagonal fa = fisher_diagonal(a, *pair.a_train, config.fisher.max_samples, seed);
  const FisherDiagonal fb = fisher_diagonal(b_ste, *pair.b_train, config.fisher.max_samples, seed);
  res.extra["fisher_ste"] = acc(fisher_merge(a, b_ste, fa, fb, config.fisher.damping));
  res.extra["ste_selected_epoch"] = static_cast<double>(ste_trace.selected_epoch);
  res.extra["ste_data_cond_selected_epoch"] = static_cast<double>(ste_cond_trace.selected_epoch);
  say(log, "table2: fwm " + pct(res.extra["fwm"]) + ", fisher " + pct(res.extra["fisher_ste"]));

  std::vector<std::string> names{"naive", "wm", "ste_full", "ste_data_cond"};
  std::vector<SweepReport> tr(names.size()), te(names.size());
  parallel_tasks(names.size(), jobs, [&](std::size_t i) {
    tr[i] = sweep(a, aligned.at(names[i]), train_mix, config.sweep_grid);
    te[i] = sweep(a, aligned.at(names[i]), test_mix, config.sweep_grid);
  });
  for (std::size_t i = 0; i < names.size(); ++i) {
    res.train_sweeps[names[i]] = tr[i];
    res.test_sweeps[names[i]] = te[i];
    res.extra["barrier_" + names[i]] = barrier(a, aligned.at(names[i]), train_mix);
  }
  return res;
}

std::string PopulationResult::csv() const {
  std::string out = "beta,sweep_cap,seed,multiplicity,l2_raw,barrier,sharpness,test_loss,midpoint_acc\n";
  char buf[512];
  for (const auto& m : members) {
    std::snprintf(buf, sizeof(buf), "%.10g,%zu,%llu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.beta, m.sweep_cap,
                  static_cast<unsigned long long>(m.seed), m.multiplicity, m.metrics.l2_raw, m.metrics.barrier,
                  m.metrics.sharpness, m.test_loss, m.metrics.midpoint_acc);
    out += buf;
  }
  return out;
}

json PopulationResult::to_json() const {
  json j;
  j["runs"] = runs;
  j["unique"] = members.size();
  j["spearman_barrier_test_loss"] = spearman_barrier_test_loss;
  j["spearman_l2_test_loss"] = spearman_l2_test_loss;
  j["members"] = json::array();
  for (const auto& m : members) {
    j["members"].push_back({{"beta", m.beta},
                            {"sweep_cap", m.sweep_cap},
                            {"seed", m.seed},
                            {"multiplicity", m.multiplicity},
                            {"metrics", metrics_map(m.metrics)},
                            {"test_loss", m.test_loss},
                            {"permutation", permweld::to_json(m.permutation)}});
  }
  return j;
}

PopulationResult run_population(const ExperimentConfig& config, int jobs, const Logger& log) {
  const PairData pair = load_pair(config);
  const MlpSpec spec = config.model_spec(*pair.a_train);
  const std::string digest = config.digest();
  MlpParams a, b;
  parallel_tasks(2, jobs, [&](std::size_t i) {
    const Dataset& d = i == 0 ? *pair.a_train : *pair.b_train;
    (i == 0 ? a : b) = train_checkpoint(d, nullptr, spec,
                                        seeded(config.train, derive_seed(config.seed, i == 0 ? model_a : model_b)),
                                        digest)
                           .params;
  });
  say(log, "population: trained both models");
  const int saved = omp_get_max_threads();
  omp_set_num_threads(std::max(1, jobs));
  PopulationResult res;
  try {
    res.members = generate_permutation_population(a, b, pair.train(), pair.test(), config.population);
  } catch (...) {
    omp_set_num_threads(saved);
    throw;
  }
  omp_set_num_threads(saved);
  res.runs = config.population.betas.size() * config.population.sweep_caps.size() * config.population.seeds.size();
  if (res.members.size() >= 2) {
    std::vector<double> bar, l2, loss;
    for (const auto& m : res.members) {
      bar.push_back(m.metrics.barrier);
      l2.push_back(m.metrics.l2_raw);
      loss.push_back(m.test_loss);
    }
    res.spearman_barrier_test_loss = spearman(bar, loss);
    res.spearman_l2_test_loss = spearman(l2, loss);
  }
  say(log, "population: " + std::to_string(res.runs) + " runs, " + std::to_string(res.members.size()) + " unique");
  return res;
}

std::vector<OverlapRow> run_overlap(const ExperimentConfig& config, int jobs, const Logger& log) {
  const PairData pair = load_pair(config);
  const MlpSpec spec = config.model_spec(*pair.a_train);
  const std::string digest = config.digest();
  MlpParams a, b;
  parallel_tasks(2, jobs, [&](std::size_t i) {
    const Dataset& d = i == 0 ? *pair.a_train : *pair.b_train;
    (i == 0 ? a : b) = train_checkpoint(d, nullptr, spec,
                                        seeded(config.train, derive_seed(config.seed, i == 0 ? model_a : model_b)),
                                        digest)
                           .params;
  });
  AlignConfig ac = config.align;
  ac.seed = derive_seed(config.seed, align_run);
  const FisherDiagonal fa = fisher_diagonal(a, *pair.a_train, config.fisher.max_samples, config.seed);
  const std::vector<std::pair<std::string, PermutationSet>> perms{
      {"naive", PermutationSet::identity(spec)},
      {"wm", weight_matching(a, b, ac)},
      {"ste", ste_align(a, b, pair.train(), ac)}};
  std::vector<OverlapRow> rows;
  for (const auto& [name, pi] : perms) {
    const MlpParams bw = apply_permutation(b, pi);
    const FisherDiagonal fb = fisher_diagonal(bw, *pair.b_train, config.fisher.max_samples, config.seed);
    rows.push_back({name, importance_overlap(fa, fb), weight_overlap(a, bw),
                    evaluate(merge_interpolate(a, bw, 0.5), pair.test()).accuracy});
    say(log, "overlap: " + name + " importance " + std::to_string(rows.back().importance_overlap));
  }
  return rows;
}

}  // namespace permweld
