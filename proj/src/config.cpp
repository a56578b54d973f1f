#include "permweld/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>

#include "permweld/data.hpp"
#include "permweld/error.hpp"

namespace permweld {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown key " + (where.empty() ? key : where + "." + key));
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " is missing or has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get<T>(j, key, where);
}

// Wraps the sub-config readers so type errors surface as config errors.
template <typename Fn>
auto section(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

const std::set<std::string> kKinds{"idx", "pmds", "blobs", "rotate", "split", "head"};

}  // namespace

ExperimentConfig ExperimentConfig::defaults() { return parse(json::object(), fs::current_path()); }

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse(doc, fs::absolute(path).parent_path());
}

ExperimentConfig ExperimentConfig::parse(const json& doc, const fs::path& base_dir) {
  check_keys(doc, "", {"seed", "out_dir", "data_dir", "datasets", "model", "train", "align", "condense", "sweep",
                       "pair", "table1", "table2", "population", "fisher"});
  ExperimentConfig c;
  c.document = doc;
  c.base_dir = base_dir;
  if (const char* env = std::getenv("PERMWELD_DATA_DIR"); env && *env) {
    c.data_root = env;
  } else if (doc.contains("data_dir")) {
    c.data_root = base_dir / get<std::string>(doc, "data_dir", "config");
  } else {
    c.data_root = base_dir;
  }
  c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");
  if (doc.contains("out_dir")) c.out_dir = get<std::string>(doc, "out_dir", "config");
  c.train.seed = c.align.seed = c.condense.seed = c.seed;

  if (doc.contains("datasets")) {
    const json& ds = doc["datasets"];
    if (!ds.is_object()) throw ConfigError("datasets must be an object");
    for (const auto& [name, entry] : ds.items()) {
      const std::string where = "datasets." + name;
      if (!entry.is_object()) throw ConfigError(where + " must be an object");
      const auto kind = get<std::string>(entry, "kind", where);
      if (!kKinds.count(kind)) throw ConfigError(where + ".kind '" + kind + "' is not a known dataset kind");
      if (kind == "idx") check_keys(entry, where, {"kind", "images", "labels"});
      if (kind == "pmds") check_keys(entry, where, {"kind", "path"});
      if (kind == "blobs") check_keys(entry, where, {"kind", "classes", "per_class", "dim", "spread", "seed"});
      if (kind == "rotate") check_keys(entry, where, {"kind", "source", "degrees", "height", "width"});
      if (kind == "split") check_keys(entry, where, {"kind", "source", "labels"});
      if (kind == "head") check_keys(entry, where, {"kind", "source", "rows"});
      c.datasets_[name] = entry;
    }
  }
  if (doc.contains("model")) {
    check_keys(doc["model"], "model", {"hidden"});
    c.hidden = get<std::vector<std::size_t>>(doc["model"], "hidden", "model");
  }
  if (doc.contains("train")) {
    c.train = section("train", [&] { return train_config_from_json(doc["train"]); });
    if (!doc["train"].contains("seed")) c.train.seed = c.seed;
  }
  if (doc.contains("align")) {
    c.align = section("align", [&] { return align_config_from_json(doc["align"]); });
    if (!doc["align"].contains("seed")) c.align.seed = c.seed;
  }
  if (doc.contains("condense")) {
    c.condense = section("condense", [&] { return condense_config_from_json(doc["condense"]); });
    if (!doc["condense"].contains("seed")) c.condense.seed = c.seed;
  }
  section("train", [&] { c.train.validate(); return 0; });
  section("align", [&] { c.align.validate(); return 0; });
  section("condense", [&] { c.condense.validate(); return 0; });

  if (doc.contains("sweep")) {
    check_keys(doc["sweep"], "sweep", {"grid_size"});
    c.sweep_grid = get<std::size_t>(doc["sweep"], "grid_size", "sweep");
    if (c.sweep_grid < 2) throw ConfigError("sweep.grid_size must be at least 2");
  }
  if (doc.contains("pair")) {
    const json& p = doc["pair"];
    check_keys(p, "pair", {"a", "b", "a_test", "b_test", "alpha"});
    PairConfig pc;
    pc.a = get<std::string>(p, "a", "pair");
    pc.b = get<std::string>(p, "b", "pair");
    pc.a_test = get_or<std::string>(p, "a_test", pc.a, "pair");
    pc.b_test = get_or<std::string>(p, "b_test", pc.b, "pair");
    pc.alpha = get_or<double>(p, "alpha", 0.5, "pair");
    if (!(pc.alpha >= 0.0 && pc.alpha <= 1.0)) throw ConfigError("pair.alpha must lie in [0, 1]");
    c.pair = pc;
  }
  if (doc.contains("table1")) {
    const json& t = doc["table1"];
    check_keys(t, "table1", {"base", "base_test", "angles", "seeds", "height", "width"});
    Table1Config tc;
    tc.base = get<std::string>(t, "base", "table1");
    tc.base_test = get_or<std::string>(t, "base_test", tc.base, "table1");
    tc.angles = get_or<std::vector<double>>(t, "angles", tc.angles, "table1");
    tc.seeds = get_or<std::vector<std::uint64_t>>(t, "seeds", {}, "table1");
    tc.height = get_or<std::size_t>(t, "height", 28, "table1");
    tc.width = get_or<std::size_t>(t, "width", 28, "table1");
    if (tc.angles.empty()) throw ConfigError("table1.angles must not be empty");
    c.table1 = tc;
  }
  c.table2.ste_condensed = c.align;
  c.table2.ste_condensed.ste_epochs = 300;
  c.table2.ste_condensed.ste_learning_rate = 1.0;
  c.table2.data_cond_train = c.train;
  c.table2.data_cond_train.epochs = 300;
  c.table2.data_cond_train.batch_size = 256;
  if (doc.contains("table2")) {
    const json& t = doc["table2"];
    check_keys(t, "table2", {"ste_condensed", "data_cond_train"});
    if (t.contains("ste_condensed")) {
      json merged = to_json(c.table2.ste_condensed);
      merged.update(t["ste_condensed"]);
      c.table2.ste_condensed = section("table2.ste_condensed", [&] { return align_config_from_json(merged); });
    }
    if (t.contains("data_cond_train")) {
      json merged = to_json(c.table2.data_cond_train);
      merged.update(t["data_cond_train"]);
      c.table2.data_cond_train = section("table2.data_cond_train", [&] { return train_config_from_json(merged); });
    }
  }
  if (doc.contains("population")) {
    const json& p = doc["population"];
    check_keys(p, "population", {"betas", "sweep_caps", "seeds"});
    c.population.betas = get_or<std::vector<double>>(p, "betas", c.population.betas, "population");
    c.population.sweep_caps = get_or<std::vector<std::size_t>>(p, "sweep_caps", c.population.sweep_caps, "population");
    c.population.seeds = get_or<std::vector<std::uint64_t>>(p, "seeds", c.population.seeds, "population");
    section("population", [&] { c.population.validate(); return 0; });
  }
  if (doc.contains("fisher")) {
    check_keys(doc["fisher"], "fisher", {"max_samples", "damping"});
    c.fisher.max_samples = get_or<std::size_t>(doc["fisher"], "max_samples", 1000, "fisher");
    c.fisher.damping = get_or<double>(doc["fisher"], "damping", 1e-8, "fisher");
  }
  return c;
}

void ExperimentConfig::override_seed(std::uint64_t s) {
  seed = s;
  train.seed = align.seed = condense.seed = s;
  table2.ste_condensed.seed = table2.data_cond_train.seed = s;
}

json ExperimentConfig::effective() const {
  json e = document;
  e["seed"] = seed;
  e["out_dir"] = out_dir.string();
  e["model"] = {{"hidden", hidden}};
  e["train"] = to_json(train);
  e["align"] = to_json(align);
  e["condense"] = to_json(condense);
  e["sweep"] = {{"grid_size", sweep_grid}};
  e["table2"] = {{"ste_condensed", to_json(table2.ste_condensed)},
                 {"data_cond_train", to_json(table2.data_cond_train)}};
  e["population"] = {{"betas", population.betas}, {"sweep_caps", population.sweep_caps},
                     {"seeds", population.seeds}};
  e["fisher"] = {{"max_samples", fisher.max_samples}, {"damping", fisher.damping}};
  e.erase("data_dir");
  return e;
}

std::string ExperimentConfig::digest() const {
  // Where outputs go does not change them.
  json e = effective();
  e.erase("out_dir");
  return sha256_hex(e.dump());
}

fs::path ExperimentConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : data_root / p;
}

bool ExperimentConfig::has_dataset(const std::string& name) const { return datasets_.count(name) > 0; }

std::vector<std::string> ExperimentConfig::dataset_names() const {
  std::vector<std::string> names;
  for (const auto& [name, entry] : datasets_) names.push_back(name);
  return names;
}

DatasetPtr ExperimentConfig::dataset(const std::string& name_or_path) const {
  std::lock_guard lock(*mutex_);
  std::vector<std::string> stack;
  return build(name_or_path, stack);
}

DatasetPtr ExperimentConfig::build(const std::string& name, std::vector<std::string>& stack) const {
  if (const auto it = cache_->find(name); it != cache_->end()) return it->second;
  if (std::find(stack.begin(), stack.end(), name) != stack.end()) {
    throw ConfigError("dataset '" + name + "' refers to itself");
  }
  stack.push_back(name);
  const auto require_file = [&](const std::string& rel) {
    const fs::path p = resolve(rel);
    if (!fs::exists(p)) throw ConfigError("dataset '" + name + "': file not found: " + p.string());
    return p;
  };

  Dataset ds;
  const auto it = datasets_.find(name);
  if (it == datasets_.end()) {
    const bool looks_like_path = name.find('/') != std::string::npos || fs::path(name).extension() == ".pmds";
    if (!looks_like_path) throw ConfigError("unknown dataset '" + name + "'");
    const fs::path p = fs::path(name).is_absolute() || fs::exists(name) ? fs::path(name) : resolve(name);
    if (!fs::exists(p)) throw ConfigError("dataset file not found: " + p.string());
    ds = load_dataset(p);
  } else {
    const json& e = it->second;
    const std::string where = "datasets." + name;
    const auto kind = e.at("kind").get<std::string>();
    if (kind == "idx") {
      ds = load_idx(require_file(get<std::string>(e, "images", where)),
                    require_file(get<std::string>(e, "labels", where)), name);
    } else if (kind == "pmds") {
      ds = load_dataset(require_file(get<std::string>(e, "path", where)));
    } else if (kind == "blobs") {
      ds = gen_blobs(get<std::size_t>(e, "classes", where), get<std::size_t>(e, "per_class", where),
                     get<std::size_t>(e, "dim", where), get_or<double>(e, "spread", 0.3, where),
                     get_or<std::uint64_t>(e, "seed", seed, where));
    } else if (kind == "rotate") {
      const DatasetPtr src = build(get<std::string>(e, "source", where), stack);
      ds = rotate(*src, get<double>(e, "degrees", where), get_or<std::size_t>(e, "height", 28, where),
                  get_or<std::size_t>(e, "width", 28, where));
    } else if (kind == "split") {
      const DatasetPtr src = build(get<std::string>(e, "source", where), stack);
      const auto keep = get<std::vector<Label>>(e, "labels", where);
      const std::set<Label> wanted(keep.begin(), keep.end());
      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < src->size(); ++r) {
        if (wanted.count(src->labels[r])) rows.push_back(r);
      }
      if (rows.empty()) throw ConfigError(where + " selects no rows");
      ds = subset(*src, rows);
    } else if (kind == "head") {
      const DatasetPtr src = build(get<std::string>(e, "source", where), stack);
      ds = head(*src, get<std::size_t>(e, "rows", where));
    }
  }
  ds.name = it != datasets_.end() ? name : fs::path(name).stem().string();
  auto ptr = std::make_shared<const Dataset>(std::move(ds));
  (*cache_)[name] = ptr;
  stack.pop_back();
  return ptr;
}

MlpSpec ExperimentConfig::model_spec(const Dataset& data) const {
  MlpSpec spec;
  spec.layer_sizes.push_back(data.dim());
  spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
  spec.layer_sizes.push_back(data.num_classes);
  return spec;
}

PairConfig ExperimentConfig::require_pair() const {
  if (!pair) throw ConfigError("this command needs a 'pair' section in the config");
  return *pair;
}

}  // namespace permweld
