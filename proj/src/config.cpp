#include "satkit/config.hpp"

#include <cmath>
#include <cstdlib>

#include "satkit/errors.hpp"
#include "satkit/io.hpp"

namespace satkit::config {

using nlohmann::json;

namespace {

std::optional<data::SubsetSpec> subset_of(const DatasetBlock& b, std::optional<int> per_class) {
  if (!b.classes && !per_class) return std::nullopt;
  data::SubsetSpec s;
  if (b.classes) {
    s.classes = *b.classes;
  } else {
    auto it = data::registered_loaders().find(b.name);
    if (it == data::registered_loaders().end()) throw ConfigError("unknown dataset: " + b.name);
    for (int c = 0; c < it->second.num_classes; ++c) s.classes.push_back(c);
  }
  s.per_class = per_class.value_or(0);
  return s;
}

}  // namespace

data::Dataset DatasetBlock::load_train() const {
  return data::load_dataset(name, subset_of(*this, per_class), seed);
}

data::Dataset DatasetBlock::load_eval() const {
  std::uint64_t s = eval_seed.value_or(seed + 1);
  if (s == seed) throw ConfigError("eval split must use a different seed than the train split");
  std::optional<int> pc = eval_per_class ? eval_per_class : per_class;
  return data::load_dataset(name, subset_of(*this, pc), s);
}

saliency::BinarizeRule SaliencyBlock::binarize_rule() const {
  if (binarize == "sign" || binarize == "none") return saliency::BinarizeRule::sign();
  if (binarize == "topq") return saliency::BinarizeRule::topq(topq);
  throw ConfigError("unknown binarize rule: " + binarize);
}

sat::SatSchedule TrainBlock::schedule() const {
  sat::SatSchedule s;
  if (!(alpha10 > 0.0 && alpha10 < 1.0)) throw ConfigError("alpha10 must lie in (0,1)");
  s.alpha = std::pow(alpha10, 0.1);
  s.epsilon0 = epsilon0;
  if (time_unit == "epoch") {
    s.time_unit = sat::SatSchedule::TimeUnit::epoch;
  } else if (time_unit == "step") {
    s.time_unit = sat::SatSchedule::TimeUnit::step;
  } else {
    throw ConfigError("time_unit must be 'epoch' or 'step'");
  }
  s.validate();
  return s;
}

attacks::AttackSpec TrainBlock::attack_or_default() const {
  if (attack) return *attack;
  attacks::Family fam = attacks::Family::pgd;
  if (mode == "trades" || mode == "trades-uniform" || mode == "trades-sat") {
    fam = attacks::Family::trades;
  } else if (mode == "uniform") {
    fam = attacks::Family::uniform;
  }
  return attacks::AttackSpec::make(fam, 8.0 / 255.0, 5);
}

std::vector<attacks::AttackSpec> EvalBlock::resolve() const {
  if (!default_grid) return specs;
  return {};  // caller substitutes eval::default_grid(); avoids a dependency cycle
}

std::string canonical_hash(const json& j) {
  std::string dump = j.dump();  // object keys are stored sorted
  return io::sha256_hex(dump.data(), dump.size());
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured) {
  if (configured.is_absolute()) return configured;
  const char* root = std::getenv("SATKIT_OUTPUT_ROOT");
  if (root && *root) return std::filesystem::path(root) / configured;
  return configured;
}

namespace {

template <class T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    ExperimentConfig c;
    read_into(j, "seed", c.seed);
    std::string out_dir;
    read_into(j, "output_dir", out_dir);
    if (!out_dir.empty()) c.output_dir = out_dir;

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      read_into(d, "name", c.dataset.name);
      if (d.contains("classes")) c.dataset.classes = d.at("classes").get<std::vector<int>>();
      if (d.contains("per_class")) c.dataset.per_class = d.at("per_class").get<int>();
      read_into(d, "seed", c.dataset.seed);
      if (d.contains("eval")) {
        const auto& e = d.at("eval");
        if (e.contains("per_class")) c.dataset.eval_per_class = e.at("per_class").get<int>();
        if (e.contains("seed")) c.dataset.eval_seed = e.at("seed").get<std::uint64_t>();
      }
    }
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      read_into(t, "arch", c.teacher.arch);
      read_into(t, "mode", c.teacher.mode);
      if (t.contains("epochs")) c.teacher.epochs = t.at("epochs").get<int>();
      if (t.contains("learning_rate")) {
        c.teacher.learning_rate = t.at("learning_rate").get<double>();
      }
      if (c.teacher.mode != "std" && c.teacher.mode != "adv") {
        throw ConfigError("teacher.mode must be 'std' or 'adv'");
      }
    }
    if (j.contains("saliency")) {
      const auto& s = j.at("saliency");
      read_into(s, "method", c.saliency.method);
      read_into(s, "binarize", c.saliency.binarize);
      read_into(s, "topq", c.saliency.topq);
      read_into(s, "store", c.saliency.store);
      if (s.contains("stores")) c.saliency.stores = s.at("stores").get<std::vector<std::string>>();
      read_into(s, "selection_seed", c.saliency.selection_seed);
      read_into(s, "smoothgrad_n", c.saliency.smoothgrad_n);
      read_into(s, "smoothgrad_sigma", c.saliency.smoothgrad_sigma);
      read_into(s, "ig_steps", c.saliency.ig_steps);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_into(t, "mode", c.train.mode);
      read_into(t, "epochs", c.train.epochs);
      read_into(t, "batch_size", c.train.batch_size);
      read_into(t, "learning_rate", c.train.learning_rate);
      if (t.contains("sat")) {
        const auto& s = t.at("sat");
        read_into(s, "alpha10", c.train.alpha10);
        read_into(s, "epsilon0", c.train.epsilon0);
        read_into(s, "time_unit", c.train.time_unit);
      }
      if (t.contains("hybrid")) {
        read_into(t.at("hybrid"), "sat_probability", c.train.sat_probability);
      }
      if (t.contains("attack")) c.train.attack = attacks::AttackSpec::from_json(t.at("attack"));
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("grid") && e.at("grid").is_string()) {
        if (e.at("grid").get<std::string>() != "default") {
          throw ConfigError("eval.grid must be 'default' or omitted in favor of eval.specs");
        }
        c.eval.default_grid = true;
      }
      if (e.contains("specs")) {
        c.eval.default_grid = false;
        for (const auto& s : e.at("specs")) {
          c.eval.specs.push_back(attacks::AttackSpec::from_json(s));
        }
      }
    }
    if (j.contains("sweep")) {
      SweepBlock sw;
      sw.param = j.at("sweep").at("param").get<std::string>();
      sw.values = j.at("sweep").at("values").get<std::vector<double>>();
      if (sw.param != "alpha10" && sw.param != "epsilon0") {
        throw ConfigError("sweep.param must be 'alpha10' or 'epsilon0'");
      }
      if (sw.values.empty()) throw ConfigError("sweep.values must be non-empty");
      c.sweep = std::move(sw);
    }
    c.config_hash = canonical_hash(j);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config: " + std::string(e.what()));
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& p) {
  json j;
  try {
    j = json::parse(io::read_text(p));
  } catch (const MissingArtifactError&) {
    throw ConfigError("config file not found: " + p.string());
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

}  // namespace satkit::config
