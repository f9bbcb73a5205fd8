#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "satkit/attacks.hpp"
#include "satkit/dataset.hpp"
#include "satkit/sat.hpp"
#include "satkit/training.hpp"

namespace satkit::config {

struct DatasetBlock {
  std::string name = "digits";
  std::optional<std::vector<int>> classes;
  std::optional<int> per_class;
  std::uint64_t seed = 0;
  // held-out split: same name/classes, its own instance seed and count
  std::optional<int> eval_per_class;
  std::optional<std::uint64_t> eval_seed;

  data::Dataset load_train() const;
  data::Dataset load_eval() const;
};

struct TeacherBlock {
  std::string arch = "mini_resnet";
  std::string mode = "std";  // std | adv
  std::optional<int> epochs;
  std::optional<double> learning_rate;  // defaults to the train block's rate
};

struct SaliencyBlock {
  std::string method = "guided_backprop";
  std::string binarize = "sign";  // sign | topq | none (store raw maps)
  double topq = 0.25;
  std::string store;                 // single store path
  std::vector<std::string> stores;   // ensemble member paths
  std::uint64_t selection_seed = 0;
  int smoothgrad_n = 25;
  double smoothgrad_sigma = 0.1;
  int ig_steps = 64;

  saliency::BinarizeRule binarize_rule() const;
};

struct TrainBlock {
  // standard | uniform | pgd | trades | pgd-uniform | trades-uniform |
  // sat | pgd-sat | trades-sat
  std::string mode = "standard";
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double alpha10 = 0.6;          // alpha parameterized as alpha^10
  double epsilon0 = 8.0 / 255.0;
  std::string time_unit = "epoch";
  double sat_probability = 0.5;
  std::optional<attacks::AttackSpec> attack;

  bool is_sat() const { return mode == "sat" || mode == "pgd-sat" || mode == "trades-sat"; }
  sat::SatSchedule schedule() const;
  attacks::AttackSpec attack_or_default() const;
};

struct EvalBlock {
  bool default_grid = true;
  std::vector<attacks::AttackSpec> specs;

  std::vector<attacks::AttackSpec> resolve() const;
};

struct SweepBlock {
  std::string param;  // alpha10 | epsilon0
  std::vector<double> values;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DatasetBlock dataset;
  TeacherBlock teacher;
  SaliencyBlock saliency;
  TrainBlock train;
  EvalBlock eval;
  std::optional<SweepBlock> sweep;
  std::string config_hash;  // sha256 of the canonical config serialization

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& p);
};

// Output root override: relative output_dir is resolved under
// $SATKIT_OUTPUT_ROOT when that variable is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

std::string canonical_hash(const nlohmann::json& j);

}  // namespace satkit::config
