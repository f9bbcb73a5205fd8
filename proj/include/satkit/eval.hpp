#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "satkit/attacks.hpp"
#include "satkit/dataset.hpp"
#include "satkit/model.hpp"

namespace satkit::eval {

using satkit::models::Model;

struct GridCell {
  attacks::Family family;
  int steps = 1;
  double epsilon = 0.0;
  double accuracy = 0.0;
};

struct TimingStat {
  double median_seconds = 0.0;
  double variance = 0.0;
  int trials = 0;
};

struct EvalReport {
  std::string model_id;
  double clean_accuracy = 0.0;
  std::vector<GridCell> grid;
  std::map<std::string, TimingStat> timing;
  std::size_t n_eval = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
  // rows: attack,steps,epsilon,accuracy (plus one "clean" row)
  void write_csv(const std::filesystem::path& p) const;
  void write_json(const std::filesystem::path& p) const;
};

// Fraction of samples still predicted as their true label after the attack.
// Attacks are seeded per sample as a pure function of `eval_seed`.
double robust_accuracy(const Model& model, const data::Dataset& ds,
                       const attacks::AttackSpec& spec, std::uint64_t eval_seed = 0);

// Full grid. PGD cells with equal step counts are evaluated with nested
// budgets: a sample counted as broken at a smaller epsilon stays broken at
// larger ones (the smaller perturbation is feasible there), which makes
// robust accuracy monotone non-increasing in epsilon.
EvalReport eval_grid(const Model& model, const data::Dataset& ds,
                     const std::vector<attacks::AttackSpec>& specs, std::uint64_t seed = 0);

// PGD-5 x {1,2,3,4}/255, saliency x {2,4,8,16}/255, uniform x {4,8,16,32}/255,
// TRADES x {1,2,3,4}/255.
std::vector<attacks::AttackSpec> default_grid();

struct RobustnessProbe {
  double rho = 0.0;
  int i_star = -1;  // argmax logit
  int j_star = -1;  // minimizing rival class
  bool degenerate = false;  // all rival margin gradients were exactly zero
};

// rho = min_{j != i*} (logit_i* - logit_j) / l2norm(d(logit_i* - logit_j)/dx)
// for a single [C,H,W] input. Equals the exact boundary distance on linear
// models. Zero-gradient rivals are skipped (rho = +inf when all are).
RobustnessProbe linearized_robustness(const Model& model, const Tensor& x);

// Median/variance of per-epoch wall clock over `trials` measured epochs,
// after one discarded warm-up epoch. `one_epoch` must run exactly one epoch.
TimingStat time_epochs(const std::function<void()>& one_epoch, int trials = 3);

}  // namespace satkit::eval
