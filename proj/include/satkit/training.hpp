#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "satkit/attacks.hpp"
#include "satkit/dataset.hpp"
#include "satkit/losses.hpp"
#include "satkit/model.hpp"

namespace satkit::training {

using satkit::models::Model;

enum class TrainMode {
  standard,
  uniform_noise,
  pgd_at,
  trades_at,
  pgd_at_uniform,
  trades_at_uniform
};

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& s);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::standard;
  std::optional<attacks::AttackSpec> attack;  // required for adversarial modes
  bool record_clean_accuracy = true;

  void validate() const;
  double trades_beta() const { return attack ? attack->trades_beta : 6.0; }
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double clean_accuracy = 0.0;
  double seconds = 0.0;       // wall clock; excluded from determinism checks
  double random_fraction = -1.0;  // SAT only: realized z-branch density
  int sat_batches = 0;
  int partner_batches = 0;
};

struct TrainHistory {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<EpochRecord> epochs;

  void write_jsonl(const std::filesystem::path& p) const;
  static TrainHistory read_jsonl(const std::filesystem::path& p);
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Adam with bias correction; deterministic given the gradient sequence.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Model& model, const models::ParamGrads& grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Shared per-batch updates; SAT and hybrid training reuse these so that
// degenerate settings reproduce the corresponding baseline trajectory exactly.
double ce_update(Model& model, Adam& adam, const Tensor& x_in, const std::vector<int>& y);
double trades_update(Model& model, Adam& adam, const Tensor& x, const Tensor& x_adv,
                     const std::vector<int>& y, double beta);

// Builds the optimizer input for one batch of a given mode against the
// current model. Seeds derive from (seed, epoch, batch) so results do not
// depend on call history.
Tensor adversarial_input(const Model& model, const data::Batch& batch, TrainMode mode,
                         const attacks::AttackSpec& spec, std::uint64_t seed, int epoch,
                         int batch_index);

struct StepStats {
  double loss = 0.0;
  double random_fraction = -1.0;
  int branch = -1;  // hybrids: 0 = SAT branch, 1 = partner branch
};

using StepFn = std::function<StepStats(const data::Batch& batch, int epoch, int batch_index)>;

// Epoch/batch driver: deterministic batch order, per-epoch bookkeeping.
// `clean_acc` is invoked once per epoch when non-null.
TrainHistory run_loop(const data::Dataset& ds, int epochs, std::size_t batch_size,
                      std::uint64_t seed, const StepFn& step,
                      const std::function<double()>& clean_acc);

double dataset_accuracy(const Model& model, const data::Dataset& ds, std::size_t batch_size = 64);

TrainResult train(Model model, const data::Dataset& ds, const TrainConfig& config);

enum class TeacherMode { std_, adv };

struct TeacherResult {
  Model model;
  TrainHistory history;
  std::string tag;  // "std" | "adv"
};

// std: standard training; adv: 5-step PGD adversarial training at 8/255.
TeacherResult make_teacher(const data::Dataset& ds, const std::string& arch, TeacherMode mode,
                           std::uint64_t seed, const TrainConfig* overrides = nullptr);

}  // namespace satkit::training
