#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "satkit/model.hpp"
#include "satkit/saliency_map.hpp"
#include "satkit/tensor.hpp"

namespace satkit::attacks {

using satkit::models::Model;

enum class Family { fgsm, pgd, uniform, trades, saliency };

std::string family_name(Family f);
Family family_from_name(const std::string& s);

struct AttackSpec {
  Family family = Family::fgsm;
  double epsilon = 0.0;      // l-inf budget, image units
  int steps = 1;             // iterative families
  double step_size = 0.0;    // 0 -> default epsilon/4
  double trades_beta = 6.0;  // hybrid-loss weight, consumed by training
  std::uint64_t seed = 0;    // random init / noise

  void validate() const;
  double effective_step() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }

  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);

  static AttackSpec make(Family f, double eps, int steps = 1, double step = 0.0,
                         std::uint64_t seed = 0);
};

struct AttackResult {
  Tensor x_adv;
  Tensor delta;  // x_adv - x
  std::vector<double> per_step_loss;
};

// Elementwise clamp into ([x_ref - eps, x_ref + eps] intersect [0,1]).
Tensor project_linf(const Tensor& x_cand, const Tensor& x_ref, double eps);

AttackResult fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec);

// x0 = x (no random start); optional warm start must already lie in the box.
AttackResult pgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                 const AttackSpec& spec, const Tensor* warm_start = nullptr);

AttackResult uniform_noise(const Tensor& x, const AttackSpec& spec);

// x - eps * sign(s) with s the stored per-sample saliency maps.
AttackResult saliency_attack(const Tensor& x, const std::vector<const saliency::SaliencyMap*>& maps,
                             const AttackSpec& spec);
// On-the-fly variant: s = d(logit of argmax class)/dx.
AttackResult saliency_attack(const Model& model, const Tensor& x, const AttackSpec& spec);

// PGD-style maximization of KL(softmax(model(x)) || softmax(model(x_adv)))
// started from x plus small seeded uniform noise.
AttackResult trades_perturbation(const Model& model, const Tensor& x, const AttackSpec& spec);

}  // namespace satkit::attacks
