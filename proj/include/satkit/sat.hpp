#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "satkit/saliency.hpp"
#include "satkit/training.hpp"

namespace satkit::sat {

using satkit::models::Model;

// Stochastic perturbation schedule: at time t each element takes a random
// sign with probability alpha^t, else the negated saliency entry.
struct SatSchedule {
  double alpha = std::pow(0.6, 0.1);  // alpha^10 = 0.6
  double epsilon0 = 8.0 / 255.0;
  enum class TimeUnit { epoch, step };
  TimeUnit time_unit = TimeUnit::epoch;
  std::int64_t current_t = 0;

  double mix_probability() const { return std::pow(alpha, static_cast<double>(current_t)); }
  void validate() const;
};

struct SatDelta {
  Tensor delta;               // entries in {-1,0,+1}
  std::vector<std::uint8_t> mask;  // true where the random branch fired

  double random_fraction() const {
    if (mask.empty()) return 0.0;
    std::size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(mask.size());
  }
};

// Per element: with probability alpha^t draw z in {-1,+1}; else -s[i].
// Requires a signed map; deterministic under the seed.
SatDelta sat_delta(const saliency::SaliencyMap& map, const SatSchedule& schedule,
                   std::uint64_t rng_seed);

// clip_[0,1](x + epsilon0 * delta) for a batch.
Tensor sat_perturb(const Tensor& x, const std::vector<SatDelta>& deltas, double epsilon0);

// Resolves sample ids to signed maps: a single store or an ensemble selector,
// with raw maps binarized on load (sign rule unless configured otherwise).
// Loaded maps are cached; checksum verification happens on first load.
class MapSource {
 public:
  explicit MapSource(std::shared_ptr<const data::SaliencyStore> store);
  explicit MapSource(saliency::EnsembleSelector selector);

  void set_binarize(const saliency::BinarizeRule& rule) { rule_ = rule; }

  const saliency::SaliencyMap& get_signed(const std::string& sample_id) const;
  std::vector<std::string> missing_ids(const data::Dataset& ds) const;
  std::string describe() const;

 private:
  std::shared_ptr<const data::SaliencyStore> store_;
  std::optional<saliency::EnsembleSelector> selector_;
  saliency::BinarizeRule rule_ = saliency::BinarizeRule::sign();
  mutable std::map<std::string, saliency::SaliencyMap> cache_;
};

struct HybridPolicy {
  enum class Partner { pgd, trades };
  Partner partner = Partner::pgd;
  double sat_probability = 0.5;  // per-batch Bernoulli

  void validate() const;
};

// Algorithm: per batch, build per-sample deltas from stored maps, perturb,
// clip, minimize cross-entropy with Adam. History records per-epoch loss,
// clean accuracy and the realized random-branch fraction.
training::TrainResult sat_train(Model model, const data::Dataset& ds, const MapSource& maps,
                                SatSchedule schedule, const training::TrainConfig& config);

// Per batch: Bernoulli(sat_probability) picks the SAT path or the partner
// attack (computed against the current model, partner's own epsilon).
training::TrainResult hybrid_train(Model model, const data::Dataset& ds, const MapSource& maps,
                                   SatSchedule schedule, const HybridPolicy& policy,
                                   const attacks::AttackSpec& attack_spec,
                                   const training::TrainConfig& config);

}  // namespace satkit::sat
