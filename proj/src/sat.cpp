#include "satkit/sat.hpp"

#include <cmath>

#include "satkit/errors.hpp"
#include "satkit/rng.hpp"

namespace satkit::sat {

void SatSchedule::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("sat schedule requires 0 < alpha < 1");
  if (epsilon0 < 0.0) throw ConfigError("sat schedule requires epsilon0 >= 0");
  if (current_t < 0) throw ConfigError("sat schedule requires t >= 0");
}

SatDelta sat_delta(const saliency::SaliencyMap& map, const SatSchedule& schedule,
                   std::uint64_t rng_seed) {
  schedule.validate();
  if (map.kind != saliency::MapKind::signed_) {
    throw ConfigError("sat_delta requires a signed saliency map (binarize raw maps first)");
  }
  const double p = schedule.mix_probability();
  rng::Stream st(rng::key(rng_seed, "sat-delta"));
  SatDelta out;
  out.delta = Tensor(map.values.shape());
  out.mask.resize(map.values.size());
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (st.uniform() < p) {
      out.delta[i] = st.sign();
      out.mask[i] = 1;
    } else {
      out.delta[i] = -map.values[i];
      out.mask[i] = 0;
    }
  }
  return out;
}

Tensor sat_perturb(const Tensor& x, const std::vector<SatDelta>& deltas, double epsilon0) {
  if (x.rank() != 4) throw ShapeError("sat_perturb expects [B,C,H,W]");
  const std::size_t B = x.dim(0);
  if (deltas.size() != B) throw ShapeError("sat_perturb: one delta per sample required");
  const std::size_t per = x.size() / B;
  Tensor out(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    if (deltas[b].delta.size() != per) throw ShapeError("sat_perturb: delta shape mismatch");
    for (std::size_t i = 0; i < per; ++i) {
      double v = x[b * per + i] + epsilon0 * deltas[b].delta[i];
      out[b * per + i] = std::min(1.0, std::max(0.0, v));
    }
  }
  return out;
}

MapSource::MapSource(std::shared_ptr<const data::SaliencyStore> store)
    : store_(std::move(store)) {
  if (!store_) throw ConfigError("MapSource needs a store");
}

MapSource::MapSource(saliency::EnsembleSelector selector) : selector_(std::move(selector)) {}

const saliency::SaliencyMap& MapSource::get_signed(const std::string& sample_id) const {
  auto it = cache_.find(sample_id);
  if (it != cache_.end()) return it->second;
  saliency::SaliencyMap map =
      selector_ ? selector_->select(sample_id) : store_->get(sample_id);
  if (map.kind != saliency::MapKind::signed_) map = saliency::binarize(map, rule_);
  auto [pos, _] = cache_.emplace(sample_id, std::move(map));
  return pos->second;
}

std::vector<std::string> MapSource::missing_ids(const data::Dataset& ds) const {
  if (!selector_) return store_->missing_ids(ds);
  // an ensemble needs the chosen member to cover each sample
  std::vector<std::string> missing;
  for (const auto& s : ds.samples) {
    try {
      selector_->select(s.id);
    } catch (const MissingArtifactError&) {
      missing.push_back(s.id);
    }
  }
  return missing;
}

std::string MapSource::describe() const {
  if (selector_) return "ensemble(" + std::to_string(selector_->num_members()) + ")";
  return store_->method() + "@" + store_->teacher_id();
}

void HybridPolicy::validate() const {
  if (!(sat_probability >= 0.0 && sat_probability <= 1.0)) {
    throw ConfigError("hybrid sat_probability must lie in [0,1]");
  }
}

namespace {

struct SatBatchResult {
  Tensor x;
  double random_fraction;
};

// Deltas are resampled fresh for every batch occurrence of a sample; the
// per-sample seed is a pure function of (seed, epoch, batch, position).
SatBatchResult sat_batch(const data::Batch& batch, const MapSource& maps,
                         const SatSchedule& schedule, std::uint64_t seed, int epoch,
                         int batch_index) {
  std::vector<SatDelta> deltas;
  deltas.reserve(batch.size());
  double rf = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& map = maps.get_signed(batch.ids[i]);
    std::uint64_t s = rng::key(seed, "sat-sample", rng::mix(static_cast<std::uint64_t>(epoch),
                                                            static_cast<std::uint64_t>(batch_index)),
                               i);
    deltas.push_back(sat_delta(map, schedule, s));
    rf += deltas.back().random_fraction();
  }
  SatBatchResult out{sat_perturb(batch.images, deltas, schedule.epsilon0),
                     rf / static_cast<double>(batch.size())};
  return out;
}

void check_map_shapes(const MapSource& maps, const data::Dataset& ds) {
  const auto& first = maps.get_signed(ds.samples.front().id);
  if (first.values.shape() !=
      std::vector<std::size_t>{ds.channels(), ds.height(), ds.width()}) {
    throw ShapeError("saliency map shape does not match dataset images");
  }
}

}  // namespace

training::TrainResult sat_train(Model model, const data::Dataset& ds, const MapSource& maps,
                                SatSchedule schedule, const training::TrainConfig& config) {
  schedule.validate();
  if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw ConfigError("invalid train config");
  }
  {
    auto missing = maps.missing_ids(ds);
    if (!missing.empty()) {
      throw MissingArtifactError("saliency source does not cover the dataset (first missing: " +
                                 missing.front() + ", total " + std::to_string(missing.size()) +
                                 ")");
    }
  }
  check_map_shapes(maps, ds);

  training::Adam adam(config.learning_rate);
  std::int64_t global_step = 0;
  training::StepFn step = [&](const data::Batch& batch, int epoch, int bi) -> training::StepStats {
    schedule.current_t =
        schedule.time_unit == SatSchedule::TimeUnit::epoch ? epoch : global_step;
    auto sb = sat_batch(batch, maps, schedule, config.seed, epoch, bi);
    training::StepStats st;
    st.loss = training::ce_update(model, adam, sb.x, batch.labels);
    st.random_fraction = sb.random_fraction;
    ++global_step;
    return st;
  };
  std::function<double()> clean;
  if (config.record_clean_accuracy) {
    clean = [&]() { return training::dataset_accuracy(model, ds); };
  }
  training::TrainHistory history =
      training::run_loop(ds, config.epochs, config.batch_size, config.seed, step, clean);
  history.meta = {{"mode", "sat"},
                  {"alpha", schedule.alpha},
                  {"epsilon0", schedule.epsilon0},
                  {"time_unit", schedule.time_unit == SatSchedule::TimeUnit::epoch ? "epoch" : "step"},
                  {"maps", maps.describe()},
                  {"epochs", config.epochs},
                  {"batch_size", config.batch_size},
                  {"learning_rate", config.learning_rate},
                  {"seed", config.seed}};
  return {std::move(model), std::move(history)};
}

training::TrainResult hybrid_train(Model model, const data::Dataset& ds, const MapSource& maps,
                                   SatSchedule schedule, const HybridPolicy& policy,
                                   const attacks::AttackSpec& attack_spec,
                                   const training::TrainConfig& config) {
  schedule.validate();
  policy.validate();
  attack_spec.validate();
  {
    auto missing = maps.missing_ids(ds);
    if (!missing.empty()) {
      throw MissingArtifactError("saliency source does not cover the dataset (first missing: " +
                                 missing.front() + ", total " + std::to_string(missing.size()) +
                                 ")");
    }
  }
  check_map_shapes(maps, ds);

  training::Adam adam(config.learning_rate);
  std::int64_t global_step = 0;
  training::StepFn step = [&](const data::Batch& batch, int epoch, int bi) -> training::StepStats {
    schedule.current_t =
        schedule.time_unit == SatSchedule::TimeUnit::epoch ? epoch : global_step;
    ++global_step;
    training::StepStats st;
    rng::Stream coin(rng::key(config.seed, "branch", static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(bi)));
    bool take_sat = coin.bernoulli(policy.sat_probability);
    if (take_sat) {
      auto sb = sat_batch(batch, maps, schedule, config.seed, epoch, bi);
      st.loss = training::ce_update(model, adam, sb.x, batch.labels);
      st.random_fraction = sb.random_fraction;
      st.branch = 0;
      return st;
    }
    st.branch = 1;
    if (policy.partner == HybridPolicy::Partner::pgd) {
      Tensor x_adv = attacks::pgd(model, batch.images, batch.labels, attack_spec).x_adv;
      st.loss = training::ce_update(model, adam, x_adv, batch.labels);
    } else {
      attacks::AttackSpec s = attack_spec;
      s.seed = rng::key(config.seed, "trades", static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(bi));
      Tensor x_adv = attacks::trades_perturbation(model, batch.images, s).x_adv;
      st.loss = training::trades_update(model, adam, batch.images, x_adv, batch.labels,
                                        attack_spec.trades_beta);
    }
    return st;
  };
  std::function<double()> clean;
  if (config.record_clean_accuracy) {
    clean = [&]() { return training::dataset_accuracy(model, ds); };
  }
  training::TrainHistory history =
      training::run_loop(ds, config.epochs, config.batch_size, config.seed, step, clean);
  history.meta = {{"mode", policy.partner == HybridPolicy::Partner::pgd ? "pgd_sat" : "trades_sat"},
                  {"sat_probability", policy.sat_probability},
                  {"alpha", schedule.alpha},
                  {"epsilon0", schedule.epsilon0},
                  {"attack", attack_spec.to_json()},
                  {"maps", maps.describe()},
                  {"epochs", config.epochs},
                  {"batch_size", config.batch_size},
                  {"learning_rate", config.learning_rate},
                  {"seed", config.seed}};
  return {std::move(model), std::move(history)};
}

}  // namespace satkit::sat
