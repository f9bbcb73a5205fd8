#include "satkit/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "satkit/errors.hpp"
#include "satkit/io.hpp"
#include "satkit/rng.hpp"

namespace satkit::training {

using nlohmann::json;

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::standard: return "standard";
    case TrainMode::uniform_noise: return "uniform_noise";
    case TrainMode::pgd_at: return "pgd_at";
    case TrainMode::trades_at: return "trades_at";
    case TrainMode::pgd_at_uniform: return "pgd_at_uniform";
    case TrainMode::trades_at_uniform: return "trades_at_uniform";
  }
  throw ConfigError("bad train mode");
}

TrainMode train_mode_from_name(const std::string& s) {
  if (s == "standard") return TrainMode::standard;
  if (s == "uniform_noise") return TrainMode::uniform_noise;
  if (s == "pgd_at") return TrainMode::pgd_at;
  if (s == "trades_at") return TrainMode::trades_at;
  if (s == "pgd_at_uniform") return TrainMode::pgd_at_uniform;
  if (s == "trades_at_uniform") return TrainMode::trades_at_uniform;
  throw ConfigError("unknown train mode: " + s);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (mode != TrainMode::standard && !attack) {
    throw ConfigError("mode '" + train_mode_name(mode) + "' requires an attack spec");
  }
}

void TrainHistory::write_jsonl(const std::filesystem::path& p) const {
  std::string out;
  json meta_line = meta;
  meta_line["type"] = "meta";
  out += meta_line.dump() + "\n";
  for (const auto& e : epochs) {
    json line = {{"type", "epoch"},     {"epoch", e.epoch},
                 {"loss", e.mean_loss}, {"clean_acc", e.clean_accuracy},
                 {"seconds", e.seconds}};
    if (e.random_fraction >= 0.0) line["random_fraction"] = e.random_fraction;
    if (e.sat_batches || e.partner_batches) {
      line["sat_batches"] = e.sat_batches;
      line["partner_batches"] = e.partner_batches;
    }
    out += line.dump() + "\n";
  }
  io::write_text(p, out);
}

TrainHistory TrainHistory::read_jsonl(const std::filesystem::path& p) {
  TrainHistory h;
  std::ifstream f(p);
  if (!f) throw MissingArtifactError("cannot open history: " + p.string());
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("type", "") == "meta") {
      h.meta = j;
      h.meta.erase("type");
    } else {
      EpochRecord e;
      e.epoch = j.at("epoch").get<int>();
      e.mean_loss = j.at("loss").get<double>();
      e.clean_accuracy = j.value("clean_acc", 0.0);
      e.seconds = j.value("seconds", 0.0);
      e.random_fraction = j.value("random_fraction", -1.0);
      e.sat_batches = j.value("sat_batches", 0);
      e.partner_batches = j.value("partner_batches", 0);
      h.epochs.push_back(e);
    }
  }
  return h;
}

void Adam::step(Model& model, const models::ParamGrads& grads) {
  auto params = model.parameters();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.tensor->shape()));
      v_.push_back(Tensor::zeros(p.tensor->shape()));
    }
  }
  if (params.size() != grads.grads.size()) throw ShapeError("adam: gradient slots mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].tensor;
    const Tensor& g = grads.grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double ce_update(Model& model, Adam& adam, const Tensor& x_in, const std::vector<int>& y) {
  nn::Trace trace;
  Tensor logits = model.forward(x_in, trace);
  auto loss = losses::cross_entropy(logits, y);
  models::ParamGrads grads = model.zero_grads();
  model.backward(trace, loss.dlogits, {}, &grads);
  adam.step(model, grads);
  return loss.value;
}

double trades_update(Model& model, Adam& adam, const Tensor& x, const Tensor& x_adv,
                     const std::vector<int>& y, double beta) {
  nn::Trace trace_clean, trace_adv;
  Tensor logits = model.forward(x, trace_clean);
  Tensor logits_adv = model.forward(x_adv, trace_adv);
  auto ce = losses::cross_entropy(logits, y);
  auto kl = losses::kl_to_reference(logits, logits_adv);
  double total = ce.value + beta * kl.value;
  if (!std::isfinite(total)) throw NumericalError("trades loss is non-finite");

  models::ParamGrads grads = model.zero_grads();
  // clean forward carries CE plus the KL dependence on the reference logits
  Tensor d_clean = ce.dlogits;
  Tensor d_ref = losses::kl_reference_grad(logits, logits_adv);
  for (std::size_t i = 0; i < d_clean.size(); ++i) d_clean[i] += beta * d_ref[i];
  model.backward(trace_clean, d_clean, {}, &grads);
  Tensor d_adv(kl.dlogits.shape());
  for (std::size_t i = 0; i < d_adv.size(); ++i) d_adv[i] = beta * kl.dlogits[i];
  model.backward(trace_adv, d_adv, {}, &grads);
  adam.step(model, grads);
  return total;
}

Tensor adversarial_input(const Model& model, const data::Batch& batch, TrainMode mode,
                         const attacks::AttackSpec& spec, std::uint64_t seed, int epoch,
                         int batch_index) {
  switch (mode) {
    case TrainMode::standard:
      return batch.images;
    case TrainMode::uniform_noise: {
      attacks::AttackSpec s = spec;
      s.seed = rng::key(seed, "uniform", static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(batch_index));
      return attacks::uniform_noise(batch.images, s).x_adv;
    }
    case TrainMode::pgd_at:
      return attacks::pgd(model, batch.images, batch.labels, spec).x_adv;
    case TrainMode::trades_at: {
      attacks::AttackSpec s = spec;
      s.seed = rng::key(seed, "trades", static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(batch_index));
      return attacks::trades_perturbation(model, batch.images, s).x_adv;
    }
    default:
      throw ConfigError("adversarial_input: unsupported mode");
  }
}

TrainHistory run_loop(const data::Dataset& ds, int epochs, std::size_t batch_size,
                      std::uint64_t seed, const StepFn& step,
                      const std::function<double()>& clean_acc) {
  TrainHistory history;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto bs = data::batches(ds, batch_size, seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    double rf_sum = 0.0;
    std::size_t rf_count = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
      StepStats st = step(bs[bi], epoch, static_cast<int>(bi));
      loss_sum += st.loss;
      if (st.random_fraction >= 0.0) {
        rf_sum += st.random_fraction;
        ++rf_count;
      }
      if (st.branch == 0) ++rec.sat_batches;
      if (st.branch == 1) ++rec.partner_batches;
    }
    rec.mean_loss = loss_sum / static_cast<double>(bs.size());
    rec.random_fraction = rf_count ? rf_sum / static_cast<double>(rf_count) : -1.0;
    rec.clean_accuracy = clean_acc ? clean_acc() : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
  }
  return history;
}

double dataset_accuracy(const Model& model, const data::Dataset& ds, std::size_t batch_size) {
  std::size_t correct = 0;
  // fixed order (epoch tag "eval") so accuracy is independent of training state
  auto bs = data::batches(ds, batch_size, 0, 0);
  for (const auto& b : bs) {
    Tensor logits = model.forward(b.images);
    auto pred = losses::argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == b.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainResult train(Model model, const data::Dataset& ds, const TrainConfig& config) {
  config.validate();
  Adam adam(config.learning_rate);
  attacks::AttackSpec spec = config.attack.value_or(attacks::AttackSpec{});

  StepFn step = [&](const data::Batch& batch, int epoch, int bi) -> StepStats {
    StepStats st;
    TrainMode eff = config.mode;
    if (config.mode == TrainMode::pgd_at_uniform || config.mode == TrainMode::trades_at_uniform) {
      rng::Stream coin(rng::key(config.seed, "branch", static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(bi)));
      bool adversarial = coin.bernoulli(0.5);
      if (config.mode == TrainMode::pgd_at_uniform) {
        eff = adversarial ? TrainMode::pgd_at : TrainMode::uniform_noise;
      } else {
        eff = adversarial ? TrainMode::trades_at : TrainMode::uniform_noise;
      }
      st.branch = adversarial ? 1 : 0;
    }
    if (eff == TrainMode::trades_at) {
      attacks::AttackSpec s = spec;
      s.seed = rng::key(config.seed, "trades", static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(bi));
      Tensor x_adv = attacks::trades_perturbation(model, batch.images, s).x_adv;
      st.loss = trades_update(model, adam, batch.images, x_adv, batch.labels,
                              config.trades_beta());
      return st;
    }
    Tensor x_in = adversarial_input(model, batch, eff, spec, config.seed, epoch, bi);
    st.loss = ce_update(model, adam, x_in, batch.labels);
    return st;
  };

  std::function<double()> clean;
  if (config.record_clean_accuracy) {
    clean = [&]() { return dataset_accuracy(model, ds); };
  }
  TrainHistory history = run_loop(ds, config.epochs, config.batch_size, config.seed, step, clean);
  history.meta = {{"mode", train_mode_name(config.mode)},
                  {"epochs", config.epochs},
                  {"batch_size", config.batch_size},
                  {"learning_rate", config.learning_rate},
                  {"seed", config.seed}};
  return {std::move(model), std::move(history)};
}

TeacherResult make_teacher(const data::Dataset& ds, const std::string& arch, TeacherMode mode,
                           std::uint64_t seed, const TrainConfig* overrides) {
  models::InputSpec in{ds.channels(), ds.height(), ds.width()};
  Model model = Model::make(arch, in, ds.num_classes, rng::key(seed, "teacher-init"));
  TrainConfig cfg;
  if (overrides) cfg = *overrides;
  cfg.seed = seed;
  if (mode == TeacherMode::std_) {
    cfg.mode = TrainMode::standard;
  } else {
    cfg.mode = TrainMode::pgd_at;
    if (!cfg.attack) {
      cfg.attack = attacks::AttackSpec::make(attacks::Family::pgd, 8.0 / 255.0, 5);
    }
  }
  auto result = train(std::move(model), ds, cfg);
  TeacherResult tr;
  tr.model = std::move(result.model);
  tr.history = std::move(result.history);
  tr.tag = mode == TeacherMode::std_ ? "std" : "adv";
  return tr;
}

}  // namespace satkit::training
