#include "satkit/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "satkit/errors.hpp"
#include "satkit/io.hpp"
#include "satkit/losses.hpp"
#include "satkit/rng.hpp"

namespace satkit::eval {

using nlohmann::json;

namespace {

constexpr std::size_t kEvalBatch = 64;

// All samples of the dataset in natural order, batched.
std::vector<data::Batch> eval_batches(const data::Dataset& ds) {
  std::vector<data::Batch> out;
  const std::size_t C = ds.channels(), H = ds.height(), W = ds.width();
  for (std::size_t start = 0; start < ds.size(); start += kEvalBatch) {
    std::size_t n = std::min(kEvalBatch, ds.size() - start);
    data::Batch b;
    b.images = Tensor({n, C, H, W});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = ds.samples[start + i];
      std::copy(s.image.data(), s.image.data() + s.image.size(),
                b.images.data() + i * C * H * W);
      b.labels.push_back(s.label);
      b.ids.push_back(s.id);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<bool> correct_flags(const Model& model, const Tensor& x,
                                const std::vector<int>& labels) {
  Tensor logits = model.forward(x);
  auto pred = losses::argmax_rows(logits);
  std::vector<bool> ok(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) ok[i] = pred[i] == labels[i];
  return ok;
}

Tensor attack_batch(const Model& model, const data::Batch& batch, const attacks::AttackSpec& spec,
                    std::uint64_t eval_seed, std::size_t batch_start,
                    const Tensor* warm_start = nullptr) {
  attacks::AttackSpec s = spec;
  s.seed = rng::key(eval_seed, "eval-attack", batch_start, spec.seed);
  switch (spec.family) {
    case attacks::Family::fgsm:
      return attacks::fgsm(model, batch.images, batch.labels, s).x_adv;
    case attacks::Family::pgd:
      return attacks::pgd(model, batch.images, batch.labels, s, warm_start).x_adv;
    case attacks::Family::uniform:
      return attacks::uniform_noise(batch.images, s).x_adv;
    case attacks::Family::trades:
      return attacks::trades_perturbation(model, batch.images, s).x_adv;
    case attacks::Family::saliency:
      return attacks::saliency_attack(model, batch.images, s).x_adv;
  }
  throw ConfigError("bad attack family");
}

}  // namespace

double robust_accuracy(const Model& model, const data::Dataset& ds,
                       const attacks::AttackSpec& spec, std::uint64_t eval_seed) {
  spec.validate();
  std::size_t correct = 0;
  std::size_t start = 0;
  for (const auto& b : eval_batches(ds)) {
    Tensor x_adv = attack_batch(model, b, spec, eval_seed, start);
    for (bool ok : correct_flags(model, x_adv, b.labels)) correct += ok ? 1 : 0;
    start += b.size();
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<attacks::AttackSpec> default_grid() {
  std::vector<attacks::AttackSpec> specs;
  for (double e : {1.0, 2.0, 3.0, 4.0}) {
    specs.push_back(attacks::AttackSpec::make(attacks::Family::pgd, e / 255.0, 5));
  }
  for (double e : {2.0, 4.0, 8.0, 16.0}) {
    specs.push_back(attacks::AttackSpec::make(attacks::Family::saliency, e / 255.0));
  }
  for (double e : {4.0, 8.0, 16.0, 32.0}) {
    specs.push_back(attacks::AttackSpec::make(attacks::Family::uniform, e / 255.0));
  }
  for (double e : {1.0, 2.0, 3.0, 4.0}) {
    specs.push_back(attacks::AttackSpec::make(attacks::Family::trades, e / 255.0, 5));
  }
  return specs;
}

EvalReport eval_grid(const Model& model, const data::Dataset& ds,
                     const std::vector<attacks::AttackSpec>& specs, std::uint64_t seed) {
  EvalReport report;
  report.n_eval = ds.size();
  report.seed = seed;

  auto bs = eval_batches(ds);
  std::size_t clean_correct = 0;
  for (const auto& b : bs) {
    for (bool ok : correct_flags(model, b.images, b.labels)) clean_correct += ok ? 1 : 0;
  }
  report.clean_accuracy = static_cast<double>(clean_correct) / static_cast<double>(ds.size());

  // Group PGD specs with equal step counts so nested budgets share state.
  std::map<int, std::vector<std::size_t>> pgd_groups;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    if (specs[i].family == attacks::Family::pgd) pgd_groups[specs[i].steps].push_back(i);
  }

  std::vector<double> accuracy(specs.size(), 0.0);
  std::vector<bool> done(specs.size(), false);

  for (auto& [steps, idxs] : pgd_groups) {
    std::sort(idxs.begin(), idxs.end(),
              [&](std::size_t a, std::size_t b) { return specs[a].epsilon < specs[b].epsilon; });
    // broken[i] sticks across ascending epsilon: the smaller-budget
    // adversarial example stays feasible inside every larger budget.
    std::vector<std::size_t> surviving(idxs.size(), 0);
    std::size_t start = 0;
    for (const auto& b : bs) {
      std::vector<bool> broken(b.size(), false);
      Tensor warm = b.images;
      for (std::size_t gi = 0; gi < idxs.size(); ++gi) {
        const auto& spec = specs[idxs[gi]];
        Tensor x_adv = attack_batch(model, b, spec, seed, start, gi == 0 ? nullptr : &warm);
        auto ok = correct_flags(model, x_adv, b.labels);
        for (std::size_t i = 0; i < b.size(); ++i) {
          if (!ok[i]) broken[i] = true;
          if (!broken[i]) ++surviving[gi];
        }
        warm = std::move(x_adv);
      }
      start += b.size();
    }
    for (std::size_t gi = 0; gi < idxs.size(); ++gi) {
      accuracy[idxs[gi]] = static_cast<double>(surviving[gi]) / static_cast<double>(ds.size());
      done[idxs[gi]] = true;
    }
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!done[i]) accuracy[i] = robust_accuracy(model, ds, specs[i], seed);
    report.grid.push_back(
        {specs[i].family, specs[i].steps, specs[i].epsilon, accuracy[i]});
  }
  return report;
}

RobustnessProbe linearized_robustness(const Model& model, const Tensor& x) {
  Tensor xb = x.rank() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  if (xb.dim(0) != 1) throw ShapeError("linearized_robustness takes a single sample");
  nn::Trace trace;
  Tensor logits = model.forward(xb, trace);
  const std::size_t K = logits.dim(1);
  std::size_t i_star = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (logits.at2(0, k) > logits.at2(0, i_star)) i_star = k;
  }
  RobustnessProbe probe;
  probe.i_star = static_cast<int>(i_star);
  probe.rho = std::numeric_limits<double>::infinity();
  probe.j_star = -1;
  bool any_valid = false;
  for (std::size_t j = 0; j < K; ++j) {
    if (j == i_star) continue;
    Tensor dlogits(logits.shape());
    dlogits.at2(0, i_star) = 1.0;
    dlogits.at2(0, j) = -1.0;
    Tensor g = model.backward(trace, dlogits, {});
    double denom = l2_norm(g);
    if (denom == 0.0) continue;  // identical gradients; this rival is unreachable linearly
    any_valid = true;
    double margin = logits.at2(0, i_star) - logits.at2(0, j);
    double rho_j = margin / denom;
    if (rho_j < probe.rho) {
      probe.rho = rho_j;
      probe.j_star = static_cast<int>(j);
    }
  }
  probe.degenerate = !any_valid;
  return probe;
}

TimingStat time_epochs(const std::function<void()>& one_epoch, int trials) {
  if (trials < 3) trials = 3;
  one_epoch();  // warm-up, excluded
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    one_epoch();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  TimingStat stat;
  stat.trials = trials;
  stat.median_seconds = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0) {
    stat.median_seconds = 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  }
  double mean = 0.0;
  for (double t : times) mean += t;
  mean /= static_cast<double>(times.size());
  for (double t : times) stat.variance += (t - mean) * (t - mean);
  stat.variance /= static_cast<double>(times.size());
  return stat;
}

json EvalReport::to_json() const {
  json cells = json::array();
  for (const auto& c : grid) {
    cells.push_back({{"attack", attacks::family_name(c.family)},
                     {"steps", c.steps},
                     {"epsilon", c.epsilon},
                     {"accuracy", c.accuracy}});
  }
  json t = json::object();
  for (const auto& [k, v] : timing) {
    t[k] = {{"median_seconds", v.median_seconds}, {"variance", v.variance}, {"trials", v.trials}};
  }
  return {{"model_id", model_id},   {"clean_accuracy", clean_accuracy},
          {"grid", cells},          {"timing", t},
          {"n_eval", n_eval},       {"seed", seed},
          {"config_hash", config_hash}};
}

void EvalReport::write_json(const std::filesystem::path& p) const {
  io::write_text(p, to_json().dump(2) + "\n");
}

void EvalReport::write_csv(const std::filesystem::path& p) const {
  std::ostringstream os;
  os << "attack,steps,epsilon,accuracy\n";
  os << "clean,0,0," << clean_accuracy << "\n";
  for (const auto& c : grid) {
    os << attacks::family_name(c.family) << "," << c.steps << "," << c.epsilon << ","
       << c.accuracy << "\n";
  }
  io::write_text(p, os.str());
}

}  // namespace satkit::eval
