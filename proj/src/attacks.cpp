#include "satkit/attacks.hpp"

#include <cmath>

#include "satkit/errors.hpp"
#include "satkit/losses.hpp"
#include "satkit/rng.hpp"

namespace satkit::attacks {

std::string family_name(Family f) {
  switch (f) {
    case Family::fgsm: return "fgsm";
    case Family::pgd: return "pgd";
    case Family::uniform: return "uniform";
    case Family::trades: return "trades";
    case Family::saliency: return "saliency";
  }
  throw ConfigError("bad attack family");
}

Family family_from_name(const std::string& s) {
  if (s == "fgsm") return Family::fgsm;
  if (s == "pgd") return Family::pgd;
  if (s == "uniform") return Family::uniform;
  if (s == "trades") return Family::trades;
  if (s == "saliency") return Family::saliency;
  throw ConfigError("unknown attack family: " + s);
}

void AttackSpec::validate() const {
  if (epsilon < 0.0) throw ConfigError("attack epsilon must be >= 0");
  if ((family == Family::pgd || family == Family::trades) && steps < 1) {
    throw ConfigError("iterative attacks need steps >= 1");
  }
  if ((family == Family::pgd || family == Family::trades) && epsilon > 0.0 &&
      effective_step() <= 0.0) {
    throw ConfigError("iterative attacks need step_size > 0");
  }
}

nlohmann::json AttackSpec::to_json() const {
  return {{"family", family_name(family)}, {"epsilon", epsilon},   {"steps", steps},
          {"step_size", step_size},        {"trades_beta", trades_beta}, {"seed", seed}};
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
  AttackSpec s;
  s.family = family_from_name(j.at("family").get<std::string>());
  s.epsilon = j.at("epsilon").get<double>();
  s.steps = j.value("steps", s.family == Family::pgd || s.family == Family::trades ? 5 : 1);
  s.step_size = j.value("step_size", 0.0);
  s.trades_beta = j.value("trades_beta", 6.0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.validate();
  return s;
}

AttackSpec AttackSpec::make(Family f, double eps, int steps, double step, std::uint64_t seed) {
  AttackSpec s;
  s.family = f;
  s.epsilon = eps;
  s.steps = steps;
  s.step_size = step;
  s.seed = seed;
  s.validate();
  return s;
}

Tensor project_linf(const Tensor& x_cand, const Tensor& x_ref, double eps) {
  if (!x_cand.same_shape(x_ref)) throw ShapeError("project_linf: shape mismatch");
  Tensor out(x_cand.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double lo = std::max(0.0, x_ref[i] - eps);
    double hi = std::min(1.0, x_ref[i] + eps);
    out[i] = std::min(hi, std::max(lo, x_cand[i]));
  }
  return out;
}

namespace {

AttackResult finish(const Tensor& x, Tensor x_adv, std::vector<double> losses = {}) {
  AttackResult r;
  r.delta = sub(x_adv, x);
  r.x_adv = std::move(x_adv);
  r.per_step_loss = std::move(losses);
  return r;
}

// Shared sign-step loop for fgsm/pgd; fgsm is exactly one step of size eps.
AttackResult pgd_core(const Model& model, const Tensor& x, const std::vector<int>& y, double eps,
                      int steps, double step_size, const Tensor* warm_start) {
  Tensor xt = warm_start ? project_linf(*warm_start, x, eps) : x;
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    nn::Trace trace;
    Tensor logits = model.forward(xt, trace);
    auto loss = losses::cross_entropy(logits, y);
    losses.push_back(loss.value);
    Tensor g = model.backward(trace, loss.dlogits, {});
    if (!g.all_finite()) throw NumericalError("attack gradient is non-finite");
    Tensor cand(xt.shape());
    for (std::size_t i = 0; i < cand.size(); ++i) {
      cand[i] = xt[i] + step_size * sign0(g[i]);
    }
    xt = project_linf(cand, x, eps);
  }
  return finish(x, std::move(xt), std::move(losses));
}

}  // namespace

AttackResult fgsm(const Model& model, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec) {
  spec.validate();
  return pgd_core(model, x, y, spec.epsilon, 1, spec.epsilon, nullptr);
}

AttackResult pgd(const Model& model, const Tensor& x, const std::vector<int>& y,
                 const AttackSpec& spec, const Tensor* warm_start) {
  spec.validate();
  if (spec.steps < 1) throw ConfigError("pgd needs steps >= 1");
  return pgd_core(model, x, y, spec.epsilon, spec.steps, spec.effective_step(), warm_start);
}

AttackResult uniform_noise(const Tensor& x, const AttackSpec& spec) {
  if (spec.epsilon < 0.0) throw ConfigError("epsilon must be >= 0");
  if (x.rank() != 4) throw ShapeError("uniform_noise expects [B,C,H,W]");
  Tensor x_adv(x.shape());
  const std::size_t B = x.dim(0);
  const std::size_t per = x.size() / B;
  for (std::size_t b = 0; b < B; ++b) {
    rng::Stream st(rng::key(spec.seed, "uniform-noise", b));
    for (std::size_t i = 0; i < per; ++i) {
      double u = st.uniform(-spec.epsilon, spec.epsilon);
      double v = x[b * per + i] + u;
      x_adv[b * per + i] = std::min(1.0, std::max(0.0, v));
    }
  }
  return finish(x, std::move(x_adv));
}

namespace {

AttackResult saliency_step(const Tensor& x, const Tensor& s, double eps) {
  Tensor x_adv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i] - eps * sign0(s[i]);
    x_adv[i] = std::min(1.0, std::max(0.0, v));
  }
  return finish(x, std::move(x_adv));
}

}  // namespace

AttackResult saliency_attack(const Tensor& x,
                             const std::vector<const saliency::SaliencyMap*>& maps,
                             const AttackSpec& spec) {
  if (x.rank() != 4) throw ShapeError("saliency_attack expects [B,C,H,W]");
  const std::size_t B = x.dim(0);
  if (maps.size() != B) throw ShapeError("saliency_attack: one map per sample required");
  const std::size_t per = x.size() / B;
  Tensor s(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    if (!maps[b]) throw MissingArtifactError("saliency_attack: missing saliency map");
    if (maps[b]->values.size() != per) throw ShapeError("saliency map shape mismatch");
    std::copy(maps[b]->values.data(), maps[b]->values.data() + per, s.data() + b * per);
  }
  return saliency_step(x, s, spec.epsilon);
}

AttackResult saliency_attack(const Model& model, const Tensor& x, const AttackSpec& spec) {
  Tensor logits = model.forward(x);
  auto pred = losses::argmax_rows(logits);
  Tensor s = models::input_gradient(model, x, models::GradTarget::logit(pred));
  return saliency_step(x, s, spec.epsilon);
}

AttackResult trades_perturbation(const Model& model, const Tensor& x, const AttackSpec& spec) {
  spec.validate();
  if (x.rank() != 4) throw ShapeError("trades_perturbation expects [B,C,H,W]");
  Tensor ref_logits = model.forward(x);

  // KL gradient vanishes exactly at x, so start from small seeded noise.
  const std::size_t B = x.dim(0);
  const std::size_t per = x.size() / B;
  Tensor xt(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    rng::Stream st(rng::key(spec.seed, "trades-init", b));
    for (std::size_t i = 0; i < per; ++i) {
      xt[b * per + i] = x[b * per + i] + st.uniform(-0.001, 0.001);
    }
  }
  xt = project_linf(xt, x, spec.epsilon);

  const double step = spec.effective_step();
  std::vector<double> losses;
  for (int t = 0; t < spec.steps; ++t) {
    nn::Trace trace;
    Tensor logits = model.forward(xt, trace);
    auto kl = losses::kl_to_reference(ref_logits, logits);
    losses.push_back(kl.value);
    Tensor g = model.backward(trace, kl.dlogits, {});
    if (!g.all_finite()) throw NumericalError("trades gradient is non-finite");
    Tensor cand(xt.shape());
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = xt[i] + step * sign0(g[i]);
    xt = project_linf(cand, x, spec.epsilon);
  }
  return finish(x, std::move(xt), std::move(losses));
}

}  // namespace satkit::attacks
