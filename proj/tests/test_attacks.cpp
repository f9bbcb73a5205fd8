#include <doctest.h>

#include <cmath>

#include "satkit/attacks.hpp"
#include "satkit/errors.hpp"
#include "satkit/losses.hpp"
#include "satkit/rng.hpp"
#include "support.hpp"

using namespace satkit;
using attacks::AttackSpec;
using attacks::Family;
using models::GradTarget;
using models::InputSpec;
using models::Model;

namespace {

// 2-class logistic-style linear model on 2 pixels with logits [w.x, -w.x],
// so the positive-class probability is sigmoid(2 w.x).
Model binary_linear(double w0, double w1) {
  Model m = Model::make("linear", InputSpec{1, 1, 2}, 2, 0);
  auto params = m.parameters();
  for (auto& p : params) {
    if (p.name == "layer1.weight") {
      (*p.tensor)[0] = w0;
      (*p.tensor)[1] = w1;
      (*p.tensor)[2] = -w0;
      (*p.tensor)[3] = -w1;
    } else {
      p.tensor->fill(0.0);
    }
  }
  return m;
}

Tensor pixel2(double a, double b) {
  Tensor x({1, 1, 1, 2});
  x[0] = a;
  x[1] = b;
  return x;
}

Model random_model(const std::string& arch, const InputSpec& in, int k, std::uint64_t seed) {
  return Model::make(arch, in, k, seed);
}

double linf_delta(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("fgsm with zero budget is the identity") {
  Model m = binary_linear(1.0, -2.0);
  Tensor x = pixel2(0.5, 0.5);
  auto r = attacks::fgsm(m, x, {0}, AttackSpec::make(Family::fgsm, 0.0));
  CHECK(r.x_adv.vec() == x.vec());
  CHECK(linf_norm(r.delta) == 0.0);
}

TEST_CASE("fgsm on the logistic fixture moves [0.5,0.5] to [0.4,0.6]") {
  // w=[1,-2], true class positive: grad_x L = (sigma-1)*w', sign = [-1,+1]
  Model m = binary_linear(1.0, -2.0);
  Tensor x = pixel2(0.5, 0.5);
  auto r = attacks::fgsm(m, x, {0}, AttackSpec::make(Family::fgsm, 0.1));
  CHECK(r.x_adv[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r.x_adv[1] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("fgsm never decreases the loss of a linear model") {
  rng::Stream st(rng::key(7, "fgsm-loss"));
  for (int trial = 0; trial < 30; ++trial) {
    InputSpec in{1, 2, 3};
    Model m = random_model("linear", in, 3, 100 + static_cast<std::uint64_t>(trial));
    Tensor x({1, 1, 2, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform(0.2, 0.8);
    std::vector<int> y = {static_cast<int>(st.uniform_index(3))};
    auto r = attacks::fgsm(m, x, y, AttackSpec::make(Family::fgsm, 0.05));
    double before = losses::cross_entropy(m.forward(x), y).value;
    double after = losses::cross_entropy(m.forward(r.x_adv), y).value;
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("pgd with one step of size epsilon equals fgsm exactly") {
  for (std::uint64_t seed : {1, 2, 3}) {
    InputSpec in{1, 4, 4};
    Model m = random_model("mlp", in, 3, seed);
    Tensor x({2, 1, 4, 4});
    rng::Stream st(rng::key(seed, "pgd-fgsm"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform();
    std::vector<int> y = {0, 2};
    auto a = attacks::fgsm(m, x, y, AttackSpec::make(Family::fgsm, 0.03));
    auto b = attacks::pgd(m, x, y, AttackSpec::make(Family::pgd, 0.03, 1, 0.03));
    CHECK(a.x_adv.vec() == b.x_adv.vec());
  }
}

TEST_CASE("pgd reaches the exhaustive-corner maximizer on 2-pixel logistic models") {
  rng::Stream st(rng::key(11, "corner"));
  const double eps = 0.1;
  for (int trial = 0; trial < 40; ++trial) {
    double w0 = st.uniform(-2.0, 2.0);
    double w1 = st.uniform(-2.0, 2.0);
    if (std::fabs(w0) < 0.05 || std::fabs(w1) < 0.05) continue;  // avoid sign(0) ties
    Model m = binary_linear(w0, w1);
    Tensor x = pixel2(st.uniform(0.2, 0.8), st.uniform(0.2, 0.8));
    std::vector<int> y = {static_cast<int>(st.uniform_index(2))};
    auto r = attacks::pgd(m, x, y, AttackSpec::make(Family::pgd, eps, 5));  // step eps/4

    double best = -1e300;
    Tensor best_corner = x;
    for (int sx : {-1, 1}) {
      for (int sy : {-1, 1}) {
        Tensor corner = pixel2(x[0] + sx * eps, x[1] + sy * eps);
        double loss = losses::cross_entropy(m.forward(corner), y).value;
        if (loss > best) {
          best = loss;
          best_corner = corner;
        }
      }
    }
    CHECK(r.x_adv[0] == doctest::Approx(best_corner[0]).epsilon(1e-12));
    CHECK(r.x_adv[1] == doctest::Approx(best_corner[1]).epsilon(1e-12));
  }
}

TEST_CASE("pgd iterates stay inside the epsilon box and value range") {
  rng::Stream st(rng::key(13, "budget"));
  for (int trial = 0; trial < 20; ++trial) {
    InputSpec in{1, 4, 4};
    Model m = random_model(trial % 2 ? "mlp" : "linear", in, 2, 50 + trial);
    Tensor x({1, 1, 4, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform();
    double eps = st.uniform(0.0, 0.3);
    // large steps stress the projection
    auto r = attacks::pgd(m, x, {0}, AttackSpec::make(Family::pgd, eps, 7, eps));
    CHECK(linf_norm(r.delta) <= eps + 1e-6);
    for (std::size_t i = 0; i < r.x_adv.size(); ++i) {
      CHECK(r.x_adv[i] >= 0.0);
      CHECK(r.x_adv[i] <= 1.0);
    }
  }
}

TEST_CASE("uniform noise: identity at zero, reproducible, correct moments") {
  Tensor x = Tensor::full({1, 1, 8, 8}, 0.5);
  auto r0 = attacks::uniform_noise(x, AttackSpec::make(Family::uniform, 0.0));
  CHECK(r0.x_adv.vec() == x.vec());

  AttackSpec s = AttackSpec::make(Family::uniform, 0.25);
  s.seed = 42;
  auto a = attacks::uniform_noise(x, s);
  auto b = attacks::uniform_noise(x, s);
  CHECK(a.x_adv.vec() == b.x_adv.vec());

  // moments of U[-eps, eps] over 1e6 draws
  const double eps = 0.25;
  Tensor big = Tensor::full({16, 1, 250, 250}, 0.5);
  AttackSpec sm = AttackSpec::make(Family::uniform, eps);
  sm.seed = 7;
  auto rm = attacks::uniform_noise(big, sm);
  const std::size_t n = rm.delta.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += rm.delta[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (rm.delta[i] - mean) * (rm.delta[i] - mean);
  var /= static_cast<double>(n);
  double sigma_mean = eps / std::sqrt(3.0) / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(mean) <= 3.0 * sigma_mean);
  CHECK(var == doctest::Approx(eps * eps / 3.0).epsilon(0.01));
}

TEST_CASE("saliency attack leaves inputs alone at zero budget") {
  Model m = binary_linear(1.0, 1.0);
  Tensor x = pixel2(0.3, 0.7);
  auto r = attacks::saliency_attack(m, x, AttackSpec::make(Family::saliency, 0.0));
  CHECK(r.x_adv.vec() == x.vec());
}

TEST_CASE("saliency attack drops the linear true-class logit by eps * l1(W_row)") {
  rng::Stream st(rng::key(17, "sal-linear"));
  for (int trial = 0; trial < 25; ++trial) {
    InputSpec in{1, 3, 3};
    Model m = random_model("linear", in, 3, 200 + trial);
    Tensor x({1, 1, 3, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform(0.3, 0.7);
    const double eps = 0.1;  // interior x keeps the [0,1] clip inactive
    Tensor logits = m.forward(x);
    auto pred = losses::argmax_rows(logits);
    auto r = attacks::saliency_attack(m, x, AttackSpec::make(Family::saliency, eps));
    Tensor logits_adv = m.forward(r.x_adv);
    double l1 = 0.0;
    for (const auto& p : m.parameters()) {
      if (p.name == "layer1.weight") {
        for (std::size_t i = 0; i < 9; ++i) {
          l1 += std::fabs((*p.tensor)[static_cast<std::size_t>(pred[0]) * 9 + i]);
        }
      }
    }
    double drop = logits.at2(0, static_cast<std::size_t>(pred[0])) -
                  logits_adv.at2(0, static_cast<std::size_t>(pred[0]));
    CHECK(std::fabs(drop - eps * l1) <= 1e-9);
  }
}

TEST_CASE("saliency attack equals fgsm for well-classified binary logistic inputs") {
  // With symmetric binary logits the CE gradient is a negative multiple of
  // the true-class logit gradient, so the sign steps coincide.
  Model m = binary_linear(1.3, -0.4);
  Tensor x = pixel2(0.6, 0.45);  // classified positive
  auto pred = losses::argmax_rows(m.forward(x));
  REQUIRE(pred[0] == 0);
  auto a = attacks::fgsm(m, x, {0}, AttackSpec::make(Family::fgsm, 0.07));
  auto b = attacks::saliency_attack(m, x, AttackSpec::make(Family::saliency, 0.07));
  CHECK(a.x_adv.vec() == b.x_adv.vec());
}

TEST_CASE("stored signed maps drive the saliency attack") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 0.5);
  saliency::SaliencyMap map;
  map.values = Tensor({1, 2, 2}, {1.0, -1.0, 0.0, 1.0});
  map.kind = saliency::MapKind::signed_;
  auto r = attacks::saliency_attack(x, {&map}, AttackSpec::make(Family::saliency, 0.1));
  CHECK(r.x_adv[0] == doctest::Approx(0.4));
  CHECK(r.x_adv[1] == doctest::Approx(0.6));
  CHECK(r.x_adv[2] == doctest::Approx(0.5));
  CHECK(r.x_adv[3] == doctest::Approx(0.4));

  std::vector<const saliency::SaliencyMap*> missing = {nullptr};
  CHECK_THROWS_AS(attacks::saliency_attack(x, missing, AttackSpec::make(Family::saliency, 0.1)),
                  MissingArtifactError);
}

TEST_CASE("kl divergence matches the hand-computed value") {
  // p=[0.9,0.1], q=[0.5,0.5]: KL = 0.9 ln 1.8 + 0.1 ln 0.2
  Tensor pl({1, 2}, {std::log(0.9), std::log(0.1)});
  Tensor ql({1, 2}, {std::log(0.5), std::log(0.5)});
  auto kl = losses::kl_to_reference(pl, ql);
  double expected = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  CHECK(kl.value == doctest::Approx(expected).epsilon(1e-9));
  // KL(p||p) = 0
  CHECK(losses::kl_to_reference(pl, pl).value == doctest::Approx(0.0));
}

TEST_CASE("trades perturbation honours the budget and increases KL on convex objectives") {
  rng::Stream st(rng::key(19, "trades"));
  for (int trial = 0; trial < 10; ++trial) {
    InputSpec in{1, 3, 3};
    Model m = random_model("linear", in, 3, 300 + trial);
    Tensor x({1, 1, 3, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform(0.2, 0.8);
    AttackSpec s = AttackSpec::make(Family::trades, 0.06, 5);
    s.seed = 400 + static_cast<std::uint64_t>(trial);
    auto r = attacks::trades_perturbation(m, x, s);
    CHECK(linf_norm(r.delta) <= s.epsilon + 1e-6);
    REQUIRE(r.per_step_loss.size() == 5);
    // KL wrt x' is convex for linear logits, so every projected ascent step
    // is non-decreasing; the final value beats the noisy start.
    for (std::size_t t = 1; t < r.per_step_loss.size(); ++t) {
      CHECK(r.per_step_loss[t] >= r.per_step_loss[t - 1] - 1e-12);
    }
    double final_kl =
        losses::kl_to_reference(m.forward(x), m.forward(r.x_adv)).value;
    CHECK(final_kl >= r.per_step_loss.front() - 1e-12);
  }
}

TEST_CASE("trades with zero budget returns the clean input") {
  Model m = binary_linear(0.7, 0.2);
  Tensor x = pixel2(0.5, 0.5);
  AttackSpec s = AttackSpec::make(Family::trades, 0.0, 3);
  auto r = attacks::trades_perturbation(m, x, s);
  CHECK(r.x_adv.vec() == x.vec());
}

TEST_CASE("spec validation rejects malformed attacks") {
  AttackSpec s;
  s.family = Family::pgd;
  s.epsilon = -0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.epsilon = 0.1;
  s.steps = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("all attack families satisfy budget and range invariants") {
  rng::Stream st(rng::key(23, "invariants"));
  int counted = 0;
  for (int trial = 0; trial < 60; ++trial) {
    InputSpec in{1, 4, 4};
    std::string arch = trial % 3 == 0 ? "linear" : (trial % 3 == 1 ? "mlp" : "cnn");
    InputSpec used = arch == "cnn" ? InputSpec{1, 16, 16} : in;
    Model m = random_model(arch, used, 2, 500 + trial);
    Tensor x({1, 1, used.height, used.width});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform();
    double eps = st.uniform(0.0, 0.2);
    std::vector<int> y = {static_cast<int>(st.uniform_index(2))};
    std::vector<attacks::AttackResult> results;
    results.push_back(attacks::fgsm(m, x, y, AttackSpec::make(Family::fgsm, eps)));
    results.push_back(attacks::pgd(m, x, y, AttackSpec::make(Family::pgd, eps, 3)));
    AttackSpec u = AttackSpec::make(Family::uniform, eps);
    u.seed = trial;
    results.push_back(attacks::uniform_noise(x, u));
    results.push_back(attacks::saliency_attack(m, x, AttackSpec::make(Family::saliency, eps)));
    AttackSpec tr = AttackSpec::make(Family::trades, eps, 3);
    tr.seed = trial;
    results.push_back(attacks::trades_perturbation(m, x, tr));
    for (const auto& r : results) {
      CHECK(linf_norm(r.delta) <= eps + 1e-6);
      for (std::size_t i = 0; i < r.x_adv.size(); ++i) {
        CHECK(r.x_adv[i] >= 0.0);
        CHECK(r.x_adv[i] <= 1.0);
      }
      ++counted;
    }
  }
  CHECK(counted == 300);
}

}  // TEST_SUITE
