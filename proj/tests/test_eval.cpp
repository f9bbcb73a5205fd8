#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "satkit/errors.hpp"
#include "satkit/eval.hpp"
#include "satkit/io.hpp"
#include "satkit/losses.hpp"
#include "satkit/rng.hpp"
#include "satkit/training.hpp"
#include "support.hpp"

using namespace satkit;
using attacks::AttackSpec;
using attacks::Family;
using models::InputSpec;
using models::Model;

namespace {

// Dataset handcrafted around a fixed linear model so FGSM outcomes are known
// analytically: the margin gradient has l1 norm 4, so at eps=0.1 a sample
// flips iff its clean margin is below 0.4.
struct Fixture {
  data::Dataset ds;
  Model model;
};

Fixture half_flip_fixture() {
  InputSpec in{1, 1, 2};
  Model m = Model::make("linear", in, 2, 0);
  for (auto& p : m.parameters()) {
    if (p.name == "layer1.weight") {
      (*p.tensor)[0] = 1.0;   // logit0 = x0 - x1
      (*p.tensor)[1] = -1.0;
      (*p.tensor)[2] = -1.0;  // logit1 = x1 - x0
      (*p.tensor)[3] = 1.0;
    } else {
      p.tensor->fill(0.0);
    }
  }
  data::Dataset ds;
  ds.name = "fixture";
  ds.num_classes = 2;
  auto add = [&](const std::string& id, double a, double b, int label) {
    data::Sample s;
    s.id = id;
    s.image = Tensor({1, 1, 2}, {a, b});
    s.label = label;
    ds.samples.push_back(std::move(s));
  };
  add("robust-0", 0.8, 0.3, 0);    // margin |2(x0-x1)| = 1.0 -> survives
  add("robust-1", 0.2, 0.75, 1);   // margin 1.1 -> survives
  add("fragile-0", 0.56, 0.5, 0);  // margin 0.12 -> flips
  add("fragile-1", 0.5, 0.6, 1);   // margin 0.2 -> flips
  ds.validate();
  return {std::move(ds), std::move(m)};
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("robust accuracy at zero budget equals clean accuracy for every family") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{0, 1}, 10}, 12);
  Model m = Model::make("mlp", InputSpec{1, 16, 16}, 2, 14);
  double clean = training::dataset_accuracy(m, ds);
  for (Family fam : {Family::fgsm, Family::pgd, Family::uniform, Family::trades,
                     Family::saliency}) {
    CAPTURE(attacks::family_name(fam));
    int steps = (fam == Family::pgd || fam == Family::trades) ? 3 : 1;
    AttackSpec spec = AttackSpec::make(fam, 0.0, steps);
    CHECK(eval::robust_accuracy(m, ds, spec, 5) == doctest::Approx(clean));
  }
}

TEST_CASE("hand-built fixture yields robust accuracy one half under fgsm") {
  auto fx = half_flip_fixture();
  CHECK(training::dataset_accuracy(fx.model, fx.ds) == doctest::Approx(1.0));
  AttackSpec spec = AttackSpec::make(Family::fgsm, 0.1);
  CHECK(eval::robust_accuracy(fx.model, fx.ds, spec, 0) == doctest::Approx(0.5));
}

TEST_CASE("nested pgd evaluation is monotone non-increasing in epsilon") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{3, 8}, 12}, 3);
  // a lightly trained model so the attack has structure to work with
  Model m = Model::make("mlp", InputSpec{1, 16, 16}, 2, 7);
  training::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.seed = 2;
  cfg.record_clean_accuracy = false;
  m = training::train(std::move(m), ds, cfg).model;

  std::vector<AttackSpec> specs;
  for (double e : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    specs.push_back(AttackSpec::make(Family::pgd, e / 255.0, 5));
  }
  auto report = eval::eval_grid(m, ds, specs, 11);
  REQUIRE(report.grid.size() == specs.size());
  for (std::size_t i = 1; i < report.grid.size(); ++i) {
    CHECK(report.grid[i].accuracy <= report.grid[i - 1].accuracy + 1e-12);
  }
  CHECK(report.grid.front().accuracy <= report.clean_accuracy + 1e-12);
}

TEST_CASE("grid reports are pure functions of their inputs") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{0, 1}, 6}, 3);
  Model m = Model::make("mlp", InputSpec{1, 16, 16}, 2, 9);
  std::vector<AttackSpec> specs = {AttackSpec::make(Family::pgd, 2.0 / 255.0, 5),
                                   AttackSpec::make(Family::uniform, 8.0 / 255.0),
                                   AttackSpec::make(Family::trades, 2.0 / 255.0, 5),
                                   AttackSpec::make(Family::saliency, 4.0 / 255.0)};
  auto a = eval::eval_grid(m, ds, specs, 21);
  auto b = eval::eval_grid(m, ds, specs, 21);
  REQUIRE(a.grid.size() == b.grid.size());
  for (std::size_t i = 0; i < a.grid.size(); ++i) {
    CHECK(a.grid[i].accuracy == b.grid[i].accuracy);
  }
  CHECK(a.clean_accuracy == b.clean_accuracy);
}

TEST_CASE("empty spec list reports clean accuracy only") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{0, 1}, 4}, 2);
  Model m = Model::make("linear", InputSpec{1, 16, 16}, 2, 1);
  auto report = eval::eval_grid(m, ds, {}, 0);
  CHECK(report.grid.empty());
  CHECK(report.clean_accuracy == doctest::Approx(training::dataset_accuracy(m, ds)));
  CHECK(report.n_eval == ds.size());
}

TEST_CASE("default grid matches the published evaluation layout") {
  auto specs = eval::default_grid();
  REQUIRE(specs.size() == 16);
  int pgd = 0, sal = 0, uni = 0, tra = 0;
  for (const auto& s : specs) {
    switch (s.family) {
      case Family::pgd:
        ++pgd;
        CHECK(s.steps == 5);
        break;
      case Family::saliency: ++sal; break;
      case Family::uniform: ++uni; break;
      case Family::trades: ++tra; break;
      default: FAIL("unexpected family");
    }
  }
  CHECK(pgd == 4);
  CHECK(sal == 4);
  CHECK(uni == 4);
  CHECK(tra == 4);
}

TEST_CASE("linearized robustness equals the analytic margin on linear models") {
  rng::Stream st(rng::key(31, "rho"));
  InputSpec in{1, 2, 2};
  for (int trial = 0; trial < 100; ++trial) {
    Model m = Model::make("linear", in, 3, 700 + static_cast<std::uint64_t>(trial));
    Tensor x({1, 2, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform();
    auto probe = eval::linearized_robustness(m, x);

    // analytic: min over rivals of margin / ||W_i - W_j||_2
    Tensor logits = m.forward(testsupport::batch1(x));
    auto params = m.parameters();
    const Tensor* W = nullptr;
    for (const auto& p : params) {
      if (p.name == "layer1.weight") W = p.tensor;
    }
    REQUIRE(W != nullptr);
    std::size_t i_star = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (logits.at2(0, k) > logits.at2(0, i_star)) i_star = k;
    }
    double best = 1e300;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j == i_star) continue;
      double margin = logits.at2(0, i_star) - logits.at2(0, j);
      double norm = 0.0;
      for (std::size_t d = 0; d < 4; ++d) {
        double diff = (*W)[i_star * 4 + d] - (*W)[j * 4 + d];
        norm += diff * diff;
      }
      best = std::min(best, margin / std::sqrt(norm));
    }
    CHECK(probe.i_star == static_cast<int>(i_star));
    CHECK(std::fabs(probe.rho - best) <= 1e-6);
    CHECK(probe.j_star != probe.i_star);
    CHECK(probe.rho >= 0.0);
  }
}

TEST_CASE("linearized robustness uses the argmax class, not the label") {
  auto fx = half_flip_fixture();
  // x with x1 > x0 is predicted class 1 regardless of any labeling
  Tensor x({1, 1, 2}, {0.2, 0.9});
  auto probe = eval::linearized_robustness(fx.model, x);
  CHECK(probe.i_star == 1);
  CHECK(probe.j_star == 0);
}

TEST_CASE("linearized robustness is invariant to positive logit scaling") {
  InputSpec in{1, 2, 2};
  Model m = Model::make("linear", in, 3, 77);
  Tensor x = Tensor({1, 2, 2}, {0.3, 0.6, 0.2, 0.9});
  auto before = eval::linearized_robustness(m, x);
  for (auto& p : m.parameters()) {
    for (std::size_t i = 0; i < p.tensor->size(); ++i) (*p.tensor)[i] *= 5.0;
  }
  auto after = eval::linearized_robustness(m, x);
  CHECK(after.rho == doctest::Approx(before.rho).epsilon(1e-12));
  CHECK(after.j_star == before.j_star);
}

TEST_CASE("identical rival gradients are flagged, not divided by") {
  InputSpec in{1, 1, 2};
  Model m = Model::make("linear", in, 2, 0);
  for (auto& p : m.parameters()) {
    p.tensor->fill(0.0);
    if (p.name == "layer1.bias") {
      (*p.tensor)[0] = 1.0;  // constant logit gap, zero gradient everywhere
    }
  }
  Tensor x({1, 1, 2}, {0.5, 0.5});
  auto probe = eval::linearized_robustness(m, x);
  CHECK(probe.degenerate);
  CHECK(std::isinf(probe.rho));
}

TEST_CASE("report serialization carries the csv schema") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{0, 1}, 4}, 2);
  Model m = Model::make("linear", InputSpec{1, 16, 16}, 2, 1);
  auto report = eval::eval_grid(m, ds, {AttackSpec::make(Family::pgd, 2.0 / 255.0, 5)}, 1);
  report.model_id = "linear|test";
  auto dir = std::filesystem::temp_directory_path() / "satkit-test-report";
  std::filesystem::remove_all(dir);
  report.write_csv(dir / "report.csv");
  report.write_json(dir / "report.json");
  auto csv = io::read_text(dir / "report.csv");
  CHECK(csv.starts_with("attack,steps,epsilon,accuracy\n"));
  CHECK(csv.find("clean,0,0,") != std::string::npos);
  CHECK(csv.find("pgd,5,") != std::string::npos);
  auto j = nlohmann::json::parse(io::read_text(dir / "report.json"));
  CHECK(j.at("model_id") == "linear|test");
  CHECK(j.at("grid").size() == 1);
}

TEST_CASE("epoch timing: standard is the fastest mode") {
  auto ds = data::load_dataset("digits", data::SubsetSpec{{0, 1}, 12}, 6);
  Model m = Model::make("cnn", InputSpec{1, 16, 16}, 2, 2);
  auto spec = attacks::AttackSpec::make(Family::pgd, 8.0 / 255.0, 5);

  auto run_mode = [&](training::TrainMode mode) {
    Model clone = m.clone();
    training::Adam adam(1e-3);
    int epoch = 0;
    return eval::time_epochs(
        [&]() {
          auto bs = data::batches(ds, 8, 1, static_cast<std::uint64_t>(epoch++));
          for (std::size_t bi = 0; bi < bs.size(); ++bi) {
            Tensor x_in = training::adversarial_input(clone, bs[bi], mode, spec, 1, epoch,
                                                      static_cast<int>(bi));
            training::ce_update(clone, adam, x_in, bs[bi].labels);
          }
        },
        3);
  };
  auto std_t = run_mode(training::TrainMode::standard);
  auto pgd_t = run_mode(training::TrainMode::pgd_at);
  CHECK(std_t.trials == 3);
  CHECK(std_t.variance >= 0.0);
  CHECK(std_t.median_seconds < pgd_t.median_seconds);
}

}  // TEST_SUITE
