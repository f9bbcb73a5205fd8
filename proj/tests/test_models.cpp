#include <doctest.h>

#include <filesystem>

#include "satkit/checkpoint.hpp"
#include "satkit/errors.hpp"
#include "satkit/io.hpp"
#include "satkit/losses.hpp"
#include "satkit/model.hpp"
#include "satkit/rng.hpp"
#include "support.hpp"

using namespace satkit;
using models::GradTarget;
using models::InputSpec;
using models::Model;

namespace {

Tensor random_image(const InputSpec& in, std::uint64_t seed) {
  Tensor x({1, in.channels, in.height, in.width});
  rng::Stream st(rng::key(seed, "img"));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = st.uniform();
  return x;
}

void set_dense(Model& m, const std::string& name, const std::vector<double>& values) {
  for (auto& p : m.parameters()) {
    if (p.name == name) {
      REQUIRE(p.tensor->size() == values.size());
      std::copy(values.begin(), values.end(), p.tensor->data());
      return;
    }
  }
  FAIL("no parameter named " << name);
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("zero linear head maps any input to zero logits") {
  InputSpec in{1, 4, 4};
  Model m = Model::make("linear", in, 3, 0);
  for (auto& p : m.parameters()) p.tensor->fill(0.0);
  Tensor x = random_image(in, 1);
  Tensor logits = m.forward(x);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("forward is deterministic and batch independent") {
  InputSpec in{1, 16, 16};
  Model m = Model::make("cnn", in, 4, 11);
  Tensor x8({8, in.channels, in.height, in.width});
  rng::Stream st(rng::key(2, "batch"));
  for (std::size_t i = 0; i < x8.size(); ++i) x8[i] = st.uniform();
  Tensor out8 = m.forward(x8);
  Tensor again = m.forward(x8);
  CHECK(out8.vec() == again.vec());

  // sample 3 alone vs inside the batch
  Tensor x1({1, in.channels, in.height, in.width});
  const std::size_t per = in.channels * in.height * in.width;
  std::copy(x8.data() + 3 * per, x8.data() + 4 * per, x1.data());
  Tensor out1 = m.forward(x1);
  for (std::size_t k = 0; k < out1.dim(1); ++k) {
    CHECK(std::fabs(out1.at2(0, k) - out8.at2(3, k)) < 1e-6);
  }
}

TEST_CASE("logits are continuous in the input") {
  InputSpec in{1, 16, 16};
  Model m = Model::make("mlp", in, 3, 5);
  Tensor x = random_image(in, 3);
  Tensor base = m.forward(x);
  double prev = 1e9;
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    Tensor xp = x;
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += eps;
    double diff = max_abs_diff(m.forward(xp), base);
    CHECK(diff < prev);
    prev = diff;
  }
  CHECK(prev < 1e-4);
}

TEST_CASE("forward rejects shape mismatches") {
  Model m = Model::make("mlp", InputSpec{1, 16, 16}, 2, 0);
  Tensor wrong({1, 3, 16, 16});
  CHECK_THROWS_AS(m.forward(wrong), ShapeError);
}

TEST_CASE("linear model input gradient is the selected weight row") {
  InputSpec in{1, 2, 2};
  Model m = Model::make("linear", in, 3, 7);
  std::vector<double> w = {0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 3.0, -2.0, 0.75, 0.1, -0.1};
  set_dense(m, "layer1.weight", w);
  Tensor x = random_image(in, 9);
  for (int cls = 0; cls < 3; ++cls) {
    Tensor g = models::input_gradient(m, x, GradTarget::logit(cls));
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(g[i] == w[static_cast<std::size_t>(cls) * 4 + i]);
    }
  }
}

TEST_CASE("input gradients match central finite differences off ReLU kinks") {
  InputSpec in{1, 4, 4};
  Model m = Model::make("mlp", in, 3, 13);
  Tensor x = random_image(in, 21);
  const double h = 1e-5;

  SUBCASE("logit target") {
    Tensor g = models::input_gradient(m, x, GradTarget::logit(1));
    std::size_t checked = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!testsupport::same_linear_piece(m, x, i, h)) continue;
      double fd = testsupport::central_diff(
          x, i, h, [&](const Tensor& xi) { return m.forward(xi).at2(0, 1); });
      CHECK(testsupport::rel_err(g[i], fd) <= 1e-4);
      ++checked;
    }
    CHECK(checked >= x.size() / 2);
  }

  SUBCASE("loss target") {
    std::vector<int> y = {2};
    Tensor g = models::input_gradient(m, x, GradTarget::loss(y));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!testsupport::same_linear_piece(m, x, i, h)) continue;
      double fd = testsupport::central_diff(x, i, h, [&](const Tensor& xi) {
        return losses::cross_entropy(m.forward(xi), y).value;
      });
      CHECK(testsupport::rel_err(g[i], fd) <= 1e-4);
    }
  }
}

TEST_CASE("finite-difference agreement holds for every zoo architecture") {
  const double h = 1e-5;
  for (const auto& arch : Model::zoo()) {
    CAPTURE(arch);
    InputSpec in{3, 8, 8};
    Model m = Model::make(arch, in, 2, 3);
    Tensor x = random_image(in, 31);
    Tensor g = models::input_gradient(m, x, GradTarget::logit(0));
    std::size_t checked = 0;
    for (std::size_t i = 0; i < x.size(); i += 17) {  // sparse probe, keeps runtime low
      if (!testsupport::same_linear_piece(m, x, i, h)) continue;
      double fd = testsupport::central_diff(
          x, i, h, [&](const Tensor& xi) { return m.forward(xi).at2(0, 0); });
      CHECK(testsupport::rel_err(g[i], fd) <= 1e-4);
      ++checked;
    }
    CHECK(checked > 0);
  }
}

TEST_CASE("saturated cross-entropy has vanishing gradient") {
  InputSpec in{1, 2, 2};
  Model m = Model::make("linear", in, 2, 1);
  // huge correct-class margin saturates softmax
  set_dense(m, "layer1.weight", {50.0, 50.0, 50.0, 50.0, -50.0, -50.0, -50.0, -50.0});
  Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor g = models::input_gradient(m, x, GradTarget::loss({0}));
  CHECK(linf_norm(g) < 1e-10);
}

TEST_CASE("feature tap exposes activations and logit gradients") {
  InputSpec in{1, 16, 16};
  Model m = Model::make("cnn", in, 3, 17);
  Tensor x = random_image(in, 4);
  auto tap = models::feature_tap(m, x, 1);
  REQUIRE(tap.activations.rank() == 4);
  CHECK(tap.activations.dim(0) == 1);
  CHECK(tap.activations.dim(1) == 64);
  CHECK(tap.activations.dim(2) == 4);
  CHECK(tap.activations.dim(3) == 4);
  CHECK(tap.grad.shape() == tap.activations.shape());

  // Everything above the tap is linear (GAP + dense), so the directional
  // derivative identity holds exactly: dPhi = sum dPhi/dA * dA.
  Tensor x2 = x;
  rng::Stream st(rng::key(5, "nudge"));
  for (std::size_t i = 0; i < x2.size(); ++i) x2[i] += st.uniform(-1e-3, 1e-3);
  auto tap2 = models::feature_tap(m, x2, 1);
  double lhs = m.forward(x2).at2(0, 1) - m.forward(x).at2(0, 1);
  double rhs = 0.0;
  for (std::size_t i = 0; i < tap.grad.size(); ++i) {
    rhs += tap.grad[i] * (tap2.activations[i] - tap.activations[i]);
  }
  CHECK(std::fabs(lhs - rhs) < 1e-9);
}

TEST_CASE("zero input on a bias-free net yields zero tapped activations") {
  InputSpec in{1, 16, 16};
  Model m = Model::make("cnn", in, 2, 23);  // biases are zero-initialized
  Tensor x({1, 1, 16, 16});
  auto tap = models::feature_tap(m, x, 0);
  for (std::size_t i = 0; i < tap.activations.size(); ++i) CHECK(tap.activations[i] == 0.0);
}

TEST_CASE("models without conv layers reject feature taps") {
  Model m = Model::make("mlp", InputSpec{1, 4, 4}, 2, 0);
  Tensor x = random_image(InputSpec{1, 4, 4}, 0);
  CHECK_THROWS_AS(models::feature_tap(m, x, 0), ConfigError);
}

TEST_CASE("checkpoints reproduce forwards bit-exactly") {
  auto path = std::filesystem::temp_directory_path() / "satkit-test-ckpt" / "model.ckpt";
  std::filesystem::remove_all(path.parent_path());
  for (const auto& arch : {"mlp", "cnn", "mini_resnet"}) {
    CAPTURE(arch);
    InputSpec in{3, 16, 16};
    Model m = Model::make(arch, in, 3, 99);
    models::save_checkpoint(m, path, "std", {{"epochs", 0}, {"seed", 99}});
    auto loaded = models::load_checkpoint(path);
    CHECK(loaded.info.training_mode_tag == "std");
    CHECK(loaded.info.architecture_id == arch);
    CHECK(loaded.info.metadata.at("seed") == 99);
    Tensor x = random_image(in, 12);
    CHECK(m.forward(x).vec() == loaded.model.forward(x).vec());
  }
}

TEST_CASE("checkpoint corruption is detected") {
  auto dir = std::filesystem::temp_directory_path() / "satkit-test-ckpt2";
  std::filesystem::remove_all(dir);
  auto path = dir / "model.ckpt";
  Model m = Model::make("mlp", InputSpec{1, 4, 4}, 2, 1);
  models::save_checkpoint(m, path, "std");
  auto bytes = io::read_file(path);
  bytes[bytes.size() - 1] = static_cast<std::byte>(static_cast<unsigned char>(bytes.back()) ^ 1);
  io::write_file(path, bytes);
  CHECK_THROWS_AS(models::load_checkpoint(path), MissingArtifactError);
}

}  // TEST_SUITE
