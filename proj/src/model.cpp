#include "satkit/model.hpp"

#include <algorithm>
#include <cmath>

#include "satkit/errors.hpp"

namespace satkit::models {

const std::vector<std::string>& Model::zoo() {
  static const std::vector<std::string> kZoo = {"linear", "mlp", "cnn", "mini_resnet"};
  return kZoo;
}

Model Model::make(const std::string& architecture_id, const InputSpec& input, int num_classes,
                  std::uint64_t init_seed) {
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  Model m;
  m.architecture_id_ = architecture_id;
  m.input_ = input;
  m.num_classes_ = num_classes;
  const std::size_t flat = input.channels * input.height * input.width;

  auto add = [&](std::unique_ptr<nn::Layer> l) { m.layers_.push_back(std::move(l)); };

  if (architecture_id == "linear") {
    add(std::make_unique<nn::Flatten>());
    add(std::make_unique<nn::Dense>(flat, static_cast<std::size_t>(num_classes)));
  } else if (architecture_id == "mlp") {
    add(std::make_unique<nn::Flatten>());
    add(std::make_unique<nn::Dense>(flat, 64));
    add(std::make_unique<nn::ReLU>());
    add(std::make_unique<nn::Dense>(64, static_cast<std::size_t>(num_classes)));
  } else if (architecture_id == "cnn") {
    // 4-conv desk-scale student; taps the last ReLU for CAM methods.
    add(std::make_unique<nn::Conv2d>(input.channels, 16, 3, 1, 1));
    add(std::make_unique<nn::ReLU>());
    add(std::make_unique<nn::Conv2d>(16, 32, 3, 2, 1));
    add(std::make_unique<nn::ReLU>());
    add(std::make_unique<nn::Conv2d>(32, 64, 3, 1, 1));
    add(std::make_unique<nn::ReLU>());
    add(std::make_unique<nn::Conv2d>(64, 64, 3, 2, 1));
    add(std::make_unique<nn::ReLU>());
    m.tap_layer_ = static_cast<int>(m.layers_.size()) - 1;
    add(std::make_unique<nn::GlobalAvgPool>());
    add(std::make_unique<nn::Dense>(64, static_cast<std::size_t>(num_classes)));
  } else if (architecture_id == "mini_resnet") {
    // 8-block desk-scale teacher; three stages of widths 8/16/32.
    add(std::make_unique<nn::Conv2d>(input.channels, 8, 3, 1, 1));
    add(std::make_unique<nn::ReLU>());
    add(std::make_unique<nn::ResidualBlock>(8, 8, 1));
    add(std::make_unique<nn::ResidualBlock>(8, 8, 1));
    add(std::make_unique<nn::ResidualBlock>(8, 8, 1));
    add(std::make_unique<nn::ResidualBlock>(8, 16, 2));
    add(std::make_unique<nn::ResidualBlock>(16, 16, 1));
    add(std::make_unique<nn::ResidualBlock>(16, 32, 2));
    add(std::make_unique<nn::ResidualBlock>(32, 32, 1));
    add(std::make_unique<nn::ResidualBlock>(32, 32, 1));
    m.tap_layer_ = static_cast<int>(m.layers_.size()) - 1;
    add(std::make_unique<nn::GlobalAvgPool>());
    add(std::make_unique<nn::Dense>(32, static_cast<std::size_t>(num_classes)));
  } else {
    throw ConfigError("unknown architecture: " + architecture_id);
  }

  rng::Stream st(rng::key(init_seed, "param-init"));
  for (auto& l : m.layers_) l->init_params(st);

  m.param_offsets_.resize(m.layers_.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    m.param_offsets_[i] = off;
    off += m.layers_[i]->num_param_tensors();
  }
  return m;
}

Model Model::clone_impl() const {
  Model m;
  m.architecture_id_ = architecture_id_;
  m.input_ = input_;
  m.num_classes_ = num_classes_;
  m.tap_layer_ = tap_layer_;
  m.param_offsets_ = param_offsets_;
  m.layers_.reserve(layers_.size());
  for (const auto& l : layers_) m.layers_.push_back(l->clone());
  return m;
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != input_.channels || x.dim(2) != input_.height ||
      x.dim(3) != input_.width) {
    throw ShapeError("model input must be [B," + std::to_string(input_.channels) + "," +
                     std::to_string(input_.height) + "," + std::to_string(input_.width) + "]");
  }
  if (!x.all_finite()) throw NumericalError("model input contains non-finite values");
}

Tensor Model::forward(const Tensor& x) const {
  check_input(x);
  Tensor h = x;
  for (const auto& l : layers_) h = l->forward(h, nullptr);
  if (!h.all_finite()) throw NumericalError("forward produced non-finite logits");
  return h;
}

Tensor Model::forward(const Tensor& x, nn::Trace& trace) const {
  check_input(x);
  trace.assign(layers_.size(), nn::Cache{});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, &trace[i]);
    trace[i].y = h;
  }
  if (!h.all_finite()) throw NumericalError("forward produced non-finite logits");
  return h;
}

Tensor Model::backward(const nn::Trace& trace, const Tensor& dlogits,
                       const nn::BackwardOptions& opt, ParamGrads* param_grads,
                       int stop_after_layer) const {
  if (trace.size() != layers_.size()) throw ShapeError("trace does not match model");
  Tensor d = dlogits;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    if (i == stop_after_layer) return d;
    std::span<Tensor> slots;
    if (param_grads) {
      slots = std::span<Tensor>(param_grads->grads.data() + param_offsets_[i],
                                layers_[i]->num_param_tensors());
    }
    d = layers_[i]->backward(d, trace[i], opt, slots);
  }
  return d;
}

std::vector<nn::ParamRef> Model::parameters() {
  std::vector<nn::ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_params("layer" + std::to_string(i), out);
  }
  return out;
}

std::vector<nn::ParamRef> Model::parameters() const {
  return const_cast<Model*>(this)->parameters();
}

ParamGrads Model::zero_grads() const {
  ParamGrads g;
  for (const auto& p : parameters()) g.grads.push_back(Tensor::zeros(p.tensor->shape()));
  return g;
}

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

Tensor input_gradient(const Model& model, const Tensor& x, const GradTarget& target) {
  nn::Trace trace;
  Tensor logits = model.forward(x, trace);
  const std::size_t B = logits.dim(0);
  const std::size_t K = logits.dim(1);
  auto class_of = [&](std::size_t b) -> int {
    int c = target.classes.size() == 1 ? target.classes[0] : target.classes.at(b);
    if (c < 0 || c >= static_cast<int>(K)) throw ConfigError("target class out of range");
    return c;
  };
  Tensor dlogits({B, K});
  if (target.kind == GradTarget::Kind::logit) {
    for (std::size_t b = 0; b < B; ++b) dlogits.at2(b, static_cast<std::size_t>(class_of(b))) = 1.0;
  } else {
    // mean cross-entropy: d/dlogits = (softmax - onehot)/B
    for (std::size_t b = 0; b < B; ++b) {
      double mx = logits.at2(b, 0);
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(b, k));
      double z = 0.0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at2(b, k) - mx);
      for (std::size_t k = 0; k < K; ++k) {
        dlogits.at2(b, k) = std::exp(logits.at2(b, k) - mx) / z / static_cast<double>(B);
      }
      dlogits.at2(b, static_cast<std::size_t>(class_of(b))) -= 1.0 / static_cast<double>(B);
    }
  }
  return model.backward(trace, dlogits, {});
}

FeatureTap feature_tap(const Model& model, const Tensor& x, int class_index) {
  if (!model.has_feature_tap()) {
    throw ConfigError("model '" + model.architecture_id() + "' declares no conv feature tap");
  }
  if (class_index < 0 || class_index >= model.num_classes()) {
    throw ConfigError("feature tap class out of range");
  }
  nn::Trace trace;
  Tensor logits = model.forward(x, trace);
  Tensor dlogits(logits.shape());
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    dlogits.at2(b, static_cast<std::size_t>(class_index)) = 1.0;
  }
  FeatureTap tap;
  tap.activations = trace[static_cast<std::size_t>(model.tap_layer())].y;
  tap.grad = model.backward(trace, dlogits, {}, nullptr, model.tap_layer());
  return tap;
}

}  // namespace satkit::models
