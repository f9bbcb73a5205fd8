#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "satkit/nn.hpp"
#include "satkit/tensor.hpp"

namespace satkit::models {

struct InputSpec {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  bool operator==(const InputSpec&) const = default;
};

// Gradient selection for input_gradient: either one logit per sample or the
// mean cross-entropy loss over the batch.
struct GradTarget {
  enum class Kind { logit, loss };
  Kind kind = Kind::logit;
  std::vector<int> classes;  // size 1 (broadcast) or B

  static GradTarget logit(int class_index) { return {Kind::logit, {class_index}}; }
  static GradTarget logit(std::vector<int> per_sample) {
    return {Kind::logit, std::move(per_sample)};
  }
  static GradTarget loss(std::vector<int> labels) { return {Kind::loss, std::move(labels)}; }
};

struct ParamGrads {
  std::vector<Tensor> grads;  // aligned with Model::parameters() order
};

// A ReLU classifier from the zoo: "linear", "mlp", "cnn", "mini_resnet".
// Logits are never softmaxed inside the model. Parameters are plain double
// tensors; forwards are deterministic functions of (params, input).
class Model {
 public:
  Model() = default;
  Model(const Model& o) { *this = o.clone_impl(); }
  Model& operator=(const Model& o) {
    if (this != &o) *this = o.clone_impl();
    return *this;
  }
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model make(const std::string& architecture_id, const InputSpec& input, int num_classes,
                    std::uint64_t init_seed);
  static const std::vector<std::string>& zoo();

  const std::string& architecture_id() const { return architecture_id_; }
  int num_classes() const { return num_classes_; }
  const InputSpec& input_spec() const { return input_; }
  bool has_feature_tap() const { return tap_layer_ >= 0; }
  int tap_layer() const { return tap_layer_; }

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, nn::Trace& trace) const;
  // Backward from a logit-space gradient. Stops early (returning the gradient
  // wrt that layer's output) when stop_after_layer >= 0.
  Tensor backward(const nn::Trace& trace, const Tensor& dlogits, const nn::BackwardOptions& opt,
                  ParamGrads* param_grads = nullptr, int stop_after_layer = -1) const;

  std::vector<nn::ParamRef> parameters();
  std::vector<nn::ParamRef> parameters() const;  // const-cast view for serialization
  ParamGrads zero_grads() const;
  std::size_t num_parameters() const;

  Model clone() const { return clone_impl(); }

  const std::vector<std::unique_ptr<nn::Layer>>& layers() const { return layers_; }

 private:
  Model clone_impl() const;
  void check_input(const Tensor& x) const;

  std::string architecture_id_;
  InputSpec input_;
  int num_classes_ = 0;
  int tap_layer_ = -1;
  std::vector<std::unique_ptr<nn::Layer>> layers_;
  std::vector<std::size_t> param_offsets_;  // per-layer start into ParamGrads
};

// d(selected scalar)/dx. For Kind::logit the scalar is the sum over the batch
// of each sample's selected logit; for Kind::loss the mean cross-entropy.
Tensor input_gradient(const Model& model, const Tensor& x, const GradTarget& target);

struct FeatureTap {
  Tensor activations;  // [B,K,H',W'] at the tapped layer
  Tensor grad;         // d(logit of class)/dA, same shape
};

// Requires the model to declare a conv feature tap.
FeatureTap feature_tap(const Model& model, const Tensor& x, int class_index);

}  // namespace satkit::models
