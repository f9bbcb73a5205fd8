#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "satkit/dataset.hpp"
#include "satkit/model.hpp"
#include "satkit/saliency_map.hpp"
#include "satkit/saliency_store.hpp"

namespace satkit::saliency {

using satkit::models::Model;

// Stable method-id strings used in store manifests and configs.
inline const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> kIds = {
      "vanilla_gradient", "guided_backprop",   "smoothgrad",        "integrated_gradients",
      "gradcam",          "gradcam_pp",        "guided_gradcam_pp", "weak_annotation"};
  return kIds;
}

// d(logit of class_index)/dx for a single sample x [C,H,W].
SaliencyMap vanilla_gradient(const Model& model, const Tensor& x, int class_index);

// Backward pass where each ReLU passes gradient only if its forward
// pre-activation was positive and the incoming gradient is positive.
SaliencyMap guided_backprop(const Model& model, const Tensor& x, int class_index);

// Mean vanilla gradient over n noisy copies x + N(0, sigma^2).
SaliencyMap smoothgrad(const Model& model, const Tensor& x, int class_index, int n, double sigma,
                       std::uint64_t seed);

// (x - baseline) ⊙ (1/m) Σ_{a=1..m} grad at baseline + (a/m)(x - baseline).
// Null baseline means the zero image.
SaliencyMap integrated_gradients(const Model& model, const Tensor& x, int class_index,
                                 const Tensor* baseline, int m_steps);

enum class CamVariant { gradcam, gradcam_pp };

// ReLU-weighted combination of tapped activations, bilinearly upsampled to
// image size and broadcast across channels. guided=true multiplies
// elementwise with the guided_backprop map.
SaliencyMap grad_cam(const Model& model, const Tensor& x, int class_index, CamVariant variant,
                     bool guided);

// +1 inside the bbox/mask, -1 outside, replicated across channels.
SaliencyMap weak_saliency_from_annotation(const data::Annotation& ann,
                                          const std::vector<std::size_t>& image_shape);

struct BinarizeRule {
  enum class Kind { sign, topq };
  Kind kind = Kind::sign;
  double q = 1.0;  // topq only; must lie in (0,1]

  static BinarizeRule sign() { return {Kind::sign, 1.0}; }
  static BinarizeRule topq(double q) { return {Kind::topq, q}; }
};

// sign: elementwise sign (0 stays 0). topq: entries in the top-q fraction by
// |value| keep their sign; the rest become -1.
SaliencyMap binarize(const SaliencyMap& map, const BinarizeRule& rule);

// Per-sample i.i.d. uniform choice among member stores; deterministic under
// the selection seed. Requires at least two members.
class EnsembleSelector {
 public:
  EnsembleSelector(std::vector<std::shared_ptr<const data::SaliencyStore>> members,
                   std::uint64_t selection_seed);
  std::size_t pick_index(const std::string& sample_id) const;
  SaliencyMap select(const std::string& sample_id) const;
  std::size_t num_members() const { return members_.size(); }

 private:
  std::vector<std::shared_ptr<const data::SaliencyStore>> members_;
  std::uint64_t selection_seed_;
};

}  // namespace satkit::saliency
