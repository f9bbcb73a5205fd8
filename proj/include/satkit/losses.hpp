#pragma once

#include <vector>

#include "satkit/tensor.hpp"

namespace satkit::losses {

struct LossOut {
  double value = 0.0;
  Tensor dlogits;  // gradient wrt logits (mean-reduced over the batch)
};

Tensor softmax(const Tensor& logits);          // rowwise, [B,K]
std::vector<int> argmax_rows(const Tensor&);   // predicted classes

// Mean softmax cross-entropy over the batch.
LossOut cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Mean KL(softmax(ref_logits) || softmax(logits)); gradient wrt `logits`
// only (ref is treated as a constant).
LossOut kl_to_reference(const Tensor& ref_logits, const Tensor& logits);

// Gradient of the same mean KL wrt the reference logits (used by the
// TRADES hybrid loss, where gradients flow through both forwards).
Tensor kl_reference_grad(const Tensor& ref_logits, const Tensor& logits);

}  // namespace satkit::losses
