#include "satkit/losses.hpp"

#include <cmath>

#include "satkit/errors.hpp"

namespace satkit::losses {

Tensor softmax(const Tensor& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor p({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    double mx = logits.at2(b, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(b, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at2(b, k) - mx);
    for (std::size_t k = 0; k < K; ++k) p.at2(b, k) = std::exp(logits.at2(b, k) - mx) / z;
  }
  return p;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits.at2(b, k) > logits.at2(b, best)) best = k;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

LossOut cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) throw ShapeError("cross_entropy: label count mismatch");
  LossOut out;
  out.dlogits = Tensor({B, K});
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    int y = labels[b];
    if (y < 0 || y >= static_cast<int>(K)) throw ConfigError("label out of range");
    double mx = logits.at2(b, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(b, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits.at2(b, k) - mx);
    double logz = std::log(z) + mx;
    total += logz - logits.at2(b, static_cast<std::size_t>(y));
    for (std::size_t k = 0; k < K; ++k) {
      out.dlogits.at2(b, k) = std::exp(logits.at2(b, k) - logz) / static_cast<double>(B);
    }
    out.dlogits.at2(b, static_cast<std::size_t>(y)) -= 1.0 / static_cast<double>(B);
  }
  out.value = total / static_cast<double>(B);
  if (!std::isfinite(out.value)) throw NumericalError("cross-entropy is non-finite");
  return out;
}

LossOut kl_to_reference(const Tensor& ref_logits, const Tensor& logits) {
  if (!ref_logits.same_shape(logits)) throw ShapeError("kl: logits shape mismatch");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor p = softmax(ref_logits);
  Tensor q = softmax(logits);
  LossOut out;
  out.dlogits = Tensor({B, K});
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      double pk = p.at2(b, k), qk = q.at2(b, k);
      if (pk > 0.0) total += pk * (std::log(pk) - std::log(qk));
      out.dlogits.at2(b, k) = (qk - pk) / static_cast<double>(B);
    }
  }
  out.value = total / static_cast<double>(B);
  if (!std::isfinite(out.value)) throw NumericalError("KL divergence is non-finite");
  return out;
}

Tensor kl_reference_grad(const Tensor& ref_logits, const Tensor& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor p = softmax(ref_logits);
  Tensor q = softmax(logits);
  Tensor d({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    double kl = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double pk = p.at2(b, k), qk = q.at2(b, k);
      if (pk > 0.0) kl += pk * (std::log(pk) - std::log(qk));
    }
    for (std::size_t k = 0; k < K; ++k) {
      double pk = p.at2(b, k), qk = q.at2(b, k);
      double g = pk > 0.0 ? (std::log(pk) - std::log(qk)) : 0.0;
      d.at2(b, k) = pk * (g - kl) / static_cast<double>(B);
    }
  }
  return d;
}

}  // namespace satkit::losses
