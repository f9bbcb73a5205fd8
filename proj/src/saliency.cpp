#include "satkit/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "satkit/errors.hpp"
#include "satkit/rng.hpp"

namespace satkit::saliency {

namespace {

Tensor as_batch1(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("saliency input must be [C,H,W]");
  return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
}

Tensor single_grad(const Model& model, const Tensor& x, int class_index, bool guided) {
  Tensor xb = as_batch1(x);
  nn::Trace trace;
  Tensor logits = model.forward(xb, trace);
  if (class_index < 0 || class_index >= model.num_classes()) {
    throw ConfigError("saliency class out of range");
  }
  Tensor dlogits(logits.shape());
  dlogits.at2(0, static_cast<std::size_t>(class_index)) = 1.0;
  nn::BackwardOptions opt;
  opt.guided_relu = guided;
  Tensor g = model.backward(trace, dlogits, opt);
  return g.reshaped(x.shape());
}

SaliencyMap wrap(Tensor values, MapKind kind, std::string method, int class_index) {
  SaliencyMap m;
  m.values = std::move(values);
  m.kind = kind;
  m.method = std::move(method);
  m.class_index = class_index;
  m.validate();
  return m;
}

}  // namespace

SaliencyMap vanilla_gradient(const Model& model, const Tensor& x, int class_index) {
  return wrap(single_grad(model, x, class_index, false), MapKind::raw, "vanilla_gradient",
              class_index);
}

SaliencyMap guided_backprop(const Model& model, const Tensor& x, int class_index) {
  return wrap(single_grad(model, x, class_index, true), MapKind::raw, "guided_backprop",
              class_index);
}

SaliencyMap smoothgrad(const Model& model, const Tensor& x, int class_index, int n, double sigma,
                       std::uint64_t seed) {
  if (n < 1) throw ConfigError("smoothgrad needs n >= 1");
  Tensor acc(x.shape());
  rng::Stream st(rng::key(seed, "smoothgrad"));
  for (int i = 0; i < n; ++i) {
    Tensor noisy(x.shape());
    for (std::size_t j = 0; j < x.size(); ++j) noisy[j] = x[j] + st.normal(0.0, sigma);
    Tensor g = single_grad(model, noisy, class_index, false);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] /= static_cast<double>(n);
  return wrap(std::move(acc), MapKind::raw, "smoothgrad", class_index);
}

SaliencyMap integrated_gradients(const Model& model, const Tensor& x, int class_index,
                                 const Tensor* baseline, int m_steps) {
  if (m_steps < 1) throw ConfigError("integrated_gradients needs m_steps >= 1");
  Tensor base = baseline ? *baseline : Tensor::zeros(x.shape());
  if (!base.same_shape(x)) throw ShapeError("baseline shape mismatch");
  Tensor acc(x.shape());
  Tensor point(x.shape());
  for (int a = 1; a <= m_steps; ++a) {
    double t = static_cast<double>(a) / static_cast<double>(m_steps);
    for (std::size_t j = 0; j < x.size(); ++j) point[j] = base[j] + t * (x[j] - base[j]);
    Tensor g = single_grad(model, point, class_index, false);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  for (std::size_t j = 0; j < acc.size(); ++j) {
    acc[j] = (x[j] - base[j]) * acc[j] / static_cast<double>(m_steps);
  }
  return wrap(std::move(acc), MapKind::raw, "integrated_gradients", class_index);
}

namespace {

// Bilinear upsample of one [H',W'] map to [H,W] (align_corners = false).
Tensor upsample_bilinear(const Tensor& src, std::size_t H, std::size_t W) {
  const std::size_t h = src.dim(0), w = src.dim(1);
  Tensor out({H, W});
  const double sy = static_cast<double>(h) / static_cast<double>(H);
  const double sx = static_cast<double>(w) / static_cast<double>(W);
  for (std::size_t y = 0; y < H; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    double y0f = std::floor(fy);
    double wy = fy - y0f;
    long y0 = std::clamp(static_cast<long>(y0f), 0L, static_cast<long>(h) - 1);
    long y1 = std::clamp(y0 + 1, 0L, static_cast<long>(h) - 1);
    for (std::size_t xw = 0; xw < W; ++xw) {
      double fx = (static_cast<double>(xw) + 0.5) * sx - 0.5;
      double x0f = std::floor(fx);
      double wx = fx - x0f;
      long x0 = std::clamp(static_cast<long>(x0f), 0L, static_cast<long>(w) - 1);
      long x1 = std::clamp(x0 + 1, 0L, static_cast<long>(w) - 1);
      double v00 = src[static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x0)];
      double v01 = src[static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x1)];
      double v10 = src[static_cast<std::size_t>(y1) * w + static_cast<std::size_t>(x0)];
      double v11 = src[static_cast<std::size_t>(y1) * w + static_cast<std::size_t>(x1)];
      out[y * W + xw] =
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  return out;
}

}  // namespace

SaliencyMap grad_cam(const Model& model, const Tensor& x, int class_index, CamVariant variant,
                     bool guided) {
  Tensor xb = as_batch1(x);
  models::FeatureTap tap = models::feature_tap(model, xb, class_index);
  const std::size_t K = tap.activations.dim(1);
  const std::size_t Hp = tap.activations.dim(2), Wp = tap.activations.dim(3);
  const std::size_t HW = Hp * Wp;

  // Channel weights. gradcam: spatial mean of dPhi/dA. gradcam++: alpha-
  // weighted positive gradients, with alpha from the closed form of the
  // method; for piecewise-linear score functions the exponential-of-logit
  // substitution collapses higher derivatives onto powers of the first
  // derivative, so alpha = g^2 / (2 g^2 + (sum A) g^3).
  std::vector<double> weights(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double* A = tap.activations.data() + k * HW;
    const double* g = tap.grad.data() + k * HW;
    if (variant == CamVariant::gradcam) {
      double s = 0.0;
      for (std::size_t i = 0; i < HW; ++i) s += g[i];
      weights[k] = s / static_cast<double>(HW);
    } else {
      double sumA = 0.0;
      for (std::size_t i = 0; i < HW; ++i) sumA += A[i];
      double wsum = 0.0;
      for (std::size_t i = 0; i < HW; ++i) {
        if (g[i] <= 0.0) continue;  // ReLU on the gradient zeroes the term anyway
        double denom = 2.0 * g[i] * g[i] + sumA * g[i] * g[i] * g[i];
        double alpha = denom != 0.0 ? (g[i] * g[i]) / denom : 0.0;
        wsum += alpha * g[i];
      }
      weights[k] = wsum;
    }
  }

  Tensor cam({Hp, Wp});
  for (std::size_t k = 0; k < K; ++k) {
    const double* A = tap.activations.data() + k * HW;
    for (std::size_t i = 0; i < HW; ++i) cam[i] += weights[k] * A[i];
  }
  for (std::size_t i = 0; i < HW; ++i) cam[i] = std::max(0.0, cam[i]);

  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor up = upsample_bilinear(cam, H, W);
  Tensor values({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    std::copy(up.data(), up.data() + H * W, values.data() + c * H * W);
  }

  std::string method = variant == CamVariant::gradcam ? "gradcam" : "gradcam_pp";
  if (guided) {
    SaliencyMap gbp = guided_backprop(model, x, class_index);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] *= gbp.values[i];
    method = "guided_" + method;
  }
  return wrap(std::move(values), MapKind::raw, method, class_index);
}

SaliencyMap weak_saliency_from_annotation(const data::Annotation& ann,
                                          const std::vector<std::size_t>& image_shape) {
  if (image_shape.size() != 3) throw ShapeError("image shape must be [C,H,W]");
  const std::size_t C = image_shape[0], H = image_shape[1], W = image_shape[2];
  ann.validate(H, W);
  Tensor inside =
      ann.kind == data::Annotation::Kind::bounding_box ? data::bbox_to_mask(*ann.bbox, H, W)
                                                       : ann.mask;
  Tensor values({C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      values[c * H * W + i] = inside[i] > 0.0 ? 1.0 : -1.0;
    }
  }
  SaliencyMap m = wrap(std::move(values), MapKind::signed_, "weak_annotation", 0);
  return m;
}

SaliencyMap binarize(const SaliencyMap& map, const BinarizeRule& rule) {
  SaliencyMap out = map;
  out.kind = MapKind::signed_;
  if (rule.kind == BinarizeRule::Kind::sign) {
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = sign0(map.values[i]);
  } else {
    if (!(rule.q > 0.0 && rule.q <= 1.0)) throw ConfigError("topq requires q in (0,1]");
    const std::size_t n = map.values.size();
    auto keep = static_cast<std::size_t>(std::ceil(rule.q * static_cast<double>(n)));
    keep = std::min(keep, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // stable magnitude order; index breaks ties deterministically
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                     [&](std::size_t a, std::size_t b) {
                       double ma = std::fabs(map.values[a]), mb = std::fabs(map.values[b]);
                       if (ma != mb) return ma > mb;
                       return a < b;
                     });
    Tensor v(map.values.shape());
    v.fill(-1.0);
    for (std::size_t i = 0; i < keep; ++i) v[idx[i]] = sign0(map.values[idx[i]]);
    out.values = std::move(v);
  }
  out.validate();
  return out;
}

EnsembleSelector::EnsembleSelector(
    std::vector<std::shared_ptr<const data::SaliencyStore>> members, std::uint64_t selection_seed)
    : members_(std::move(members)), selection_seed_(selection_seed) {
  if (members_.size() < 2) throw ConfigError("ensemble selector needs at least 2 member stores");
  for (const auto& m : members_) {
    if (!m) throw ConfigError("ensemble selector member is null");
  }
}

std::size_t EnsembleSelector::pick_index(const std::string& sample_id) const {
  rng::Stream st(rng::key(selection_seed_, "ensemble-pick", rng::hash_str(sample_id)));
  return st.uniform_index(members_.size());
}

SaliencyMap EnsembleSelector::select(const std::string& sample_id) const {
  return members_[pick_index(sample_id)]->get(sample_id);
}

}  // namespace satkit::saliency
