#pragma once

#include <cmath>
#include <vector>

#include "satkit/dataset.hpp"
#include "satkit/model.hpp"
#include "satkit/nn.hpp"

namespace testsupport {

using satkit::Tensor;
using satkit::models::Model;

// Central finite difference of a scalar functional wrt one input coordinate.
template <class F>
double central_diff(const Tensor& x, std::size_t i, double h, F&& scalar_of) {
  Tensor xp = x, xm = x;
  xp[i] += h;
  xm[i] -= h;
  return (scalar_of(xp) - scalar_of(xm)) / (2.0 * h);
}

// Bit pattern of ReLU gates over a forward pass; used to skip coordinates
// whose +/-h probes land on different linear pieces (kink crossings).
inline std::vector<bool> relu_pattern(const Model& model, const Tensor& x) {
  satkit::nn::Trace trace;
  model.forward(x, trace);
  std::vector<bool> bits;
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    const auto& layer = model.layers()[li];
    if (layer->kind() == "relu") {
      const Tensor& pre = trace[li].x;
      for (std::size_t i = 0; i < pre.size(); ++i) bits.push_back(pre[i] > 0.0);
    } else if (layer->kind() == "residual_block") {
      for (const auto& c : trace[li].sub) {
        if (!c.x.empty()) {
          for (std::size_t i = 0; i < c.x.size(); ++i) bits.push_back(c.x[i] > 0.0);
        }
      }
    }
  }
  return bits;
}

inline bool same_linear_piece(const Model& model, const Tensor& x, std::size_t i, double h) {
  Tensor xp = x, xm = x;
  xp[i] += h;
  xm[i] -= h;
  return relu_pattern(model, xp) == relu_pattern(model, xm);
}

// Deterministic batch-of-one wrapper.
inline Tensor batch1(const Tensor& chw) {
  return chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)});
}

inline double rel_err(double got, double want) {
  double denom = std::max(std::fabs(want), 1e-10);
  return std::fabs(got - want) / denom;
}

}  // namespace testsupport
