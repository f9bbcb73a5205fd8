#include "satkit/nn.hpp"

#include <Eigen/Core>

#include "satkit/errors.hpp"

namespace satkit::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_4d(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected [B,C,H,W] input");
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weight({out_features, in_features}), bias({out_features}) {}

void Dense::init_params(rng::Stream& st) {
  double bound = std::sqrt(6.0 / static_cast<double>(weight.dim(1)));
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = st.uniform(-bound, bound);
  bias.fill(0.0);
}

void Dense::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Tensor Dense::forward(const Tensor& x, Cache* cache) const {
  if (x.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("dense: input shape mismatch");
  }
  const std::size_t B = x.dim(0), D = weight.dim(1), K = weight.dim(0);
  Tensor y({B, K});
  ConstMatMap X(x.data(), B, D);
  ConstMatMap W(weight.data(), K, D);
  MatMap Y(y.data(), B, K);
  Y.noalias() = X * W.transpose();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) y.at2(b, k) += bias[k];
  }
  if (cache) cache->x = x;
  return y;
}

Tensor Dense::backward(const Tensor& dy, const Cache& cache, const BackwardOptions&,
                       std::span<Tensor> param_grads) const {
  const Tensor& x = cache.x;
  const std::size_t B = x.dim(0), D = weight.dim(1), K = weight.dim(0);
  Tensor dx({B, D});
  ConstMatMap dY(dy.data(), B, K);
  ConstMatMap X(x.data(), B, D);
  ConstMatMap W(weight.data(), K, D);
  MatMap dX(dx.data(), B, D);
  dX.noalias() = dY * W;
  if (!param_grads.empty()) {
    MatMap dW(param_grads[0].data(), K, D);
    dW.noalias() += dY.transpose() * X;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < K; ++k) param_grads[1][k] += dy.at2(b, k);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride,
               std::size_t pad)
    : weight({out_ch, in_ch, ksize, ksize}),
      bias({out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad) {}

void Conv2d::init_params(rng::Stream& st) {
  double fan_in = static_cast<double>(in_ch_ * ksize_ * ksize_);
  double bound = std::sqrt(6.0 / fan_in);
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = st.uniform(-bound, bound);
  bias.fill(0.0);
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

namespace {

// col is [Cin*K*K, Ho*Wo] row-major for one sample.
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, double* col) {
  const std::size_t cols = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        double* row = col + ((c * K + ky) * K + kx) * cols;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          const bool y_ok = iy >= 0 && iy < static_cast<long>(H);
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            row[oy * Wo + ox] = (y_ok && ix >= 0 && ix < static_cast<long>(W))
                                    ? x[(c * H + static_cast<std::size_t>(iy)) * W +
                                        static_cast<std::size_t>(ix)]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
                std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, double* x) {
  const std::size_t cols = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        const double* row = col + ((c * K + ky) * K + kx) * cols;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] +=
                row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
  check_4d(x, "conv2d");
  if (x.dim(1) != in_ch_) throw ShapeError("conv2d: channel mismatch");
  const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = out_size(H), Wo = out_size(W);
  const std::size_t patch = in_ch_ * ksize_ * ksize_;
  Tensor y({B, out_ch_, Ho, Wo});
  std::vector<double> col(patch * Ho * Wo);
  ConstMatMap Wm(weight.data(), out_ch_, patch);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.data() + b * in_ch_ * H * W, in_ch_, H, W, ksize_, stride_, pad_, Ho, Wo, col.data());
    ConstMatMap Cm(col.data(), patch, Ho * Wo);
    MatMap Ym(y.data() + b * out_ch_ * Ho * Wo, out_ch_, Ho * Wo);
    Ym.noalias() = Wm * Cm;
    for (std::size_t oc = 0; oc < out_ch_; ++oc) {
      double* row = y.data() + ((b * out_ch_ + oc) * Ho) * Wo;
      for (std::size_t i = 0; i < Ho * Wo; ++i) row[i] += bias[oc];
    }
  }
  if (cache) cache->x = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Cache& cache, const BackwardOptions&,
                        std::span<Tensor> param_grads) const {
  const Tensor& x = cache.x;
  const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = out_size(H), Wo = out_size(W);
  const std::size_t patch = in_ch_ * ksize_ * ksize_;
  Tensor dx({B, in_ch_, H, W});
  std::vector<double> col(patch * Ho * Wo);
  std::vector<double> dcol(patch * Ho * Wo);
  ConstMatMap Wm(weight.data(), out_ch_, patch);
  for (std::size_t b = 0; b < B; ++b) {
    ConstMatMap dYm(dy.data() + b * out_ch_ * Ho * Wo, out_ch_, Ho * Wo);
    MatMap dCm(dcol.data(), patch, Ho * Wo);
    dCm.noalias() = Wm.transpose() * dYm;
    col2im_add(dcol.data(), in_ch_, H, W, ksize_, stride_, pad_, Ho, Wo,
               dx.data() + b * in_ch_ * H * W);
    if (!param_grads.empty()) {
      im2col(x.data() + b * in_ch_ * H * W, in_ch_, H, W, ksize_, stride_, pad_, Ho, Wo,
             col.data());
      ConstMatMap Cm(col.data(), patch, Ho * Wo);
      MatMap dWm(param_grads[0].data(), out_ch_, patch);
      dWm.noalias() += dYm * Cm.transpose();
      for (std::size_t oc = 0; oc < out_ch_; ++oc) {
        const double* row = dy.data() + ((b * out_ch_ + oc) * Ho) * Wo;
        double s = 0.0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) s += row[i];
        param_grads[1][oc] += s;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, Cache* cache) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  if (cache) cache->x = x;
  return y;
}

Tensor ReLU::backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                      std::span<Tensor>) const {
  const Tensor& x = cache.x;
  Tensor dx(x.shape());
  if (opt.guided_relu) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      dx[i] = (x[i] > 0.0 && dy[i] > 0.0) ? dy[i] : 0.0;
    }
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      dx[i] = x[i] > 0.0 ? dy[i] : slope_ * dy[i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, Cache* cache) const {
  check_4d(x, "flatten");
  if (cache) cache->x = x;  // shape only
  return x.reshaped({x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

Tensor Flatten::backward(const Tensor& dy, const Cache& cache, const BackwardOptions&,
                         std::span<Tensor>) const {
  return dy.reshaped(cache.x.shape());
}

// ---------------------------------------------------------------- GAP

Tensor GlobalAvgPool::forward(const Tensor& x, Cache* cache) const {
  check_4d(x, "gap");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = x.data() + (b * C + c) * HW;
      double s = 0.0;
      for (std::size_t i = 0; i < HW; ++i) s += p[i];
      y.at2(b, c) = s / static_cast<double>(HW);
    }
  }
  if (cache) cache->x = x;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, const Cache& cache, const BackwardOptions&,
                               std::span<Tensor>) const {
  const Tensor& x = cache.x;
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor dx(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      double g = dy.at2(b, c) / static_cast<double>(HW);
      double* p = dx.data() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] = g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride)
    : conv1_(in_ch, out_ch, 3, stride, 1), conv2_(out_ch, out_ch, 3, 1, 1) {
  if (stride != 1 || in_ch != out_ch) {
    proj_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0);
  }
}

ResidualBlock::ResidualBlock(const ResidualBlock& o)
    : conv1_(o.conv1_), conv2_(o.conv2_), relu_(o.relu_) {
  if (o.proj_) proj_ = std::make_unique<Conv2d>(*o.proj_);
}

void ResidualBlock::init_params(rng::Stream& st) {
  conv1_.init_params(st);
  conv2_.init_params(st);
  if (proj_) proj_->init_params(st);
}

void ResidualBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv1_.collect_params(prefix + ".conv1", out);
  conv2_.collect_params(prefix + ".conv2", out);
  if (proj_) proj_->collect_params(prefix + ".proj", out);
}

Tensor ResidualBlock::forward(const Tensor& x, Cache* cache) const {
  // sub caches: 0=conv1, 1=relu1, 2=conv2, 3=proj, 4 holds the add pre-activation.
  if (cache) cache->sub.resize(5);
  Cache* c0 = cache ? &cache->sub[0] : nullptr;
  Cache* c1 = cache ? &cache->sub[1] : nullptr;
  Cache* c2 = cache ? &cache->sub[2] : nullptr;
  Cache* c3 = cache ? &cache->sub[3] : nullptr;

  Tensor h = conv1_.forward(x, c0);
  h = relu_.forward(h, c1);
  h = conv2_.forward(h, c2);
  Tensor skip = proj_ ? proj_->forward(x, c3) : x;
  if (!h.same_shape(skip)) throw ShapeError("residual block: branch shape mismatch");
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += skip[i];
  if (cache) cache->sub[4].x = h;  // pre-activation of the output ReLU
  Tensor y(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) y[i] = h[i] > 0.0 ? h[i] : 0.0;
  return y;
}

Tensor ResidualBlock::backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                               std::span<Tensor> param_grads) const {
  const Tensor& pre = cache.sub[4].x;
  Tensor dsum(pre.shape());
  if (opt.guided_relu) {
    for (std::size_t i = 0; i < pre.size(); ++i) {
      dsum[i] = (pre[i] > 0.0 && dy[i] > 0.0) ? dy[i] : 0.0;
    }
  } else {
    for (std::size_t i = 0; i < pre.size(); ++i) dsum[i] = pre[i] > 0.0 ? dy[i] : 0.0;
  }

  auto slice = [&](std::size_t offset, std::size_t n) -> std::span<Tensor> {
    if (param_grads.empty()) return {};
    return param_grads.subspan(offset, n);
  };
  Tensor d = conv2_.backward(dsum, cache.sub[2], opt, slice(2, 2));
  d = relu_.backward(d, cache.sub[1], opt, {});
  Tensor dx = conv1_.backward(d, cache.sub[0], opt, slice(0, 2));
  if (proj_) {
    Tensor dskip = proj_->backward(dsum, cache.sub[3], opt, slice(4, 2));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dskip[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsum[i];
  }
  return dx;
}

}  // namespace satkit::nn
