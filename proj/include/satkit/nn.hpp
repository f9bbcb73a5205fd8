#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "satkit/rng.hpp"
#include "satkit/tensor.hpp"

namespace satkit::nn {

// Per-layer forward cache. `x` is the layer input; `y` the layer output
// (filled by the sequential driver); `sub` nests block-internal caches.
struct Cache {
  Tensor x;
  Tensor y;
  std::vector<Cache> sub;
};

using Trace = std::vector<Cache>;

struct BackwardOptions {
  // Guided ReLU backward: gradient passes only where the forward
  // pre-activation was positive AND the incoming gradient is positive.
  bool guided_relu = false;
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, Cache* cache) const = 0;
  // Returns grad wrt input; accumulates into param_grads when non-empty.
  virtual Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                          std::span<Tensor> param_grads) const = 0;
  virtual void collect_params(const std::string&, std::vector<ParamRef>&) {}
  virtual std::size_t num_param_tensors() const { return 0; }
  virtual void init_params(rng::Stream&) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Dense : public Layer {
 public:
  Dense(std::size_t in_features, std::size_t out_features);
  std::string kind() const override { return "dense"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::size_t num_param_tensors() const override { return 2; }
  void init_params(rng::Stream& st) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

class Conv2d : public Layer {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t stride,
         std::size_t pad);
  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::size_t num_param_tensors() const override { return 2; }
  void init_params(rng::Stream& st) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  std::size_t out_size(std::size_t in) const { return (in + 2 * pad_ - ksize_) / stride_ + 1; }

  Tensor weight;  // [out_ch, in_ch, k, k]
  Tensor bias;    // [out_ch]
  std::size_t in_ch_, out_ch_, ksize_, stride_, pad_;
};

class ReLU : public Layer {
 public:
  explicit ReLU(double negative_slope = 0.0) : slope_(negative_slope) {}
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  double slope() const { return slope_; }

 private:
  double slope_;
};

class Flatten : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
};

class GlobalAvgPool : public Layer {
 public:
  std::string kind() const override { return "gap"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

// conv-relu-conv plus identity (or 1x1 projection) skip, ReLU after the add.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride);
  ResidualBlock(const ResidualBlock& o);
  std::string kind() const override { return "residual_block"; }
  Tensor forward(const Tensor& x, Cache* cache) const override;
  Tensor backward(const Tensor& dy, const Cache& cache, const BackwardOptions& opt,
                  std::span<Tensor> param_grads) const override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::size_t num_param_tensors() const override { return 4 + (proj_ ? 2 : 0); }
  void init_params(rng::Stream& st) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  Conv2d conv1_, conv2_;
  ReLU relu_;
  std::unique_ptr<Conv2d> proj_;  // 1x1 strided projection when shape changes
};

}  // namespace satkit::nn
