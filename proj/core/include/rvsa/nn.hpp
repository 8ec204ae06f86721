#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rvsa/autodiff.hpp"
#include "rvsa/rng.hpp"

namespace rvsa {

using NamedParams = std::vector<std::pair<std::string, Var>>;

/// weight: out x in, bias: out.
struct LinearLayer {
  Var weight, bias;

  LinearLayer() = default;
  /// Gaussian init with stddev 1/sqrt(in).
  LinearLayer(int out_dim, int in_dim, Rng& rng);
  /// All-zero init (used for transform prediction heads).
  static LinearLayer zeros(int out_dim, int in_dim);

  int out_dim() const { return weight.value().dim(0); }
  int in_dim() const { return weight.value().dim(1); }
  Var forward(const Var& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct LayerNormLayer {
  Var gain, bias;
  double eps = 1e-6;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int dim);
  Var forward(const Var& x) const { return layer_norm(x, gain, bias, eps); }
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct BatchNorm2dLayer {
  Var gain, bias;
  Tensor running_mean, running_var;
  double eps = 1e-6;
  double momentum = 0.1;

  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(int channels);
  Var forward(const Var& x, bool training) {
    return batch_norm2d(x, gain, bias, running_mean, running_var, training, momentum, eps);
  }
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// Decoupled weight decay Adam.
class AdamW {
 public:
  explicit AdamW(double lr = 1.5e-4, double weight_decay = 0.05, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const NamedParams& params);
  static void zero_grad(const NamedParams& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  struct State {
    Tensor m, v;
  };
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::pair<const Node*, State>> states_;
  State& state_for(const Node* n, const Shape& shape);
};

}  // namespace rvsa
