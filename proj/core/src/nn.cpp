#include "rvsa/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "rvsa/gradcheck.hpp"

namespace rvsa {

LinearLayer::LinearLayer(int out_dim, int in_dim, Rng& rng) {
  if (out_dim < 1 || in_dim < 1)
    throw std::invalid_argument("LinearLayer: dimensions must be >= 1");
  weight = Var::leaf(rng.normal_tensor({out_dim, in_dim}, 1.0 / std::sqrt(in_dim)));
  bias = Var::leaf(Tensor::zeros({out_dim}));
}

LinearLayer LinearLayer::zeros(int out_dim, int in_dim) {
  if (out_dim < 1 || in_dim < 1)
    throw std::invalid_argument("LinearLayer: dimensions must be >= 1");
  LinearLayer l;
  l.weight = Var::leaf(Tensor::zeros({out_dim, in_dim}));
  l.bias = Var::leaf(Tensor::zeros({out_dim}));
  return l;
}

void LinearLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNormLayer::LayerNormLayer(int dim) {
  gain = Var::leaf(Tensor::full({dim}, 1.0));
  bias = Var::leaf(Tensor::zeros({dim}));
}

void LayerNormLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

BatchNorm2dLayer::BatchNorm2dLayer(int channels) {
  gain = Var::leaf(Tensor::full({channels}, 1.0));
  bias = Var::leaf(Tensor::zeros({channels}));
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1.0);
}

void BatchNorm2dLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

AdamW::State& AdamW::state_for(const Node* n, const Shape& shape) {
  for (auto& [key, st] : states_)
    if (key == n) return st;
  states_.push_back({n, State{Tensor::zeros(shape), Tensor::zeros(shape)}});
  return states_.back().second;
}

void AdamW::step(const NamedParams& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, t_);
  double bc2 = 1.0 - std::pow(b2_, t_);
  for (const auto& [name, p] : params) {
    Node* n = p.node().get();
    n->ensure_grad();
    State& st = state_for(n, n->value.shape());
    for (std::size_t i = 0; i < n->value.numel(); ++i) {
      double g = n->grad[i];
      st.m[i] = b1_ * st.m[i] + (1.0 - b1_) * g;
      st.v[i] = b2_ * st.v[i] + (1.0 - b2_) * g * g;
      double mhat = st.m[i] / bc1;
      double vhat = st.v[i] / bc2;
      n->value[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * n->value[i]);
    }
  }
}

void AdamW::zero_grad(const NamedParams& params) {
  for (const auto& [name, p] : params) p.node()->zero_grad();
}

}  // namespace rvsa
