#pragma once

#include "rvsa/geometry.hpp"
#include "rvsa/nn.hpp"

namespace rvsa {

enum class Variant { kFull, kWindow, kVsa, kRvsa, kRvsaDiamond };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct AttentionConfig {
  int embed_dim = 0;
  int heads = 0;
  int window_size = 7;
  Variant variant = Variant::kWindow;

  int head_dim() const { return embed_dim / heads; }
  void validate() const;
  bool windowed() const { return variant != Variant::kFull; }
  bool learned_window() const {
    return variant == Variant::kVsa || variant == Variant::kRvsa ||
           variant == Variant::kRvsaDiamond;
  }
};

/// Q/K/V/output projections plus, for the learned-window variants, the
/// zero-initialized transform prediction head(s). RVSA-diamond holds a
/// second head so key and value windows are predicted independently.
struct AttentionLayer {
  LinearLayer q, k, v, out;
  LinearLayer transform_head;    // VSA / RVSA / diamond (keys)
  LinearLayer transform_head_v;  // diamond only (values)

  static AttentionLayer create(const AttentionConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, const AttentionConfig& cfg, NamedParams& out) const;
};

/// softmax(Q K^T / sqrt(C')) V on plain token matrices.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v);

/// Variant dispatch over a C x H x W feature map; output shape equals input
/// shape for every variant.
Var attend(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg);

/// Same as attend but stops before the output projection (concatenated
/// heads); used by invariance tests.
Var attend_pre_projection(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg);

/// Full multi-head attention over an arbitrary token sequence (no 2-D grid);
/// the MIM encoder path.
Var full_attention_tokens(const Var& tokens, const AttentionLayer& layer,
                          const AttentionConfig& cfg);

/// Plain (non-autodiff) evaluation of the transform prediction head on a
/// padded feature map: GAP per window, LeakyReLU, linear, then the 1+ds
/// scale reparametrization. With use_theta false the angle is pinned to 0.
WindowTransform predict_transform(const Tensor& padded_map, const WindowGrid& grid,
                                  const Tensor& head_weight, const Tensor& head_bias, int heads,
                                  bool use_theta, double leaky_slope = 0.01);

}  // namespace rvsa
