#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvsa/blocks.hpp"

namespace rvsa {

/// All counts use the convention: one multiply = 1, one add = 1 (so a fused
/// multiply-add costs 2). This is stated in every rendered report header.
extern const char* kFlopConvention;

struct LayerCost {
  std::string name;
  Variant variant = Variant::kFull;
  std::int64_t attn_core = 0;    // the two window/full matrix products
  std::int64_t attn_extra = 0;   // learned-window overhead (GAP + head + sampling)
  std::int64_t attn_proj = 0;    // Q/K/V/output projections
  std::int64_t ffn = 0;
  std::int64_t norm = 0;
  std::int64_t pcm = 0;
  std::int64_t params = 0;

  std::int64_t flops() const {
    return attn_core + attn_extra + attn_proj + ffn + norm + pcm;
  }
};

struct CostReport {
  std::vector<LayerCost> layers;  // patch embed and head included as entries
  std::int64_t total_flops = 0;   // always equals the sum over layers
  std::int64_t total_params = 0;
  std::int64_t peak_bytes = 0;    // live 64-bit values at the widest layer

  std::string render() const;
};

/// Core cost of window attention over an H x W token grid with channel width
/// C and window size s: exactly 2*s^2*H*W*C for QK^T and A*V combined.
std::int64_t window_attention_flops(std::int64_t h, std::int64_t w, std::int64_t c,
                                    std::int64_t s);

/// Full-attention core: 2*(H*W)^2*C.
std::int64_t full_attention_flops(std::int64_t h, std::int64_t w, std::int64_t c);

/// Extra work RVSA adds on top of the window core, summed over the
/// ceil(H/s)*ceil(W/s) windows. Per window: s^2*C for the GAP, 25*heads*C for
/// the transform prediction head, and 4*s^2*C for bilinear resampling of keys
/// and values.
std::int64_t rvsa_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                              std::int64_t heads);

/// VSA drops the rotation output, so its head term shrinks to 20*heads*C per
/// window; GAP and sampling terms are unchanged.
std::int64_t vsa_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                             std::int64_t heads);

/// RVSA-diamond doubles the head and the resampling (independent K and V
/// windows); the GAP is shared.
std::int64_t rvsa_diamond_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c,
                                      std::int64_t s, std::int64_t heads);

std::int64_t variant_extra_flops(Variant v, std::int64_t h, std::int64_t w, std::int64_t c,
                                 std::int64_t s, std::int64_t heads);

/// Exact reduced fraction of rvsa_extra over the window core. Independent of
/// H, W, C: 5*(s^2 + 5*heads) / (2*s^4). At s=7, heads=12 this is 545/4802.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

Ratio rvsa_overhead_ratio(std::int64_t s, std::int64_t heads);

/// Analytic per-layer accounting for a whole model on an H x W token grid.
/// Windowed layers are charged on the padded grid (ceil to a multiple of s).
CostReport model_cost(const ModelConfig& cfg, int tokens_h, int tokens_w);

}  // namespace rvsa
