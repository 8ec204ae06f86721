#include "rvsa/cost.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rvsa {

const char* kFlopConvention =
    "flop convention: multiply = 1, add = 1 (fused multiply-add = 2)";

namespace {

void check_positive(std::initializer_list<std::int64_t> vals, const char* what) {
  for (std::int64_t v : vals)
    if (v <= 0) throw std::invalid_argument(std::string(what) + ": dimensions must be positive");
}

std::int64_t windows_of(std::int64_t h, std::int64_t w, std::int64_t s) {
  return ((h + s - 1) / s) * ((w + s - 1) / s);
}

// n x in -> n x out dense layer: one multiply-add per weight per row, plus
// the bias add.
std::int64_t linear_flops(std::int64_t n, std::int64_t in, std::int64_t out) {
  return n * out * (2 * in + 1);
}

std::int64_t layer_norm_flops(std::int64_t n, std::int64_t c) {
  // mean, centered variance, normalize, affine: roughly 8 ops per value
  return 8 * n * c;
}

}  // namespace

std::int64_t window_attention_flops(std::int64_t h, std::int64_t w, std::int64_t c,
                                    std::int64_t s) {
  check_positive({h, w, c, s}, "window_attention_flops");
  return 2 * s * s * h * w * c;
}

std::int64_t full_attention_flops(std::int64_t h, std::int64_t w, std::int64_t c) {
  check_positive({h, w, c}, "full_attention_flops");
  const std::int64_t n = h * w;
  return 2 * n * n * c;
}

std::int64_t rvsa_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                              std::int64_t heads) {
  check_positive({h, w, c, s, heads}, "rvsa_extra_flops");
  const std::int64_t per_window = 5 * s * s * c + 25 * heads * c;
  return windows_of(h, w, s) * per_window;
}

std::int64_t vsa_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t s,
                             std::int64_t heads) {
  check_positive({h, w, c, s, heads}, "vsa_extra_flops");
  const std::int64_t per_window = 5 * s * s * c + 20 * heads * c;
  return windows_of(h, w, s) * per_window;
}

std::int64_t rvsa_diamond_extra_flops(std::int64_t h, std::int64_t w, std::int64_t c,
                                      std::int64_t s, std::int64_t heads) {
  check_positive({h, w, c, s, heads}, "rvsa_diamond_extra_flops");
  const std::int64_t per_window = 9 * s * s * c + 50 * heads * c;
  return windows_of(h, w, s) * per_window;
}

std::int64_t variant_extra_flops(Variant v, std::int64_t h, std::int64_t w, std::int64_t c,
                                 std::int64_t s, std::int64_t heads) {
  switch (v) {
    case Variant::kFull:
    case Variant::kWindow:
      return 0;
    case Variant::kVsa:
      return vsa_extra_flops(h, w, c, s, heads);
    case Variant::kRvsa:
      return rvsa_extra_flops(h, w, c, s, heads);
    case Variant::kRvsaDiamond:
      return rvsa_diamond_extra_flops(h, w, c, s, heads);
  }
  throw std::logic_error("variant_extra_flops: unreachable");
}

Ratio rvsa_overhead_ratio(std::int64_t s, std::int64_t heads) {
  check_positive({s, heads}, "rvsa_overhead_ratio");
  // extra / core with both charged per window: (5s^2C + 25hC) / (2 s^4 C)
  std::int64_t num = 5 * (s * s + 5 * heads);
  std::int64_t den = 2 * s * s * s * s;
  std::int64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

CostReport model_cost(const ModelConfig& cfg, int tokens_h, int tokens_w) {
  cfg.validate();
  check_positive({tokens_h, tokens_w}, "model_cost");
  const std::int64_t h = tokens_h, w = tokens_w;
  const std::int64_t n = h * w;
  const std::int64_t c = cfg.embed_dim;
  const std::int64_t s = cfg.window_size;
  const std::int64_t heads = cfg.heads;
  const std::int64_t hp = ((h + s - 1) / s) * s;  // padded grid for windowed layers
  const std::int64_t wp = ((w + s - 1) / s) * s;

  CostReport report;

  {
    LayerCost embed;
    embed.name = "patch_embed";
    const std::int64_t patch_in =
        static_cast<std::int64_t>(cfg.in_channels) * cfg.patch_size * cfg.patch_size;
    embed.ffn = linear_flops(n, patch_in, c) + n * c;  // projection + positional add
    embed.params = patch_in * c + c;
    report.layers.push_back(embed);
  }

  std::int64_t max_live = 0;
  for (int layer = 1; layer <= cfg.depth; ++layer) {
    Variant v = cfg.layer_variant(layer);
    LayerCost lc;
    lc.name = "block" + std::to_string(layer) + "." + variant_name(v);
    lc.variant = v;

    if (v == Variant::kFull) {
      lc.attn_core = full_attention_flops(h, w, c);
      lc.attn_proj = 4 * linear_flops(n, c, c);
    } else {
      const std::int64_t np = hp * wp;
      lc.attn_core = window_attention_flops(hp, wp, c, s);
      lc.attn_extra = variant_extra_flops(v, hp, wp, c, s, heads);
      // Q/K/V on real tokens, output projection on the padded grid.
      lc.attn_proj = 3 * linear_flops(n, c, c) + linear_flops(np, c, c);
    }

    lc.ffn = linear_flops(n, c, cfg.ffn_ratio * c) + 4 * n * cfg.ffn_ratio * c  // GELU
             + linear_flops(n, cfg.ffn_ratio * c, c);
    lc.norm = 2 * layer_norm_flops(n, c) + 2 * n * c;  // two LNs + two residual adds

    // q/k/v/out, then fc1 (c -> rc) and fc2 (rc -> c) with biases folded
    // together, then two LN affine pairs
    std::int64_t params = 4 * (c * c + c) +
                          2 * (cfg.ffn_ratio * c * c) + (cfg.ffn_ratio + 1) * c + 4 * c;
    if (v == Variant::kVsa || v == Variant::kRvsa || v == Variant::kRvsaDiamond) {
      const std::int64_t out5 = (v == Variant::kVsa ? 4 : 5) * heads;
      const std::int64_t head_count = (v == Variant::kRvsaDiamond ? 2 : 1);
      params += head_count * (c * out5 + out5);
    }
    if (cfg.pcm_groups > 0) {
      const std::int64_t cg = c / cfg.pcm_groups;
      const std::int64_t k2 = 9;  // finetune-time 3x3 kernels
      lc.pcm = 2 * (2 * n * c * cg * k2 + n * c)  // two grouped convs + bias
               + 8 * n * c;                       // BN + SiLU
      params += 2 * (c * cg * k2 + c) + 2 * c;    // conv weights/biases + BN affine
    }
    lc.params = params;
    report.layers.push_back(lc);

    // crude live-footprint model: residual stream, LN output, q/k/v, window
    // gather, attention scores per head
    std::int64_t scores = v == Variant::kFull ? n * n * heads
                                              : windows_of(hp, wp, s) * s * s * s * s * heads;
    max_live = std::max(max_live, 8 * n * c + scores);
  }

  {
    LayerCost head;
    head.name = "head";
    head.ffn = n * c + linear_flops(1, c, cfg.num_classes);  // GAP + classifier
    head.params = c * cfg.num_classes + cfg.num_classes;
    report.layers.push_back(head);
  }

  for (const LayerCost& lc : report.layers) {
    report.total_flops += lc.flops();
    report.total_params += lc.params;
  }
  report.peak_bytes = 8 * std::max(max_live, n * c);
  return report;
}

std::string CostReport::render() const {
  std::ostringstream os;
  os << kFlopConvention << "\n";
  os << "layer,variant,attn_core,attn_extra,attn_proj,ffn,norm,pcm,flops,params\n";
  for (const LayerCost& lc : layers) {
    os << lc.name << "," << (lc.variant == Variant::kFull && lc.attn_core == 0
                                 ? "-"
                                 : variant_name(lc.variant))
       << "," << lc.attn_core << "," << lc.attn_extra << "," << lc.attn_proj << "," << lc.ffn
       << "," << lc.norm << "," << lc.pcm << "," << lc.flops() << "," << lc.params << "\n";
  }
  os << "total_flops," << total_flops << "\n";
  os << "total_params," << total_params << "\n";
  os << "peak_bytes," << peak_bytes << "\n";
  return os.str();
}

}  // namespace rvsa
