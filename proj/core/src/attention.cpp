#include "rvsa/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace rvsa {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kWindow: return "window";
    case Variant::kVsa: return "vsa";
    case Variant::kRvsa: return "rvsa";
    case Variant::kRvsaDiamond: return "rvsa-diamond";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "window") return Variant::kWindow;
  if (name == "vsa") return Variant::kVsa;
  if (name == "rvsa") return Variant::kRvsa;
  if (name == "rvsa-diamond" || name == "rvsa_diamond") return Variant::kRvsaDiamond;
  throw std::invalid_argument("unknown attention variant: " + name);
}

void AttentionConfig::validate() const {
  if (embed_dim < 1 || heads < 1)
    throw std::invalid_argument("AttentionConfig: embed_dim and heads must be >= 1");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("AttentionConfig: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by heads " + std::to_string(heads));
  if (window_size < 1) throw std::invalid_argument("AttentionConfig: window_size must be >= 1");
}

AttentionLayer AttentionLayer::create(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  AttentionLayer l;
  int c = cfg.embed_dim;
  l.q = LinearLayer(c, c, rng);
  l.k = LinearLayer(c, c, rng);
  l.v = LinearLayer(c, c, rng);
  l.out = LinearLayer(c, c, rng);
  if (cfg.learned_window()) {
    // zero init: training starts at exact window attention
    l.transform_head = LinearLayer::zeros(5 * cfg.heads, c);
    if (cfg.variant == Variant::kRvsaDiamond)
      l.transform_head_v = LinearLayer::zeros(5 * cfg.heads, c);
  }
  return l;
}

void AttentionLayer::collect(const std::string& prefix, const AttentionConfig& cfg,
                             NamedParams& params) const {
  q.collect(prefix + ".q", params);
  k.collect(prefix + ".k", params);
  v.collect(prefix + ".v", params);
  out.collect(prefix + ".out", params);
  if (cfg.learned_window()) {
    transform_head.collect(prefix + ".transform_head", params);
    if (cfg.variant == Variant::kRvsaDiamond)
      transform_head_v.collect(prefix + ".transform_head_v", params);
  }
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2)
    dim_error("scaled_dot_attention: expects rank-2 token matrices");
  int cq = q.value().dim(1);
  if (k.value().dim(1) != cq)
    dim_error("scaled_dot_attention: Q width " + std::to_string(cq) + " != K width " +
              std::to_string(k.value().dim(1)));
  if (k.value().dim(0) != v.value().dim(0))
    dim_error("scaled_dot_attention: K and V row counts differ");
  Var logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(cq)));
  return matmul(softmax_lastdim(logits), v);
}

namespace {

Var pad_token_map(const Var& tokens, int height, int width, int pad_h, int pad_w) {
  if (pad_h == 0 && pad_w == 0) return tokens;
  return img_to_tokens(pad2d(tokens_to_img(tokens, height, width), pad_h, pad_w));
}

/// Per-head slices of a projected token matrix.
std::vector<Var> head_slices(const Var& tokens, int heads, int head_dim) {
  std::vector<Var> s;
  s.reserve(static_cast<std::size_t>(heads));
  for (int i = 0; i < heads; ++i) s.push_back(slice_cols(tokens, i * head_dim, head_dim));
  return s;
}

struct WindowPrediction {
  std::vector<Var> per_head_params;  // heads entries of shape {5}
};

WindowPrediction predict_window(const Var& x_tokens_padded, const std::vector<int>& idx,
                                const LinearLayer& head, int heads) {
  Var gap = mean_rows(gather_rows(x_tokens_padded, idx));
  Var act = activation(gap, Activation::kLeakyRelu, 0.01);
  Var pred = head.forward(reshape(act, {1, act.value().dim(0)}));  // 1 x 5h
  WindowPrediction out;
  for (int h = 0; h < heads; ++h)
    out.per_head_params.push_back(reshape(slice_cols(pred, 5 * h, 5), {5}));
  return out;
}

Var attend_windowed(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg,
                    bool apply_out_proj) {
  int c = x.value().dim(0), height = x.value().dim(1), width = x.value().dim(2);
  WindowGrid grid = partition(height, width, cfg.window_size);
  int hp = grid.padded_height(), wp = grid.padded_width();
  int s = grid.window_size;
  int hd = cfg.head_dim();

  Var tokens = img_to_tokens(x);
  Var qp = pad_token_map(layer.q.forward(tokens), height, width, grid.pad_h, grid.pad_w);
  Var kp = pad_token_map(layer.k.forward(tokens), height, width, grid.pad_h, grid.pad_w);
  Var vp = pad_token_map(layer.v.forward(tokens), height, width, grid.pad_h, grid.pad_w);

  std::vector<Var> q_heads = head_slices(qp, cfg.heads, hd);
  std::vector<Var> k_heads = head_slices(kp, cfg.heads, hd);
  std::vector<Var> v_heads = head_slices(vp, cfg.heads, hd);

  Var xp;  // padded input features, only needed for transform prediction
  if (cfg.learned_window())
    xp = pad_token_map(tokens, height, width, grid.pad_h, grid.pad_w);
  Tensor rel = window_relative_offsets(s);
  bool use_theta = cfg.variant == Variant::kRvsa || cfg.variant == Variant::kRvsaDiamond;

  std::vector<Var> window_outputs;  // s^2 x C each, window-major
  std::vector<int> order;           // padded token index of every output row
  order.reserve(static_cast<std::size_t>(hp) * wp);
  for (int r = 0; r < grid.rows; ++r)
    for (int col = 0; col < grid.cols; ++col) {
      std::vector<int> idx = grid.token_indices(r, col);
      order.insert(order.end(), idx.begin(), idx.end());

      WindowPrediction pk, pv;
      if (cfg.learned_window()) {
        pk = predict_window(xp, idx, layer.transform_head, cfg.heads);
        if (cfg.variant == Variant::kRvsaDiamond)
          pv = predict_window(xp, idx, layer.transform_head_v, cfg.heads);
      }
      double cx, cy;
      grid.center(r, col, cx, cy);

      std::vector<Var> head_outs;
      for (int h = 0; h < cfg.heads; ++h) {
        Var qw = gather_rows(q_heads[static_cast<size_t>(h)], idx);
        Var kw, vw;
        if (cfg.learned_window()) {
          Var grid_k = window_sample_grid(pk.per_head_params[static_cast<size_t>(h)], rel, cx,
                                          cy, use_theta);
          kw = bilinear_sample(k_heads[static_cast<size_t>(h)], hp, wp, grid_k);
          if (cfg.variant == Variant::kRvsaDiamond) {
            Var grid_v = window_sample_grid(pv.per_head_params[static_cast<size_t>(h)], rel, cx,
                                            cy, use_theta);
            vw = bilinear_sample(v_heads[static_cast<size_t>(h)], hp, wp, grid_v);
          } else {
            vw = bilinear_sample(v_heads[static_cast<size_t>(h)], hp, wp, grid_k);
          }
        } else {
          kw = gather_rows(k_heads[static_cast<size_t>(h)], idx);
          vw = gather_rows(v_heads[static_cast<size_t>(h)], idx);
        }
        head_outs.push_back(scaled_dot_attention(qw, kw, vw));
      }
      window_outputs.push_back(concat_cols(head_outs));
    }

  // Window-major rows -> padded token order, then crop the padding away.
  std::vector<int> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    inverse[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  Var stacked = concat_rows(window_outputs);
  Var padded_tokens = gather_rows(stacked, inverse);
  Var cropped = img_to_tokens(crop2d(tokens_to_img(padded_tokens, hp, wp), height, width));
  if (!apply_out_proj) return tokens_to_img(cropped, height, width);
  return tokens_to_img(layer.out.forward(cropped), height, width);
}

Var attend_full(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg,
                bool apply_out_proj) {
  int height = x.value().dim(1), width = x.value().dim(2);
  Var tokens = img_to_tokens(x);
  Var q = layer.q.forward(tokens);
  Var k = layer.k.forward(tokens);
  Var v = layer.v.forward(tokens);
  int hd = cfg.head_dim();
  std::vector<Var> head_outs;
  for (int h = 0; h < cfg.heads; ++h)
    head_outs.push_back(scaled_dot_attention(slice_cols(q, h * hd, hd),
                                             slice_cols(k, h * hd, hd),
                                             slice_cols(v, h * hd, hd)));
  Var cat = concat_cols(head_outs);
  if (!apply_out_proj) return tokens_to_img(cat, height, width);
  return tokens_to_img(layer.out.forward(cat), height, width);
}

Var attend_impl(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg,
                bool apply_out_proj) {
  cfg.validate();
  if (x.value().rank() != 3) dim_error("attend: expects C x H x W input");
  if (x.value().dim(0) != cfg.embed_dim)
    dim_error("attend: channel count " + std::to_string(x.value().dim(0)) +
              " != embed_dim " + std::to_string(cfg.embed_dim));
  if (x.value().dim(1) * x.value().dim(2) == 0)
    throw std::invalid_argument("attend: empty token grid");
  if (!x.value().all_finite()) throw std::domain_error("attend: non-finite input");
  if (cfg.variant == Variant::kFull) return attend_full(x, layer, cfg, apply_out_proj);
  return attend_windowed(x, layer, cfg, apply_out_proj);
}

}  // namespace

Var attend(const Var& x, const AttentionLayer& layer, const AttentionConfig& cfg) {
  return attend_impl(x, layer, cfg, true);
}

Var attend_pre_projection(const Var& x, const AttentionLayer& layer,
                          const AttentionConfig& cfg) {
  return attend_impl(x, layer, cfg, false);
}

Var full_attention_tokens(const Var& tokens, const AttentionLayer& layer,
                          const AttentionConfig& cfg) {
  cfg.validate();
  if (tokens.value().rank() != 2 || tokens.value().dim(1) != cfg.embed_dim)
    dim_error("full_attention_tokens: expects n x embed_dim tokens");
  Var q = layer.q.forward(tokens);
  Var k = layer.k.forward(tokens);
  Var v = layer.v.forward(tokens);
  int hd = cfg.head_dim();
  std::vector<Var> head_outs;
  for (int h = 0; h < cfg.heads; ++h)
    head_outs.push_back(scaled_dot_attention(slice_cols(q, h * hd, hd),
                                             slice_cols(k, h * hd, hd),
                                             slice_cols(v, h * hd, hd)));
  return layer.out.forward(concat_cols(head_outs));
}

WindowTransform predict_transform(const Tensor& padded_map, const WindowGrid& grid,
                                  const Tensor& head_weight, const Tensor& head_bias, int heads,
                                  bool use_theta, double leaky_slope) {
  int c = padded_map.dim(0);
  if (head_weight.rank() != 2 || head_weight.dim(0) != 5 * heads || head_weight.dim(1) != c)
    throw std::invalid_argument("predict_transform: head must map " + std::to_string(c) +
                                " -> " + std::to_string(5 * heads));
  if (padded_map.dim(1) != grid.padded_height() || padded_map.dim(2) != grid.padded_width())
    dim_error("predict_transform: map extents do not match padded grid");
  WindowTransform t;
  t.num_windows = grid.num_windows();
  t.heads = heads;
  t.data.assign(static_cast<std::size_t>(t.num_windows) * heads * 5, 0.0);
  int s = grid.window_size;
  std::vector<double> gap(static_cast<size_t>(c));
  for (int r = 0; r < grid.rows; ++r)
    for (int col = 0; col < grid.cols; ++col) {
      int w = r * grid.cols + col;
      for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            sum += padded_map.at(ch, r * s + y, col * s + x);
        double g = sum / (s * s);
        gap[static_cast<size_t>(ch)] = g >= 0.0 ? g : leaky_slope * g;
      }
      for (int h = 0; h < heads; ++h) {
        double raw[5];
        for (int j = 0; j < 5; ++j) {
          double acc = head_bias[static_cast<size_t>(5 * h + j)];
          for (int ch = 0; ch < c; ++ch)
            acc += head_weight.at(5 * h + j, ch) * gap[static_cast<size_t>(ch)];
          raw[j] = acc;
        }
        double* p = t.at(w, h);
        p[0] = 1.0 + raw[0];
        p[1] = 1.0 + raw[1];
        p[2] = raw[2];
        p[3] = raw[3];
        p[4] = use_theta ? raw[4] : 0.0;
      }
    }
  return t;
}

}  // namespace rvsa
