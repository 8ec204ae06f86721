#include "rvsa/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace rvsa {

Tensor sincos_tokens(int height, int width, int dim) {
  if (dim % 4 != 0)
    throw std::invalid_argument("sincos_encoding: dim must be divisible by 4, got " +
                                std::to_string(dim));
  int half = dim / 2;      // per-axis width
  int quarter = dim / 4;   // frequencies per axis
  Tensor out({height * width, dim});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int row = y * width + x;
      for (int k = 0; k < quarter; ++k) {
        double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
        // channels [0, half): y axis; [half, dim): x axis
        out.at(row, k) = std::sin(y * omega);
        out.at(row, quarter + k) = std::cos(y * omega);
        out.at(row, half + k) = std::sin(x * omega);
        out.at(row, half + quarter + k) = std::cos(x * omega);
      }
    }
  return out;
}

Tensor sincos_encoding(int height, int width, int dim) {
  Tensor tok = sincos_tokens(height, width, dim);
  Tensor out({dim, height, width});
  for (int c = 0; c < dim; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = tok.at(y * width + x, c);
  return out;
}

Tensor extract_patches(const Tensor& image, int patch) {
  if (image.rank() != 3) dim_error("extract_patches: expects Cin x H x W");
  int cin = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    dim_error("extract_patches: image " + std::to_string(h) + "x" + std::to_string(w) +
              " not divisible by patch " + std::to_string(patch));
  int ht = h / patch, wt = w / patch;
  Tensor out({ht * wt, cin * patch * patch});
  for (int py = 0; py < ht; ++py)
    for (int px = 0; px < wt; ++px) {
      int row = py * wt + px;
      int col = 0;
      for (int c = 0; c < cin; ++c)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            out.at(row, col++) = image.at(c, py * patch + dy, px * patch + dx);
    }
  return out;
}

Tensor pad_pcm_kernel(const Tensor& kernel_1x1) {
  if (kernel_1x1.rank() != 4 || kernel_1x1.dim(2) != 1 || kernel_1x1.dim(3) != 1)
    throw std::logic_error("pad_pcm_kernel: expects a 1x1 kernel");
  int cout = kernel_1x1.dim(0), cg = kernel_1x1.dim(1);
  Tensor out({cout, cg, 3, 3});
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cg; ++i)
      out[((static_cast<std::size_t>(o) * cg + i) * 3 + 1) * 3 + 1] =
          kernel_1x1[static_cast<std::size_t>(o) * cg + i];
  return out;
}

// ---- ModelConfig -----------------------------------------------------------

ModelConfig ModelConfig::vit_b() {
  ModelConfig c;
  return c;  // standard base configuration: patch 16, dim 768, 12 heads, depth 12
}

ModelConfig ModelConfig::vitae_b() {
  ModelConfig c;
  c.pcm_groups = 192;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 4;
  c.ffn_ratio = 4;
  c.pcm_groups = 0;
  c.num_classes = 10;
  c.in_channels = 1;
  // at depth 4 the k*(depth/4) rule would make every layer full attention,
  // so the small preset interleaves explicitly
  c.full_attention_layers = {2, 4};
  return c;
}

std::vector<int> ModelConfig::schedule() const {
  if (!full_attention_layers.empty()) return full_attention_layers;
  if (depth % 4 != 0)
    throw std::invalid_argument(
        "ModelConfig: default full-attention schedule needs depth divisible by 4");
  std::vector<int> s;
  for (int k = 1; k <= 4; ++k) s.push_back(k * (depth / 4));
  return s;
}

Variant ModelConfig::layer_variant(int layer_1based) const {
  for (int l : schedule())
    if (l == layer_1based) return Variant::kFull;
  return windowed_variant;
}

void ModelConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("ModelConfig: embed_dim not divisible by heads");
  if (pcm_groups > 0 && embed_dim % pcm_groups != 0)
    throw std::invalid_argument("ModelConfig: embed_dim not divisible by pcm_groups");
  for (int l : schedule())
    if (l < 1 || l > depth)
      throw std::invalid_argument("ModelConfig: full-attention layer index " +
                                  std::to_string(l) + " outside 1.." + std::to_string(depth));
}

// ---- PCM -------------------------------------------------------------------

PcmBranch PcmBranch::create(int channels, int groups, Rng& rng) {
  if (groups < 1 || channels % groups != 0)
    throw std::invalid_argument("PcmBranch: channels not divisible by groups");
  PcmBranch p;
  p.groups = groups;
  p.kernel = 1;
  int cg = channels / groups;
  p.conv1_w = Var::leaf(rng.normal_tensor({channels, cg, 1, 1}, 1.0 / std::sqrt(cg)));
  p.conv1_b = Var::leaf(Tensor::zeros({channels}));
  p.conv2_w = Var::leaf(rng.normal_tensor({channels, cg, 1, 1}, 1.0 / std::sqrt(cg)));
  p.conv2_b = Var::leaf(Tensor::zeros({channels}));
  p.bn = BatchNorm2dLayer(channels);
  return p;
}

Var PcmBranch::forward(const Var& x, bool training) {
  Var a = grouped_conv2d(x, conv1_w, conv1_b, groups);
  Var b = bn.forward(a, training);
  Var c = activation(b, Activation::kSilu);
  return grouped_conv2d(c, conv2_w, conv2_b, groups);
}

void PcmBranch::pad_kernels() {
  if (kernel != 1) throw std::logic_error("PcmBranch: kernels already padded");
  conv1_w = Var::leaf(pad_pcm_kernel(conv1_w.value()));
  conv2_w = Var::leaf(pad_pcm_kernel(conv2_w.value()));
  kernel = 3;
}

void PcmBranch::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".conv1.weight", conv1_w);
  out.emplace_back(prefix + ".conv1.bias", conv1_b);
  out.emplace_back(prefix + ".conv2.weight", conv2_w);
  out.emplace_back(prefix + ".conv2.bias", conv2_b);
  bn.collect(prefix + ".bn", out);
}

// ---- Block -----------------------------------------------------------------

Block Block::create(int embed_dim, int heads, int ffn_ratio, const AttentionConfig& acfg,
                    int pcm_groups, Rng& rng) {
  Block b;
  b.attn_cfg = acfg;
  b.ln1 = LayerNormLayer(embed_dim);
  b.ln2 = LayerNormLayer(embed_dim);
  b.attn = AttentionLayer::create(acfg, rng);
  b.fc1 = LinearLayer(ffn_ratio * embed_dim, embed_dim, rng);
  b.fc2 = LinearLayer(embed_dim, ffn_ratio * embed_dim, rng);
  if (pcm_groups > 0) {
    b.has_pcm = true;
    b.pcm = PcmBranch::create(embed_dim, pcm_groups, rng);
  }
  return b;
}

namespace {

Var ffn_apply(const Block& b, const Var& tokens) {
  return b.fc2.forward(activation(b.fc1.forward(tokens), Activation::kGelu));
}

}  // namespace

Var Block::forward(const Var& x, bool training) {
  int h = x.value().dim(1), w = x.value().dim(2);
  Var tokens = img_to_tokens(x);
  Var normed = ln1.forward(tokens);
  Var att = img_to_tokens(attend(tokens_to_img(normed, h, w), attn, attn_cfg));
  Var res = add(tokens, att);
  if (has_pcm) res = add(res, img_to_tokens(pcm.forward(x, training)));
  Var out = add(res, ffn_apply(*this, ln2.forward(res)));
  return tokens_to_img(out, h, w);
}

Var Block::forward_tokens(const Var& tokens, bool training) {
  if (attn_cfg.variant != Variant::kFull)
    throw std::logic_error("Block::forward_tokens: only the full-attention variant works on "
                           "bare token sequences");
  Var att = full_attention_tokens(ln1.forward(tokens), attn, attn_cfg);
  Var res = add(tokens, att);
  if (has_pcm) {
    if (pcm.kernel != 1)
      throw std::logic_error("Block::forward_tokens: padded PCM kernels need a 2-D grid");
    int n = tokens.value().dim(0);
    // 1x1 grouped conv on a sequence = per-token grouped linear
    Var p = pcm.forward(tokens_to_img(tokens, n, 1), training);
    res = add(res, img_to_tokens(p));
  }
  return add(res, ffn_apply(*this, ln2.forward(res)));
}

void Block::collect(const std::string& prefix, NamedParams& out) const {
  ln1.collect(prefix + ".ln1", out);
  attn.collect(prefix + ".attn", attn_cfg, out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  if (has_pcm) pcm.collect(prefix + ".pcm", out);
}

// ---- Model -----------------------------------------------------------------

Model build_model(const ModelConfig& cfg, ModelMode mode, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.mode = mode;
  Rng rng(seed);
  m.patch_embed = LinearLayer(cfg.embed_dim, cfg.in_channels * cfg.patch_size * cfg.patch_size,
                              rng);
  for (int l = 1; l <= cfg.depth; ++l) {
    AttentionConfig acfg;
    acfg.embed_dim = cfg.embed_dim;
    acfg.heads = cfg.heads;
    acfg.window_size = cfg.window_size;
    // masking destroys the grid, so pretraining is full attention throughout
    acfg.variant = mode == ModelMode::kPretrain ? Variant::kFull : cfg.layer_variant(l);
    Block b = Block::create(cfg.embed_dim, cfg.heads, cfg.ffn_ratio, acfg, cfg.pcm_groups, rng);
    // fresh finetune models start from padded kernels directly
    if (mode == ModelMode::kFinetune && b.has_pcm) b.pcm.pad_kernels();
    m.blocks.push_back(std::move(b));
  }
  m.head = LinearLayer(cfg.num_classes, cfg.embed_dim, rng);
  return m;
}

Var Model::forward_until(const Tensor& image, int upto_layer, bool training) {
  if (upto_layer < 1 || upto_layer > cfg.depth + 1)
    throw std::invalid_argument("Model: layer index out of range");
  int ht = image.dim(1) / cfg.patch_size, wt = image.dim(2) / cfg.patch_size;
  Var patches = Var::constant(extract_patches(image, cfg.patch_size));
  Var tokens = patch_embed.forward(patches);
  Var pos = Var::constant(sincos_tokens(ht, wt, cfg.embed_dim));
  Var x = tokens_to_img(add(tokens, pos), ht, wt);
  for (int l = 1; l < upto_layer; ++l)
    x = blocks[static_cast<std::size_t>(l - 1)].forward(x, training);
  return x;
}

Var Model::forward(const Tensor& image, bool training) {
  return forward_until(image, cfg.depth + 1, training);
}

Var Model::classify(const Tensor& image, bool training) {
  Var feat = forward(image, training);
  Var pooled = mean_rows(img_to_tokens(feat));
  return head.forward(reshape(pooled, {1, cfg.embed_dim}));
}

NamedParams Model::parameters() const {
  NamedParams p;
  patch_embed.collect("patch_embed", p);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect("block" + std::to_string(i + 1), p);
  head.collect("head", p);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> Model::state() {
  std::vector<std::pair<std::string, Tensor*>> s;
  for (auto& [name, var] : parameters()) s.emplace_back(name, &var.node()->value);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].has_pcm) continue;
    std::string prefix = "block" + std::to_string(i + 1) + ".pcm.bn";
    s.emplace_back(prefix + ".running_mean", &blocks[i].pcm.bn.running_mean);
    s.emplace_back(prefix + ".running_var", &blocks[i].pcm.bn.running_var);
  }
  return s;
}

}  // namespace rvsa
