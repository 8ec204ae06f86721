#pragma once

#include <string>
#include <vector>

#include "rvsa/attention.hpp"

namespace rvsa {

/// Fixed 2-D sin-cos positional table, shape C x H x W. Pure function of its
/// arguments; C must be divisible by 4. First C/2 channels encode y, the
/// rest x.
Tensor sincos_encoding(int height, int width, int dim);
/// Same table as a (H*W) x C token matrix.
Tensor sincos_tokens(int height, int width, int dim);

/// Non-overlapping p x p patches flattened to rows: (H/p * W/p) x (Cin*p*p).
Tensor extract_patches(const Tensor& image, int patch);

/// Pads a pretrained 1x1 kernel (Cout x Cg x 1 x 1) to 3x3 with the learned
/// value at the center and the 8 ring entries zero.
Tensor pad_pcm_kernel(const Tensor& kernel_1x1);

struct ModelConfig {
  int patch_size = 16;
  int embed_dim = 768;
  int heads = 12;
  int depth = 12;
  int ffn_ratio = 4;
  int pcm_groups = 0;  // 0 = plain ViT (no PCM branch)
  int window_size = 7;
  Variant windowed_variant = Variant::kRvsa;
  std::vector<int> full_attention_layers;  // 1-based; empty = default rule
  int in_channels = 3;
  int num_classes = 10;

  /// The full-scale presets (never trained here) and the small test preset.
  static ModelConfig vit_b();
  static ModelConfig vitae_b();
  static ModelConfig desk();

  /// Resolved full-attention schedule. The default places full attention at
  /// layers k*(depth/4), k = 1..4, which requires depth divisible by 4.
  std::vector<int> schedule() const;
  Variant layer_variant(int layer_1based) const;
  void validate() const;
};

struct PcmBranch {
  Var conv1_w, conv1_b, conv2_w, conv2_b;
  BatchNorm2dLayer bn;
  int groups = 1;
  int kernel = 1;  // 1 in pretrain, 3 after pad_pcm_kernel

  static PcmBranch create(int channels, int groups, Rng& rng);
  Var forward(const Var& x, bool training);
  void pad_kernels();  // 1x1 -> 3x3, once
  void collect(const std::string& prefix, NamedParams& out) const;
};

/// One encoder block: LN -> attention -> add, LN -> FFN(GELU) -> add, with
/// an optional PCM branch summed into the first residual (ViTAE cell).
struct Block {
  LayerNormLayer ln1, ln2;
  AttentionLayer attn;
  AttentionConfig attn_cfg;
  LinearLayer fc1, fc2;
  bool has_pcm = false;
  PcmBranch pcm;

  static Block create(int embed_dim, int heads, int ffn_ratio, const AttentionConfig& acfg,
                      int pcm_groups, Rng& rng);
  Var forward(const Var& x, bool training);              // C x H x W
  Var forward_tokens(const Var& tokens, bool training);  // n x C, full attention only
  void collect(const std::string& prefix, NamedParams& out) const;
};

enum class ModelMode { kPretrain, kFinetune };

struct Model {
  ModelConfig cfg;
  ModelMode mode = ModelMode::kFinetune;
  LinearLayer patch_embed;
  std::vector<Block> blocks;
  LinearLayer head;

  /// Patch embed + positional encoding + all blocks; returns C x Ht x Wt.
  Var forward(const Tensor& image, bool training);
  /// Token features just before block `upto_layer` (1-based), for geometry
  /// inspection; upto_layer = depth+1 gives the final features.
  Var forward_until(const Tensor& image, int upto_layer, bool training);
  /// GAP over final tokens then the linear head.
  Var classify(const Tensor& image, bool training);

  NamedParams parameters() const;
  /// Parameters plus non-trainable buffers (BN running stats), for
  /// checkpointing.
  std::vector<std::pair<std::string, Tensor*>> state();
};

Model build_model(const ModelConfig& cfg, ModelMode mode, std::uint64_t seed);

}  // namespace rvsa
