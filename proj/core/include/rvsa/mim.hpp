#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvsa/blocks.hpp"

namespace rvsa {

/// Deterministic random token-mask partition.
struct MaskPlan {
  int total_tokens = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> masked_ids;   // sorted
  std::vector<int> visible_ids;  // sorted

  int num_masked() const { return static_cast<int>(masked_ids.size()); }
  int num_visible() const { return static_cast<int>(visible_ids.size()); }
};

/// Uniform subset without replacement; mask count is round-half-up of
/// ratio * total_tokens. Identical arguments give identical plans.
MaskPlan random_mask(int total_tokens, double ratio, std::uint64_t seed);

/// (patch - mean) / sqrt(var + 1e-6); constant patches map to zero.
std::vector<double> normalized_pixel_target(const std::vector<double>& patch);

/// Per-token normalized pixel targets of one image: rows of
/// (tokens) x (patch^2 * channels).
Tensor normalized_patch_targets(const Tensor& image, int patch);

/// MAE-style encoder-decoder at desk scale: full-attention encoder over the
/// visible tokens, learned mask token, one decoder block of width C/2,
/// per-token pixel prediction.
struct MimModel {
  Model encoder;  // pretrain mode
  LinearLayer dec_embed;
  Var mask_token;
  Block dec_block;
  LayerNormLayer dec_norm;
  LinearLayer dec_pred;
  int dec_dim = 0;

  NamedParams parameters() const;
};

MimModel build_mim_model(const ModelConfig& cfg, std::uint64_t seed);

/// Reconstruction loss of one image under one mask plan: MSE over the
/// masked tokens only, in per-patch normalized pixel space.
Var mim_loss(MimModel& model, const Tensor& image, const MaskPlan& plan);

/// One optimizer step over a batch (mean of per-image losses); returns the
/// batch loss before the update.
double mim_step(MimModel& model, AdamW& opt, const std::vector<Tensor>& images,
                const std::vector<MaskPlan>& plans);

struct ToyTrainConfig {
  ModelConfig model = ModelConfig::desk();
  int steps = 200;
  int batch = 2;
  std::uint64_t seed = 0;
  double mask_ratio = 0.75;
  double lr = 1.5e-4;
  double weight_decay = 0.05;
  int image_size = 32;
  int dataset_size = 64;          // synthetic images generated when dir empty
  std::string dataset_dir;        // optional PGM/PPM folder
  std::string loss_csv;           // optional output path
  std::string checkpoint_out;     // optional pretrain checkpoint
  std::string finetune_ckpt_out;  // optional padded/finetune checkpoint
};

/// Random stripe pattern in [0, 1], channels x size x size.
Tensor synthetic_striped_image(int size, int channels, Rng& rng);

/// Runs the toy masked-image-modeling loop; returns the per-step loss curve.
/// Deterministic for a fixed config.
std::vector<double> train_toy(const ToyTrainConfig& cfg, MimModel* out_model = nullptr);

}  // namespace rvsa
