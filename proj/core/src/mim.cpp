#include "rvsa/mim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "rvsa/checkpoint.hpp"
#include "rvsa/image_io.hpp"

namespace rvsa {

MaskPlan random_mask(int total_tokens, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("random_mask: ratio must be in (0,1)");
  if (total_tokens < 1) throw std::invalid_argument("random_mask: no tokens");
  MaskPlan plan;
  plan.total_tokens = total_tokens;
  plan.ratio = ratio;
  plan.seed = seed;
  int masked = static_cast<int>(std::floor(ratio * total_tokens + 0.5));  // round half up
  Rng rng(seed);
  plan.masked_ids = rng.sample_without_replacement(total_tokens, masked);
  std::sort(plan.masked_ids.begin(), plan.masked_ids.end());
  std::vector<bool> is_masked(static_cast<std::size_t>(total_tokens), false);
  for (int id : plan.masked_ids) is_masked[static_cast<std::size_t>(id)] = true;
  for (int i = 0; i < total_tokens; ++i)
    if (!is_masked[static_cast<std::size_t>(i)]) plan.visible_ids.push_back(i);
  return plan;
}

std::vector<double> normalized_pixel_target(const std::vector<double>& patch) {
  if (patch.size() < 2)
    throw std::invalid_argument("normalized_pixel_target: patch length must be >= 2");
  double mean = 0.0;
  for (double v : patch) mean += v;
  mean /= static_cast<double>(patch.size());
  double var = 0.0;
  for (double v : patch) var += (v - mean) * (v - mean);
  var /= static_cast<double>(patch.size());
  double inv = 1.0 / std::sqrt(var + 1e-6);
  std::vector<double> out(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) out[i] = (patch[i] - mean) * inv;
  return out;
}

Tensor normalized_patch_targets(const Tensor& image, int patch) {
  Tensor patches = extract_patches(image, patch);
  int n = patches.dim(0), d = patches.dim(1);
  Tensor out({n, d});
  std::vector<double> row(static_cast<std::size_t>(d));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = patches.at(i, j);
    std::vector<double> t = normalized_pixel_target(row);
    for (int j = 0; j < d; ++j) out.at(i, j) = t[static_cast<std::size_t>(j)];
  }
  return out;
}

MimModel build_mim_model(const ModelConfig& cfg, std::uint64_t seed) {
  MimModel m;
  m.encoder = build_model(cfg, ModelMode::kPretrain, seed);
  Rng rng(seed ^ 0xDECDECDECull);
  m.dec_dim = cfg.embed_dim / 2;
  if (m.dec_dim % 4 != 0)
    throw std::invalid_argument("build_mim_model: decoder width must be divisible by 4");
  m.dec_embed = LinearLayer(m.dec_dim, cfg.embed_dim, rng);
  m.mask_token = Var::leaf(rng.normal_tensor({m.dec_dim}, 0.02));
  AttentionConfig acfg;
  acfg.embed_dim = m.dec_dim;
  acfg.heads = std::max(1, cfg.heads / 2);
  acfg.variant = Variant::kFull;
  m.dec_block = Block::create(m.dec_dim, acfg.heads, cfg.ffn_ratio, acfg, 0, rng);
  m.dec_norm = LayerNormLayer(m.dec_dim);
  m.dec_pred = LinearLayer(cfg.in_channels * cfg.patch_size * cfg.patch_size, m.dec_dim, rng);
  return m;
}

NamedParams MimModel::parameters() const {
  NamedParams p = encoder.parameters();
  // the classification head is unused during MIM; drop it from the step
  std::erase_if(p, [](const auto& kv) { return kv.first.rfind("head.", 0) == 0; });
  dec_embed.collect("decoder.embed", p);
  p.emplace_back("decoder.mask_token", mask_token);
  dec_block.collect("decoder.block", p);
  dec_norm.collect("decoder.norm", p);
  dec_pred.collect("decoder.pred", p);
  return p;
}

Var mim_loss(MimModel& model, const Tensor& image, const MaskPlan& plan) {
  const ModelConfig& cfg = model.encoder.cfg;
  int ht = image.dim(1) / cfg.patch_size, wt = image.dim(2) / cfg.patch_size;
  int n = ht * wt;
  if (plan.total_tokens != n)
    dim_error("mim_loss: plan covers " + std::to_string(plan.total_tokens) +
              " tokens, image has " + std::to_string(n));

  Var patches = Var::constant(extract_patches(image, cfg.patch_size));
  Var tokens = model.encoder.patch_embed.forward(patches);
  Var pos = Var::constant(sincos_tokens(ht, wt, cfg.embed_dim));
  Var visible = gather_rows(add(tokens, pos), plan.visible_ids);
  for (Block& b : model.encoder.blocks) visible = b.forward_tokens(visible, true);

  // decoder input: embedded visible tokens + mask tokens, plus positions
  Var dec_vis = model.dec_embed.forward(visible);
  Var ones = Var::constant(Tensor::full({plan.num_masked(), 1}, 1.0));
  Var masks = matmul(ones, reshape(model.mask_token, {1, model.dec_dim}));
  Var dec_tokens = add(scatter_rows(dec_vis, plan.visible_ids, n),
                       scatter_rows(masks, plan.masked_ids, n));
  Var dec_pos = Var::constant(sincos_tokens(ht, wt, model.dec_dim));
  Var dec = model.dec_block.forward_tokens(add(dec_tokens, dec_pos), true);
  Var pred = model.dec_pred.forward(model.dec_norm.forward(dec));

  Var masked_pred = gather_rows(pred, plan.masked_ids);
  Tensor targets = normalized_patch_targets(image, cfg.patch_size);
  Tensor masked_targets({plan.num_masked(), targets.dim(1)});
  for (int i = 0; i < plan.num_masked(); ++i)
    for (int j = 0; j < targets.dim(1); ++j)
      masked_targets.at(i, j) = targets.at(plan.masked_ids[static_cast<std::size_t>(i)], j);
  return mse(masked_pred, Var::constant(masked_targets));
}

double mim_step(MimModel& model, AdamW& opt, const std::vector<Tensor>& images,
                const std::vector<MaskPlan>& plans) {
  if (images.empty() || images.size() != plans.size())
    throw std::invalid_argument("mim_step: batch and plans must be nonempty and equal-sized");
  NamedParams params = model.parameters();
  AdamW::zero_grad(params);
  Var total;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Var l = mim_loss(model, images[i], plans[i]);
    total = i == 0 ? l : add(total, l);
  }
  Var loss = scale(total, 1.0 / static_cast<double>(images.size()));
  reverse_accumulate(loss);
  double value = loss.value()[0];
  opt.step(params);
  return value;
}

Tensor synthetic_striped_image(int size, int channels, Rng& rng) {
  // random-orientation square-wave stripes with random period and phase
  double angle = rng.uniform(0.0, 3.14159265358979323846);
  double period = rng.uniform(3.0, 9.0);
  double phase = rng.uniform(0.0, period);
  double lo = rng.uniform(0.0, 0.3), hi = rng.uniform(0.7, 1.0);
  double ca = std::cos(angle), sa = std::sin(angle);
  Tensor img({channels, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double t = ca * x + sa * y + phase;
      double frac = t / period - std::floor(t / period);
      double v = frac < 0.5 ? hi : lo;
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = v;
    }
  return img;
}

std::vector<double> train_toy(const ToyTrainConfig& cfg, MimModel* out_model) {
  std::vector<Tensor> dataset;
  if (!cfg.dataset_dir.empty()) {
    dataset = load_image_dir(cfg.dataset_dir, cfg.model.in_channels);
    if (dataset.empty())
      throw std::runtime_error("train_toy: no readable images in " + cfg.dataset_dir);
  } else {
    Rng data_rng(cfg.seed ^ 0xDA7A5E7ull);
    for (int i = 0; i < cfg.dataset_size; ++i)
      dataset.push_back(
          synthetic_striped_image(cfg.image_size, cfg.model.in_channels, data_rng));
  }
  int tokens_per_image =
      (dataset[0].dim(1) / cfg.model.patch_size) * (dataset[0].dim(2) / cfg.model.patch_size);

  MimModel model = build_mim_model(cfg.model, cfg.seed);
  AdamW opt(cfg.lr, cfg.weight_decay);
  Rng pick(cfg.seed ^ 0xB172Cull);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> batch;
    std::vector<MaskPlan> plans;
    for (int b = 0; b < cfg.batch; ++b) {
      batch.push_back(dataset[static_cast<std::size_t>(pick.below(dataset.size()))]);
      plans.push_back(random_mask(tokens_per_image, cfg.mask_ratio, pick.next_u64()));
    }
    curve.push_back(mim_step(model, opt, batch, plans));
  }
  if (!cfg.loss_csv.empty()) {
    std::ofstream f(cfg.loss_csv);
    if (!f) throw std::runtime_error("train_toy: cannot write " + cfg.loss_csv);
    f << "step,loss\n";
    f.precision(12);
    for (std::size_t i = 0; i < curve.size(); ++i) f << i << ',' << curve[i] << '\n';
  }
  if (!cfg.checkpoint_out.empty())
    save_checkpoint(cfg.checkpoint_out, model.encoder.state(), ModelMode::kPretrain);
  if (!cfg.finetune_ckpt_out.empty()) {
    // padded copy: same weights with every PCM kernel embedded in a 3x3
    Model ft = build_model(cfg.model, ModelMode::kFinetune, cfg.seed);
    copy_matching_state(model.encoder, ft);
    save_checkpoint(cfg.finetune_ckpt_out, ft.state(), ModelMode::kFinetune);
  }
  if (out_model) *out_model = std::move(model);
  return curve;
}

}  // namespace rvsa
