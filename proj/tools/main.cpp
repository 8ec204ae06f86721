// rvsa command-line front end: verification, cost accounting, benchmarks,
// geometry export, toy pretraining and gradient checks.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "rvsa/attention.hpp"
#include "rvsa/blocks.hpp"
#include "rvsa/checkpoint.hpp"
#include "rvsa/config.hpp"
#include "rvsa/cost.hpp"
#include "rvsa/gradcheck.hpp"
#include "rvsa/geometry.hpp"
#include "rvsa/image_io.hpp"
#include "rvsa/mim.hpp"
#include "rvsa/verify.hpp"

namespace {

using namespace rvsa;

ModelConfig preset_by_name(const std::string& name) {
  if (name == "vit-b") return ModelConfig::vit_b();
  if (name == "vitae-b") return ModelConfig::vitae_b();
  if (name == "desk") return ModelConfig::desk();
  throw CLI::ValidationError("--preset", "unknown preset '" + name + "' (vit-b, vitae-b, desk)");
}

int cmd_verify(std::uint64_t seed, int prec) {
  set_precision(prec == 32 ? Precision::k32 : Precision::k64);
  VerifyReport report = run_verification_suite(seed);
  std::cout << report.render();
  return report.all_passed() ? 0 : 1;
}

int cmd_flops(const std::string& preset, const std::string& tokens,
              const std::string& variant) {
  ModelConfig cfg = preset_by_name(preset);
  if (!variant.empty()) cfg.windowed_variant = variant_from_name(variant);
  int h = 0, w = 0;
  if (std::sscanf(tokens.c_str(), "%dx%d", &h, &w) != 2 || h <= 0 || w <= 0)
    throw CLI::ValidationError("--tokens", "expected HxW, e.g. 64x64");
  std::cout << model_cost(cfg, h, w).render();
  return 0;
}

int cmd_bench(const std::string& preset, int repeat) {
  ModelConfig cfg = preset_by_name(preset);
  // bench at desk width regardless of preset depth; the full-scale widths
  // would take minutes per repeat in this scalar engine
  const int c = std::min(cfg.embed_dim, 64);
  const int heads = std::min(cfg.heads, 4);
  const int grid = 28;
  Rng rng(1);
  Tensor x = rng.normal_tensor({c, grid, grid});
  std::cout << "variant,repeat,mean_ms,min_ms\n";
  for (Variant v : {Variant::kWindow, Variant::kVsa, Variant::kRvsa, Variant::kRvsaDiamond,
                    Variant::kFull}) {
    AttentionConfig acfg{c, heads, cfg.window_size, v};
    Rng wrng(2);
    AttentionLayer layer = AttentionLayer::create(acfg, wrng);
    double total = 0.0, best = 1e300;
    for (int r = 0; r < repeat; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      attend(Var::constant(x), layer, acfg);
      auto t1 = std::chrono::steady_clock::now();
      double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      total += ms;
      best = std::min(best, ms);
    }
    std::printf("%s,%d,%.3f,%.3f\n", variant_name(v), repeat, total / repeat, best);
  }
  return 0;
}

// Exports the learned window geometry of one layer as CSV + SVG. The
// transform head is evaluated on the layer's normalized input, exactly as
// the attention path sees it.
int cmd_viz(const std::string& ckpt, const std::string& image_path, int layer, int head,
            const std::string& preset, const std::string& out_prefix) {
  CheckpointManifest manifest = read_manifest(ckpt);
  if (manifest.mode != ModelMode::kFinetune)
    throw std::invalid_argument("viz: checkpoint must be in finetune mode");
  ModelConfig cfg = preset_by_name(preset);
  Model model = build_model(cfg, ModelMode::kFinetune, 0);
  load_checkpoint(ckpt, model);
  if (layer < 1 || layer > cfg.depth)
    throw std::invalid_argument("viz: layer out of range 1.." + std::to_string(cfg.depth));
  Variant v = cfg.layer_variant(layer);
  if (v == Variant::kFull || v == Variant::kWindow)
    throw std::invalid_argument("viz: layer " + std::to_string(layer) +
                                " has no learned window transform (" + variant_name(v) + ")");

  Tensor image = load_netpbm(image_path);
  Var feats = model.forward_until(image, layer, /*training=*/false);
  Block& blk = model.blocks[static_cast<std::size_t>(layer - 1)];
  Var normed = blk.ln1.forward(img_to_tokens(feats));
  int ht = feats.value().dim(1), wt = feats.value().dim(2);
  WindowGrid grid = partition(ht, wt, cfg.window_size);
  Var padded = pad2d(tokens_to_img(normed, ht, wt), grid.pad_h, grid.pad_w);

  auto write_pair = [&](const LinearLayer& head_layer, const std::string& tag) {
    WindowTransform tr = predict_transform(padded.value(), grid, head_layer.weight.value(),
                                           head_layer.bias.value(), cfg.heads,
                                           v != Variant::kVsa);
    std::string base = out_prefix + "_layer" + std::to_string(layer) + tag;
    std::ofstream csv(base + ".csv");
    csv << geometry_csv(layer, grid, tr);
    std::ofstream svg(base + ".svg");
    svg << geometry_svg(grid, tr, head);
    std::cout << "wrote " << base << ".csv and " << base << ".svg\n";
  };
  const AttentionLayer& attn = blk.attn;
  if (v == Variant::kRvsaDiamond) {
    write_pair(attn.transform_head, "_k");
    write_pair(attn.transform_head_v, "_v");
  } else {
    write_pair(attn.transform_head, "");
  }
  return 0;
}

int cmd_pretrain_toy(const std::string& config_path) {
  ConfigFile ini = ConfigFile::parse_file(config_path);
  ini.validate({
      {"train",
       {"steps", "batch", "seed", "lr", "weight_decay", "mask_ratio", "image_size",
        "dataset_size", "dataset_dir", "loss_csv", "checkpoint_out", "finetune_checkpoint_out"}},
      {"model",
       {"preset", "patch_size", "embed_dim", "heads", "depth", "ffn_ratio", "pcm_groups",
        "window_size", "variant", "in_channels", "num_classes"}},
  });

  ToyTrainConfig cfg;
  cfg.model = preset_by_name(ini.get("model", "preset", "desk"));
  cfg.model.patch_size = static_cast<int>(ini.get_int("model", "patch_size", cfg.model.patch_size));
  cfg.model.embed_dim = static_cast<int>(ini.get_int("model", "embed_dim", cfg.model.embed_dim));
  cfg.model.heads = static_cast<int>(ini.get_int("model", "heads", cfg.model.heads));
  cfg.model.depth = static_cast<int>(ini.get_int("model", "depth", cfg.model.depth));
  cfg.model.ffn_ratio = static_cast<int>(ini.get_int("model", "ffn_ratio", cfg.model.ffn_ratio));
  cfg.model.pcm_groups = static_cast<int>(ini.get_int("model", "pcm_groups", cfg.model.pcm_groups));
  cfg.model.window_size =
      static_cast<int>(ini.get_int("model", "window_size", cfg.model.window_size));
  cfg.model.in_channels =
      static_cast<int>(ini.get_int("model", "in_channels", cfg.model.in_channels));
  cfg.model.num_classes =
      static_cast<int>(ini.get_int("model", "num_classes", cfg.model.num_classes));
  if (ini.has("model", "variant"))
    cfg.model.windowed_variant = variant_from_name(ini.get("model", "variant", ""));

  cfg.steps = static_cast<int>(ini.get_int("train", "steps", cfg.steps));
  cfg.batch = static_cast<int>(ini.get_int("train", "batch", cfg.batch));
  cfg.seed = static_cast<std::uint64_t>(ini.get_int("train", "seed", 0));
  cfg.lr = ini.get_double("train", "lr", cfg.lr);
  cfg.weight_decay = ini.get_double("train", "weight_decay", cfg.weight_decay);
  cfg.mask_ratio = ini.get_double("train", "mask_ratio", cfg.mask_ratio);
  cfg.image_size = static_cast<int>(ini.get_int("train", "image_size", cfg.image_size));
  cfg.dataset_size = static_cast<int>(ini.get_int("train", "dataset_size", cfg.dataset_size));
  cfg.dataset_dir = ini.get("train", "dataset_dir", "");
  cfg.loss_csv = ini.get("train", "loss_csv", "");
  cfg.checkpoint_out = ini.get("train", "checkpoint_out", "");
  cfg.finetune_ckpt_out = ini.get("train", "finetune_checkpoint_out", "");

  std::vector<double> losses = train_toy(cfg);
  std::printf("steps=%zu initial_loss=%.6f final_loss=%.6f\n", losses.size(), losses.front(),
              losses.back());
  return losses.back() < losses.front() ? 0 : 1;
}

struct GradCase {
  std::string name;
  double err;
};

void gradcheck_ops(std::uint64_t seed, std::vector<GradCase>& out);
void gradcheck_attention(std::uint64_t seed, std::vector<GradCase>& out);
void gradcheck_blocks(std::uint64_t seed, std::vector<GradCase>& out);
void gradcheck_mim(std::uint64_t seed, std::vector<GradCase>& out);

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  std::vector<GradCase> cases;
  bool known = false;
  if (module == "ops" || module == "all") gradcheck_ops(seed, cases), known = true;
  if (module == "attention" || module == "all") gradcheck_attention(seed, cases), known = true;
  if (module == "blocks" || module == "all") gradcheck_blocks(seed, cases), known = true;
  if (module == "mim" || module == "all") gradcheck_mim(seed, cases), known = true;
  if (!known)
    throw CLI::ValidationError("--module",
                               "unknown module '" + module + "' (ops, attention, blocks, mim, all)");
  const double tol = 1e-5;
  int failed = 0;
  for (const GradCase& c : cases) {
    bool ok = c.err < tol;
    failed += ok ? 0 : 1;
    std::printf("%-28s %s max_rel_err=%.3e\n", c.name.c_str(), ok ? "pass" : "FAIL", c.err);
  }
  std::printf("%zu checks, %d failed\n", cases.size(), failed);
  return failed == 0 ? 0 : 1;
}

void gradcheck_ops(std::uint64_t seed, std::vector<GradCase>& out) {
  Rng rng(seed + 1);
  auto scalarize = [&rng](const Var& y) {
    // weight the output so every element matters
    Rng r(7);
    return sum_all(mul(y, Var::constant(r.normal_tensor(y.shape()))));
  };
  auto add_case = [&](const std::string& name, const std::function<Var(const Var&)>& b,
                      const Tensor& x) { out.push_back({name, finite_diff_check(b, x)}); };

  add_case("ops.add", [&](const Var& x) {
    return scalarize(add(x, Var::constant(Rng(3).normal_tensor(x.shape()))));
  }, rng.normal_tensor({3, 4}));
  add_case("ops.mul", [&](const Var& x) {
    return scalarize(mul(x, Var::constant(Rng(4).normal_tensor(x.shape()))));
  }, rng.normal_tensor({3, 4}));
  add_case("ops.matmul", [&](const Var& x) {
    return scalarize(matmul(x, Var::constant(Rng(5).normal_tensor({4, 6}))));
  }, rng.normal_tensor({3, 4}));
  add_case("ops.transpose", [&](const Var& x) { return scalarize(transpose(x)); },
           rng.normal_tensor({3, 5}));
  add_case("ops.softmax", [&](const Var& x) { return scalarize(softmax_lastdim(x)); },
           rng.normal_tensor({4, 5}));
  for (auto [name, act] : {std::pair{"ops.leaky_relu", Activation::kLeakyRelu},
                           {"ops.silu", Activation::kSilu},
                           {"ops.gelu", Activation::kGelu}})
    add_case(name, [&, act = act](const Var& x) { return scalarize(activation(x, act)); },
             rng.normal_tensor({3, 4}));
  add_case("ops.layer_norm", [&](const Var& x) {
    Rng r(6);
    return scalarize(layer_norm(x, Var::constant(r.normal_tensor({5})),
                                Var::constant(r.normal_tensor({5}))));
  }, rng.normal_tensor({4, 5}));
  add_case("ops.conv_grouped", [&](const Var& x) {
    Rng r(8);
    return scalarize(grouped_conv2d(x, Var::constant(r.normal_tensor({4, 2, 3, 3})),
                                    Var::constant(r.normal_tensor({4})), 2));
  }, rng.normal_tensor({4, 5, 5}));
  add_case("ops.bilinear_tokens", [&](const Var& t) {
    Tensor coords({6, 2});
    Rng r(9);
    for (int i = 0; i < 6; ++i) {
      coords.at(i, 0) = r.uniform(-0.5, 4.3);
      coords.at(i, 1) = r.uniform(-0.5, 4.3);
    }
    return scalarize(bilinear_sample(t, 5, 5, Var::constant(coords)));
  }, rng.normal_tensor({25, 3}));
  add_case("ops.bilinear_coords", [&](const Var& c) {
    Rng r(10);
    return scalarize(bilinear_sample(Var::constant(r.normal_tensor({25, 3})), 5, 5, c));
  }, [&rng] {
    Tensor c({6, 2});
    for (int i = 0; i < 6; ++i) {
      c.at(i, 0) = rng.uniform(0.1, 3.8) + 0.13;
      c.at(i, 1) = rng.uniform(0.1, 3.8) + 0.17;
    }
    return c;
  }());
}

void gradcheck_attention(std::uint64_t seed, std::vector<GradCase>& out) {
  for (Variant v : {Variant::kFull, Variant::kWindow, Variant::kVsa, Variant::kRvsa,
                    Variant::kRvsaDiamond}) {
    const int c = 8, heads = 2, s = 3;
    AttentionConfig cfg{c, heads, s, v};
    Rng rng(seed + 11);
    AttentionLayer layer = AttentionLayer::create(cfg, rng);
    if (cfg.learned_window()) {
      Rng hr(seed + 13);
      layer.transform_head.weight.node()->value =
          hr.normal_tensor(layer.transform_head.weight.shape(), 0.1);
      if (v == Variant::kRvsaDiamond)
        layer.transform_head_v.weight.node()->value =
            hr.normal_tensor(layer.transform_head_v.weight.shape(), 0.1);
    }
    Tensor x = rng.normal_tensor({c, 6, 6});
    Tensor w = rng.normal_tensor({c, 6, 6});
    auto coords = sample_coords(x.numel(), 40, seed + 17);
    double err = finite_diff_check(
        [&](const Var& xv) { return sum_all(mul(attend(xv, layer, cfg), Var::constant(w))); },
        x, 1e-5, coords);
    out.push_back({std::string("attention.") + variant_name(v), err});
  }
}

void gradcheck_blocks(std::uint64_t seed, std::vector<GradCase>& out) {
  ModelConfig mc = ModelConfig::desk();
  mc.embed_dim = 16;
  mc.heads = 2;
  mc.pcm_groups = 2;
  AttentionConfig acfg{mc.embed_dim, mc.heads, 3, Variant::kRvsa};
  Rng rng(seed + 19);
  Block blk = Block::create(mc.embed_dim, mc.heads, 2, acfg, mc.pcm_groups, rng);
  Tensor x = rng.normal_tensor({mc.embed_dim, 6, 6});
  Tensor w = rng.normal_tensor({mc.embed_dim, 6, 6});
  auto coords = sample_coords(x.numel(), 40, seed + 23);
  double err = finite_diff_check(
      [&](const Var& xv) {
        return sum_all(mul(blk.forward(xv, /*training=*/false), Var::constant(w)));
      },
      x, 1e-5, coords);
  out.push_back({"blocks.vitae_cell", err});
}

void gradcheck_mim(std::uint64_t seed, std::vector<GradCase>& out) {
  ModelConfig mc = ModelConfig::desk();
  mc.embed_dim = 16;
  mc.heads = 2;
  mc.depth = 4;
  MimModel model = build_mim_model(mc, seed + 29);
  Rng rng(seed + 31);
  Tensor image = synthetic_striped_image(16, mc.in_channels, rng);
  MaskPlan plan = random_mask(16, 0.75, seed);
  // check the loss gradient wrt the patch-embedding weight
  Var weight = model.encoder.patch_embed.weight;
  Tensor w0 = weight.value();
  auto coords = sample_coords(w0.numel(), 24, seed + 37);
  double err = finite_diff_error(
      [&](const Tensor& w) {
        weight.node()->value = w;
        return mim_loss(model, image, plan).value()[0];
      },
      w0,
      [&] {
        weight.node()->value = w0;
        AdamW::zero_grad(model.parameters());
        Var loss = mim_loss(model, image, plan);
        reverse_accumulate(loss);
        return weight.grad();
      }(),
      1e-5, coords);
  weight.node()->value = w0;
  out.push_back({"mim.patch_embed_grad", err});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RVSA attention engine: verification, costing and toy training"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int prec = 64;
  auto* verify = app.add_subcommand("verify", "run the cross-module verification suite");
  verify->add_option("--seed", seed, "rng seed");
  verify->add_option("--precision", prec, "32 or 64")->check(CLI::IsMember({32, 64}));

  std::string preset = "vit-b", tokens = "64x64", variant;
  auto* flops = app.add_subcommand("flops", "analytic cost report");
  flops->add_option("--preset", preset, "vit-b, vitae-b or desk")->required();
  flops->add_option("--tokens", tokens, "token grid, HxW");
  flops->add_option("--variant", variant, "override windowed variant");

  std::string bench_preset = "desk";
  int repeat = 5;
  auto* bench = app.add_subcommand("bench", "wall-clock attention microbenchmark (CSV)");
  bench->add_option("--preset", bench_preset, "vit-b, vitae-b or desk")->required();
  bench->add_option("--repeat", repeat, "repeats per variant")->check(CLI::PositiveNumber);

  std::string ckpt, image, viz_preset = "desk", out_prefix = "geometry";
  int layer = 1, head = -1;
  auto* viz = app.add_subcommand("viz", "export window geometry as CSV + SVG");
  viz->add_option("--ckpt", ckpt, "finetune-mode checkpoint")->required();
  viz->add_option("--image", image, "input image (PGM/PPM)")->required();
  viz->add_option("--layer", layer, "1-based block index")->required();
  viz->add_option("--head", head, "restrict SVG to one head");
  viz->add_option("--preset", viz_preset, "model preset the checkpoint matches");
  viz->add_option("--out", out_prefix, "output path prefix");

  std::string config_path;
  auto* toy = app.add_subcommand("pretrain-toy", "toy masked-image-modeling run");
  toy->add_option("--config", config_path, "INI config file")->required();

  std::string module = "all";
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--module", module, "ops, attention, blocks, mim or all");
  gc->add_option("--seed", gc_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) return cmd_verify(seed, prec);
    if (*flops) return cmd_flops(preset, tokens, variant);
    if (*bench) return cmd_bench(bench_preset, repeat);
    if (*viz) return cmd_viz(ckpt, image, layer, head, viz_preset, out_prefix);
    if (*toy) return cmd_pretrain_toy(config_path);
    if (*gc) return cmd_gradcheck(module, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
