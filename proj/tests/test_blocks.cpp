#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "rvsa/blocks.hpp"
#include "rvsa/checkpoint.hpp"

using namespace rvsa;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("sincos encoding closed form") {
  const int h = 4, w = 5, c = 8;  // quarter = 2 frequencies
  Tensor enc = sincos_encoding(h, w, c);
  REQUIRE(enc.shape() == Shape{c, h, w});
  const int quarter = c / 4;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < quarter; ++k) {
        double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
        CHECK(enc.at(k, y, x) == doctest::Approx(std::sin(y * omega)).epsilon(1e-14));
        CHECK(enc.at(quarter + k, y, x) == doctest::Approx(std::cos(y * omega)).epsilon(1e-14));
        CHECK(enc.at(2 * quarter + k, y, x) ==
              doctest::Approx(std::sin(x * omega)).epsilon(1e-14));
        CHECK(enc.at(3 * quarter + k, y, x) ==
              doctest::Approx(std::cos(x * omega)).epsilon(1e-14));
      }
  CHECK_THROWS_AS(sincos_encoding(2, 2, 6), std::invalid_argument);

  Tensor tok = sincos_tokens(h, w, c);
  CHECK(tok.at(1 * w + 2, 0) == enc.at(0, 1, 2));
}

TEST_CASE("extract_patches flattens row-major patches") {
  Tensor img({1, 4, 4});
  for (int i = 0; i < 16; ++i) img[static_cast<std::size_t>(i)] = i;
  Tensor p = extract_patches(img, 2);
  REQUIRE(p.shape() == Shape{4, 4});
  // patch (0,0) holds pixels 0,1,4,5
  CHECK(p.at(0, 0) == 0);
  CHECK(p.at(0, 1) == 1);
  CHECK(p.at(0, 2) == 4);
  CHECK(p.at(0, 3) == 5);
  // patch (1,1) holds 10,11,14,15
  CHECK(p.at(3, 0) == 10);
  CHECK(p.at(3, 3) == 15);
  CHECK_THROWS_AS(extract_patches(img, 3), std::invalid_argument);
}

TEST_CASE("pcm kernel padding keeps the center") {
  Rng rng(1);
  Tensor k1 = rng.normal_tensor({4, 2, 1, 1});
  Tensor k3 = pad_pcm_kernel(k1);
  REQUIRE(k3.shape() == Shape{4, 2, 3, 3});
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 2; ++i)
      for (int dy = 0; dy < 3; ++dy)
        for (int dx = 0; dx < 3; ++dx) {
          double v = k3[((static_cast<std::size_t>(o) * 2 + i) * 3 + dy) * 3 + dx];
          if (dy == 1 && dx == 1)
            CHECK(v == k1[static_cast<std::size_t>(o) * 2 + i]);
          else
            CHECK(v == 0.0);
        }
}

TEST_CASE("padded kernel convolves identically to the 1x1") {
  Rng rng(2);
  const int c = 6, groups = 3;
  for (int t = 0; t < 5; ++t) {
    Tensor k1 = rng.normal_tensor({c, c / groups, 1, 1});
    Tensor bias = rng.normal_tensor({c});
    Tensor x = rng.normal_tensor({c, 4, 5});
    Tensor a =
        grouped_conv2d(Var::constant(x), Var::constant(k1), Var::constant(bias), groups).value();
    Tensor b = grouped_conv2d(Var::constant(x), Var::constant(pad_pcm_kernel(k1)),
                              Var::constant(bias), groups)
                   .value();
    CHECK(bitwise_equal(a, b));
  }
}

TEST_CASE("full-attention schedule") {
  ModelConfig cfg = ModelConfig::vit_b();
  CHECK(cfg.schedule() == std::vector<int>{3, 6, 9, 12});
  CHECK(cfg.layer_variant(3) == Variant::kFull);
  CHECK(cfg.layer_variant(4) == Variant::kRvsa);

  ModelConfig desk = ModelConfig::desk();
  CHECK(desk.schedule() == std::vector<int>{2, 4});
  CHECK(desk.layer_variant(1) == Variant::kRvsa);
  CHECK(desk.layer_variant(2) == Variant::kFull);

  ModelConfig odd = ModelConfig::desk();
  odd.depth = 5;
  odd.full_attention_layers.clear();
  CHECK_THROWS_AS(odd.schedule(), std::invalid_argument);
  odd.full_attention_layers = {9};
  CHECK_THROWS_AS(odd.validate(), std::invalid_argument);
}

TEST_CASE("block keeps feature shape and adds the pcm branch") {
  Rng rng(3);
  AttentionConfig acfg{8, 2, 3, Variant::kRvsa};
  Block plain = Block::create(8, 2, 2, acfg, 0, rng);
  Tensor x = rng.normal_tensor({8, 6, 6});
  Tensor out = plain.forward(Var::constant(x), false).value();
  CHECK(out.same_shape(x));
  CHECK(out.all_finite());

  Rng rng2(3);
  Block vitae = Block::create(8, 2, 2, acfg, 2, rng2);
  CHECK(vitae.has_pcm);
  CHECK(vitae.pcm.kernel == 1);
  Tensor out2 = vitae.forward(Var::constant(x), false).value();
  CHECK_FALSE(bitwise_equal(out, out2));
  vitae.pcm.pad_kernels();
  CHECK(vitae.pcm.kernel == 3);
  Tensor out3 = vitae.forward(Var::constant(x), false).value();
  CHECK(bitwise_equal(out2, out3));  // zero ring changes nothing
}

TEST_CASE("model forward and classification shapes") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  Model model = build_model(cfg, ModelMode::kFinetune, 1);
  Rng rng(4);
  Tensor image = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
  Tensor feats = model.forward(image, false).value();
  CHECK(feats.shape() == Shape{16, 4, 4});
  Tensor logits = model.classify(image, false).value();
  CHECK(logits.shape() == Shape{1, 10});

  // pretrain mode builds all-full variants and unpadded PCM
  Model pre = build_model(cfg, ModelMode::kPretrain, 1);
  for (const Block& b : pre.blocks) CHECK(b.attn_cfg.variant == Variant::kFull);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.pcm_groups = 2;
  Model model = build_model(cfg, ModelMode::kFinetune, 2);
  std::string path = temp_path("rvsa_test_roundtrip.ckpt");
  save_checkpoint(path, model.state(), ModelMode::kFinetune);

  CheckpointManifest manifest = read_manifest(path);
  CHECK(manifest.mode == ModelMode::kFinetune);
  CHECK(manifest.entries.size() == model.state().size());

  Model other = build_model(cfg, ModelMode::kFinetune, 99);
  load_checkpoint(path, other);
  auto a = model.state();
  auto b = other.state();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(bitwise_equal(*a[i].second, *b[i].second));
  }
  std::remove(path.c_str());
}

TEST_CASE("pretrain checkpoint loads into a finetune model with padded kernels") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.pcm_groups = 2;
  Model pre = build_model(cfg, ModelMode::kPretrain, 3);
  std::string path = temp_path("rvsa_test_padload.ckpt");
  save_checkpoint(path, pre.state(), ModelMode::kPretrain);

  Model fin = build_model(cfg, ModelMode::kFinetune, 4);
  load_checkpoint(path, fin);
  // pcm conv weights must be the padded pretrain kernels
  for (std::size_t bi = 0; bi < pre.blocks.size(); ++bi) {
    Tensor want = pad_pcm_kernel(pre.blocks[bi].pcm.conv1_w.value());
    CHECK(bitwise_equal(want, fin.blocks[bi].pcm.conv1_w.value()));
  }
  // projections transfer unchanged
  CHECK(bitwise_equal(pre.blocks[0].attn.q.weight.value(),
                      fin.blocks[0].attn.q.weight.value()));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint shape mismatch is an error") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  Model model = build_model(cfg, ModelMode::kFinetune, 5);
  std::string path = temp_path("rvsa_test_mismatch.ckpt");
  save_checkpoint(path, model.state(), ModelMode::kFinetune);
  ModelConfig bigger = cfg;
  bigger.embed_dim = 32;
  bigger.heads = 4;
  Model big = build_model(bigger, ModelMode::kFinetune, 6);
  CHECK_THROWS(load_checkpoint(path, big));
  std::remove(path.c_str());
}
