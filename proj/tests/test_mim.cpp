#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rvsa/mim.hpp"

using namespace rvsa;

TEST_CASE("mask plan counts, disjointness and determinism") {
  MaskPlan plan = random_mask(196, 0.75, 0);
  CHECK(plan.num_masked() == 147);
  CHECK(plan.num_visible() == 49);

  // round-half-up at the boundary: 0.75 * 2 = 1.5 -> 2
  CHECK(random_mask(2, 0.75, 0).num_masked() == 2);
  CHECK(random_mask(17, 0.75, 0).num_masked() == 13);  // 12.75 -> 13

  std::vector<bool> seen(196, false);
  for (int id : plan.masked_ids) {
    CHECK(id >= 0);
    CHECK(id < 196);
    CHECK_FALSE(seen[static_cast<std::size_t>(id)]);
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (int id : plan.visible_ids) {
    CHECK_FALSE(seen[static_cast<std::size_t>(id)]);
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (bool s : seen) CHECK(s);
  CHECK(std::is_sorted(plan.masked_ids.begin(), plan.masked_ids.end()));

  MaskPlan again = random_mask(196, 0.75, 0);
  CHECK(again.masked_ids == plan.masked_ids);
  MaskPlan other = random_mask(196, 0.75, 1);
  CHECK(other.masked_ids != plan.masked_ids);

  CHECK_THROWS_AS(random_mask(0, 0.75, 0), std::invalid_argument);
  CHECK_THROWS_AS(random_mask(10, 1.5, 0), std::invalid_argument);
}

TEST_CASE("normalized pixel target oracle") {
  std::vector<double> patch{1, 2, 3, 4};
  std::vector<double> got = normalized_pixel_target(patch);
  double mean = 2.5, var = (2.25 + 0.25 + 0.25 + 2.25) / 4.0;  // biased
  for (int i = 0; i < 4; ++i)
    CHECK(got[static_cast<std::size_t>(i)] ==
          doctest::Approx((patch[static_cast<std::size_t>(i)] - mean) /
                          std::sqrt(var + 1e-6))
              .epsilon(1e-12));
  // constant patch maps to zero, not NaN
  std::vector<double> flat = normalized_pixel_target({5, 5, 5, 5});
  for (double v : flat) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("per-patch targets have zero mean and unit-ish variance") {
  Rng rng(1);
  Tensor img = rng.uniform_tensor({1, 8, 8}, 0.0, 1.0);
  Tensor targets = normalized_patch_targets(img, 4);
  REQUIRE(targets.shape() == Shape{4, 16});
  for (int t = 0; t < 4; ++t) {
    double mean = 0;
    for (int i = 0; i < 16; ++i) mean += targets.at(t, i);
    CHECK(mean / 16 == doctest::Approx(0.0).epsilon(1e-10));
  }
}

TEST_CASE("synthetic images are structured and bounded") {
  Rng rng(2);
  Tensor img = synthetic_striped_image(32, 1, rng);
  REQUIRE(img.shape() == Shape{1, 32, 32});
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < img.numel(); ++i) {
    lo = std::min(lo, img[i]);
    hi = std::max(hi, img[i]);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi - lo > 0.5);  // actual contrast, not a flat field
}

TEST_CASE("mim loss is finite and masking matters") {
  ModelConfig cfg = ModelConfig::desk();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  MimModel model = build_mim_model(cfg, 3);
  CHECK(model.dec_dim == 8);
  Rng rng(4);
  Tensor image = synthetic_striped_image(16, 1, rng);
  MaskPlan plan = random_mask(16, 0.75, 0);
  double l1 = mim_loss(model, image, plan).value()[0];
  CHECK(std::isfinite(l1));
  CHECK(l1 > 0.0);
  // a different mask gives a different loss
  double l2 = mim_loss(model, image, random_mask(16, 0.75, 9)).value()[0];
  CHECK(l1 != l2);
  // encoder head parameters are excluded from pretraining
  for (const auto& [name, v] : model.parameters()) CHECK(name.find("head.") == std::string::npos);
}

TEST_CASE("short toy run is deterministic and decreasing") {
  ToyTrainConfig cfg;
  cfg.model.embed_dim = 16;
  cfg.model.heads = 2;
  cfg.steps = 8;
  cfg.batch = 1;
  cfg.image_size = 16;
  cfg.dataset_size = 4;
  auto csv = (std::filesystem::temp_directory_path() / "rvsa_test_loss.csv").string();
  cfg.loss_csv = csv;
  std::vector<double> a = train_toy(cfg);
  std::vector<double> b = train_toy(cfg);
  REQUIRE(a.size() == 8);
  CHECK(a == b);
  CHECK(a.back() < a.front());

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 8);
  std::remove(csv.c_str());
}
