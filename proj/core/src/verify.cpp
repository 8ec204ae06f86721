#include "rvsa/verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "rvsa/attention.hpp"
#include "rvsa/blocks.hpp"
#include "rvsa/cost.hpp"
#include "rvsa/gradcheck.hpp"
#include "rvsa/geometry.hpp"
#include "rvsa/mim.hpp"

namespace rvsa {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Suite {
  std::uint64_t seed;
  double grad_tol;
  double grad_eps;
  double oracle_tol;
  std::vector<CheckResult>& out;

  void record(const std::string& name, bool passed, const std::string& detail) {
    out.push_back({name, passed, detail});
  }
};

// Learned-window variants with zero transform heads must match fixed-window
// attention bitwise: the predicted transform is exactly the identity, the
// sampling coordinates land on integers, and bilinear weights collapse to
// 0/1.
void check_identity_reduction(Suite& su) {
  const int c = 16, heads = 4;
  for (Variant v : {Variant::kVsa, Variant::kRvsa, Variant::kRvsaDiamond}) {
    bool ok = true;
    int trials = 0;
    for (int s : {4, 7}) {
      for (int t = 0; t < 3; ++t, ++trials) {
        Rng data_rng(su.seed * 1000003 + static_cast<std::uint64_t>(s * 10 + t));
        Tensor x = data_rng.normal_tensor({c, 10, 11});
        AttentionConfig wcfg{c, heads, s, Variant::kWindow};
        AttentionConfig vcfg{c, heads, s, v};
        Rng w1(su.seed + 7), w2(su.seed + 7);
        AttentionLayer win = AttentionLayer::create(wcfg, w1);
        AttentionLayer var = AttentionLayer::create(vcfg, w2);
        Var xa = Var::constant(x);
        Tensor a = attend(xa, win, wcfg).value();
        Tensor b = attend(xa, var, vcfg).value();
        ok = ok && bitwise_equal(a, b);
      }
    }
    su.record(std::string("identity-reduction-") + variant_name(v), ok,
              "trials=" + std::to_string(trials) + " comparison=bitwise");
  }
}

void check_gradients(Suite& su) {
  Rng rng(su.seed + 17);

  auto run = [&](const std::string& name, const std::function<Var(const Var&)>& builder,
                 const Tensor& x) {
    double err = finite_diff_check(builder, x, su.grad_eps);
    su.record("grad-" + name, err < su.grad_tol, "max_rel_err=" + fmt(err));
  };

  {
    Tensor w = rng.normal_tensor({3, 5});
    run("softmax",
        [w](const Var& x) { return sum_all(mul(softmax_lastdim(x), Var::constant(w))); },
        rng.normal_tensor({3, 5}));
  }
  {
    Tensor w = rng.normal_tensor({4, 6});
    Var gain = Var::constant(rng.normal_tensor({6}));
    Var bias = Var::constant(rng.normal_tensor({6}));
    run("layer-norm",
        [w, gain, bias](const Var& x) {
          return sum_all(mul(layer_norm(x, gain, bias), Var::constant(w)));
        },
        rng.normal_tensor({4, 6}));
  }
  {
    Tensor b = rng.normal_tensor({5, 3});
    Tensor w = rng.normal_tensor({4, 3});
    run("matmul",
        [b, w](const Var& x) {
          return sum_all(mul(matmul(x, Var::constant(b)), Var::constant(w)));
        },
        rng.normal_tensor({4, 5}));
  }
  {
    // gradient wrt sampling coordinates at non-integer points
    const int h = 6, w = 6, c = 3, n = 8;
    Tensor tokens = rng.normal_tensor({h * w, c});
    Tensor wmat = rng.normal_tensor({n, c});
    Tensor coords({n, 2});
    for (int i = 0; i < n; ++i) {
      coords.at(i, 0) = rng.uniform(-0.7, w - 0.3) + 0.131;
      coords.at(i, 1) = rng.uniform(-0.7, h - 0.3) + 0.172;
    }
    run("bilinear-coords",
        [tokens, wmat](const Var& cv) {
          return sum_all(
              mul(bilinear_sample(Var::constant(tokens), 6, 6, cv), Var::constant(wmat)));
        },
        coords);
  }
  {
    // gradient of the window transform parameters through sampling
    const int s = 3, h = 7, w = 7, c = 4;
    Tensor tokens = rng.normal_tensor({h * w, c});
    Tensor wmat = rng.normal_tensor({s * s, c});
    Tensor rel = window_relative_offsets(s);
    Tensor params = rng.normal_tensor({5}, 0.2);
    run("window-transform",
        [tokens, wmat, rel](const Var& p) {
          Var grid = window_sample_grid(p, rel, 3.0, 3.0, true);
          return sum_all(
              mul(bilinear_sample(Var::constant(tokens), 7, 7, grid), Var::constant(wmat)));
        },
        params);
  }
  {
    // a whole RVSA layer, input gradient, sampled coordinates
    const int c = 8, heads = 2, s = 3;
    AttentionConfig cfg{c, heads, s, Variant::kRvsa};
    Rng wrng(su.seed + 23);
    AttentionLayer layer = AttentionLayer::create(cfg, wrng);
    // perturb the transform head so the window geometry actually moves
    Tensor hw = layer.transform_head.weight.node()->value;
    Rng hrng(su.seed + 29);
    layer.transform_head.weight.node()->value = hrng.normal_tensor(hw.shape(), 0.1);
    Tensor x = wrng.normal_tensor({c, 6, 6});
    Tensor wmat = wrng.normal_tensor({c, 6, 6});
    auto coords = sample_coords(x.numel(), 48, su.seed + 31);
    double err = finite_diff_check(
        [&layer, cfg, wmat](const Var& xv) {
          return sum_all(mul(attend(xv, layer, cfg), Var::constant(wmat)));
        },
        x, su.grad_eps, coords);
    su.record("grad-rvsa-layer", err < su.grad_tol, "max_rel_err=" + fmt(err));
  }
}

// Compares the autodiff sampling op against the plain four-neighbor
// interpolation in the geometry module, including out-of-bounds points.
void check_sampling_oracle(Suite& su) {
  Rng rng(su.seed + 41);
  const int h = 9, w = 7, c = 5, n = 2000;
  Tensor map = rng.normal_tensor({c, h, w});
  Tensor tokens({h * w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) tokens.at(y * w + x, ch) = map.at(ch, y, x);
  Tensor coords({n, 2});
  for (int i = 0; i < n; ++i) {
    coords.at(i, 0) = rng.uniform(-2.0, w + 1.0);
    coords.at(i, 1) = rng.uniform(-2.0, h + 1.0);
  }
  Tensor sampled = bilinear_sample(Var::constant(tokens), h, w, Var::constant(coords)).value();
  double worst = 0.0;
  std::vector<double> ref(static_cast<std::size_t>(c));
  for (int i = 0; i < n; ++i) {
    bilinear_point(map, coords.at(i, 0), coords.at(i, 1), ref.data());
    for (int ch = 0; ch < c; ++ch)
      worst = std::max(worst, std::abs(sampled.at(i, ch) - ref[static_cast<std::size_t>(ch)]));
  }
  su.record("sampling-oracle", worst < su.oracle_tol,
            "points=" + std::to_string(n) + " max_abs_err=" + fmt(worst));
}

// A 1x1 kernel padded to 3x3 with a zero ring must convolve identically.
void check_kernel_padding(Suite& su) {
  Rng rng(su.seed + 53);
  const int c = 8, groups = 4;
  bool ok = true;
  for (int t = 0; t < 10; ++t) {
    Tensor k1 = rng.normal_tensor({c, c / groups, 1, 1});
    Tensor bias = rng.normal_tensor({c});
    Tensor x = rng.normal_tensor({c, 5, 6});
    Var xv = Var::constant(x);
    Var bv = Var::constant(bias);
    Tensor a = grouped_conv2d(xv, Var::constant(k1), bv, groups).value();
    Tensor b = grouped_conv2d(xv, Var::constant(pad_pcm_kernel(k1)), bv, groups).value();
    ok = ok && bitwise_equal(a, b);
  }
  su.record("kernel-padding-equivalence", ok, "trials=10 comparison=bitwise");
}

void check_mask_partition(Suite& su) {
  bool ok = true;
  std::ostringstream detail;
  for (int tokens : {196, 64, 17}) {
    MaskPlan plan = random_mask(tokens, 0.75, su.seed);
    int expect_masked = static_cast<int>(std::floor(0.75 * tokens + 0.5));
    ok = ok && plan.num_masked() == expect_masked &&
         plan.num_masked() + plan.num_visible() == tokens;
    std::vector<bool> seen(static_cast<std::size_t>(tokens), false);
    for (int id : plan.masked_ids) seen[static_cast<std::size_t>(id)] = true;
    for (int id : plan.visible_ids) {
      if (seen[static_cast<std::size_t>(id)]) ok = false;  // overlap
      seen[static_cast<std::size_t>(id)] = true;
    }
    for (bool s : seen) ok = ok && s;
    detail << tokens << ":" << plan.num_masked() << "/" << plan.num_visible() << " ";
  }
  su.record("mask-partition", ok, detail.str() + "ratio=0.75");
}

void check_geometry(Suite& su) {
  WindowGrid grid = partition(64, 64, 7);
  bool part_ok = grid.num_windows() == 100 && grid.pad_h == 6 && grid.pad_w == 6;
  su.record("partition-64x64-s7", part_ok,
            "windows=" + std::to_string(grid.num_windows()) +
                " pad=" + std::to_string(grid.pad_h));

  // quarter-turn corner mapping and round-trip
  double x1, y1, x2, y2;
  const double pi = std::acos(-1.0);
  transform_point(3, 3, 0, 0, 1, 1, 0, 0, pi / 2, x1, y1);
  bool rot_ok = std::abs(x1 - 3.0) < 1e-12 && std::abs(y1 + 3.0) < 1e-12;
  transform_point(x1, y1, 0, 0, 1, 1, 0, 0, -pi / 2, x2, y2);
  rot_ok = rot_ok && std::abs(x2 - 3.0) < 1e-12 && std::abs(y2 - 3.0) < 1e-12;
  su.record("rotation-quarter-turn", rot_ok,
            "mapped=(" + fmt(x1) + "," + fmt(y1) + ")");

  Ratio r = rvsa_overhead_ratio(7, 12);
  su.record("overhead-ratio-s7-h12", r.num == 545 && r.den == 4802,
            std::to_string(r.num) + "/" + std::to_string(r.den) + "=" + fmt(r.value()));
}

}  // namespace

bool VerifyReport::all_passed() const { return num_failed() == 0; }

int VerifyReport::num_failed() const {
  int n = 0;
  for (const CheckResult& c : checks) n += c.passed ? 0 : 1;
  return n;
}

std::string VerifyReport::render() const {
  std::ostringstream os;
  os << "rvsa verification report\n";
  os << "seed " << seed << "\n";
  os << "precision " << (precision == Precision::k32 ? "32" : "64") << "\n";
  for (const CheckResult& c : checks)
    os << "check " << c.name << " " << (c.passed ? "pass" : "fail") << " " << c.detail << "\n";
  os << "summary " << (checks.size() - static_cast<std::size_t>(num_failed())) << "/"
     << checks.size() << " passed\n";
  return os.str();
}

VerifyReport run_verification_suite(std::uint64_t seed) {
  VerifyReport report;
  report.seed = seed;
  report.precision = precision();
  const bool single = report.precision == Precision::k32;
  Suite su{seed, single ? 5e-2 : 1e-5, single ? 1e-3 : 1e-5,
           single ? 1e-5 : 1e-12, report.checks};
  check_identity_reduction(su);
  check_gradients(su);
  check_sampling_oracle(su);
  check_kernel_padding(su);
  check_mask_partition(su);
  check_geometry(su);
  return report;
}

}  // namespace rvsa
