#include <cmath>

#include "doctest.h"
#include "rvsa/autodiff.hpp"
#include "rvsa/gradcheck.hpp"
#include "rvsa/nn.hpp"
#include "rvsa/rng.hpp"

using namespace rvsa;

namespace {

// brute-force reference matmul, deliberately written differently from the
// library kernel (jki order, long double accumulator)
Tensor ref_matmul(const Tensor& a, const Tensor& b) {
  int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      long double acc = 0;
      for (int p = 0; p < k; ++p)
        acc += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      out.at(i, j) = static_cast<double>(acc);
    }
  return out;
}

Var weighted_sum(const Var& y, std::uint64_t seed) {
  Rng r(seed);
  return sum_all(mul(y, Var::constant(r.normal_tensor(y.shape()))));
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK(t.all_finite());
  t.at(0, 1) = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK(shape_str({2, 3}) == "(2,3)");
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("rng is deterministic and well distributed") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(7);
  double mean = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += r.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
  auto pick = r.sample_without_replacement(10, 4);
  CHECK(pick.size() == 4);
  std::sort(pick.begin(), pick.end());
  CHECK(std::unique(pick.begin(), pick.end()) == pick.end());
}

TEST_CASE("matmul matches brute-force oracle") {
  Rng rng(1);
  Tensor a = rng.normal_tensor({5, 7}), b = rng.normal_tensor({7, 4});
  Tensor got = matmul(Var::constant(a), Var::constant(b)).value();
  Tensor want = ref_matmul(a, b);
  for (std::size_t i = 0; i < got.numel(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
  CHECK_THROWS_AS(matmul(Var::constant(a), Var::constant(a)), std::invalid_argument);
}

TEST_CASE("softmax hand values and invariants") {
  Tensor x({2, 3}, {0, 0, 0, 1, 2, 3});
  Tensor y = softmax_lastdim(Var::constant(x)).value();
  CHECK(y.at(0, 0) == doctest::Approx(1.0 / 3));
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(y.at(1, 2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-14));
  // rows sum to one, shift invariance
  CHECK(y.at(1, 0) + y.at(1, 1) + y.at(1, 2) == doctest::Approx(1.0).epsilon(1e-14));
  Tensor xs = x;
  for (std::size_t i = 0; i < 3; ++i) xs[3 + i] += 100.0;
  Tensor ys = softmax_lastdim(Var::constant(xs)).value();
  for (int j = 0; j < 3; ++j) CHECK(ys.at(1, j) == doctest::Approx(y.at(1, j)).epsilon(1e-13));
}

TEST_CASE("layer norm hand oracle") {
  Tensor x({1, 4}, {1, 2, 3, 4});
  Tensor gain({4}, {1, 1, 1, 1}), bias({4}, {0, 0, 0, 0});
  Tensor y = layer_norm(Var::constant(x), Var::constant(gain), Var::constant(bias)).value();
  // mean 2.5, biased var 1.25
  double denom = std::sqrt(1.25 + 1e-6);
  CHECK(y.at(0, 0) == doctest::Approx(-1.5 / denom).epsilon(1e-12));
  CHECK(y.at(0, 3) == doctest::Approx(1.5 / denom).epsilon(1e-12));
}

TEST_CASE("activations match closed forms") {
  Tensor x({1, 3}, {-1.0, 0.0, 2.0});
  Var xv = Var::constant(x);
  Tensor lr = activation(xv, Activation::kLeakyRelu, 0.01).value();
  CHECK(lr[0] == doctest::Approx(-0.01));
  CHECK(lr[2] == doctest::Approx(2.0));
  Tensor si = activation(xv, Activation::kSilu).value();
  CHECK(si[2] == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))).epsilon(1e-14));
  Tensor ge = activation(xv, Activation::kGelu).value();
  CHECK(ge[2] == doctest::Approx(2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)))).epsilon(1e-14));
}

TEST_CASE("grouped conv matches brute-force oracle") {
  Rng rng(3);
  const int cin = 4, cout = 4, groups = 2, k = 3, h = 5, w = 6;
  Tensor x = rng.normal_tensor({cin, h, w});
  Tensor kern = rng.normal_tensor({cout, cin / groups, k, k});
  Tensor bias = rng.normal_tensor({cout});
  Tensor got =
      grouped_conv2d(Var::constant(x), Var::constant(kern), Var::constant(bias), groups).value();
  int cg = cin / groups, og = cout / groups, pad = k / 2;
  auto kat = [&](int o, int i, int dy, int dx) {
    return kern[((static_cast<std::size_t>(o) * cg + i) * k + dy) * k + dx];
  };
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double acc = bias[static_cast<std::size_t>(o)];
        int g = o / og;
        for (int i = 0; i < cg; ++i)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              int sy = y + dy - pad, sx = xx + dx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              acc += x.at(g * cg + i, sy, sx) * kat(o, i, dy, dx);
            }
        CHECK(got.at(o, y, xx) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("layout ops round-trip") {
  Rng rng(4);
  Tensor x = rng.normal_tensor({3, 4, 5});
  Var xv = Var::constant(x);
  Tensor back = tokens_to_img(img_to_tokens(xv), 4, 5).value();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);

  Tensor padded = pad2d(xv, 2, 1).value();
  CHECK(padded.dim(1) == 6);
  CHECK(padded.dim(2) == 6);
  CHECK(padded.at(1, 5, 0) == 0.0);
  Tensor cropped = crop2d(Var::constant(padded), 4, 5).value();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(cropped[i] == x[i]);

  Tensor t = rng.normal_tensor({6, 3});
  Tensor g = gather_rows(Var::constant(t), {4, 0, 2}).value();
  CHECK(g.at(0, 1) == t.at(4, 1));
  Tensor sc = scatter_rows(Var::constant(g), {4, 0, 2}, 6).value();
  CHECK(sc.at(4, 1) == t.at(4, 1));
  CHECK(sc.at(1, 0) == 0.0);

  Tensor left = slice_cols(Var::constant(t), 1, 2).value();
  CHECK(left.at(2, 0) == t.at(2, 1));
  Tensor cc = concat_cols({slice_cols(Var::constant(t), 0, 1), Var::constant(left)}).value();
  CHECK(cc.dim(1) == 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) CHECK(cc.at(i, j) == t.at(i, j));
}

TEST_CASE("reverse accumulation: product rule and unused leaves") {
  Tensor a({2}, {2.0, 3.0}), b({2}, {5.0, 7.0});
  Var av = Var::leaf(a), bv = Var::leaf(b), unused = Var::leaf(Tensor({1}, {1.0}));
  Var loss = sum_all(mul(av, bv));
  reverse_accumulate(loss);
  CHECK(av.grad()[0] == 5.0);
  CHECK(av.grad()[1] == 7.0);
  CHECK(bv.grad()[0] == 2.0);
  CHECK(unused.grad()[0] == 0.0);  // never touched, stays zero
  CHECK_THROWS_AS(reverse_accumulate(av), std::invalid_argument);  // non-scalar
}

TEST_CASE("gradients of composite expressions pass finite differences") {
  Rng rng(5);
  auto check = [&](const char* name, const std::function<Var(const Var&)>& b, const Tensor& x) {
    INFO(name);
    CHECK(finite_diff_check(b, x) < 1e-6);
  };
  check("linear", [&](const Var& x) {
    Rng r(6);
    return weighted_sum(linear(x, Var::constant(r.normal_tensor({4, 5})),
                               Var::constant(r.normal_tensor({4}))), 8);
  }, rng.normal_tensor({3, 5}));
  check("mean_rows", [&](const Var& x) { return weighted_sum(mean_rows(x), 9); },
        rng.normal_tensor({4, 3}));
  check("mse", [&](const Var& x) {
    Rng r(10);
    return mse(x, Var::constant(r.normal_tensor(x.shape())));
  }, rng.normal_tensor({3, 4}));
  check("softmax-chain", [&](const Var& x) {
    return weighted_sum(softmax_lastdim(matmul(x, transpose(x))), 11);
  }, rng.normal_tensor({3, 4}));
}

TEST_CASE("32-bit mode rounds op results through float") {
  set_precision(Precision::k32);
  Tensor a({1}, {0.1}), b({1}, {0.2});
  Tensor sum = add(Var::constant(a), Var::constant(b)).value();
  CHECK(sum[0] == static_cast<double>(0.1f + 0.2f));
  set_precision(Precision::k64);
  Tensor sum64 = add(Var::constant(a), Var::constant(b)).value();
  CHECK(sum64[0] == 0.1 + 0.2);
}

TEST_CASE("adamw decays and converges on a quadratic") {
  // minimize (w - 3)^2 elementwise
  Var w = Var::leaf(Tensor({2}, {0.0, 10.0}));
  NamedParams params{{"w", w}};
  AdamW opt(0.1, 0.0);
  for (int i = 0; i < 500; ++i) {
    AdamW::zero_grad(params);
    Var loss = mse(w, Var::constant(Tensor({2}, {3.0, 3.0})));
    reverse_accumulate(loss);
    opt.step(params);
  }
  CHECK(w.value()[0] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(w.value()[1] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("evaluation errors are domain errors") {
  Tensor coords({1, 2}, {std::nan(""), 0.0});
  Rng rng(12);
  CHECK_THROWS_AS(
      bilinear_sample(Var::constant(rng.normal_tensor({4, 2})), 2, 2, Var::constant(coords)),
      std::domain_error);
}
