#include "rvsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rvsa/rng.hpp"

namespace rvsa {

double finite_diff_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic_grad, double eps,
                         const std::vector<std::size_t>& coords) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_error: eps must be positive");
  if (!std::isfinite(f(x))) throw std::domain_error("finite_diff_error: f(x) is not finite");
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) idx[i] = i;
  }
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i : idx) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double fp = f(probe);
    probe[i] = orig - eps;
    double fm = f(probe);
    probe[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double analytic = analytic_grad[i];
    double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    worst = std::max(worst, std::fabs(analytic - numeric) / denom);
  }
  return worst;
}

double finite_diff_check(const std::function<Var(const Var&)>& builder, const Tensor& x,
                         double eps, const std::vector<std::size_t>& coords) {
  Var leaf = Var::leaf(x);
  Var out = builder(leaf);
  reverse_accumulate(out);
  Tensor analytic = leaf.grad();
  auto f = [&builder](const Tensor& t) {
    Var l = Var::leaf(t, false);
    return builder(l).value()[0];
  };
  return finite_diff_error(f, x, analytic, eps, coords);
}

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (k >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  Rng rng(seed);
  auto picks = rng.sample_without_replacement(static_cast<int>(n), static_cast<int>(k));
  out.reserve(picks.size());
  for (int p : picks) out.push_back(static_cast<std::size_t>(p));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace rvsa
