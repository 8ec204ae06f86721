#pragma once

#include <functional>
#include <vector>

#include "rvsa/autodiff.hpp"

namespace rvsa {

/// Central finite-difference check of a scalar function against an analytic
/// gradient. Returns the max over checked coordinates of
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `coords` selects which flat indices to probe; empty means all.
double finite_diff_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                         const Tensor& analytic_grad, double eps = 1e-5,
                         const std::vector<std::size_t>& coords = {});

/// Builds the graph once via `builder` (a scalar function of one leaf),
/// runs reverse accumulation, then compares against central differences.
double finite_diff_check(const std::function<Var(const Var&)>& builder, const Tensor& x,
                         double eps = 1e-5, const std::vector<std::size_t>& coords = {});

/// Deterministic sample of k flat indices out of n (all if k >= n).
std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace rvsa
