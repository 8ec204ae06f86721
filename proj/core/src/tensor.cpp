#include "rvsa/tensor.hpp"

#include <cmath>
#include <sstream>

#include "rvsa/rng.hpp"

namespace rvsa {

Precision g_precision = Precision::k64;

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    dim_error("tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_str(shape_));
}

Tensor Tensor::identity(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::quantize() {
  if (g_precision == Precision::k32)
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

void dim_error(const std::string& what) { throw std::invalid_argument(what); }

double Rng::normal() {
  // Box-Muller; u clamped away from 0.
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  double v = uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925286766559 * v);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
  return t;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

}  // namespace rvsa
