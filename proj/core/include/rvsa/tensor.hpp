#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvsa {

/// Numeric precision of op results. Storage is always double; in k32 mode
/// every op result is rounded through float so the run behaves like a
/// single-precision one.
enum class Precision { k64, k32 };

Precision precision();
void set_precision(Precision p);

/// Rounds x through float when the global mode is k32.
inline double quantized(double x) {
  extern Precision g_precision;
  return g_precision == Precision::k32 ? static_cast<double>(static_cast<float>(x)) : x;
}

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor identity(int n);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D / 3-D accessors; no bounds checks beyond debug asserts.
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  /// Applies the global precision mode to every element.
  void quantize();

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& s);

/// Thrown categories: std::invalid_argument for configuration/dimension
/// errors, std::domain_error for evaluation errors on bad values.
[[noreturn]] void dim_error(const std::string& what);

}  // namespace rvsa
