#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rvsa/tensor.hpp"

namespace rvsa {

/// One node of the define-by-run tape. Nodes are created in evaluation
/// order, so `order` gives a valid topological index for free.
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value; zeroed until backward touches it
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  std::uint64_t order = 0;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
  }
  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

/// Lightweight handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = true);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::shared_ptr<Node> node() const { return node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse accumulation from a scalar output. Seeds d(output)=1 and runs
/// every reachable node's backward in reverse creation order. Leaves not
/// reachable from `output` keep whatever is in their grad buffer (zero if
/// freshly created or zero_grad'ed).
void reverse_accumulate(const Var& output);

// ---- elementwise / reduction ops ------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // Hadamard
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var sum_all(const Var& a);    // -> shape {1}
Var mean_rows(const Var& a);  // n x m -> {m}

enum class Activation { kLeakyRelu, kSilu, kGelu };
Var activation(const Var& x, Activation kind, double slope = 0.01);

Var softmax_lastdim(const Var& x);

// ---- linear algebra --------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// X (n x in) * W^T (in x out) + b, the usual linear layer application.
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- normalization ---------------------------------------------------------

/// Layer norm over the last dimension with affine gain/bias (shape {m}).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-6);

/// Batch norm over a C x H x W map, per channel. In training mode uses batch
/// statistics and updates running ones in-place; in inference mode uses the
/// running statistics (then it is a pure affine map).
Var batch_norm2d(const Var& x, const Var& gain, const Var& bias, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum = 0.1,
                 double eps = 1e-6);

// ---- convolution -----------------------------------------------------------

/// Grouped 2-D cross-correlation. x: Cin x H x W, kernel:
/// Cout x (Cin/groups) x k x k with odd k, pad = k/2 so spatial size is kept.
Var grouped_conv2d(const Var& x, const Var& kernel, const Var& bias, int groups);

// ---- layout / gather -------------------------------------------------------

Var reshape(const Var& a, Shape shape);
/// C x H x W -> (H*W) x C token matrix (row index = y*W + x).
Var img_to_tokens(const Var& x);
Var tokens_to_img(const Var& t, int height, int width);
/// Zero-pad a C x H x W map on bottom/right.
Var pad2d(const Var& x, int pad_h, int pad_w);
Var crop2d(const Var& x, int height, int width);
Var gather_rows(const Var& t, const std::vector<int>& rows);
/// Inverse of gather_rows: places m rows at `rows` in an n-row zero matrix.
Var scatter_rows(const Var& t, const std::vector<int>& rows, int n);
Var slice_cols(const Var& t, int col0, int ncols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

// ---- sampling --------------------------------------------------------------

/// Bilinear sampling of a token matrix seen as an H x W grid. tokens:
/// (H*W) x C, coords: n x 2 rows of (x, y) in grid units. Out-of-range
/// neighbors contribute zero. Differentiable in both tokens and coords.
Var bilinear_sample(const Var& tokens, int height, int width, const Var& coords);

/// Convenience wrapper for a C x H x W map; returns n x C.
Var bilinear_sample_map(const Var& map, const Var& coords);

/// Builds the s^2 x 2 sampling grid of one window from 5 raw transform
/// parameters (dsx, dsy, ox, oy, theta): scale is reparametrized as 1+ds so
/// zero parameters give the identity window. rel holds the per-point offsets
/// from the window center; when use_theta is false the angle is pinned to 0
/// (VSA) and receives no gradient.
Var window_sample_grid(const Var& params, const Tensor& rel, double center_x,
                       double center_y, bool use_theta);

// ---- misc ------------------------------------------------------------------

/// Mean of squared differences over all elements.
Var mse(const Var& pred, const Var& target);

}  // namespace rvsa
