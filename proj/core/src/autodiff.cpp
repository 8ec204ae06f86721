#include "rvsa/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace rvsa {

namespace {

std::atomic<std::uint64_t> g_order{0};

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  value.quantize();
  n->value = std::move(value);
  n->order = g_order.fetch_add(1, std::memory_order_relaxed);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

void acc(Node& p, std::size_t i, double v) { p.grad[i] += v; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  value.quantize();
  n->value = std::move(value);
  n->grad = Tensor::zeros(n->value.shape());
  n->order = g_order.fetch_add(1, std::memory_order_relaxed);
  n->requires_grad = requires_grad;
  return Var(n);
}

void reverse_accumulate(const Var& output) {
  if (output.value().numel() != 1)
    throw std::invalid_argument("reverse_accumulate: output must be scalar, got shape " +
                                shape_str(output.shape()));
  // Collect reachable grad-requiring nodes.
  std::vector<Node*> reach;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{output.node().get()};
  seen.insert(output.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad) continue;
    reach.push_back(n);
    for (auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(reach.begin(), reach.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });
  for (Node* n : reach) n->ensure_grad();
  output.node()->ensure_grad();
  output.node()->grad[0] = 1.0;
  for (Node* n : reach)
    if (n->backward) n->backward(*n);
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *n.parents[static_cast<size_t>(k)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(p, i, n.grad[i]);
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(pa, i, n.grad[i]);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(pb, i, -n.grad[i]);
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(pa, i, n.grad[i] * pb.value[i]);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(pb, i, n.grad[i] * pa.value[i]);
    }
  }));
}

Var scale(const Var& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * a.value()[i];
  return Var(make_node(std::move(out), {a.node()}, [c](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(p, i, c * n.grad[i]);
  }));
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + c;
  return Var(make_node(std::move(out), {a.node()}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) acc(p, i, n.grad[i]);
  }));
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  return Var(make_node(Tensor::scalar(s), {a.node()}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < p.grad.numel(); ++i) acc(p, i, n.grad[0]);
  }));
}

Var mean_rows(const Var& a) {
  if (a.value().rank() != 2) dim_error("mean_rows: expects rank-2, got " + shape_str(a.shape()));
  int rows = a.value().dim(0), cols = a.value().dim(1);
  if (rows == 0) dim_error("mean_rows: zero rows");
  Tensor out({cols});
  for (int j = 0; j < cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += a.value().at(i, j);
    out[static_cast<size_t>(j)] = s / rows;
  }
  return Var(make_node(std::move(out), {a.node()}, [rows, cols](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i) * cols + j] += n.grad[static_cast<size_t>(j)] / rows;
  }));
}

Var activation(const Var& x, Activation kind, double slope) {
  if (kind == Activation::kLeakyRelu && !(slope > 0.0 && slope < 1.0))
    throw std::invalid_argument("leaky_relu slope must be in (0,1)");
  Tensor out(x.shape());
  const Tensor& v = x.value();
  switch (kind) {
    case Activation::kLeakyRelu:
      for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = v[i] >= 0.0 ? v[i] : slope * v[i];
      break;
    case Activation::kSilu:
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] = v[i] * sigmoid(v[i]);
      break;
    case Activation::kGelu:
      for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * 0.7071067811865475244));
      break;
  }
  return Var(make_node(std::move(out), {x.node()}, [kind, slope](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      double xv = p.value[i], d = 0.0;
      switch (kind) {
        case Activation::kLeakyRelu:
          d = xv >= 0.0 ? 1.0 : slope;
          break;
        case Activation::kSilu: {
          double s = sigmoid(xv);
          d = s * (1.0 + xv * (1.0 - s));
          break;
        }
        case Activation::kGelu: {
          double phi = std::exp(-0.5 * xv * xv) * 0.3989422804014326779;
          d = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475244)) + xv * phi;
          break;
        }
      }
      p.grad[i] += n.grad[i] * d;
    }
  }));
}

Var softmax_lastdim(const Var& x) {
  if (x.value().rank() < 1 || x.value().shape().back() < 1)
    dim_error("softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
  int last = x.value().shape().back();
  std::size_t outer = x.value().numel() / static_cast<std::size_t>(last);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < outer; ++r) {
    const double* in = x.value().data() + r * last;
    double* o = out.data() + r * last;
    double m = in[0];
    for (int j = 1; j < last; ++j) m = std::max(m, in[j]);
    double z = 0.0;
    for (int j = 0; j < last; ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    for (int j = 0; j < last; ++j) o[j] /= z;
  }
  return Var(make_node(std::move(out), {x.node()}, [last, outer](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t r = 0; r < outer; ++r) {
      const double* y = n.value.data() + r * last;
      const double* dy = n.grad.data() + r * last;
      double dot = 0.0;
      for (int j = 0; j < last; ++j) dot += y[j] * dy[j];
      for (int j = 0; j < last; ++j)
        p.grad[r * static_cast<std::size_t>(last) + static_cast<std::size_t>(j)] +=
            y[j] * (dy[j] - dot);
    }
  }));
}

// ---- linear algebra --------------------------------------------------------

namespace {

// C(m x n) += A(m x k) * B(k x n), ikj order.
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < k; ++t) {
      double av = a[static_cast<size_t>(i) * k + t];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(t) * n;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// C(m x n) += A(k x m)^T * B(k x n)
void mm_at_b_acc(const double* a, const double* b, double* c, int k, int m, int n) {
  for (int t = 0; t < k; ++t)
    for (int i = 0; i < m; ++i) {
      double av = a[static_cast<size_t>(t) * m + i];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(t) * n;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// C(m x n) += A(m x k) * B(n x k)^T
void mm_a_bt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double* arow = a + static_cast<size_t>(i) * k;
      const double* brow = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += arow[t] * brow[t];
      c[static_cast<size_t>(i) * n + j] += s;
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2)
    dim_error("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int m = a.value().dim(0), k = a.value().dim(1);
  int k2 = b.value().dim(0), n = b.value().dim(1);
  if (k != k2)
    dim_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  Tensor out({m, n});
  mm_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Var(make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& nd) {
    Node& pa = *nd.parents[0];
    Node& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();  // dA = dC * B^T
      mm_a_bt_acc(nd.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();  // dB = A^T * dC
      mm_at_b_acc(pa.value.data(), nd.grad.data(), pb.grad.data(), m, k, n);
    }
  }));
}

Var transpose(const Var& a) {
  if (a.value().rank() != 2) dim_error("transpose: expects rank-2");
  int m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
  return Var(make_node(std::move(out), {a.node()}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p.grad[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j) * m + i];
  }));
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || bias.value().rank() != 1)
    dim_error("linear: bad ranks");
  int n = x.value().dim(0), in = x.value().dim(1);
  int out_dim = weight.value().dim(0);
  if (weight.value().dim(1) != in || bias.value().dim(0) != out_dim)
    dim_error("linear: weight " + shape_str(weight.shape()) + " does not match input " +
              shape_str(x.shape()) + " / bias " + shape_str(bias.shape()));
  Tensor out({n, out_dim});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_dim; ++o) out.at(i, o) = bias.value()[static_cast<size_t>(o)];
  mm_a_bt_acc(x.value().data(), weight.value().data(), out.data(), n, in, out_dim);
  return Var(make_node(std::move(out), {x.node(), weight.node(), bias.node()},
                       [n, in, out_dim](Node& nd) {
                         Node& px = *nd.parents[0];
                         Node& pw = *nd.parents[1];
                         Node& pb = *nd.parents[2];
                         if (px.requires_grad) {
                           px.ensure_grad();  // dX = dC * W
                           mm_acc(nd.grad.data(), pw.value.data(), px.grad.data(), n, out_dim, in);
                         }
                         if (pw.requires_grad) {
                           pw.ensure_grad();  // dW = dC^T * X
                           mm_at_b_acc(nd.grad.data(), px.value.data(), pw.grad.data(), n, out_dim,
                                       in);
                         }
                         if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (int i = 0; i < n; ++i)
                             for (int o = 0; o < out_dim; ++o)
                               pb.grad[static_cast<size_t>(o)] +=
                                   nd.grad[static_cast<size_t>(i) * out_dim + o];
                         }
                       }));
}

// ---- normalization ---------------------------------------------------------

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (x.value().rank() < 1 || x.value().shape().back() < 1)
    dim_error("layer_norm: zero-length normalization axis");
  int m = x.value().shape().back();
  if (gain.value().numel() != static_cast<std::size_t>(m) ||
      bias.value().numel() != static_cast<std::size_t>(m))
    dim_error("layer_norm: gain/bias length must equal last dimension");
  std::size_t outer = x.value().numel() / static_cast<std::size_t>(m);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < outer; ++r) {
    const double* in = x.value().data() + r * m;
    double* o = out.data() + r * m;
    double mu = 0.0;
    for (int j = 0; j < m; ++j) mu += in[j];
    mu /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= m;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < m; ++j)
      o[j] = gain.value()[static_cast<size_t>(j)] * (in[j] - mu) * inv +
             bias.value()[static_cast<size_t>(j)];
  }
  return Var(make_node(std::move(out), {x.node(), gain.node(), bias.node()},
                       [m, outer, eps](Node& nd) {
                         Node& px = *nd.parents[0];
                         Node& pg = *nd.parents[1];
                         Node& pb = *nd.parents[2];
                         px.ensure_grad();
                         if (pg.requires_grad) pg.ensure_grad();
                         if (pb.requires_grad) pb.ensure_grad();
                         std::vector<double> xhat(static_cast<size_t>(m));
                         for (std::size_t r = 0; r < outer; ++r) {
                           const double* in = px.value.data() + r * m;
                           const double* dy = nd.grad.data() + r * m;
                           double mu = 0.0;
                           for (int j = 0; j < m; ++j) mu += in[j];
                           mu /= m;
                           double var = 0.0;
                           for (int j = 0; j < m; ++j) var += (in[j] - mu) * (in[j] - mu);
                           var /= m;
                           double inv = 1.0 / std::sqrt(var + eps);
                           double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                           for (int j = 0; j < m; ++j) {
                             xhat[static_cast<size_t>(j)] = (in[j] - mu) * inv;
                             double dxh = dy[j] * pg.value[static_cast<size_t>(j)];
                             mean_dxh += dxh;
                             mean_dxh_xh += dxh * xhat[static_cast<size_t>(j)];
                           }
                           mean_dxh /= m;
                           mean_dxh_xh /= m;
                           for (int j = 0; j < m; ++j) {
                             double dxh = dy[j] * pg.value[static_cast<size_t>(j)];
                             px.grad[r * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] +=
                                 inv * (dxh - mean_dxh - xhat[static_cast<size_t>(j)] * mean_dxh_xh);
                             if (pg.requires_grad)
                               pg.grad[static_cast<size_t>(j)] += dy[j] * xhat[static_cast<size_t>(j)];
                             if (pb.requires_grad) pb.grad[static_cast<size_t>(j)] += dy[j];
                           }
                         }
                       }));
}

Var batch_norm2d(const Var& x, const Var& gain, const Var& bias, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("batch_norm2d: eps must be positive");
  if (x.value().rank() != 3) dim_error("batch_norm2d: expects C x H x W");
  int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (H * W < 1) dim_error("batch_norm2d: zero-length normalization axis");
  std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out(x.shape());
  std::vector<double> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  if (training) {
    for (int c = 0; c < C; ++c) {
      const double* in = x.value().data() + static_cast<size_t>(c) * hw;
      double mu = 0.0;
      for (std::size_t i = 0; i < hw; ++i) mu += in[i];
      mu /= static_cast<double>(hw);
      double v = 0.0;
      for (std::size_t i = 0; i < hw; ++i) v += (in[i] - mu) * (in[i] - mu);
      v /= static_cast<double>(hw);
      mean[static_cast<size_t>(c)] = mu;
      var[static_cast<size_t>(c)] = v;
      running_mean[static_cast<size_t>(c)] =
          (1.0 - momentum) * running_mean[static_cast<size_t>(c)] + momentum * mu;
      running_var[static_cast<size_t>(c)] =
          (1.0 - momentum) * running_var[static_cast<size_t>(c)] + momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[static_cast<size_t>(c)];
      var[static_cast<size_t>(c)] = running_var[static_cast<size_t>(c)];
    }
  }
  for (int c = 0; c < C; ++c) {
    double inv = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
    double g = gain.value()[static_cast<size_t>(c)], b = bias.value()[static_cast<size_t>(c)];
    const double* in = x.value().data() + static_cast<size_t>(c) * hw;
    double* o = out.data() + static_cast<size_t>(c) * hw;
    for (std::size_t i = 0; i < hw; ++i)
      o[i] = g * (in[i] - mean[static_cast<size_t>(c)]) * inv + b;
  }
  return Var(make_node(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [C, hw, eps, training, mean, var](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int c = 0; c < C; ++c) {
          double inv = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);
          double g = pg.value[static_cast<size_t>(c)];
          const double* in = px.value.data() + static_cast<size_t>(c) * hw;
          const double* dy = nd.grad.data() + static_cast<size_t>(c) * hw;
          double* dx = px.grad.data() + static_cast<size_t>(c) * hw;
          if (training) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
              double xh = (in[i] - mean[static_cast<size_t>(c)]) * inv;
              double dxh = dy[i] * g;
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh;
            }
            mean_dxh /= static_cast<double>(hw);
            mean_dxh_xh /= static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) {
              double xh = (in[i] - mean[static_cast<size_t>(c)]) * inv;
              double dxh = dy[i] * g;
              dx[i] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
            }
          } else {
            for (std::size_t i = 0; i < hw; ++i) dx[i] += dy[i] * g * inv;
          }
          if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t i = 0; i < hw; ++i) {
              double xh = (in[i] - mean[static_cast<size_t>(c)]) * inv;
              if (pg.requires_grad) pg.grad[static_cast<size_t>(c)] += dy[i] * xh;
              if (pb.requires_grad) pb.grad[static_cast<size_t>(c)] += dy[i];
            }
          }
        }
      }));
}

// ---- convolution -----------------------------------------------------------

Var grouped_conv2d(const Var& x, const Var& kernel, const Var& bias, int groups) {
  if (x.value().rank() != 3 || kernel.value().rank() != 4)
    dim_error("grouped_conv2d: expects C x H x W input and Cout x Cg x k x k kernel");
  int cin = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  int cout = kernel.value().dim(0), cg = kernel.value().dim(1);
  int kh = kernel.value().dim(2), kw = kernel.value().dim(3);
  if (kh != kw || kh % 2 == 0)
    throw std::invalid_argument("grouped_conv2d: kernel must be odd and square");
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw std::invalid_argument("grouped_conv2d: channels not divisible by groups");
  if (cg != cin / groups)
    dim_error("grouped_conv2d: kernel group width " + std::to_string(cg) +
              " != cin/groups = " + std::to_string(cin / groups));
  if (bias.value().numel() != static_cast<std::size_t>(cout))
    dim_error("grouped_conv2d: bias length must equal cout");
  int pad = kh / 2;
  int cout_g = cout / groups;
  Tensor out({cout, H, W});
  for (int oc = 0; oc < cout; ++oc) {
    int g = oc / cout_g;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double s = 0.0;
        for (int ic = 0; ic < cg; ++ic) {
          int in_c = g * cg + ic;
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              int sy = y + dy - pad, sx = xx + dx - pad;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              s += kernel.value()[((static_cast<size_t>(oc) * cg + ic) * kh + dy) * kw + dx] *
                   x.value().at(in_c, sy, sx);
            }
        }
        out.at(oc, y, xx) = s + bias.value()[static_cast<size_t>(oc)];
      }
  }
  return Var(make_node(
      std::move(out), {x.node(), kernel.node(), bias.node()},
      [cin, H, W, cout, cg, kh, kw, pad, cout_g](Node& nd) {
        (void)cin;
        Node& px = *nd.parents[0];
        Node& pk = *nd.parents[1];
        Node& pb = *nd.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pk.requires_grad) pk.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int oc = 0; oc < cout; ++oc) {
          int g = oc / cout_g;
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              double go = nd.grad.at(oc, y, xx);
              if (pb.requires_grad) pb.grad[static_cast<size_t>(oc)] += go;
              for (int ic = 0; ic < cg; ++ic) {
                int in_c = g * cg + ic;
                for (int dy = 0; dy < kh; ++dy)
                  for (int dx = 0; dx < kw; ++dx) {
                    int sy = y + dy - pad, sx = xx + dx - pad;
                    if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                    std::size_t kidx = ((static_cast<size_t>(oc) * cg + ic) * kh + dy) * kw + dx;
                    if (px.requires_grad)
                      px.grad.at(in_c, sy, sx) += go * pk.value[kidx];
                    if (pk.requires_grad) pk.grad[kidx] += go * px.value.at(in_c, sy, sx);
                  }
              }
            }
        }
      }));
}

// ---- layout / gather -------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel())
    dim_error("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
              shape_str(shape));
  Tensor out(shape, a.value().vec());
  return Var(make_node(std::move(out), {a.node()}, [](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < nd.grad.numel(); ++i) p.grad[i] += nd.grad[i];
  }));
}

Var img_to_tokens(const Var& x) {
  if (x.value().rank() != 3) dim_error("img_to_tokens: expects C x H x W");
  int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  Tensor out({H * W, C});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(y * W + xx, c) = x.value().at(c, y, xx);
  return Var(make_node(std::move(out), {x.node()}, [C, H, W](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) p.grad.at(c, y, xx) += nd.grad.at(y * W + xx, c);
  }));
}

Var tokens_to_img(const Var& t, int height, int width) {
  if (t.value().rank() != 2 || t.value().dim(0) != height * width)
    dim_error("tokens_to_img: token count != H*W");
  int C = t.value().dim(1);
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) out.at(c, y, xx) = t.value().at(y * width + xx, c);
  return Var(make_node(std::move(out), {t.node()}, [C, height, width](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx)
          p.grad.at(y * width + xx, c) += nd.grad.at(c, y, xx);
  }));
}

Var pad2d(const Var& x, int pad_h, int pad_w) {
  if (x.value().rank() != 3) dim_error("pad2d: expects C x H x W");
  if (pad_h < 0 || pad_w < 0) throw std::invalid_argument("pad2d: negative padding");
  int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  Tensor out({C, H + pad_h, W + pad_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(c, y, xx) = x.value().at(c, y, xx);
  return Var(make_node(std::move(out), {x.node()}, [C, H, W](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) p.grad.at(c, y, xx) += nd.grad.at(c, y, xx);
  }));
}

Var crop2d(const Var& x, int height, int width) {
  if (x.value().rank() != 3) dim_error("crop2d: expects C x H x W");
  int C = x.value().dim(0), H = x.value().dim(1), W = x.value().dim(2);
  if (height > H || width > W) dim_error("crop2d: crop larger than input");
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) out.at(c, y, xx) = x.value().at(c, y, xx);
  return Var(make_node(std::move(out), {x.node()}, [C, height, width](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) p.grad.at(c, y, xx) += nd.grad.at(c, y, xx);
  }));
}

Var gather_rows(const Var& t, const std::vector<int>& rows) {
  if (t.value().rank() != 2) dim_error("gather_rows: expects rank-2");
  int n = t.value().dim(0), C = t.value().dim(1);
  for (int r : rows)
    if (r < 0 || r >= n) dim_error("gather_rows: row index out of range");
  Tensor out({static_cast<int>(rows.size()), C});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < C; ++j) out.at(static_cast<int>(i), j) = t.value().at(rows[i], j);
  return Var(make_node(std::move(out), {t.node()}, [rows, C](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < C; ++j)
        p.grad.at(rows[i], j) += nd.grad.at(static_cast<int>(i), j);
  }));
}

Var scatter_rows(const Var& t, const std::vector<int>& rows, int n) {
  if (t.value().rank() != 2 || t.value().dim(0) != static_cast<int>(rows.size()))
    dim_error("scatter_rows: row count mismatch");
  int C = t.value().dim(1);
  for (int r : rows)
    if (r < 0 || r >= n) dim_error("scatter_rows: row index out of range");
  Tensor out({n, C});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < C; ++j) out.at(rows[i], j) += t.value().at(static_cast<int>(i), j);
  return Var(make_node(std::move(out), {t.node()}, [rows, C](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < C; ++j)
        p.grad.at(static_cast<int>(i), j) += nd.grad.at(rows[i], j);
  }));
}

Var slice_cols(const Var& t, int col0, int ncols) {
  if (t.value().rank() != 2) dim_error("slice_cols: expects rank-2");
  int n = t.value().dim(0), C = t.value().dim(1);
  if (col0 < 0 || ncols < 1 || col0 + ncols > C) dim_error("slice_cols: range out of bounds");
  Tensor out({n, ncols});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < ncols; ++j) out.at(i, j) = t.value().at(i, col0 + j);
  return Var(make_node(std::move(out), {t.node()}, [n, ncols, col0](Node& nd) {
    Node& p = *nd.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < ncols; ++j) p.grad.at(i, col0 + j) += nd.grad.at(i, j);
  }));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) dim_error("concat_cols: no parts");
  int n = parts[0].value().dim(0), total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().dim(0) != n)
      dim_error("concat_cols: row counts differ");
    total += p.value().dim(1);
  }
  Tensor out({n, total});
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<int> widths;
  int off = 0;
  for (const Var& p : parts) {
    int w = p.value().dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) out.at(i, off + j) = p.value().at(i, j);
    parents.push_back(p.node());
    widths.push_back(w);
    off += w;
  }
  return Var(make_node(std::move(out), std::move(parents), [n, widths](Node& nd) {
    int off2 = 0;
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      Node& p = *nd.parents[k];
      int w = widths[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j) p.grad.at(i, j) += nd.grad.at(i, off2 + j);
      }
      off2 += w;
    }
  }));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) dim_error("concat_rows: no parts");
  int C = parts[0].value().dim(1), total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().dim(1) != C)
      dim_error("concat_rows: column counts differ");
    total += p.value().dim(0);
  }
  Tensor out({total, C});
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<int> heights;
  int off = 0;
  for (const Var& p : parts) {
    int h = p.value().dim(0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < C; ++j) out.at(off + i, j) = p.value().at(i, j);
    parents.push_back(p.node());
    heights.push_back(h);
    off += h;
  }
  return Var(make_node(std::move(out), std::move(parents), [C, heights](Node& nd) {
    int off2 = 0;
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      Node& p = *nd.parents[k];
      int h = heights[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < C; ++j) p.grad.at(i, j) += nd.grad.at(off2 + i, j);
      }
      off2 += h;
    }
  }));
}

// ---- sampling --------------------------------------------------------------

Var bilinear_sample(const Var& tokens, int height, int width, const Var& coords) {
  if (tokens.value().rank() != 2 || tokens.value().dim(0) != height * width)
    dim_error("bilinear_sample: token count != H*W");
  if (coords.value().rank() != 2 || coords.value().dim(1) != 2)
    dim_error("bilinear_sample: coords must be n x 2");
  int C = tokens.value().dim(1);
  int n = coords.value().dim(0);
  Tensor out({n, C});
  for (int i = 0; i < n; ++i) {
    double cx = coords.value().at(i, 0), cy = coords.value().at(i, 1);
    if (std::isnan(cx) || std::isnan(cy))
      throw std::domain_error("bilinear_sample: NaN coordinate");
    double fx0 = std::floor(cx), fy0 = std::floor(cy);
    int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    double ax = cx - fx0, ay = cy - fy0;
    const int xs[2] = {x0, x0 + 1};
    const int ys[2] = {y0, y0 + 1};
    const double wx[2] = {1.0 - ax, ax};
    const double wy[2] = {1.0 - ay, ay};
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 2; ++a) {
          if (ys[b] < 0 || ys[b] >= height || xs[a] < 0 || xs[a] >= width) continue;
          s += wy[b] * wx[a] * tokens.value().at(ys[b] * width + xs[a], c);
        }
      out.at(i, c) = s;
    }
  }
  return Var(make_node(std::move(out), {tokens.node(), coords.node()},
                       [height, width, C, n](Node& nd) {
                         Node& pt = *nd.parents[0];
                         Node& pc = *nd.parents[1];
                         if (pt.requires_grad) pt.ensure_grad();
                         if (pc.requires_grad) pc.ensure_grad();
                         auto tok = [&](int y, int x, int c) -> double {
                           if (y < 0 || y >= height || x < 0 || x >= width) return 0.0;
                           return pt.value.at(y * width + x, c);
                         };
                         for (int i = 0; i < n; ++i) {
                           double cx = pc.value.at(i, 0), cy = pc.value.at(i, 1);
                           double fx0 = std::floor(cx), fy0 = std::floor(cy);
                           int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
                           double ax = cx - fx0, ay = cy - fy0;
                           const int xs[2] = {x0, x0 + 1};
                           const int ys[2] = {y0, y0 + 1};
                           const double wx[2] = {1.0 - ax, ax};
                           const double wy[2] = {1.0 - ay, ay};
                           double gx = 0.0, gy = 0.0;
                           for (int c = 0; c < C; ++c) {
                             double go = nd.grad.at(i, c);
                             if (go == 0.0) continue;
                             if (pt.requires_grad) {
                               for (int b = 0; b < 2; ++b)
                                 for (int a = 0; a < 2; ++a) {
                                   if (ys[b] < 0 || ys[b] >= height || xs[a] < 0 ||
                                       xs[a] >= width)
                                     continue;
                                   pt.grad.at(ys[b] * width + xs[a], c) += go * wy[b] * wx[a];
                                 }
                             }
                             if (pc.requires_grad) {
                               double dvdx = wy[0] * (tok(y0, x0 + 1, c) - tok(y0, x0, c)) +
                                             wy[1] * (tok(y0 + 1, x0 + 1, c) - tok(y0 + 1, x0, c));
                               double dvdy = wx[0] * (tok(y0 + 1, x0, c) - tok(y0, x0, c)) +
                                             wx[1] * (tok(y0 + 1, x0 + 1, c) - tok(y0, x0 + 1, c));
                               gx += go * dvdx;
                               gy += go * dvdy;
                             }
                           }
                           if (pc.requires_grad) {
                             pc.grad.at(i, 0) += gx;
                             pc.grad.at(i, 1) += gy;
                           }
                         }
                       }));
}

Var bilinear_sample_map(const Var& map, const Var& coords) {
  if (map.value().rank() != 3) dim_error("bilinear_sample_map: expects C x H x W");
  int H = map.value().dim(1), W = map.value().dim(2);
  return bilinear_sample(img_to_tokens(map), H, W, coords);
}

Var window_sample_grid(const Var& params, const Tensor& rel, double center_x, double center_y,
                       bool use_theta) {
  if (params.value().numel() != 5)
    dim_error("window_sample_grid: expects 5 transform parameters, got " +
              std::to_string(params.value().numel()));
  if (rel.rank() != 2 || rel.dim(1) != 2) dim_error("window_sample_grid: rel must be n x 2");
  int n = rel.dim(0);
  double dsx = params.value()[0], dsy = params.value()[1];
  double ox = params.value()[2], oy = params.value()[3];
  double th = use_theta ? params.value()[4] : 0.0;
  double sx = 1.0 + dsx, sy = 1.0 + dsy;
  double ct = std::cos(th), st = std::sin(th);
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    double rx = rel.at(i, 0) * sx, ry = rel.at(i, 1) * sy;
    out.at(i, 0) = center_x + ox + ct * rx + st * ry;
    out.at(i, 1) = center_y + oy - st * rx + ct * ry;
  }
  return Var(make_node(std::move(out), {params.node()},
                       [rel, use_theta, sx, sy, ct, st, n](Node& nd) {
                         Node& p = *nd.parents[0];
                         p.ensure_grad();
                         for (int i = 0; i < n; ++i) {
                           double rx = rel.at(i, 0), ry = rel.at(i, 1);
                           double gx = nd.grad.at(i, 0), gy = nd.grad.at(i, 1);
                           p.grad[0] += gx * ct * rx - gy * st * rx;   // d/d(dsx)
                           p.grad[1] += gx * st * ry + gy * ct * ry;   // d/d(dsy)
                           p.grad[2] += gx;                            // d/d(ox)
                           p.grad[3] += gy;                            // d/d(oy)
                           if (use_theta)
                             p.grad[4] += gx * (-st * rx * sx + ct * ry * sy) +
                                          gy * (-ct * rx * sx - st * ry * sy);
                         }
                       }));
}

Var mse(const Var& pred, const Var& target) {
  check_same_shape(pred, target, "mse");
  std::size_t n = pred.value().numel();
  if (n == 0) dim_error("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  return Var(make_node(Tensor::scalar(s / static_cast<double>(n)),
                       {pred.node(), target.node()}, [n](Node& nd) {
                         Node& pp = *nd.parents[0];
                         Node& pt = *nd.parents[1];
                         double g = 2.0 * nd.grad[0] / static_cast<double>(n);
                         if (pp.requires_grad) {
                           pp.ensure_grad();
                           for (std::size_t i = 0; i < n; ++i)
                             pp.grad[i] += g * (pp.value[i] - pt.value[i]);
                         }
                         if (pt.requires_grad) {
                           pt.ensure_grad();
                           for (std::size_t i = 0; i < n; ++i)
                             pt.grad[i] -= g * (pp.value[i] - pt.value[i]);
                         }
                       }));
}

}  // namespace rvsa
