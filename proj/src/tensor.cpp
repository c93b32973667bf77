#include "factual/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gemm.hpp"

namespace factual {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2x2: return "max_pool2x2";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::flatten: return "flatten";
    case OpKind::reshape: return "reshape";
    case OpKind::dense: return "dense";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::softmax: return "softmax";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::sign: return "sign";
    case OpKind::clamp: return "clamp";
  }
  return "unknown";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(numel(shape), 0.0);
  return grad;
}

namespace {

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; })) {
    throw TensorError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    throw TensorError("tensor of shape " + shape_str(shape) + " needs " +
                      std::to_string(numel(shape)) + " values, got " +
                      std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
  throw TensorError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a) + " vs " +
                    shape_str(b));
}

[[noreturn]] void rank_error(OpKind kind, const Shape& a, const char* expected) {
  throw TensorError(std::string(op_name(kind)) + ": expected " + expected + ", got shape " +
                    shape_str(a));
}

// Creates the output node; the graph edge is recorded only when some input requires grad.
std::shared_ptr<Node> make_output(OpKind kind, Shape shape, std::vector<double> values,
                                  std::span<const Tensor> inputs) {
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& t : inputs) node->parents.push_back(t.defined() ? t.node() : nullptr);
  }
  return node;
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

const Node& in(std::span<const Tensor> inputs, std::size_t i) { return *inputs[i].node(); }

Tensor elementwise_binary(OpKind kind, std::span<const Tensor> inputs) {
  const auto& a = in(inputs, 0);
  const auto& b = in(inputs, 1);
  if (a.shape != b.shape) shape_error(kind, a.shape, b.shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kind == OpKind::add ? av[i] + bv[i] : kind == OpKind::sub ? av[i] - bv[i] : av[i] * bv[i];
  }
  auto node = make_output(kind, a.shape, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [kind](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const auto& g = self.grad;
      if (wants_grad(pa)) {
        auto& ga = pa->grad_buffer();
        if (kind == OpKind::mul) {
          const auto bv = pb->values();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (wants_grad(pb)) {
        auto& gb = pb->grad_buffer();
        if (kind == OpKind::mul) {
          const auto av = pa->values();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        } else if (kind == OpKind::sub) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    };
  }
  return Tensor(node);
}

// Unary ops whose derivative depends only on the input value and output value.
template <typename F, typename D>
Tensor elementwise_unary(OpKind kind, std::span<const Tensor> inputs, F f, D dfdx) {
  const auto& a = in(inputs, 0);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  auto node = make_output(kind, a.shape, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [dfdx](Node& self) {
      auto& p = self.parents[0];
      auto& gp = p->grad_buffer();
      const auto x = p->values();
      const auto y = self.values();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * dfdx(x[i], y[i]);
    };
  }
  return Tensor(node);
}

Tensor op_scale(std::span<const Tensor> inputs, double factor) {
  return elementwise_unary(
      OpKind::scale, inputs, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor op_matmul(std::span<const Tensor> inputs, bool transpose_rhs) {
  const auto& a = in(inputs, 0);
  const auto& b = in(inputs, 1);
  if (a.shape.size() != 2) rank_error(OpKind::matmul, a.shape, "rank-2 lhs");
  if (b.shape.size() != 2) rank_error(OpKind::matmul, b.shape, "rank-2 rhs");
  const std::size_t m = a.shape[0], k = a.shape[1];
  const std::size_t kb = transpose_rhs ? b.shape[1] : b.shape[0];
  const std::size_t n = transpose_rhs ? b.shape[0] : b.shape[1];
  if (k != kb) shape_error(OpKind::matmul, a.shape, b.shape);
  std::vector<double> out(m * n, 0.0);
  if (transpose_rhs) {
    detail::gemm_nt(m, n, k, a.values().data(), b.values().data(), out.data());
  } else {
    detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
  }
  auto node = make_output(OpKind::matmul, {m, n}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [m, n, k, transpose_rhs](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const double* g = self.grad.data();
      if (wants_grad(pa)) {
        // dA = G · B^T  (or G · B when B was transposed)
        auto& ga = pa->grad_buffer();
        if (transpose_rhs) {
          detail::gemm_nn(m, k, n, g, pb->values().data(), ga.data());
        } else {
          detail::gemm_nt(m, k, n, g, pb->values().data(), ga.data());
        }
      }
      if (wants_grad(pb)) {
        auto& gb = pb->grad_buffer();
        if (transpose_rhs) {
          // dB[n×k] = G^T · A
          detail::gemm_tn(n, k, m, g, pa->values().data(), gb.data());
        } else {
          // dB[k×n] = A^T · G
          detail::gemm_tn(k, n, m, pa->values().data(), g, gb.data());
        }
      }
    };
  }
  return Tensor(node);
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t col_rows() const { return cin * k * k; }
  std::size_t col_cols() const { return ho * wo; }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  const auto ho = g.ho, wo = g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* dx) {
  const auto ho = g.ho, wo = g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor op_conv2d(std::span<const Tensor> inputs, std::size_t stride, std::size_t pad) {
  const auto& x = in(inputs, 0);
  const auto& w = in(inputs, 1);
  const bool has_bias = inputs.size() > 2 && inputs[2].defined();
  if (x.shape.size() != 4) rank_error(OpKind::conv2d, x.shape, "N×C×H×W input");
  if (w.shape.size() != 4 || w.shape[2] != w.shape[3]) {
    rank_error(OpKind::conv2d, w.shape, "Cout×Cin×k×k kernel");
  }
  if (w.shape[1] != x.shape[1]) shape_error(OpKind::conv2d, x.shape, w.shape);
  if (stride == 0) throw TensorError("conv2d: stride must be positive");
  ConvGeometry g{x.shape[0], x.shape[1], x.shape[2], x.shape[3], w.shape[0], w.shape[2], stride, pad,
                 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) shape_error(OpKind::conv2d, x.shape, w.shape);
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (has_bias) {
    const auto& b = in(inputs, 2);
    if (b.shape != Shape{g.cout}) shape_error(OpKind::conv2d, w.shape, b.shape);
  }

  const std::size_t plane = g.ho * g.wo;
  std::vector<double> out(g.n * g.cout * plane, 0.0);
  std::vector<double> col(g.col_rows() * g.col_cols());
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(g, xv + s * g.cin * g.h * g.w, col.data());
    double* o = out.data() + s * g.cout * plane;
    if (has_bias) {
      const auto bv = in(inputs, 2).values();
      for (std::size_t c = 0; c < g.cout; ++c) std::fill(o + c * plane, o + (c + 1) * plane, bv[c]);
    }
    detail::gemm_nn(g.cout, plane, g.col_rows(), wv, col.data(), o);
  }

  auto node = make_output(OpKind::conv2d, {g.n, g.cout, g.ho, g.wo}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [g, has_bias](Node& self) {
      auto& px = self.parents[0];
      auto& pw = self.parents[1];
      const std::size_t plane = g.ho * g.wo;
      const double* gout = self.grad.data();
      if (has_bias && wants_grad(self.parents[2])) {
        auto& gb = self.parents[2]->grad_buffer();
        for (std::size_t s = 0; s < g.n; ++s) {
          for (std::size_t c = 0; c < g.cout; ++c) {
            const double* row = gout + (s * g.cout + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += row[i];
            gb[c] += acc;
          }
        }
      }
      const bool need_w = wants_grad(pw);
      const bool need_x = wants_grad(px);
      if (!need_w && !need_x) return;
      std::vector<double> col(g.col_rows() * plane);
      const double* xv = px->values().data();
      const double* wv = pw->values().data();
      double* gw = need_w ? pw->grad_buffer().data() : nullptr;
      double* gx = need_x ? px->grad_buffer().data() : nullptr;
      for (std::size_t s = 0; s < g.n; ++s) {
        const double* go = gout + s * g.cout * plane;
        if (need_w) {
          im2col(g, xv + s * g.cin * g.h * g.w, col.data());
          detail::gemm_nt(g.cout, g.col_rows(), plane, go, col.data(), gw);
        }
        if (need_x) {
          std::fill(col.begin(), col.end(), 0.0);
          detail::gemm_tn(g.col_rows(), plane, g.cout, wv, go, col.data());
          col2im(g, col.data(), gx + s * g.cin * g.h * g.w);
        }
      }
    };
  }
  return Tensor(node);
}

Tensor op_max_pool(std::span<const Tensor> inputs) {
  const auto& x = in(inputs, 0);
  if (x.shape.size() != 4) rank_error(OpKind::max_pool2x2, x.shape, "N×C×H×W input");
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) rank_error(OpKind::max_pool2x2, x.shape, "spatial extent >= 2");
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.data() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  auto node = make_output(OpKind::max_pool2x2, {n, c, ho, wo}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [argmax = std::move(argmax)](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) gp[argmax[i]] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor op_global_avg_pool(std::span<const Tensor> inputs) {
  const auto& x = in(inputs, 0);
  if (x.shape.size() != 4) rank_error(OpKind::global_avg_pool, x.shape, "N×C×H×W input");
  const std::size_t n = x.shape[0], c = x.shape[1], plane = x.shape[2] * x.shape[3];
  std::vector<double> out(n * c);
  const auto xv = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
    out[p] = acc / static_cast<double>(plane);
  }
  auto node = make_output(OpKind::global_avg_pool, {n, c}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [plane](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t p = 0; p < self.grad.size(); ++p) {
        const double v = self.grad[p] * inv;
        for (std::size_t i = 0; i < plane; ++i) gp[p * plane + i] += v;
      }
    };
  }
  return Tensor(node);
}

Tensor op_flatten(std::span<const Tensor> inputs) {
  const auto& x = in(inputs, 0);
  if (x.shape.empty()) rank_error(OpKind::flatten, x.shape, "rank >= 1");
  const std::size_t n = x.shape[0];
  const std::size_t rest = numel(x.shape) / n;
  auto node = make_output(OpKind::flatten, {n, rest}, std::vector<double>(x.values().begin(), x.values().end()),
                          inputs);
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor op_reshape(std::span<const Tensor> inputs, const Shape& target) {
  const auto& x = in(inputs, 0);
  if (target.empty() || numel(target) != numel(x.shape) ||
      std::find(target.begin(), target.end(), std::size_t{0}) != target.end()) {
    throw TensorError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(target));
  }
  auto node = make_output(OpKind::reshape, target, std::vector<double>(x.values().begin(), x.values().end()), inputs);
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor op_dense(std::span<const Tensor> inputs) {
  const auto& x = in(inputs, 0);
  const auto& w = in(inputs, 1);
  if (x.shape.size() != 2) rank_error(OpKind::dense, x.shape, "B×In input");
  if (w.shape.size() != 2 || w.shape[1] != x.shape[1]) shape_error(OpKind::dense, x.shape, w.shape);
  const std::size_t b = x.shape[0], nin = x.shape[1], nout = w.shape[0];
  const bool has_bias = inputs.size() > 2 && inputs[2].defined();
  std::vector<double> out(b * nout, 0.0);
  if (has_bias) {
    const auto& bias = in(inputs, 2);
    if (bias.shape != Shape{nout}) shape_error(OpKind::dense, w.shape, bias.shape);
    for (std::size_t r = 0; r < b; ++r) {
      std::copy(bias.values().begin(), bias.values().end(), out.begin() + static_cast<long>(r * nout));
    }
  }
  detail::gemm_nt(b, nout, nin, x.values().data(), w.values().data(), out.data());
  auto node = make_output(OpKind::dense, {b, nout}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [b, nin, nout, has_bias](Node& self) {
      auto& px = self.parents[0];
      auto& pw = self.parents[1];
      const double* g = self.grad.data();
      if (wants_grad(px)) {
        detail::gemm_nn(b, nin, nout, g, pw->values().data(), px->grad_buffer().data());
      }
      if (wants_grad(pw)) {
        detail::gemm_tn(nout, nin, b, g, px->values().data(), pw->grad_buffer().data());
      }
      if (has_bias && wants_grad(self.parents[2])) {
        auto& gb = self.parents[2]->grad_buffer();
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t j = 0; j < nout; ++j) gb[j] += g[r * nout + j];
        }
      }
    };
  }
  return Tensor(node);
}

// Row layout helper: treats rank-1 tensors as a single row.
std::pair<std::size_t, std::size_t> as_rows(const Shape& s) {
  const std::size_t cols = s.back();
  return {numel(s) / cols, cols};
}

Tensor op_l2_normalize(std::span<const Tensor> inputs, double floor) {
  const auto& x = in(inputs, 0);
  const auto [rows, cols] = as_rows(x.shape);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> denom(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) ss += xv[r * cols + j] * xv[r * cols + j];
    denom[r] = std::max(std::sqrt(ss), floor);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = xv[r * cols + j] / denom[r];
  }
  auto node = make_output(OpKind::l2_normalize, x.shape, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [rows, cols, floor, denom = std::move(denom)](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      const auto y = self.values();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = self.grad.data() + r * cols;
        const double* yr = y.data() + r * cols;
        double* out = gp.data() + r * cols;
        if (denom[r] > floor) {
          double yg = 0.0;
          for (std::size_t j = 0; j < cols; ++j) yg += yr[j] * g[j];
          for (std::size_t j = 0; j < cols; ++j) out[j] += (g[j] - yr[j] * yg) / denom[r];
        } else {
          for (std::size_t j = 0; j < cols; ++j) out[j] += g[j] / floor;
        }
      }
    };
  }
  return Tensor(node);
}

Tensor op_sum(OpKind kind, std::span<const Tensor> inputs, bool rows_only) {
  const auto& x = in(inputs, 0);
  const auto xv = x.values();
  const bool is_mean = kind == OpKind::mean;
  if (!rows_only) {
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double n = static_cast<double>(xv.size());
    auto node = make_output(kind, {1}, {is_mean ? acc / n : acc}, inputs);
    if (node->requires_grad) {
      node->backward_fn = [is_mean, n](Node& self) {
        auto& gp = self.parents[0]->grad_buffer();
        const double g = is_mean ? self.grad[0] / n : self.grad[0];
        for (auto& v : gp) v += g;
      };
    }
    return Tensor(node);
  }
  const auto [rows, cols] = as_rows(x.shape);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[r] += xv[r * cols + j];
    if (is_mean) out[r] /= static_cast<double>(cols);
  }
  auto node = make_output(kind, {rows}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [rows, cols, is_mean](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = is_mean ? self.grad[r] / static_cast<double>(cols) : self.grad[r];
        for (std::size_t j = 0; j < cols; ++j) gp[r * cols + j] += g;
      }
    };
  }
  return Tensor(node);
}

Tensor op_softmax(std::span<const Tensor> inputs, bool log_space) {
  const auto& x = in(inputs, 0);
  const auto [rows, cols] = as_rows(x.shape);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) o[j] = log_space ? xr[j] - lse : std::exp(xr[j] - lse);
  }
  auto node = make_output(OpKind::softmax, x.shape, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [rows, cols, log_space](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      const auto y = self.values();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = self.grad.data() + r * cols;
        const double* yr = y.data() + r * cols;
        double* o = gp.data() + r * cols;
        if (log_space) {
          double gs = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gs += g[j];
          for (std::size_t j = 0; j < cols; ++j) o[j] += g[j] - std::exp(yr[j]) * gs;
        } else {
          double yg = 0.0;
          for (std::size_t j = 0; j < cols; ++j) yg += yr[j] * g[j];
          for (std::size_t j = 0; j < cols; ++j) o[j] += yr[j] * (g[j] - yg);
        }
      }
    };
  }
  return Tensor(node);
}

Tensor op_gather_rows(std::span<const Tensor> inputs, const std::vector<std::size_t>& indices) {
  const auto& x = in(inputs, 0);
  const auto [rows, cols] = as_rows(x.shape);
  if (indices.empty()) throw TensorError("gather_rows: empty index list");
  std::vector<double> out(indices.size() * cols);
  const auto xv = x.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw TensorError("gather_rows: index " + std::to_string(indices[i]) + " out of range for shape " +
                        shape_str(x.shape));
    }
    std::copy_n(xv.data() + indices[i] * cols, cols, out.data() + i * cols);
  }
  auto node = make_output(OpKind::gather_rows, {indices.size(), cols}, std::move(out), inputs);
  if (node->requires_grad) {
    node->backward_fn = [indices, cols](Node& self) {
      auto& gp = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) gp[indices[i] * cols + j] += self.grad[i * cols + j];
      }
    };
  }
  return Tensor(node);
}

Tensor op_sign(std::span<const Tensor> inputs) {
  const auto& x = in(inputs, 0);
  std::vector<double> out(x.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  auto node = make_output(OpKind::sign, x.shape, std::move(out), inputs);
  node->differentiable = false;
  if (node->requires_grad) {
    node->backward_fn = [](Node&) {
      throw TensorError("sign: operation is forward-only and has no gradient");
    };
  }
  return Tensor(node);
}

void require_arity(OpKind kind, std::span<const Tensor> inputs, std::size_t lo, std::size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    throw TensorError(std::string(op_name(kind)) + ": expected " + std::to_string(lo) +
                      (hi != lo ? "-" + std::to_string(hi) : std::string()) + " inputs, got " +
                      std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < std::min<std::size_t>(inputs.size(), lo); ++i) {
    if (!inputs[i].defined()) {
      throw TensorError(std::string(op_name(kind)) + ": input " + std::to_string(i) + " is undefined");
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value->size(); }
std::span<const double> Tensor::data() const { return *node_->value; }

std::span<double> Tensor::mutable_data() {
  if (node_->kind != OpKind::leaf) throw TensorError("mutable_data: only leaf tensors are writable");
  return *node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw TensorError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return (*node_->value)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->kind == OpKind::leaf; }
OpKind Tensor::kind() const { return node_->kind; }

std::optional<std::span<const double>> Tensor::grad() const {
  if (node_->grad.empty()) return std::nullopt;
  return std::span<const double>(node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::share_leaf(bool requires_grad) const {
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::detach() const { return from(shape(), std::vector<double>(data().begin(), data().end())); }

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
      require_arity(kind, inputs, 2, 2);
      return elementwise_binary(kind, inputs);
    case OpKind::scale:
      require_arity(kind, inputs, 1, 1);
      return op_scale(inputs, attrs.factor);
    case OpKind::matmul:
      require_arity(kind, inputs, 2, 2);
      return op_matmul(inputs, attrs.transpose_rhs);
    case OpKind::conv2d:
      require_arity(kind, inputs, 2, 3);
      return op_conv2d(inputs, attrs.stride, attrs.pad);
    case OpKind::relu:
      require_arity(kind, inputs, 1, 1);
      return elementwise_unary(
          kind, inputs, [](double x) { return x > 0.0 ? x : 0.0; },
          [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    case OpKind::max_pool2x2:
      require_arity(kind, inputs, 1, 1);
      return op_max_pool(inputs);
    case OpKind::global_avg_pool:
      require_arity(kind, inputs, 1, 1);
      return op_global_avg_pool(inputs);
    case OpKind::flatten:
      require_arity(kind, inputs, 1, 1);
      return op_flatten(inputs);
    case OpKind::reshape:
      require_arity(kind, inputs, 1, 1);
      return op_reshape(inputs, attrs.target);
    case OpKind::dense:
      require_arity(kind, inputs, 2, 3);
      return op_dense(inputs);
    case OpKind::l2_normalize:
      require_arity(kind, inputs, 1, 1);
      return op_l2_normalize(inputs, attrs.norm_floor);
    case OpKind::exp:
      require_arity(kind, inputs, 1, 1);
      return elementwise_unary(
          kind, inputs, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case OpKind::log:
      require_arity(kind, inputs, 1, 1);
      return elementwise_unary(
          kind, inputs, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    case OpKind::sum:
    case OpKind::mean:
      require_arity(kind, inputs, 1, 1);
      return op_sum(kind, inputs, attrs.rows);
    case OpKind::softmax:
      require_arity(kind, inputs, 1, 1);
      return op_softmax(inputs, attrs.log);
    case OpKind::gather_rows:
      require_arity(kind, inputs, 1, 1);
      return op_gather_rows(inputs, attrs.indices);
    case OpKind::sign:
      require_arity(kind, inputs, 1, 1);
      return op_sign(inputs);
    case OpKind::clamp: {
      require_arity(kind, inputs, 1, 1);
      const double lo = attrs.lo, hi = attrs.hi;
      if (lo > hi) throw TensorError("clamp: lower bound exceeds upper bound");
      return elementwise_unary(
          kind, inputs, [lo, hi](double x) { return std::clamp(x, lo, hi); },
          [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    }
    case OpKind::leaf:
      break;
  }
  throw TensorError(std::string("unsupported operation kind: ") + op_name(kind));
}

namespace {
Tensor apply(OpKind kind, std::initializer_list<Tensor> inputs, const OpAttrs& attrs = {}) {
  return forward_op(kind, std::span<const Tensor>(inputs.begin(), inputs.size()), attrs);
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return apply(OpKind::add, {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return apply(OpKind::sub, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return apply(OpKind::mul, {a, b}); }

Tensor scale(const Tensor& a, double factor) {
  OpAttrs attrs;
  attrs.factor = factor;
  return apply(OpKind::scale, {a}, attrs);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_rhs) {
  OpAttrs attrs;
  attrs.transpose_rhs = transpose_rhs;
  return apply(OpKind::matmul, {a, b}, attrs);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.pad = pad;
  if (bias.defined()) return apply(OpKind::conv2d, {x, w, bias}, attrs);
  return apply(OpKind::conv2d, {x, w}, attrs);
}

Tensor relu(const Tensor& a) { return apply(OpKind::relu, {a}); }
Tensor max_pool2x2(const Tensor& x) { return apply(OpKind::max_pool2x2, {x}); }
Tensor global_avg_pool(const Tensor& x) { return apply(OpKind::global_avg_pool, {x}); }
Tensor flatten(const Tensor& x) { return apply(OpKind::flatten, {x}); }
Tensor reshape(const Tensor& x, Shape shape) {
  OpAttrs a;
  a.target = std::move(shape);
  return apply(OpKind::reshape, {x}, a);
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (bias.defined()) return apply(OpKind::dense, {x, w, bias});
  return apply(OpKind::dense, {x, w});
}

Tensor l2_normalize(const Tensor& x, double floor) {
  OpAttrs attrs;
  attrs.norm_floor = floor;
  return apply(OpKind::l2_normalize, {x}, attrs);
}

Tensor exp(const Tensor& a) { return apply(OpKind::exp, {a}); }
Tensor log(const Tensor& a) { return apply(OpKind::log, {a}); }
Tensor sum(const Tensor& a) { return apply(OpKind::sum, {a}); }

Tensor sum_rows(const Tensor& a) {
  OpAttrs attrs;
  attrs.rows = true;
  return apply(OpKind::sum, {a}, attrs);
}

Tensor mean(const Tensor& a) { return apply(OpKind::mean, {a}); }
Tensor softmax(const Tensor& a) { return apply(OpKind::softmax, {a}); }

Tensor log_softmax(const Tensor& a) {
  OpAttrs attrs;
  attrs.log = true;
  return apply(OpKind::softmax, {a}, attrs);
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
  OpAttrs attrs;
  attrs.indices = std::move(indices);
  return apply(OpKind::gather_rows, {a}, attrs);
}

Tensor sign(const Tensor& a) { return apply(OpKind::sign, {a}); }

Tensor clamp(const Tensor& a, double lo, double hi) {
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return apply(OpKind::clamp, {a}, attrs);
}

ComputationGraph ComputationGraph::from(const Tensor& root) {
  ComputationGraph graph;
  if (!root.defined()) return graph;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; only nodes on a gradient path are recorded.
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* r = root.node().get();
  if (!r->requires_grad) return graph;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      graph.order_.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

void backward(const Tensor& root, const BackwardOptions& options) {
  if (!root.defined()) throw TensorError("backward: undefined root");
  if (root.size() != 1) {
    throw TensorError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) throw TensorError("backward: root does not require grad");
  const auto graph = ComputationGraph::from(root);
  for (Node* n : graph.order()) {
    if (n->consumed) throw TensorError("backward: graph already consumed");
  }
  for (Node* n : graph.order()) {
    if (n->kind != OpKind::leaf) n->grad.assign(numel(n->shape), 0.0);
  }
  Node* r = root.node().get();
  r->grad_buffer()[0] += 1.0;
  const auto& order = graph.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->kind == OpKind::leaf) continue;
    if (!n->differentiable) {
      throw TensorError(std::string(op_name(n->kind)) + ": operation is forward-only and has no gradient");
    }
    n->backward_fn(*n);
  }
  if (options.single_use) {
    for (Node* n : order) {
      if (n->kind != OpKind::leaf) n->consumed = true;
    }
  }
}

}  // namespace factual
