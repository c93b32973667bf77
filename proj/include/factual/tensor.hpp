#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace factual {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  matmul,
  conv2d,
  relu,
  max_pool2x2,
  global_avg_pool,
  flatten,
  reshape,
  dense,
  l2_normalize,
  exp,
  log,
  sum,
  mean,
  softmax,
  gather_rows,
  sign,
  clamp,
};

const char* op_name(OpKind kind);

// Attributes shared by all op kinds; each kind reads only its own fields.
struct OpAttrs {
  double factor = 1.0;                // scale
  std::size_t stride = 1;             // conv2d
  std::size_t pad = 0;                // conv2d
  bool transpose_rhs = false;         // matmul
  double norm_floor = 1e-12;          // l2_normalize
  bool rows = false;                  // sum/mean: reduce along last axis only
  bool log = false;                   // softmax: emit log-softmax
  std::vector<std::size_t> indices;   // gather_rows
  double lo = 0.0;                    // clamp
  double hi = 1.0;                    // clamp
  Shape target;                       // reshape
};

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> data() const;
  // Leaves only; mutating data under a recorded graph is undefined.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  OpKind kind() const;
  // Empty when no gradient has been accumulated.
  std::optional<std::span<const double>> grad() const;
  void zero_grad();

  // New leaf sharing this tensor's storage, with its own gradient slot.
  Tensor share_leaf(bool requires_grad) const;
  // New leaf owning a copy of the values.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool differentiable = true;
  bool consumed = false;
  OpKind kind = OpKind::leaf;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  std::span<const double> values() const { return *value; }
  std::vector<double>& grad_buffer();
};

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_rhs = false);
// x: N×Cin×H×W, w: Cout×Cin×k×k, bias: Cout (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1,
              std::size_t pad = 0);
Tensor relu(const Tensor& a);
Tensor max_pool2x2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
Tensor flatten(const Tensor& x);
// Same values in row-major order under a new shape of equal element count.
Tensor reshape(const Tensor& x, Shape shape);
// x: B×In, w: Out×In, bias: Out.
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor l2_normalize(const Tensor& x, double floor = 1e-12);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sum_rows(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices);
Tensor sign(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Nodes reachable from a root, parents before children.
class ComputationGraph {
 public:
  static ComputationGraph from(const Tensor& root);
  const std::vector<Node*>& order() const { return order_; }

 private:
  std::vector<Node*> order_;
};

struct BackwardOptions {
  bool single_use = false;
};

void backward(const Tensor& root, const BackwardOptions& options = {});

}  // namespace factual
