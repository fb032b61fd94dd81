#pragma once

// Dense tensors and a tape-based reverse-mode differentiator.
//
// A Graph records every operation of one forward pass. Nodes are appended in
// evaluation order, so the node list is already topologically sorted and
// backward() is a single reverse sweep. Graphs are single-threaded and meant
// to be discarded after one forward/backward cycle.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advids {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }

  const double& operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  // Rank-2 accessors.
  const double& at(std::size_t row, std::size_t col) const {
    return values_[row * shape_[1] + col];
  }
  double& at(std::size_t row, std::size_t col) {
    return values_[row * shape_[1] + col];
  }

  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Input that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is populated by backward().
  Var leaf(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient of the last backward() target with respect to v. Zeros when v
  // was not reached.
  Tensor grad(Var v) const;

  // Populates gradients of every requires_grad node reachable from `loss`.
  // Leaf gradients accumulate across repeated calls until zero_grad();
  // intermediate gradients are recomputed on each call.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

  // Plumbing for operation implementations.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::vector<double>& grad_buffer(std::size_t id);
  const std::vector<double>& output_grad(std::size_t id) const {
    return nodes_[id].grad;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- operations ----------------------------------------------------------

enum class Pointwise { add, sub, mul, relu, sigmoid, tanh };
enum class Padding { same, valid };

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);

// Binary ops take equal shapes, or a rank-1 `b` broadcast over the last axis
// of `a` (bias vectors).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var elementwise(Pointwise op, Var a, std::optional<Var> b = std::nullopt);

Var scale(Var a, double factor);

// Row-wise softmax over the last axis of a rank-2 tensor.
Var softmax(Var z);

// x: [n, L, C_in], kernels: [K, C_in, C_out] -> [n, L', C_out]
Var conv1d(Var x, Var kernels, Padding padding);

// x: [n, L, C] -> [n, ceil(L / window), C]
Var maxpool1d(Var x, std::size_t window);

Var reshape(Var a, Shape shape);

// Columns [start, start + length) of the last axis of a rank-2 tensor.
Var slice_columns(Var a, std::size_t start, std::size_t length);

Var sum(Var a);
Var mean(Var a);

// sum(a * weights) for a fixed weight tensor of the same shape.
Var weighted_sum(Var a, const Tensor& weights);

// Mean over rows of -log(max(p[row, label], 1e-12)).
Var cross_entropy(Var probs, std::span<const int> labels);

// ---- gradient checking ---------------------------------------------------

using ScalarFunction = std::function<Var(Graph&, Var)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFunction& f, const Tensor& x, double h);

}  // namespace advids
