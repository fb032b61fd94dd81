#include "advids/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advids/error.hpp"

namespace advids {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  values_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    fail(ErrorKind::dimension, "tensor shape " + shape_string(shape_) +
                                   " does not hold " +
                                   std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.values_.begin(), t.values_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    fail(ErrorKind::dimension, "axis " + std::to_string(axis) +
                                   " out of range for shape " +
                                   shape_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    fail(ErrorKind::dimension, "cannot reshape " + shape_string(shape_) +
                                   " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs,
                  BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.graph != this) {
      fail(ErrorKind::contract, "operation mixes nodes of different graphs");
    }
    needs = needs || nodes_[in.id].requires_grad;
  }
  Node node{std::move(value), {}, needs, false, {}};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

std::vector<double>& Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (node.grad.empty()) return Tensor(node.value.shape());
  return Tensor(node.value.shape(), node.grad);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) {
    fail(ErrorKind::contract, "backward target belongs to another graph");
  }
  if (nodes_[loss.id].value.size() != 1) {
    fail(ErrorKind::contract,
         "backward requires a scalar loss, got shape " +
             shape_string(nodes_[loss.id].value.shape()));
  }
  for (Node& node : nodes_) {
    if (!node.is_leaf) node.grad.clear();
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.is_leaf || !node.requires_grad || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

void Graph::zero_grad() {
  for (Node& node : nodes_) node.grad.clear();
}

double grad_check(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) fail(ErrorKind::parameter, "grad_check step must be > 0");
  Graph graph;
  Var input = graph.leaf(x);
  Var out = f(graph, input);
  graph.backward(out);
  const Tensor analytic = graph.grad(input);

  auto evaluate = [&](const Tensor& point) {
    Graph g;
    return f(g, g.constant(point)).value()[0];
  };

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = evaluate(probe);
    probe[i] = original - h;
    const double down = evaluate(probe);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace advids
