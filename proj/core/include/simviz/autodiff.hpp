#ifndef SIMVIZ_AUTODIFF_HPP
#define SIMVIZ_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <vector>

#include "simviz/tensor.hpp"

namespace simviz::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a reverse-mode tape. Graphs are built eagerly per forward
/// pass; backward() walks reachable nodes in reverse creation order.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  int64_t order = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty(); }
};

/// Wraps a tensor as a graph leaf.
Var leaf(Tensor value, bool requires_grad = false);

/// Internal helper for op implementations: requires_grad is inherited from
/// the parents.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

void zero_grad(const std::vector<Var>& vars);

// ---- pointwise / arithmetic ops ----

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var relu(const Var& a);
/// ReLU whose backward additionally zeroes entries with negative upstream
/// gradient; this is the rule guided backpropagation substitutes at every
/// rectifier.
Var relu_guided(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var square(const Var& a);

// ---- reductions / shape ----

Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}
Var reshape(const Var& a, std::vector<int64_t> shape);
/// Concatenates two rank >= 2 tensors along axis 1 (the channel axis).
Var concat_channels(const Var& a, const Var& b);

}  // namespace simviz::ad

#endif
