#include "simviz/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace simviz::ad {

namespace {
std::atomic<int64_t> g_order{0};

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
}
}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->order = g_order.fetch_add(1);
  return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  n->order = g_order.fetch_add(1);
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Collect the subgraph that requires grad.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node* a, const Node* b) { return a->order > b->order; });

  root->ensure_grad()[0] += 1.0;
  for (Node* n : nodes) {
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

void zero_grad(const std::vector<Var>& vars) {
  for (const auto& v : vars)
    if (v->has_grad()) v->grad.fill(0.0);
}

// ---- ops ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i] * a->value[i];
    }
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
  });
}

Var mul_scalar(const Var& a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_node(std::move(out), {a}, [a, c](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += c * n.grad[i];
  });
}

namespace {
Var relu_impl(const Var& a, bool guided) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_node(std::move(out), {a}, [a, guided](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) {
      double g = a->value[i] > 0.0 ? n.grad[i] : 0.0;
      if (guided && g < 0.0) g = 0.0;
      ga[i] += g;
    }
  });
}
}  // namespace

Var relu(const Var& a) { return relu_impl(a, false); }
Var relu_guided(const Var& a) { return relu_impl(a, true); }

Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : slope * out[i];
  return make_node(std::move(out), {a}, [a, slope](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += (a->value[i] > 0.0 ? 1.0 : slope) * n.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) {
      double s = n.value[i];
      ga[i] += s * (1.0 - s) * n.grad[i];
    }
  });
}

Var square(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += 2.0 * a->value[i] * n.grad[i];
  });
}

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    const double g = n.grad[0];
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  Tensor out = Tensor::scalar(a->value.sum() * inv);
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    Tensor& ga = a->ensure_grad();
    const double g = n.grad[0] * inv;
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [a](Node& n) {
    Tensor& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() < 2 || sa.size() != sb.size())
    throw std::invalid_argument("concat_channels: rank mismatch");
  for (size_t i = 0; i < sa.size(); ++i)
    if (i != 1 && sa[i] != sb[i])
      throw std::invalid_argument("concat_channels: non-channel dims differ " + a->value.shape_str() +
                                  " vs " + b->value.shape_str());

  std::vector<int64_t> so = sa;
  so[1] = sa[1] + sb[1];
  const int64_t batch = sa[0];
  int64_t inner = 1;
  for (size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
  const int64_t wa = sa[1] * inner, wb = sb[1] * inner;

  Tensor out(so);
  for (int64_t n = 0; n < batch; ++n) {
    std::copy_n(a->value.data() + n * wa, wa, out.data() + n * (wa + wb));
    std::copy_n(b->value.data() + n * wb, wb, out.data() + n * (wa + wb) + wa);
  }
  return make_node(std::move(out), {a, b}, [a, b, batch, wa, wb](Node& n) {
    for (int64_t i = 0; i < batch; ++i) {
      const double* g = n.grad.data() + i * (wa + wb);
      if (a->requires_grad) {
        double* ga = a->ensure_grad().data() + i * wa;
        for (int64_t j = 0; j < wa; ++j) ga[j] += g[j];
      }
      if (b->requires_grad) {
        double* gb = b->ensure_grad().data() + i * wb;
        for (int64_t j = 0; j < wb; ++j) gb[j] += g[wa + j];
      }
    }
  });
}

}  // namespace simviz::ad
