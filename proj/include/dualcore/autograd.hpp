#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dualcore/tensor.hpp"

namespace dualcore {

// Reverse-mode tape. Every op builds a Node whose backfn scatters the node's
// output gradient into its parents' gradients. backward() walks the graph in
// reverse topological order, so a node's gradient is complete before use.

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;       // grad buffer initialized
  bool requires_grad = false;  // participates in backprop
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backfn;

  void accumulate(const Tensor<T>& g) {
    if (!has_grad) {
      grad = Tensor<T>::zeros(value.dims);
      has_grad = true;
    }
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) grad[i] += g[i];
  }
  Tensor<T>& grad_buf() {
    if (!has_grad) {
      grad = Tensor<T>::zeros(value.dims);
      has_grad = true;
    }
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// RAII guard disabling graph construction (pure inference).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : n_(std::make_shared<Node<T>>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return n_ != nullptr; }
  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& value() { return n_->value; }
  const Shape& dims() const { return n_->value.dims; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor<T>& grad() { return n_->grad_buf(); }
  void zero_grad() { n_->has_grad = false; }

  std::shared_ptr<Node<T>> node() const { return n_; }

  // scalar convenience for [1]-shaped vars
  T item() const { return n_->value[0]; }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> make_var(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> make_param(Tensor<T> value) {
  return Var<T>(std::move(value), true);
}

// Wraps a fresh op result: output requires grad only if some parent does and
// grad mode is on; otherwise parents/backfn are dropped so buffers free early.
template <typename T>
Var<T> make_op_result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backfn) {
  Var<T> out(std::move(value), false);
  bool need = false;
  if (grad_mode_flag()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) need = true;
  }
  if (need) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backfn = std::move(backfn);
  }
  return out;
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || !root.node()->requires_grad) return;
  // iterative post-order DFS -> topological order
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> seen;
  struct Frame {
    Node<T>* n;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node<T>* c = f.n->parents[f.next_child++].get();
      if (c && c->requires_grad && !seen.count(c)) {
        seen.insert(c);
        stack.push_back({c, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }
  // seed
  Tensor<T> seed = Tensor<T>::full(root.node()->value.dims, T(1));
  root.node()->accumulate(seed);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backfn && n->has_grad) n->backfn(*n);
  }
}

}  // namespace dualcore
