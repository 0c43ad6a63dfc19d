#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "saalae/tensor.hpp"

namespace saalae {

// Reverse-mode tape node. Intermediate nodes own their parents; parameters are long-lived leaves.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Zero-initialized gradient buffer, allocated on first use.
  Tensor<T>& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value);

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true);

// Value-only copy cut off from the tape.
template <typename T>
Var<T> detach(const Var<T>& x);

// Propagates d(root)/d(node) into every reachable node that requires grad.
// A non-scalar root needs an explicit seed of the same shape.
template <typename T>
void backward(const Var<T>& root);
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

bool grad_enabled();

// Disables tape recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Records a result node when any parent participates in differentiation.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn);

}  // namespace detail

}  // namespace saalae
