#include "saalae/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace saalae {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(x->value);
}

namespace detail {

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (!g_grad_enabled) return n;
  bool any = false;
  for (const auto& p : parents) any = any || (p && p->requires_grad);
  if (!any) return n;
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(fn);
  return n;
}

}  // namespace detail

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root->requires_grad) return;
  if (seed.shape() != root->value.shape()) throw std::invalid_argument("backward: seed shape mismatch");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& g = root->grad_buffer();
  for (std::int64_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Release intermediate gradients so repeated passes over shared leaves stay additive.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad = Tensor<T>();
  }
}

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward: root must be a scalar without an explicit seed");
  backward(root, Tensor<T>(root->value.shape(), T(1)));
}

#define SAALAE_INSTANTIATE(T)                                                                   \
  template struct Node<T>;                                                                      \
  template Var<T> constant(Tensor<T>);                                                          \
  template Var<T> leaf(Tensor<T>, bool);                                                        \
  template Var<T> detach(const Var<T>&);                                                        \
  template void backward(const Var<T>&);                                                        \
  template void backward(const Var<T>&, const Tensor<T>&);                                      \
  template Var<T> detail::make_result(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>);

SAALAE_INSTANTIATE(float)
SAALAE_INSTANTIATE(double)
#undef SAALAE_INSTANTIATE

}  // namespace saalae
