#include "saalae/nn/module.hpp"

namespace saalae::nn {

namespace {
std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}
}  // namespace

template <typename T>
std::vector<std::pair<std::string, Var<T>>> Module<T>::named_parameters(const std::string& prefix) const {
  std::vector<std::pair<std::string, Var<T>>> out;
  for (const auto& [name, v] : params_) out.emplace_back(join(prefix, name), v);
  for (const auto& [name, child] : children_) {
    auto sub = child->named_parameters(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Module<T>::named_buffers(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (const auto& [name, b] : buffers_) out.emplace_back(join(prefix, name), b);
  for (const auto& [name, child] : children_) {
    auto sub = child->named_buffers(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

template <typename T>
std::vector<Var<T>> Module<T>::parameters() const {
  std::vector<Var<T>> out;
  for (auto& [_, v] : named_parameters()) out.push_back(v);
  return out;
}

template <typename T>
void Module<T>::zero_grad() {
  for (auto& v : parameters()) v->zero_grad();
}

template <typename T>
std::int64_t Module<T>::parameter_count() const {
  std::int64_t n = 0;
  for (auto& v : parameters()) n += v->value.size();
  return n;
}

template <typename T>
std::uint64_t Module<T>::checksum(bool include_buffers) const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& [name, v] : named_parameters()) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(v->value.data(), static_cast<std::size_t>(v->value.size()) * sizeof(T), h);
  }
  if (include_buffers) {
    for (const auto& [name, b] : named_buffers()) {
      h = fnv1a(name.data(), name.size(), h);
      h = fnv1a(b->data(), static_cast<std::size_t>(b->size()) * sizeof(T), h);
    }
  }
  return h;
}

template <typename T>
void Module<T>::audit(const std::string& prefix, std::vector<LayerAudit>& out) const {
  for (const auto& [name, child] : children_) child->audit(join(prefix, name), out);
}

template <typename T>
Var<T> Module<T>::add_parameter(std::string name, Tensor<T> init) {
  auto v = leaf(std::move(init), true);
  params_.emplace_back(std::move(name), v);
  return v;
}

template <typename T>
void Module<T>::add_buffer(std::string name, Tensor<T>* buffer) {
  buffers_.emplace_back(std::move(name), buffer);
}

template class Module<float>;
template class Module<double>;

}  // namespace saalae::nn
