#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "saalae/autograd.hpp"

namespace saalae::nn {

// How a forward pass treats per-network state.
//   batch_stats:  normalization layers use the current batch statistics.
//   update_state: running statistics and power-iteration vectors advance.
struct Pass {
  bool batch_stats = false;
  bool update_state = false;

  static constexpr Pass train() { return {true, true}; }
  static constexpr Pass eval() { return {false, false}; }
  // Batch statistics without touching persistent state; used for networks a phase does not own.
  static constexpr Pass frozen_train() { return {true, false}; }
};

struct LayerAudit {
  std::string name;
  std::string kind;  // "linear", "conv2d" or "batch_norm"
  bool spectral_norm = false;
};

template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  // Learnable tensors, fully qualified ("block0.conv1.weight").
  std::vector<std::pair<std::string, Var<T>>> named_parameters(const std::string& prefix = "") const;
  // Persistent non-learnable state (running statistics, power-iteration vectors).
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers(const std::string& prefix = "") const;
  std::vector<Var<T>> parameters() const;

  void zero_grad();
  std::int64_t parameter_count() const;
  std::uint64_t checksum(bool include_buffers = false) const;

  virtual void audit(const std::string& prefix, std::vector<LayerAudit>& out) const;

 protected:
  Var<T> add_parameter(std::string name, Tensor<T> init);
  void add_buffer(std::string name, Tensor<T>* buffer);

  template <typename M>
  M& add_child(std::string name, std::unique_ptr<M> child) {
    M& ref = *child;
    children_.emplace_back(std::move(name), std::move(child));
    return ref;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

extern template class Module<float>;
extern template class Module<double>;

}  // namespace saalae::nn
