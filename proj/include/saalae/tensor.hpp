#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace saalae {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor. Feature maps use the (batch, channels, height, width) layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4D accessor for feature maps.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);
  void fill(T value);

  bool all_finite() const;
  // Rows [begin, end) along the leading dimension.
  Tensor slice_rows(std::int64_t begin, std::int64_t end) const;
  std::int64_t row_size() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[static_cast<std::int64_t>(i)] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Stacks tensors of identical shape along a new leading dimension merged with their first dim.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// FNV-1a over raw bytes; used for parameter checksums.
std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace saalae
