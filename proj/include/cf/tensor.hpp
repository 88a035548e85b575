#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cf {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float32 array. Activations are [batch, channels, h, w];
/// conv weights are [out, in, kh, kw].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor filled(Shape shape, float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  float at(std::initializer_list<std::size_t> index) const;
  float& at(std::initializer_list<std::size_t> index);

  Tensor reshaped(Shape shape) const;

  /// Slice along axis 0: rows [begin, end).
  Tensor rows(std::size_t begin, std::size_t end) const;

  /// Sub-tensor selecting the given indices along `axis` (in the given order).
  Tensor select(std::size_t axis, std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<float> data_;
};

/// Row-major flattening of a feature map (or any tensor) into one dimension.
std::vector<float> flatten_one(const Tensor& feature);

/// Stack tensors of identical shape along a new leading axis.
Tensor stack(std::span<const Tensor> items);

}  // namespace cf
