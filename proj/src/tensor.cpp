#include "cf/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "cf/error.hpp"

namespace cf {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(element_count(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorCode::ShapeMismatch,
                "tensor shape " + to_string(shape_) + " needs " +
                    std::to_string(element_count(shape_)) + " elements, got " +
                    std::to_string(data_.size()));
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) +
                                              " out of range for shape " +
                                              to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "index rank " + std::to_string(index.size()) +
                    " does not match shape " + to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw Error(ErrorCode::ShapeMismatch, "index out of range on axis " +
                                                std::to_string(axis));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

float& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + to_string(shape_) +
                                              " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw Error(ErrorCode::ShapeMismatch, "row range out of bounds for " +
                                              to_string(shape_));
  }
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s),
                std::vector<float>(data_.begin() + begin * stride,
                                   data_.begin() + end * stride));
}

Tensor Tensor::select(std::size_t axis,
                      std::span<const std::size_t> indices) const {
  if (axis >= shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "select axis out of range");
  }
  std::size_t outer = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape_[a];
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape_.size(); ++a) inner *= shape_[a];
  const std::size_t extent = shape_[axis];
  for (std::size_t i : indices) {
    if (i >= extent) {
      throw Error(ErrorCode::ShapeMismatch,
                  "select index " + std::to_string(i) + " out of range on axis " +
                      std::to_string(axis) + " of " + to_string(shape_));
    }
  }
  Shape s = shape_;
  s[axis] = indices.size();
  std::vector<float> out;
  out.reserve(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i : indices) {
      const auto first = data_.begin() + (o * extent + i) * inner;
      out.insert(out.end(), first, first + inner);
    }
  }
  return Tensor(std::move(s), std::move(out));
}

std::vector<float> flatten_one(const Tensor& feature) {
  if (feature.empty()) {
    throw Error(ErrorCode::InvalidArgument, "cannot flatten an empty tensor");
  }
  return feature.values();
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw Error(ErrorCode::InvalidArgument, "stack of nothing");
  Shape s{items.size()};
  s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<float> out;
  out.reserve(element_count(s));
  for (const Tensor& t : items) {
    if (t.shape() != items[0].shape()) {
      throw Error(ErrorCode::ShapeMismatch, "stack of " + to_string(t.shape()) +
                                                " onto " + to_string(items[0].shape()));
    }
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(out));
}

}  // namespace cf
