#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "cf/tensor.hpp"

namespace cf {

enum class LayerKind {
  input,
  conv,
  batchnorm,
  relu,
  maxpool,
  avgpool,
  global_avgpool,
  add,
  concat,
  linear,
};

std::string_view to_string(LayerKind kind) noexcept;
std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept;

/// Kinds whose output channel c depends only on input channel c.
bool is_channel_transparent(LayerKind kind) noexcept;

struct LayerParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t kernel = 0;  // pooling window; conv reads it from the weights
  float epsilon = 1e-5f;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Named parameter tensors of one node. Conv: weight [out,in,kh,kw], bias [out].
/// Linear: weight [out,in], bias [out]. Batchnorm: mean, var, scale, shift [n].
using TensorMap = std::map<std::string, Tensor>;

Tensor conv2d(const Tensor& input, const Tensor& weights,
              std::span<const float> bias, std::size_t stride,
              std::size_t padding);

Tensor relu(const Tensor& input);

struct BatchNormStats {
  std::span<const float> mean;
  std::span<const float> var;
  std::span<const float> scale;
  std::span<const float> shift;
  float epsilon = 1e-5f;
};

/// Inference-mode batch normalization over axis 1.
Tensor batchnorm(const Tensor& input, const BatchNormStats& stats);

Tensor maxpool(const Tensor& input, std::size_t kernel, std::size_t stride,
               std::size_t padding);
/// Average pooling; padded cells count toward the divisor.
Tensor avgpool(const Tensor& input, std::size_t kernel, std::size_t stride,
               std::size_t padding);
Tensor global_avgpool(const Tensor& input);

Tensor add(std::span<const Tensor> inputs);
Tensor concat(std::span<const Tensor> inputs);

/// Fully connected layer over the flattened per-sample features; the result
/// is shaped [batch, out, 1, 1] so it composes with the other 4-D kernels.
Tensor linear(const Tensor& input, const Tensor& weights,
              std::span<const float> bias);

/// Evaluate one node kind on its inputs. `input` is not a valid kind here.
Tensor apply_layer(LayerKind kind, std::span<const Tensor> inputs,
                   const LayerParams& params, const TensorMap& tensors);

}  // namespace cf
