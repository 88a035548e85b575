#pragma once

#include <cstdint>

#include "cf/model.hpp"

namespace cf {

/// Per-sample cost. One multiply-accumulate counts as one FLOP; only conv and
/// linear layers contribute FLOPs. Params count weights, biases and the
/// batchnorm affine pair (running statistics are buffers, not parameters).
struct Complexity {
  std::uint64_t flops = 0;
  std::uint64_t params = 0;

  Complexity& operator+=(const Complexity& o) {
    flops += o.flops;
    params += o.params;
    return *this;
  }
  friend bool operator==(const Complexity&, const Complexity&) = default;
};

Complexity node_complexity(const ModelGraph& model, std::size_t index);
Complexity count_flops_params(const ModelGraph& model);

}  // namespace cf
