#pragma once

#include <map>
#include <span>
#include <string>

#include "cf/model.hpp"

namespace cf {

/// Post-activation tensors captured at requested nodes for one input batch.
struct ActivationSet {
  std::map<std::string, Tensor> taps;  // node id -> [batch, channels, h, w]
  Tensor logits;                       // output node; empty when not requested
};

/// Run the model on `batch` ([batch, channels, h, w]) and capture `taps`.
/// Only the ancestors of the requested nodes are evaluated.
ActivationSet forward_capture(const ModelGraph& model, const Tensor& batch,
                              std::span<const std::string> taps,
                              bool want_logits = true);

/// Output node activations for `batch`.
Tensor forward(const ModelGraph& model, const Tensor& batch);

}  // namespace cf
