#include "cf/forward.hpp"

#include <optional>
#include <vector>

#include "cf/error.hpp"

namespace cf {

ActivationSet forward_capture(const ModelGraph& model, const Tensor& batch,
                              std::span<const std::string> taps, bool want_logits) {
  const Shape& in = model.input_shape();
  if (batch.rank() != 4 || batch.dim(0) == 0 || batch.dim(1) != in[0] ||
      batch.dim(2) != in[1] || batch.dim(3) != in[2]) {
    throw Error(ErrorCode::ShapeMismatch, "batch " + to_string(batch.shape()) +
                                              " does not match model input " +
                                              to_string(in));
  }

  const std::size_t n = model.size();
  std::vector<bool> requested(n, false);
  for (const std::string& id : taps) requested[model.index_of(id)] = true;
  if (want_logits) requested[model.output_index()] = true;

  // Ancestors of requested nodes, and how many needed consumers read each node.
  std::vector<bool> needed = requested;
  const auto& order = model.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!needed[*it]) continue;
    for (std::size_t p : model.producers(*it)) needed[p] = true;
  }
  std::vector<std::size_t> readers(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!needed[i]) continue;
    for (std::size_t p : model.producers(i)) ++readers[p];
  }

  std::vector<std::optional<Tensor>> values(n);
  ActivationSet result;
  std::vector<Tensor> args;
  for (std::size_t i : order) {
    if (!needed[i]) continue;
    const LayerNode& node = model.node(i);
    if (node.kind == LayerKind::input) {
      values[i] = batch;
    } else {
      args.clear();
      for (std::size_t p : model.producers(i)) args.push_back(*values[p]);
      values[i] = apply_layer(node.kind, args, node.params, node.tensors);
      for (std::size_t p : model.producers(i)) {
        if (--readers[p] == 0 && !requested[p]) values[p].reset();
      }
    }
  }
  for (const std::string& id : taps) result.taps[id] = *values[model.index_of(id)];
  if (want_logits) result.logits = std::move(*values[model.output_index()]);
  return result;
}

Tensor forward(const ModelGraph& model, const Tensor& batch) {
  return forward_capture(model, batch, {}, true).logits;
}

}  // namespace cf
