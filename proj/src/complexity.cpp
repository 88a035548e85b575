#include "cf/complexity.hpp"

namespace cf {

Complexity node_complexity(const ModelGraph& model, std::size_t index) {
  const LayerNode& node = model.node(index);
  Complexity c;
  auto tensor_size = [&](const char* name) -> std::uint64_t {
    auto it = node.tensors.find(name);
    return it == node.tensors.end() ? 0 : it->second.size();
  };
  switch (node.kind) {
    case LayerKind::conv: {
      const Shape& out = model.output_shape(index);
      const std::uint64_t weights = tensor_size("weight");
      c.params = weights + tensor_size("bias");
      c.flops = weights * out[1] * out[2];
      break;
    }
    case LayerKind::linear: {
      const std::uint64_t weights = tensor_size("weight");
      c.params = weights + tensor_size("bias");
      c.flops = weights;
      break;
    }
    case LayerKind::batchnorm:
      c.params = tensor_size("scale") + tensor_size("shift");
      break;
    default:
      break;
  }
  return c;
}

Complexity count_flops_params(const ModelGraph& model) {
  Complexity total;
  for (std::size_t i = 0; i < model.size(); ++i) total += node_complexity(model, i);
  return total;
}

}  // namespace cf
