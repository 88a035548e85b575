#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cf/ops.hpp"
#include "cf/tensor.hpp"

namespace cf {

struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;  // producer ids, in argument order
  LayerParams params;
  bool tap = false;  // similarity sampling point
  TensorMap tensors;
};

/// Validated DAG of layer nodes plus their weights.
///
/// Construction checks id uniqueness, edge targets, acyclicity and runs shape
/// inference, so every ModelGraph in existence is executable. Instances are
/// immutable; pruning builds a new graph.
class ModelGraph {
 public:
  /// `input_shape` is per sample: [channels, height, width].
  ModelGraph(std::vector<LayerNode> nodes, std::string output_id, Shape input_shape);

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const LayerNode& node(std::string_view id) const;
  const LayerNode& node(std::size_t index) const { return nodes_.at(index); }
  std::optional<std::size_t> find(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

  const std::vector<std::size_t>& topological_order() const noexcept { return topo_; }
  const std::vector<std::size_t>& producers(std::size_t index) const { return producers_.at(index); }
  const std::vector<std::size_t>& consumers(std::size_t index) const { return consumers_.at(index); }

  const std::string& input_id() const noexcept { return nodes_[input_index_].id; }
  const std::string& output_id() const noexcept { return nodes_[output_index_].id; }
  std::size_t input_index() const noexcept { return input_index_; }
  std::size_t output_index() const noexcept { return output_index_; }
  const Shape& input_shape() const noexcept { return input_shape_; }

  /// Per-sample output shape [channels, h, w] of a node.
  const Shape& output_shape(std::size_t index) const { return shapes_.at(index); }
  std::size_t channels(std::size_t index) const { return shapes_.at(index)[0]; }
  /// Channel count of the output node (the class count for classifiers).
  std::size_t num_classes() const { return channels(output_index_); }

  /// Conv node ids in topological order.
  std::vector<std::string> conv_layers() const;

 private:
  void index_nodes();
  void sort_topologically();
  void infer_shapes();

  std::vector<LayerNode> nodes_;
  Shape input_shape_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> producers_;
  std::vector<std::vector<std::size_t>> consumers_;
  std::vector<std::size_t> topo_;
  std::vector<Shape> shapes_;
  std::size_t input_index_ = 0;
  std::size_t output_index_ = 0;
};

}  // namespace cf
