#include "cf/model.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "cf/error.hpp"

namespace cf {
namespace {

std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding, const std::string& id) {
  if (kernel == 0 || stride == 0) {
    throw Error(ErrorCode::ShapeInconsistency,
                "node '" + id + "' needs positive kernel and stride");
  }
  if (in + 2 * padding < kernel) {
    throw Error(ErrorCode::ShapeInconsistency,
                "node '" + id + "': window " + std::to_string(kernel) +
                    " exceeds padded extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

const Tensor& required(const LayerNode& node, const std::string& name) {
  auto it = node.tensors.find(name);
  if (it == node.tensors.end()) {
    throw Error(ErrorCode::ShapeInconsistency,
                "node '" + node.id + "' is missing tensor '" + name + "'");
  }
  return it->second;
}

void check_vector(const LayerNode& node, const std::string& name, std::size_t n,
                  bool optional) {
  auto it = node.tensors.find(name);
  if (it == node.tensors.end()) {
    if (optional) return;
    throw Error(ErrorCode::ShapeInconsistency,
                "node '" + node.id + "' is missing tensor '" + name + "'");
  }
  if (it->second.shape() != Shape{n}) {
    throw Error(ErrorCode::ShapeInconsistency,
                "node '" + node.id + "' tensor '" + name + "' has shape " +
                    to_string(it->second.shape()) + ", expected [" +
                    std::to_string(n) + "]");
  }
}

}  // namespace

ModelGraph::ModelGraph(std::vector<LayerNode> nodes, std::string output_id,
                       Shape input_shape)
    : nodes_(std::move(nodes)), input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3 || element_count(input_shape_) == 0) {
    throw Error(ErrorCode::ShapeInconsistency,
                "model input shape must be [channels,h,w], got " + to_string(input_shape_));
  }
  index_nodes();
  auto out = index_.find(output_id);
  if (out == index_.end()) {
    throw Error(ErrorCode::UnknownNode, "output node '" + output_id + "' does not exist");
  }
  output_index_ = out->second;
  sort_topologically();
  infer_shapes();
}

void ModelGraph::index_nodes() {
  std::size_t inputs = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate node id '" + nodes_[i].id + "'");
    }
    if (nodes_[i].kind == LayerKind::input) {
      input_index_ = i;
      ++inputs;
    }
  }
  if (inputs != 1) {
    throw Error(ErrorCode::InvalidArgument,
                "model needs exactly one input node, found " + std::to_string(inputs));
  }
  producers_.assign(nodes_.size(), {});
  consumers_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const std::string& src : nodes_[i].inputs) {
      auto it = index_.find(src);
      if (it == index_.end()) {
        throw Error(ErrorCode::UnknownNode,
                    "node '" + nodes_[i].id + "' reads unknown node '" + src + "'");
      }
      producers_[i].push_back(it->second);
      auto& cons = consumers_[it->second];
      if (std::find(cons.begin(), cons.end(), i) == cons.end()) cons.push_back(i);
    }
  }
}

void ModelGraph::sort_topologically() {
  std::vector<std::size_t> pending(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    std::set<std::size_t> distinct(producers_[i].begin(), producers_[i].end());
    pending[i] = distinct.size();
  }
  // Ready nodes are released in manifest order for a reproducible schedule.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (pending[i] == 0) ready.push(i);
  }
  topo_.clear();
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    topo_.push_back(i);
    for (std::size_t c : consumers_[i]) {
      if (--pending[c] == 0) ready.push(c);
    }
  }
  if (topo_.size() != nodes_.size()) {
    std::string members;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (pending[i] > 0) members += (members.empty() ? "" : ", ") + nodes_[i].id;
    }
    throw Error(ErrorCode::CyclicGraph, "cycle through nodes " + members);
  }
}

void ModelGraph::infer_shapes() {
  shapes_.assign(nodes_.size(), {});
  for (std::size_t i : topo_) {
    const LayerNode& node = nodes_[i];
    const auto& prods = producers_[i];
    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (prods.size() < lo || prods.size() > hi) {
        throw Error(ErrorCode::ShapeInconsistency,
                    "node '" + node.id + "' (" + std::string(to_string(node.kind)) +
                        ") has " + std::to_string(prods.size()) + " inputs");
      }
    };
    Shape out;
    switch (node.kind) {
      case LayerKind::input:
        arity(0, 0);
        out = input_shape_;
        break;
      case LayerKind::conv: {
        arity(1, 1);
        const Shape& in = shapes_[prods[0]];
        const Tensor& w = required(node, "weight");
        if (w.rank() != 4 || w.dim(1) != in[0]) {
          throw Error(ErrorCode::ShapeInconsistency,
                      "conv '" + node.id + "' weights " + to_string(w.shape()) +
                          " do not match " + std::to_string(in[0]) + " input channels");
        }
        check_vector(node, "bias", w.dim(0), true);
        out = {w.dim(0),
               window_extent(in[1], w.dim(2), node.params.stride, node.params.padding, node.id),
               window_extent(in[2], w.dim(3), node.params.stride, node.params.padding, node.id)};
        break;
      }
      case LayerKind::batchnorm: {
        arity(1, 1);
        out = shapes_[prods[0]];
        for (const char* name : {"mean", "var", "scale", "shift"}) {
          check_vector(node, name, out[0], false);
        }
        break;
      }
      case LayerKind::relu:
        arity(1, 1);
        out = shapes_[prods[0]];
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        arity(1, 1);
        const Shape& in = shapes_[prods[0]];
        out = {in[0],
               window_extent(in[1], node.params.kernel, node.params.stride, node.params.padding, node.id),
               window_extent(in[2], node.params.kernel, node.params.stride, node.params.padding, node.id)};
        break;
      }
      case LayerKind::global_avgpool:
        arity(1, 1);
        out = {shapes_[prods[0]][0], 1, 1};
        break;
      case LayerKind::add: {
        arity(2, SIZE_MAX);
        out = shapes_[prods[0]];
        for (std::size_t p : prods) {
          if (shapes_[p] != out) {
            throw Error(ErrorCode::ShapeInconsistency,
                        "add '" + node.id + "' mixes " + to_string(out) + " and " +
                            to_string(shapes_[p]));
          }
        }
        break;
      }
      case LayerKind::concat: {
        arity(1, SIZE_MAX);
        out = shapes_[prods[0]];
        out[0] = 0;
        for (std::size_t p : prods) {
          if (shapes_[p][1] != out[1] || shapes_[p][2] != out[2]) {
            throw Error(ErrorCode::ShapeInconsistency,
                        "concat '" + node.id + "' mixes spatial extents " +
                            to_string(shapes_[prods[0]]) + " and " + to_string(shapes_[p]));
          }
          out[0] += shapes_[p][0];
        }
        break;
      }
      case LayerKind::linear: {
        arity(1, 1);
        const std::size_t features = element_count(shapes_[prods[0]]);
        const Tensor& w = required(node, "weight");
        if (w.rank() != 2 || w.dim(1) != features) {
          throw Error(ErrorCode::ShapeInconsistency,
                      "linear '" + node.id + "' weights " + to_string(w.shape()) +
                          " do not match " + std::to_string(features) + " input features");
        }
        check_vector(node, "bias", w.dim(0), true);
        out = {w.dim(0), 1, 1};
        break;
      }
    }
    shapes_[i] = std::move(out);
  }
}

const LayerNode& ModelGraph::node(std::string_view id) const {
  return nodes_[index_of(id)];
}

std::optional<std::size_t> ModelGraph::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ModelGraph::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) {
    throw Error(ErrorCode::UnknownNode, "no node '" + std::string(id) + "'");
  }
  return it->second;
}

std::vector<std::string> ModelGraph::conv_layers() const {
  std::vector<std::string> out;
  for (std::size_t i : topo_) {
    if (nodes_[i].kind == LayerKind::conv) out.push_back(nodes_[i].id);
  }
  return out;
}

}  // namespace cf
