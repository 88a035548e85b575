#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cf/model.hpp"

namespace cf {

/// One producing channel: channel `channel` of conv/linear node `node`, or of
/// the model input when `node == kModelInput`.
struct ChannelSource {
  static constexpr std::size_t kModelInput = std::numeric_limits<std::size_t>::max();

  std::size_t node = kModelInput;
  std::size_t channel = 0;

  friend auto operator<=>(const ChannelSource&, const ChannelSource&) = default;
};

/// For every node and output channel, the conv/linear channels that feed it
/// through channel-transparent layers, adds and concats.
class ChannelProvenance {
 public:
  explicit ChannelProvenance(const ModelGraph& model);

  /// sources(node)[c] is sorted and duplicate-free.
  const std::vector<std::vector<ChannelSource>>& sources(std::size_t node) const {
    return sources_.at(node);
  }

 private:
  std::vector<std::vector<std::vector<ChannelSource>>> sources_;
};

/// A node whose input channels correspond to a producer's output channels.
struct ConsumerLink {
  std::string consumer;
  LayerKind kind = LayerKind::conv;
  /// channel_map[j] = consumer input channel (linear: channel block) fed by
  /// producer filter j.
  std::vector<std::size_t> channel_map;
  /// Linear consumers see each channel as a block of h*w flattened features.
  std::size_t spatial_block = 1;
};

struct PruneScope {
  std::string layer;
  std::vector<ConsumerLink> consumers;      // conv, linear and batchnorm nodes
  std::vector<std::string> coupling_group;  // conv ids incl. `layer`, topo order
  bool prunable = true;
  std::string blocker;  // node that prevents pruning when !prunable
};

/// Consumers and residual coupling of conv layer `layer_id`. Throws
/// UnsupportedTopology naming the blocking node when channel correspondence
/// is ambiguous.
PruneScope resolve_dependencies(const ModelGraph& model, const std::string& layer_id);

struct CouplingGroup {
  std::vector<std::string> members;  // topo order
  bool prunable = true;
  std::string blocker;
};

/// Partition of all conv layers into coupling groups, ordered by the first
/// member's topological position.
std::vector<CouplingGroup> coupling_groups(const ModelGraph& model);

/// Node whose activations represent `layer`'s feature maps: the first node
/// flagged as a tap (else the first relu) reached through a single-consumer
/// chain of batchnorm/relu/add nodes; the chain end otherwise.
std::string similarity_tap(const ModelGraph& model, const std::string& layer);

}  // namespace cf
