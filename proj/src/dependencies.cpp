#include "cf/dependencies.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "cf/error.hpp"

namespace cf {
namespace {

bool is_filter_node(LayerKind kind) {
  return kind == LayerKind::conv || kind == LayerKind::linear;
}

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

// Coupling structure shared by resolve_dependencies and coupling_groups.
struct CouplingAnalysis {
  explicit CouplingAnalysis(const ModelGraph& model)
      : provenance(model), sets(model.size() + 1) {
    const std::size_t input_slot = model.size();
    auto slot = [&](const ChannelSource& s) {
      return s.node == ChannelSource::kModelInput ? input_slot : s.node;
    };
    for (std::size_t i : model.topological_order()) {
      if (model.node(i).kind != LayerKind::add) continue;
      const auto& chans = provenance.sources(i);
      for (std::size_t t = 0; t < chans.size(); ++t) {
        const auto& srcs = chans[t];
        for (const ChannelSource& s : srcs) {
          if (s.channel != t) ambiguous.emplace(slot(s), model.node(i).id);
          sets.unite(slot(srcs.front()), slot(s));
        }
      }
    }
    // Channels reaching the output node directly cannot shrink.
    for (const auto& srcs : provenance.sources(model.output_index())) {
      for (const ChannelSource& s : srcs) {
        if (s.node != model.output_index()) terminal.emplace(slot(s), model.output_id());
      }
    }
  }

  ChannelProvenance provenance;
  DisjointSet sets;
  std::map<std::size_t, std::string> ambiguous;  // slot -> add node id
  std::map<std::size_t, std::string> terminal;   // slot -> output node id
};

CouplingGroup group_of(const ModelGraph& model, CouplingAnalysis& analysis,
                       std::size_t root) {
  CouplingGroup group;
  const std::size_t input_slot = model.size();
  std::vector<std::size_t> slots;
  for (std::size_t s = 0; s <= model.size(); ++s) {
    if (analysis.sets.find(s) == root) slots.push_back(s);
  }
  for (std::size_t i : model.topological_order()) {
    if (analysis.sets.find(i) == root && model.node(i).kind == LayerKind::conv) {
      group.members.push_back(model.node(i).id);
    }
  }
  for (std::size_t s : slots) {
    if (s == input_slot) {
      group.prunable = false;
      group.blocker = model.input_id();
    } else if (model.node(s).kind != LayerKind::conv) {
      group.prunable = false;
      group.blocker = model.node(s).id;
    } else if (auto it = analysis.terminal.find(s); it != analysis.terminal.end()) {
      group.prunable = false;
      group.blocker = it->second;
    }
    if (!group.prunable) break;
  }
  return group;
}

}  // namespace

ChannelProvenance::ChannelProvenance(const ModelGraph& model) {
  sources_.resize(model.size());
  for (std::size_t i : model.topological_order()) {
    const LayerNode& node = model.node(i);
    const std::size_t ch = model.channels(i);
    auto& out = sources_[i];
    out.assign(ch, {});
    const auto& prods = model.producers(i);
    if (node.kind == LayerKind::input) {
      for (std::size_t c = 0; c < ch; ++c) out[c] = {{ChannelSource::kModelInput, c}};
    } else if (is_filter_node(node.kind)) {
      for (std::size_t c = 0; c < ch; ++c) out[c] = {{i, c}};
    } else if (node.kind == LayerKind::add) {
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t p : prods) {
          const auto& s = sources_[p][c];
          out[c].insert(out[c].end(), s.begin(), s.end());
        }
        std::sort(out[c].begin(), out[c].end());
        out[c].erase(std::unique(out[c].begin(), out[c].end()), out[c].end());
      }
    } else if (node.kind == LayerKind::concat) {
      std::size_t c = 0;
      for (std::size_t p : prods) {
        for (const auto& s : sources_[p]) out[c++] = s;
      }
    } else {
      out = sources_[prods.at(0)];
    }
  }
}

PruneScope resolve_dependencies(const ModelGraph& model, const std::string& layer_id) {
  const std::size_t layer = model.index_of(layer_id);
  if (model.node(layer).kind != LayerKind::conv) {
    throw Error(ErrorCode::InvalidArgument, "'" + layer_id + "' is not a conv layer");
  }
  CouplingAnalysis analysis(model);
  const std::size_t root = analysis.sets.find(layer);
  for (const auto& [slot, add_id] : analysis.ambiguous) {
    if (analysis.sets.find(slot) == root) {
      throw Error(ErrorCode::UnsupportedTopology,
                  "channel correspondence of '" + layer_id +
                      "' is ambiguous at node '" + add_id + "'");
    }
  }

  PruneScope scope;
  scope.layer = layer_id;
  CouplingGroup group = group_of(model, analysis, root);
  scope.coupling_group = std::move(group.members);
  scope.prunable = group.prunable;
  scope.blocker = std::move(group.blocker);

  const std::size_t filters = model.channels(layer);
  for (std::size_t i : model.topological_order()) {
    const LayerNode& node = model.node(i);
    if (node.kind != LayerKind::conv && node.kind != LayerKind::linear &&
        node.kind != LayerKind::batchnorm) {
      continue;
    }
    const std::size_t src = model.producers(i).at(0);
    const auto& chans = analysis.provenance.sources(src);
    std::vector<std::size_t> map(filters, SIZE_MAX);
    bool any = false;
    for (std::size_t t = 0; t < chans.size(); ++t) {
      for (const ChannelSource& s : chans[t]) {
        if (s.node != layer) continue;
        if (map[s.channel] != SIZE_MAX) {
          throw Error(ErrorCode::UnsupportedTopology,
                      "filter " + std::to_string(s.channel) + " of '" + layer_id +
                          "' reaches '" + node.id + "' on several channels");
        }
        map[s.channel] = t;
        any = true;
      }
    }
    if (!any) continue;
    ConsumerLink link;
    link.consumer = node.id;
    link.kind = node.kind;
    link.channel_map = std::move(map);
    if (node.kind == LayerKind::linear) {
      const Shape& in = model.output_shape(src);
      link.spatial_block = in[1] * in[2];
    }
    scope.consumers.push_back(std::move(link));
  }
  return scope;
}

std::vector<CouplingGroup> coupling_groups(const ModelGraph& model) {
  CouplingAnalysis analysis(model);
  std::vector<CouplingGroup> groups;
  std::vector<bool> seen(model.size() + 1, false);
  for (std::size_t i : model.topological_order()) {
    if (model.node(i).kind != LayerKind::conv) continue;
    const std::size_t root = analysis.sets.find(i);
    if (seen[root]) continue;
    seen[root] = true;
    CouplingGroup group = group_of(model, analysis, root);
    for (const auto& [slot, add_id] : analysis.ambiguous) {
      if (analysis.sets.find(slot) == root && group.prunable) {
        group.prunable = false;
        group.blocker = add_id;
      }
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

std::string similarity_tap(const ModelGraph& model, const std::string& layer) {
  std::size_t current = model.index_of(layer);
  std::optional<std::size_t> first_relu;
  while (true) {
    const auto& next = model.consumers(current);
    if (next.size() != 1) break;
    const LayerNode& node = model.node(next[0]);
    if (node.kind != LayerKind::batchnorm && node.kind != LayerKind::relu &&
        node.kind != LayerKind::add) {
      break;
    }
    current = next[0];
    if (node.tap) return node.id;
    if (node.kind == LayerKind::relu && !first_relu) first_relu = current;
  }
  return model.node(first_relu.value_or(current)).id;
}

}  // namespace cf
