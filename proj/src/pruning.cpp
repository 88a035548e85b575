#include "cf/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

#include "cf/error.hpp"
#include "cf/forward.hpp"
#include "cf/rng.hpp"
#include "cf/similarity.hpp"

namespace cf {
namespace {

constexpr std::uint64_t kProbeSeed = 0x5eed'cf01;

bool prunes_anything(const LayerPlan& l) { return !l.pruned.empty(); }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

[[noreturn]] void reject(const std::string& message) {
  throw Error(ErrorCode::PlanRejected, message);
}

void validate_layer(const ModelGraph& model, const LayerPlan& l) {
  const auto index = model.find(l.layer);
  if (!index) reject("unknown layer '" + l.layer + "'");
  if (model.node(*index).kind != LayerKind::conv) reject("'" + l.layer + "' is not a conv layer");
  const std::size_t n = model.channels(*index);
  if (l.n != n) {
    reject("'" + l.layer + "' has " + std::to_string(n) + " filters, plan expects " +
           std::to_string(l.n));
  }
  if (l.keep.empty()) reject("'" + l.layer + "' keeps no filters");
  std::vector<int> role(n, 0);
  for (std::size_t i = 0; i < l.keep.size(); ++i) {
    const std::size_t k = l.keep[i];
    if (k >= n || (i > 0 && l.keep[i - 1] >= k)) {
      reject("keep set of '" + l.layer + "' is not sorted, unique and in range");
    }
    role[k] = 1;
  }
  for (const auto& [x, p] : l.pruned) {
    if (x >= n || role[x] != 0) {
      reject("filter " + std::to_string(x) + " of '" + l.layer + "' is out of range or listed twice");
    }
    role[x] = 2;
    if (p.central && (*p.central >= n || !std::binary_search(l.keep.begin(), l.keep.end(), *p.central))) {
      reject("filter " + std::to_string(x) + " of '" + l.layer + "' folds into a removed filter");
    }
  }
  if (std::count(role.begin(), role.end(), 0) != 0) {
    reject("keep and prune sets of '" + l.layer + "' do not cover every filter");
  }
}

// The batchnorm whose affine map sits between a producer channel and a
// consumer input channel, when the path is a plain chain with exactly one.
struct AffineTrace {
  std::optional<std::size_t> node;
  std::size_t channel = 0;
};

AffineTrace trace_affine(const ModelGraph& model, std::size_t consumer, std::size_t channel) {
  std::size_t node = model.producers(consumer).at(0);
  std::size_t c = channel;
  AffineTrace found;
  std::size_t count = 0;
  while (true) {
    const LayerNode& n = model.node(node);
    if (n.kind == LayerKind::conv || n.kind == LayerKind::linear || n.kind == LayerKind::input) break;
    if (n.kind == LayerKind::add) return {};
    if (n.kind == LayerKind::batchnorm) {
      ++count;
      found = {node, c};
    }
    if (n.kind == LayerKind::concat) {
      for (std::size_t p : model.producers(node)) {
        if (c < model.channels(p)) {
          node = p;
          break;
        }
        c -= model.channels(p);
      }
      continue;
    }
    node = model.producers(node).at(0);
  }
  return count == 1 ? found : AffineTrace{};
}

struct Affine {
  double gain = 1.0;
  double offset = 0.0;
};

Affine bn_affine(const LayerNode& bn, std::size_t c) {
  const auto& t = bn.tensors;
  const double g = t.at("scale")[c] / std::sqrt(static_cast<double>(t.at("var")[c]) + bn.params.epsilon);
  return {g, t.at("shift")[c] - t.at("mean")[c] * g};
}

// Coefficients that express channel x as scale * channel j + offset at the
// consumer input, assuming equal pre-normalization features up to `sign`.
std::pair<double, double> fold_coefficients(const ModelGraph& model, std::size_t consumer,
                                            std::size_t tx, std::size_t tj, int sign) {
  const AffineTrace ax = trace_affine(model, consumer, tx);
  const AffineTrace aj = trace_affine(model, consumer, tj);
  if (!ax.node || !aj.node || *ax.node != *aj.node) return {sign, 0.0};
  const LayerNode& bn = model.node(*ax.node);
  const Affine x = bn_affine(bn, ax.channel);
  const Affine j = bn_affine(bn, aj.channel);
  if (std::abs(j.gain) < 1e-12) return {sign, 0.0};
  const double scale = sign * x.gain / j.gain;
  return {scale, x.offset - scale * j.offset};
}

void drop_rows(LayerNode& node, std::span<const std::size_t> keep) {
  for (auto& [name, t] : node.tensors) t = t.select(0, keep);
}

std::vector<std::size_t> surviving(std::size_t count, std::span<const std::size_t> drop) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < count; ++i) {
    if (std::find(drop.begin(), drop.end(), i) == drop.end()) keep.push_back(i);
  }
  return keep;
}

ModelGraph rebuild(const ModelGraph& like, std::vector<LayerNode> nodes) {
  try {
    return ModelGraph(std::move(nodes), like.output_id(), like.input_shape());
  } catch (const Error& e) {
    reject(std::string("pruned model fails validation: ") + e.what());
  }
}

void dry_run(const ModelGraph& model) {
  Shape shape{1};
  shape.insert(shape.end(), model.input_shape().begin(), model.input_shape().end());
  Tensor probe(shape);
  Rng rng(kProbeSeed);
  for (float& v : probe.data()) v = static_cast<float>(rng.uniform());
  try {
    const Tensor out = forward(model, probe);
    for (float v : out.data()) {
      if (!std::isfinite(v)) reject("dry forward pass produced a non-finite output");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::PlanRejected) throw;
    reject(std::string("dry forward pass failed: ") + e.what());
  }
}

// One coupling group: fold consumer kernels, then remove filters.
ModelGraph apply_group(const ModelGraph& current, const std::vector<const LayerPlan*>& members,
                       bool adjust, std::vector<std::string>* notes) {
  struct Target {
    const LayerPlan* plan = nullptr;
    ConsumerLink link;
  };
  std::map<std::size_t, Target> consumers;  // node index -> latest member feeding it
  for (const LayerPlan* m : members) {
    PruneScope scope;
    try {
      scope = resolve_dependencies(current, m->layer);
    } catch (const Error& e) {
      reject(e.what());
    }
    for (auto& link : scope.consumers) {
      const std::size_t index = current.index_of(link.consumer);
      consumers[index] = Target{m, std::move(link)};
    }
  }

  std::vector<LayerNode> nodes = current.nodes();
  for (auto& [index, target] : consumers) {
    const LayerPlan& plan = *target.plan;
    const auto& map = target.link.channel_map;
    LayerNode& node = nodes[index];
    std::vector<std::size_t> dropped;
    for (const auto& [x, p] : plan.pruned) dropped.push_back(map.at(x));

    if (node.kind == LayerKind::batchnorm) {
      drop_rows(node, surviving(current.channels(index), dropped));
      continue;
    }
    std::vector<FoldRule> rules;
    for (const auto& [x, p] : plan.pruned) {
      if (!p.central) {
        rules.push_back({x, std::nullopt, 0.0, p.constant});
      } else if (!adjust) {
        rules.push_back({x, std::nullopt, 0.0, 0.0});
      } else {
        const auto [scale, offset] = fold_coefficients(current, index, map.at(x),
                                                       map.at(*p.central), p.sign);
        rules.push_back({x, *p.central, scale, offset});
      }
    }
    AdjustedKernels adj;
    try {
      adj = adjust_consumer_kernels(node.tensors.at("weight"), rules, map, target.link.spatial_block);
    } catch (const Error& e) {
      reject("cannot adjust '" + node.id + "': " + e.what());
    }
    node.tensors.at("weight") = std::move(adj.weights);

    const bool any_offset = std::any_of(adj.bias_delta.begin(), adj.bias_delta.end(),
                                        [](double d) { return d != 0.0; });
    if (!any_offset) continue;
    if (auto it = node.tensors.find("bias"); it != node.tensors.end()) {
      for (std::size_t f = 0; f < adj.bias_delta.size(); ++f) {
        it->second[f] = static_cast<float>(it->second[f] + adj.bias_delta[f]);
      }
      continue;
    }
    const auto& next = current.consumers(index);
    if (next.size() == 1 && nodes[next[0]].kind == LayerKind::batchnorm) {
      // bn(z + d) with mean m equals bn(z) with mean m - d.
      Tensor& mean = nodes[next[0]].tensors.at("mean");
      for (std::size_t f = 0; f < adj.bias_delta.size(); ++f) {
        mean[f] = static_cast<float>(mean[f] - adj.bias_delta[f]);
      }
      continue;
    }
    if (notes) notes->push_back("constant offset into '" + node.id + "' dropped: no bias to absorb it");
  }

  for (const LayerPlan* m : members) {
    LayerNode& node = nodes[current.index_of(m->layer)];
    drop_rows(node, m->keep);
  }
  return rebuild(current, std::move(nodes));
}

}  // namespace

PruningPlan reconcile_coupling(std::span<const LayerPlan> layers,
                               std::span<const CouplingGroup> groups) {
  PruningPlan out;
  out.layers.assign(layers.begin(), layers.end());
  auto find = [&](const std::string& id) -> LayerPlan* {
    for (auto& l : out.layers) {
      if (l.layer == id) return &l;
    }
    return nullptr;
  };
  for (const auto& group : groups) {
    std::vector<LayerPlan*> planned;
    std::vector<std::string> missing;
    for (const auto& m : group.members) {
      if (LayerPlan* l = find(m)) {
        planned.push_back(l);
      } else {
        missing.push_back(m);
      }
    }
    if (planned.empty()) continue;
    if (!missing.empty()) {
      throw Error(ErrorCode::InvalidArgument,
                  "coupled layers without a plan: " + join(missing));
    }
    if (planned.size() < 2) continue;
    for (const LayerPlan* l : planned) {
      if (l->n != planned.front()->n) {
        throw Error(ErrorCode::ShapeInconsistency,
                    "coupled layers '" + planned.front()->layer + "' and '" + l->layer +
                        "' differ in filter count");
      }
    }
    CouplingRecord record;
    record.members = group.members;
    std::set<std::size_t> common;
    for (const auto& [x, p] : planned.front()->pruned) common.insert(x);
    for (LayerPlan* l : planned) {
      std::vector<std::size_t> proposed;
      std::set<std::size_t> next;
      for (const auto& [x, p] : l->pruned) {
        proposed.push_back(x);
        if (common.count(x)) next.insert(x);
      }
      record.proposed[l->layer] = std::move(proposed);
      common = std::move(next);
    }
    record.pruned.assign(common.begin(), common.end());
    for (LayerPlan* l : planned) {
      for (auto it = l->pruned.begin(); it != l->pruned.end();) {
        if (common.count(it->first)) {
          ++it;
          continue;
        }
        if (it->second.central) l->surrogate_cost -= 1.0 - it->second.sign * it->second.similarity;
        l->keep.push_back(it->first);
        ++l->promoted;
        it = l->pruned.erase(it);
      }
      std::sort(l->keep.begin(), l->keep.end());
    }
    out.coupling.push_back(std::move(record));
  }
  return out;
}

AdjustedKernels adjust_consumer_kernels(const Tensor& weights, std::span<const FoldRule> rules,
                                        std::span<const std::size_t> channel_map,
                                        std::size_t spatial_block) {
  std::size_t out = 0, channels = 0, block = 0;
  if (weights.rank() == 4) {
    if (spatial_block != 1) {
      throw Error(ErrorCode::InvalidArgument, "conv consumers take a spatial block of 1");
    }
    out = weights.dim(0);
    channels = weights.dim(1);
    block = weights.dim(2) * weights.dim(3);
  } else if (weights.rank() == 2) {
    if (spatial_block == 0 || weights.dim(1) % spatial_block != 0) {
      throw Error(ErrorCode::ShapeMismatch, "linear input width " + std::to_string(weights.dim(1)) +
                                                " is not a multiple of block " +
                                                std::to_string(spatial_block));
    }
    out = weights.dim(0);
    channels = weights.dim(1) / spatial_block;
    block = spatial_block;
  } else {
    throw Error(ErrorCode::ShapeMismatch, "consumer weights must be rank 2 or 4, got " +
                                              to_string(weights.shape()));
  }
  auto column = [&](std::size_t filter) {
    if (filter >= channel_map.size() || channel_map[filter] >= channels) {
      throw Error(ErrorCode::InvalidArgument,
                  "producer filter " + std::to_string(filter) + " has no consumer channel");
    }
    return channel_map[filter];
  };

  const std::size_t row = channels * block;
  std::vector<double> acc(weights.data().begin(), weights.data().end());
  std::vector<double> bias(out, 0.0);
  std::vector<bool> removed(channels, false);
  for (const FoldRule& r : rules) {
    const std::size_t src = column(r.source);
    if (removed[src]) {
      throw Error(ErrorCode::InvalidArgument, "producer filter " + std::to_string(r.source) +
                                                  " folded twice");
    }
    removed[src] = true;
  }
  for (const FoldRule& r : rules) {
    const std::size_t src = column(r.source);
    const bool folds = r.target.has_value();
    const std::size_t dst = folds ? column(*r.target) : 0;
    if (folds && removed[dst]) {
      throw Error(ErrorCode::InvalidArgument, "filter " + std::to_string(r.source) +
                                                  " folds into a removed filter");
    }
    for (std::size_t f = 0; f < out; ++f) {
      const float* s = weights.data().data() + f * row + src * block;
      double sum = 0.0;
      for (std::size_t k = 0; k < block; ++k) sum += s[k];
      bias[f] += r.offset * sum;
      if (folds) {
        double* d = acc.data() + f * row + dst * block;
        for (std::size_t k = 0; k < block; ++k) d[k] += r.scale * s[k];
      }
    }
  }

  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < channels; ++c) {
    if (!removed[c]) kept.push_back(c);
  }
  std::vector<float> data;
  data.reserve(out * kept.size() * block);
  for (std::size_t f = 0; f < out; ++f) {
    for (std::size_t c : kept) {
      const double* s = acc.data() + f * row + c * block;
      for (std::size_t k = 0; k < block; ++k) data.push_back(static_cast<float>(s[k]));
    }
  }
  Shape shape = weights.shape();
  if (weights.rank() == 4) {
    shape[1] = kept.size();
  } else {
    shape[1] = kept.size() * block;
  }
  return {Tensor(std::move(shape), std::move(data)), std::move(bias)};
}

ModelGraph apply_plan(const ModelGraph& model, const PruningPlan& plan,
                      std::vector<std::string>* notes) {
  if (plan.format != kPlanFormat) reject("unsupported plan format '" + plan.format + "'");
  std::map<std::string, const LayerPlan*> by_layer;
  for (const auto& l : plan.layers) {
    validate_layer(model, l);
    if (!by_layer.emplace(l.layer, &l).second) reject("layer '" + l.layer + "' planned twice");
  }

  std::vector<std::vector<const LayerPlan*>> steps;
  for (const auto& group : coupling_groups(model)) {
    std::vector<const LayerPlan*> members;
    bool any = false;
    for (const auto& m : group.members) {
      auto it = by_layer.find(m);
      members.push_back(it == by_layer.end() ? nullptr : it->second);
      any = any || (members.back() && prunes_anything(*members.back()));
    }
    if (!any) continue;
    if (!group.prunable) {
      reject("coupling group {" + join(group.members) + "} cannot shrink: blocked by '" +
             group.blocker + "'");
    }
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!members[i] || members[i]->keep != members.front()->keep) {
        reject("coupled layers {" + join(group.members) + "} must share one keep set ('" +
               group.members[i] + "' differs)");
      }
    }
    steps.push_back(std::move(members));
  }

  ModelGraph current = model;
  for (const auto& members : steps) current = apply_group(current, members, plan.adjust, notes);
  if (!steps.empty()) dry_run(current);
  return current;
}

Complexity predict_complexity(const ModelGraph& model, const PruningPlan& plan) {
  std::map<std::size_t, std::set<std::size_t>> removed;
  for (const auto& l : plan.layers) {
    const std::size_t i = model.index_of(l.layer);
    for (const auto& [x, p] : l.pruned) removed[i].insert(x);
  }
  const ChannelProvenance provenance(model);
  std::vector<std::uint64_t> live(model.size(), 0);
  for (std::size_t i = 0; i < model.size(); ++i) {
    for (const auto& sources : provenance.sources(i)) {
      const bool gone = std::any_of(sources.begin(), sources.end(), [&](const ChannelSource& s) {
        auto it = removed.find(s.node);
        return it != removed.end() && it->second.count(s.channel);
      });
      if (!gone) ++live[i];
    }
  }
  Complexity c;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const LayerNode& node = model.node(i);
    const bool bias = node.tensors.count("bias") > 0;
    switch (node.kind) {
      case LayerKind::conv: {
        const Shape& w = node.tensors.at("weight").shape();
        const Shape& out = model.output_shape(i);
        const std::uint64_t weights = live[i] * live[model.producers(i).at(0)] * w[2] * w[3];
        c.params += weights + (bias ? live[i] : 0);
        c.flops += weights * out[1] * out[2];
        break;
      }
      case LayerKind::linear: {
        const std::size_t src = model.producers(i).at(0);
        const Shape& in = model.output_shape(src);
        const std::uint64_t weights = live[i] * live[src] * in[1] * in[2];
        c.params += weights + (bias ? live[i] : 0);
        c.flops += weights;
        break;
      }
      case LayerKind::batchnorm:
        c.params += 2 * live[i];
        break;
      default:
        break;
    }
  }
  return c;
}

RateSchedule RateSchedule::uniform(double rate) {
  RateSchedule s;
  s.global = rate;
  return s;
}

RateSchedule RateSchedule::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RateSchedule s;
    if (j.is_number()) {
      s.global = j.get<double>();
      return s;
    }
    if (j.contains("default")) s.global = j.at("default").get<double>();
    if (j.contains("rates")) s.rates = j.at("rates").get<std::map<std::string, double>>();
    if (j.contains("keep")) s.keep = j.at("keep").get<std::map<std::string, std::size_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed rate schedule: ") + e.what());
  }
}

double RateSchedule::rate_for(const std::string& layer, std::size_t n) const {
  if (auto it = keep.find(layer); it != keep.end()) {
    const std::size_t k = it->second;
    if (k < 1 || k > n) {
      throw Error(ErrorCode::InvalidArgument, "cannot keep " + std::to_string(k) + " of " +
                                                  std::to_string(n) + " filters in '" + layer + "'");
    }
    const double rate = static_cast<double>(n - k) / static_cast<double>(n);
    if (keep_count(n, rate) != k) {
      throw Error(ErrorCode::InvalidArgument, "keep count of '" + layer + "' is not representable");
    }
    return rate;
  }
  if (auto it = rates.find(layer); it != rates.end()) return it->second;
  if (global) return *global;
  throw Error(ErrorCode::InvalidArgument, "rate schedule does not cover layer '" + layer + "'");
}

PruneResult prune_model(const ModelGraph& model, const Tensor& calibration,
                        const RateSchedule& schedule, const PruneOptions& options,
                        const Tensor* probes) {
  if (calibration.rank() != 4 || calibration.dim(0) == 0) {
    throw Error(ErrorCode::InvalidArgument, "calibration set is empty");
  }
  PruningPlan plan;
  plan.strategy = options.strategy;
  plan.adjust = options.strategy != Strategy::cf_no_adjust;
  plan.edges = options.selection.edges;
  plan.formula = options.selection.formula;
  plan.theta_mode = options.theta_mode;
  plan.provenance = {options.seed, calibration.dim(0), options.data_label};

  const std::vector<std::string> convs = model.conv_layers();
  auto seed_of = [&](const std::string& layer) {
    const auto pos = std::find(convs.begin(), convs.end(), layer) - convs.begin();
    return derive_seed(options.seed, static_cast<std::uint64_t>(pos));
  };

  std::vector<std::string> notes;
  ModelGraph current = model;
  for (const auto& group : coupling_groups(model)) {
    std::vector<double> rates;
    for (const auto& m : group.members) {
      const std::size_t n = model.channels(model.index_of(m));
      if (!group.prunable) {
        try {
          if (schedule.rate_for(m, n) > 0.0) {
            notes.push_back("'" + m + "' left intact: its channels are pinned by '" +
                            group.blocker + "'");
          }
        } catch (const Error&) {
        }
        rates.push_back(0.0);
      } else {
        const double r = schedule.rate_for(m, n);
        keep_count(n, r);  // validates the rate
        rates.push_back(r);
      }
    }
    const bool idle = std::all_of(rates.begin(), rates.end(), [](double r) { return r == 0.0; }) &&
                      options.theta_mode == ThetaMode::search;
    if (!group.prunable || idle) {
      for (std::size_t i = 0; i < group.members.size(); ++i) {
        LayerPlan l = identity_layer_plan(group.members[i],
                                          model.channels(model.index_of(group.members[i])));
        l.rate = rates[i];
        plan.layers.push_back(std::move(l));
      }
      continue;
    }

    std::vector<std::string> taps;
    for (const auto& m : group.members) taps.push_back(similarity_tap(current, m));
    std::vector<std::string> unique = taps;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    const auto matrices = average_similarity(current, calibration, unique, options.batch_size);

    std::vector<LayerPlan> proposals;
    for (std::size_t i = 0; i < group.members.size(); ++i) {
      SimilarityMatrix s = matrices.at(taps[i]);
      s.layer = group.members[i];
      CentralAssignment a;
      if (options.theta_mode == ThetaMode::fixed && options.strategy != Strategy::random) {
        SelectionOrder order = options.strategy == Strategy::reverse
                                   ? SelectionOrder::least_central_first
                                   : SelectionOrder::most_central_first;
        a = select_central_filters(s, build_graph(s, options.theta, options.selection.edges), order,
                                   options.selection.formula);
      } else {
        a = ablation_select(s, options.strategy, rates[i], options.selection,
                            seed_of(group.members[i]));
      }
      a.layer = group.members[i];
      proposals.push_back(make_layer_plan(s, a, rates[i]));
    }
    PruningPlan step = reconcile_coupling(proposals, std::span(&group, 1));
    step.adjust = plan.adjust;
    current = apply_plan(current, step, &notes);
    for (auto& l : step.layers) plan.layers.push_back(std::move(l));
    for (auto& c : step.coupling) plan.coupling.push_back(std::move(c));
  }

  PrunedModelReport report = evaluate(model, current, plan, probes ? *probes : calibration,
                                      options.batch_size);
  report.notes.insert(report.notes.end(), notes.begin(), notes.end());
  return {std::move(current), std::move(plan), std::move(report)};
}

}  // namespace cf
