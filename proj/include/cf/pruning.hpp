#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cf/complexity.hpp"
#include "cf/dependencies.hpp"
#include "cf/eval.hpp"
#include "cf/model.hpp"
#include "cf/plan.hpp"

namespace cf {

/// Intersect the prune sets inside every coupling group. Filters leaving a
/// member's prune set are promoted back to kept filters; survivors keep their
/// central. Throws ShapeInconsistency when coupled members differ in size and
/// InvalidArgument when only part of a group is planned.
PruningPlan reconcile_coupling(std::span<const LayerPlan> layers,
                               std::span<const CouplingGroup> groups);

/// One producer filter leaving a consumer's input. With a target, its kernel
/// slice is added to the target's slice times `scale`. In every case
/// `offset` times the slice's sum accumulates into the consumer bias.
struct FoldRule {
  std::size_t source = 0;
  std::optional<std::size_t> target;
  double scale = 1.0;
  double offset = 0.0;
};

struct AdjustedKernels {
  Tensor weights;                  // source channels removed
  std::vector<double> bias_delta;  // per consumer output
};

/// Fold and drop producer channels of a consumer weight tensor: conv
/// [out, in, kh, kw] or linear [out, in * spatial_block]. `channel_map`
/// sends producer filters to consumer input channels. Throws InvalidArgument
/// on an unmapped filter or repeated source.
AdjustedKernels adjust_consumer_kernels(const Tensor& weights, std::span<const FoldRule> rules,
                                        std::span<const std::size_t> channel_map,
                                        std::size_t spatial_block = 1);

/// New model with every planned filter removed and its kernels folded as the
/// plan says. Throws PlanRejected (input untouched) when the plan does not
/// fit the topology or the result fails its dry forward pass. Offsets with
/// nowhere to go are reported through `notes`.
ModelGraph apply_plan(const ModelGraph& model, const PruningPlan& plan,
                      std::vector<std::string>* notes = nullptr);

/// Complexity of the pruned model computed from kept-filter counts alone.
Complexity predict_complexity(const ModelGraph& model, const PruningPlan& plan);

/// Compression rates per conv layer.
struct RateSchedule {
  std::optional<double> global;
  std::map<std::string, double> rates;
  std::map<std::string, std::size_t> keep;  // explicit kept-filter counts

  static RateSchedule uniform(double rate);
  /// {"default": r, "rates": {id: r}, "keep": {id: k}}, all keys optional.
  static RateSchedule from_json(const std::string& text);

  /// Rate for `layer` with n filters. Throws InvalidArgument when the
  /// schedule does not cover it.
  double rate_for(const std::string& layer, std::size_t n) const;
};

struct PruneOptions {
  Strategy strategy = Strategy::cf;
  SelectionOptions selection;
  ThetaMode theta_mode = ThetaMode::search;
  double theta = 0.9;  // used when theta_mode is fixed
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::string data_label;
};

struct PruneResult {
  ModelGraph model;
  PruningPlan plan;
  PrunedModelReport report;
};

/// Prune coupling group by group in topological order, measuring similarity
/// on the model as pruned so far. The report is evaluated on `probes`, or on
/// the calibration images when none are given.
PruneResult prune_model(const ModelGraph& model, const Tensor& calibration,
                        const RateSchedule& schedule, const PruneOptions& options = {},
                        const Tensor* probes = nullptr);

}  // namespace cf
