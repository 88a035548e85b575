#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cf/centrality.hpp"
#include "cf/complexity.hpp"
#include "cf/model.hpp"
#include "cf/plan.hpp"

namespace cf {

/// Selection under an ablation strategy at compression rate `rate`.
/// cf and cf_no_adjust select identically; random keeps a seeded uniform
/// subset and sends each pruned filter to its most similar kept filter;
/// reverse runs the greedy loop least-central-first.
CentralAssignment ablation_select(const SimilarityMatrix& s, Strategy strategy, double rate,
                                  const SelectionOptions& options = {}, std::uint64_t seed = 0);

/// A tap present in both models. `channels[k]` is the original channel that
/// became channel k of the pruned model.
struct TapCorrespondence {
  std::string tap;
  std::vector<std::size_t> channels;
};

/// Relative L2 errors ||a - b|| / max(||a||, eps), averaged over probes.
struct ReconstructionError {
  std::map<std::string, double> taps;
  double logits = 0.0;
  double top1_agreement = 1.0;  // share of probes with the same argmax
  std::size_t probes = 0;
};

ReconstructionError reconstruction_error(const ModelGraph& original, const ModelGraph& pruned,
                                         const Tensor& probes,
                                         std::span<const TapCorrespondence> taps,
                                         std::size_t batch_size = 32);

/// Similarity taps of every planned layer, deduplicated; taps whose channels
/// do not line up one-to-one with the layer's filters are skipped.
std::vector<TapCorrespondence> tap_correspondences(const ModelGraph& original,
                                                   const PruningPlan& plan);

/// Counts of upper-triangle |S| per bin [k w, (k+1) w); 1.0 lands in the last bin.
std::vector<std::size_t> similarity_histogram(const SimilarityMatrix& s, double bin_width);

struct LayerSummary {
  std::string layer;
  std::size_t n = 0;
  std::size_t kept = 0;
  double rate = 0.0;
  double theta = 1.0;
  double surrogate_cost = 0.0;
  std::size_t promoted = 0;
  std::size_t forced_merges = 0;
};

struct PrunedModelReport {
  std::string strategy;
  Complexity before;
  Complexity after;
  double flops_reduction = 0.0;
  double params_reduction = 0.0;
  ReconstructionError error;
  std::vector<LayerSummary> layers;
  std::vector<std::string> notes;
};

/// Complexity deltas, reconstruction error on `probes` and per-layer summaries.
PrunedModelReport evaluate(const ModelGraph& original, const ModelGraph& pruned,
                           const PruningPlan& plan, const Tensor& probes,
                           std::size_t batch_size = 32);

std::string report_to_json(const PrunedModelReport& r);
/// Fixed-width table: one summary row, then one row per layer.
std::string report_to_table(const PrunedModelReport& r);

}  // namespace cf
