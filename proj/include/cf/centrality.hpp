#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cf/similarity.hpp"

namespace cf {

/// Which coefficients join filters in the similarity graph.
enum class EdgePolicy {
  positive_only,  // S >= theta
  absolute,       // |S| >= theta; anti-correlated maps fold with a negative sign
};

/// Closeness denominators: distances 1 - |S| (default) or the raw |S| sum.
enum class ClosenessFormula { distance, literal };

/// Greedy order: most central node first (the method) or least central
/// first (the "reverse" ablation).
enum class SelectionOrder { most_central_first, least_central_first };

struct SelectionOptions {
  EdgePolicy edges = EdgePolicy::positive_only;
  ClosenessFormula formula = ClosenessFormula::distance;
  SelectionOrder order = SelectionOrder::most_central_first;
};

/// The similarity value an edge policy compares against theta.
double edge_metric(const SimilarityMatrix& s, std::size_t x, std::size_t y, EdgePolicy policy);

struct SimilarityGraph {
  std::string layer;
  std::size_t n = 0;
  double theta = 1.0;
  EdgePolicy policy = EdgePolicy::positive_only;
  std::vector<std::vector<std::size_t>> adjacency;  // sorted, no self loops

  std::size_t edge_count() const;
  bool has_edge(std::size_t x, std::size_t y) const;
};

/// Edge (x, y) iff metric(x, y) >= theta and x != y; dead channels stay isolated.
/// Throws InvalidArgument unless theta is in (0, 1].
SimilarityGraph build_graph(const SimilarityMatrix& s, double theta,
                            EdgePolicy policy = EdgePolicy::positive_only);

/// Closeness of node j over its graph neighbourhood: k / sum of distances
/// d = max(1 - |S|, 1e-8) for the default formula, k / sum |S| for the
/// literal one; 0 for isolated nodes.
double closeness(const SimilarityGraph& graph, const SimilarityMatrix& s, std::size_t j,
                 ClosenessFormula formula = ClosenessFormula::distance);

/// Pruned filter record. `central` is empty for dead channels.
struct PrunedFilter {
  std::optional<std::size_t> central;
  double similarity = 0.0;  // S[pruned][central]
  int sign = 1;             // sign of that coefficient

  friend bool operator==(const PrunedFilter&, const PrunedFilter&) = default;
};

struct CentralAssignment {
  std::string layer;
  std::size_t n = 0;
  double theta = 1.0;
  std::vector<std::size_t> centrals;  // selection order
  std::map<std::size_t, PrunedFilter> assignment;
  std::vector<double> scores;  // closeness on the full graph
  std::size_t promoted = 0;       // pruned filters restored to meet the keep count
  std::size_t forced_merges = 0;  // centrals merged below every graph threshold

  std::vector<std::size_t> keep() const;  // sorted
};

/// Greedy selection: repeatedly take the unresolved node with the highest
/// closeness on the residual graph (ties to the lower index), make it central
/// and assign its unresolved neighbours to it. Dead channels are pruned with
/// no central.
CentralAssignment select_central_filters(const SimilarityMatrix& s, const SimilarityGraph& graph,
                                         SelectionOrder order = SelectionOrder::most_central_first,
                                         ClosenessFormula formula = ClosenessFormula::distance);

/// Filters kept at compression rate `rate`: ceil((1 - rate) * n).
std::size_t keep_count(std::size_t n, double rate);

/// Search theta so that selection keeps exactly keep_count(n, rate) filters.
CentralAssignment threshold_for_rate(const SimilarityMatrix& s, double rate,
                                     const SelectionOptions& options = {});

/// Surrogate cost of an assignment: sum over pruned filters of 1 - S[pruned][central].
double surrogate_cost(const SimilarityMatrix& s, const CentralAssignment& a);

}  // namespace cf
