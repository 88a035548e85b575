#include "cf/centrality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "cf/error.hpp"

namespace cf {
namespace {

constexpr double kMinDistance = 1e-8;

double closeness_weight(const SimilarityMatrix& s, std::size_t x, std::size_t y,
                        ClosenessFormula formula) {
  const double a = std::abs(s(x, y));
  return formula == ClosenessFormula::distance ? std::max(1.0 - a, kMinDistance) : a;
}

SimilarityGraph make_graph(const SimilarityMatrix& s, double theta, EdgePolicy policy) {
  SimilarityGraph g;
  g.layer = s.layer;
  g.n = s.n;
  g.theta = theta;
  g.policy = policy;
  g.adjacency.assign(s.n, {});
  std::vector<bool> dead(s.n, false);
  for (std::size_t c : s.dead_channels) dead[c] = true;
  for (std::size_t x = 0; x < s.n; ++x) {
    if (dead[x]) continue;
    for (std::size_t y = x + 1; y < s.n; ++y) {
      if (dead[y] || edge_metric(s, x, y, policy) < theta) continue;
      g.adjacency[x].push_back(y);
      g.adjacency[y].push_back(x);
    }
  }
  return g;
}

PrunedFilter link(const SimilarityMatrix& s, std::size_t pruned, std::size_t central,
                  EdgePolicy policy) {
  const double v = s(pruned, central);
  return {central, v, (policy == EdgePolicy::absolute && v < 0.0) ? -1 : 1};
}

std::vector<double> static_scores(const SimilarityGraph& g, const SimilarityMatrix& s,
                                  ClosenessFormula formula) {
  std::vector<double> scores(g.n);
  for (std::size_t j = 0; j < g.n; ++j) scores[j] = closeness(g, s, j, formula);
  return scores;
}

// Restore the least central pruned filters until `target` filters are kept.
void promote(CentralAssignment& a, std::size_t target) {
  std::vector<std::size_t> pruned;
  for (const auto& [idx, rec] : a.assignment) pruned.push_back(idx);
  std::stable_sort(pruned.begin(), pruned.end(), [&](std::size_t x, std::size_t y) {
    return a.scores[x] < a.scores[y];
  });
  for (std::size_t idx : pruned) {
    if (a.centrals.size() >= target) break;
    a.assignment.erase(idx);
    a.centrals.push_back(idx);
    ++a.promoted;
  }
}

// Merge the most similar pair of centrals until only `target` remain.
void force_merge(CentralAssignment& a, const SimilarityMatrix& s, std::size_t target,
                 EdgePolicy policy) {
  while (a.centrals.size() > target) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t keep_pos = 0, drop_pos = 0;
    for (std::size_t i = 0; i < a.centrals.size(); ++i) {
      for (std::size_t k = i + 1; k < a.centrals.size(); ++k) {
        const double m = edge_metric(s, a.centrals[i], a.centrals[k], policy);
        if (m > best) {
          best = m;
          // Keep the more central of the two; ties keep the lower index.
          const std::size_t ci = a.centrals[i], ck = a.centrals[k];
          const bool keep_i = a.scores[ci] > a.scores[ck] ||
                              (a.scores[ci] == a.scores[ck] && ci < ck);
          keep_pos = keep_i ? i : k;
          drop_pos = keep_i ? k : i;
        }
      }
    }
    const std::size_t keeper = a.centrals[keep_pos];
    const std::size_t dropped = a.centrals[drop_pos];
    for (auto& [idx, rec] : a.assignment) {
      if (rec.central == dropped) rec = link(s, idx, keeper, policy);
    }
    a.assignment[dropped] = link(s, dropped, keeper, policy);
    a.centrals.erase(a.centrals.begin() + static_cast<std::ptrdiff_t>(drop_pos));
    ++a.forced_merges;
  }
  for (const auto& [idx, rec] : a.assignment) {
    if (rec.central) a.theta = std::min(a.theta, rec.sign * rec.similarity);
  }
}

}  // namespace

double edge_metric(const SimilarityMatrix& s, std::size_t x, std::size_t y, EdgePolicy policy) {
  const double v = s(x, y);
  return policy == EdgePolicy::absolute ? std::abs(v) : v;
}

std::size_t SimilarityGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& adj : adjacency) total += adj.size();
  return total / 2;
}

bool SimilarityGraph::has_edge(std::size_t x, std::size_t y) const {
  const auto& adj = adjacency.at(x);
  return std::binary_search(adj.begin(), adj.end(), y);
}

SimilarityGraph build_graph(const SimilarityMatrix& s, double theta, EdgePolicy policy) {
  if (!(theta > 0.0 && theta <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "similarity threshold must lie in (0, 1], got " + std::to_string(theta));
  }
  return make_graph(s, theta, policy);
}

double closeness(const SimilarityGraph& graph, const SimilarityMatrix& s, std::size_t j,
                 ClosenessFormula formula) {
  if (j >= graph.n) {
    throw Error(ErrorCode::UnknownNode, "node " + std::to_string(j) + " not in graph of " +
                                            std::to_string(graph.n));
  }
  const auto& adj = graph.adjacency[j];
  if (adj.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t o : adj) total += closeness_weight(s, j, o, formula);
  if (total <= 0.0) return 0.0;
  return static_cast<double>(adj.size()) / total;
}

std::vector<std::size_t> CentralAssignment::keep() const {
  std::vector<std::size_t> k = centrals;
  std::sort(k.begin(), k.end());
  return k;
}

CentralAssignment select_central_filters(const SimilarityMatrix& s, const SimilarityGraph& graph,
                                         SelectionOrder order, ClosenessFormula formula) {
  if (graph.n != s.n) {
    throw Error(ErrorCode::InvalidArgument, "graph and similarity matrix sizes differ");
  }
  const std::size_t n = s.n;
  CentralAssignment a;
  a.layer = s.layer;
  a.n = n;
  a.theta = graph.theta;
  a.scores = static_scores(graph, s, formula);

  std::vector<bool> active(n, true);
  for (std::size_t c : s.dead_channels) {
    active[c] = false;
    a.assignment[c] = PrunedFilter{std::nullopt, 0.0, 1};
  }
  // Residual-graph neighbour count and weight sum, updated on removal. Sums
  // are fixed point so equal neighbourhoods score equally in any update order.
  constexpr double kUnit = 17592186044416.0;  // 2^44
  auto fixed = [&](std::size_t x, std::size_t y) {
    return static_cast<std::int64_t>(std::llround(closeness_weight(s, x, y, formula) * kUnit));
  };
  std::vector<std::size_t> degree(n, 0);
  std::vector<std::int64_t> weight(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (!active[j]) continue;
    for (std::size_t o : graph.adjacency[j]) {
      ++degree[j];
      weight[j] += fixed(j, o);
    }
  }
  auto remove = [&](std::size_t v) {
    active[v] = false;
    for (std::size_t u : graph.adjacency[v]) {
      if (!active[u]) continue;
      --degree[u];
      weight[u] -= fixed(u, v);
    }
  };
  auto score = [&](std::size_t j) {
    return (degree[j] == 0 || weight[j] <= 0)
               ? 0.0
               : static_cast<double>(degree[j]) / (static_cast<double>(weight[j]) / kUnit);
  };

  std::size_t remaining = static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  while (remaining > 0) {
    std::size_t pick = n;
    double best = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j]) continue;
      const double sc = score(j);
      const bool better = order == SelectionOrder::most_central_first ? sc > best : sc < best;
      if (pick == n || better) {
        pick = j;
        best = sc;
      }
    }
    a.centrals.push_back(pick);
    std::vector<std::size_t> absorbed;
    for (std::size_t o : graph.adjacency[pick]) {
      if (active[o]) absorbed.push_back(o);
    }
    remove(pick);
    for (std::size_t o : absorbed) {
      a.assignment[o] = link(s, o, pick, graph.policy);
      remove(o);
    }
    remaining -= 1 + absorbed.size();
  }
  return a;
}

std::size_t keep_count(std::size_t n, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "compression rate must lie in [0, 1), got " + std::to_string(rate));
  }
  // The epsilon absorbs representation error, e.g. (1 - 0.3) * 10 = 7.000000000000001.
  const double exact = (1.0 - rate) * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  if (k < 1) {
    throw Error(ErrorCode::InvalidArgument, "compression rate " + std::to_string(rate) +
                                                " leaves no filter of " + std::to_string(n));
  }
  return k;
}

CentralAssignment threshold_for_rate(const SimilarityMatrix& s, double rate,
                                     const SelectionOptions& options) {
  if (s.n == 0) throw Error(ErrorCode::InvalidArgument, "empty similarity matrix");
  const std::size_t target = keep_count(s.n, rate);

  std::vector<bool> dead(s.n, false);
  for (std::size_t c : s.dead_channels) dead[c] = true;
  std::vector<double> candidates;
  for (std::size_t x = 0; x < s.n; ++x) {
    if (dead[x]) continue;
    for (std::size_t y = x + 1; y < s.n; ++y) {
      if (dead[y]) continue;
      const double m = edge_metric(s, x, y, options.edges);
      if (m > 0.0) candidates.push_back(std::min(m, 1.0));
    }
  }
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  auto select_at = [&](double theta) {
    return select_central_filters(s, make_graph(s, theta, options.edges), options.order,
                                  options.formula);
  };

  // Edgeless graph: only dead channels are pruned.
  const double above_max =
      candidates.empty() ? 1.0
                         : std::nextafter(candidates.front(), std::numeric_limits<double>::infinity());
  CentralAssignment top = select_at(above_max);
  if (top.centrals.size() <= target) {
    promote(top, target);
    return top;
  }
  if (candidates.empty()) {
    force_merge(top, s, target, options.edges);
    return top;
  }

  // Lowering theta adds edges; find the largest theta keeping <= target.
  std::size_t lo = 0, hi = candidates.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (select_at(candidates[mid]).centrals.size() <= target) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  if (lo == candidates.size()) {
    CentralAssignment coarsest = select_at(candidates.back());
    force_merge(coarsest, s, target, options.edges);
    return coarsest;
  }
  CentralAssignment chosen = select_at(candidates[lo]);
  promote(chosen, target);
  return chosen;
}

double surrogate_cost(const SimilarityMatrix& s, const CentralAssignment& a) {
  double cost = 0.0;
  for (const auto& [idx, rec] : a.assignment) {
    if (rec.central) cost += 1.0 - rec.sign * s(idx, *rec.central);
  }
  return cost;
}

}  // namespace cf
