#include "cf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <set>

#include "cf/dependencies.hpp"
#include "cf/error.hpp"
#include "cf/forward.hpp"
#include "cf/rng.hpp"

namespace cf {
namespace {

constexpr double kNormFloor = 1e-12;

CentralAssignment random_select(const SimilarityMatrix& s, double rate,
                                const SelectionOptions& options, std::uint64_t seed) {
  const std::size_t n = s.n;
  const std::size_t target = keep_count(n, rate);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t pick = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[pick]);
  }
  CentralAssignment a;
  a.layer = s.layer;
  a.n = n;
  a.centrals.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target));
  std::sort(a.centrals.begin(), a.centrals.end());

  double theta = std::numeric_limits<double>::infinity();
  for (auto it = order.begin() + static_cast<std::ptrdiff_t>(target); it != order.end(); ++it) {
    const std::size_t x = *it;
    if (s.is_dead(x)) {
      a.assignment[x] = PrunedFilter{std::nullopt, 0.0, 1};
      continue;
    }
    std::size_t best = a.centrals.front();
    double best_metric = -std::numeric_limits<double>::infinity();
    for (std::size_t c : a.centrals) {
      const double m = edge_metric(s, x, c, options.edges);
      if (m > best_metric) {
        best_metric = m;
        best = c;
      }
    }
    const double v = s(x, best);
    a.assignment[x] =
        PrunedFilter{best, v, (options.edges == EdgePolicy::absolute && v < 0.0) ? -1 : 1};
    theta = std::min(theta, best_metric);
  }
  a.theta = std::isfinite(theta) ? theta : 1.0;
  a.scores.assign(n, 0.0);
  if (a.theta > 0.0 && a.theta <= 1.0) {
    const SimilarityGraph g = build_graph(s, a.theta, options.edges);
    for (std::size_t j = 0; j < n; ++j) a.scores[j] = closeness(g, s, j, options.formula);
  }
  return a;
}

double relative_l2(std::span<const float> a, std::span<const float> b) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    diff += d * d;
    norm += static_cast<double>(a[i]) * a[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), kNormFloor);
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double reduction(std::uint64_t before, std::uint64_t after) {
  if (before == 0) return 0.0;
  return 1.0 - static_cast<double>(after) / static_cast<double>(before);
}

}  // namespace

CentralAssignment ablation_select(const SimilarityMatrix& s, Strategy strategy, double rate,
                                  const SelectionOptions& options, std::uint64_t seed) {
  SelectionOptions opts = options;
  switch (strategy) {
    case Strategy::cf:
    case Strategy::cf_no_adjust:
      opts.order = SelectionOrder::most_central_first;
      return threshold_for_rate(s, rate, opts);
    case Strategy::reverse:
      opts.order = SelectionOrder::least_central_first;
      return threshold_for_rate(s, rate, opts);
    case Strategy::random:
      return random_select(s, rate, opts, seed);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown strategy");
}

ReconstructionError reconstruction_error(const ModelGraph& original, const ModelGraph& pruned,
                                         const Tensor& probes,
                                         std::span<const TapCorrespondence> taps,
                                         std::size_t batch_size) {
  if (probes.rank() != 4 || probes.dim(0) == 0) {
    throw Error(ErrorCode::ShapeMismatch, "probes must be a non-empty [batch, c, h, w] tensor");
  }
  std::vector<std::string> ids;
  for (const auto& t : taps) ids.push_back(t.tap);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  ReconstructionError r;
  const std::size_t total = probes.dim(0);
  const std::size_t step = std::max<std::size_t>(batch_size, 1);
  std::map<std::string, double> tap_sums;
  double logit_sum = 0.0;
  std::size_t agree = 0;
  for (std::size_t begin = 0; begin < total; begin += step) {
    const std::size_t end = std::min(total, begin + step);
    const Tensor chunk = probes.rows(begin, end);
    const ActivationSet a = forward_capture(original, chunk, ids);
    const ActivationSet b = forward_capture(pruned, chunk, ids);
    const std::size_t batch = end - begin;
    for (const auto& t : taps) {
      const Tensor kept = a.taps.at(t.tap).select(1, t.channels);
      const Tensor& got = b.taps.at(t.tap);
      if (kept.shape() != got.shape()) {
        throw Error(ErrorCode::ShapeMismatch, "tap '" + t.tap + "' has shape " +
                                                  to_string(got.shape()) + ", expected " +
                                                  to_string(kept.shape()));
      }
      const std::size_t per = kept.size() / batch;
      double& sum = tap_sums[t.tap];
      for (std::size_t i = 0; i < batch; ++i) {
        sum += relative_l2(kept.data().subspan(i * per, per), got.data().subspan(i * per, per));
      }
    }
    const std::size_t classes = a.logits.size() / batch;
    if (b.logits.size() != a.logits.size()) {
      throw Error(ErrorCode::ShapeMismatch, "models disagree on the output size");
    }
    for (std::size_t i = 0; i < batch; ++i) {
      const auto la = a.logits.data().subspan(i * classes, classes);
      const auto lb = b.logits.data().subspan(i * classes, classes);
      logit_sum += relative_l2(la, lb);
      if (argmax(la) == argmax(lb)) ++agree;
    }
  }
  for (const auto& [tap, sum] : tap_sums) r.taps[tap] = sum / static_cast<double>(total);
  r.logits = logit_sum / static_cast<double>(total);
  r.top1_agreement = static_cast<double>(agree) / static_cast<double>(total);
  r.probes = total;
  return r;
}

std::vector<TapCorrespondence> tap_correspondences(const ModelGraph& original,
                                                   const PruningPlan& plan) {
  std::vector<TapCorrespondence> out;
  std::set<std::string> seen;
  for (const auto& l : plan.layers) {
    if (!original.find(l.layer)) continue;
    const std::string tap = similarity_tap(original, l.layer);
    if (original.channels(original.index_of(tap)) != l.n || !seen.insert(tap).second) continue;
    out.push_back({tap, l.keep});
  }
  return out;
}

std::vector<std::size_t> similarity_histogram(const SimilarityMatrix& s, double bin_width) {
  if (!(bin_width > 0.0 && bin_width <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "bin width must lie in (0, 1]");
  }
  const auto bins = static_cast<std::size_t>(std::ceil(1.0 / bin_width - 1e-9));
  std::vector<std::size_t> counts(bins, 0);
  for (std::size_t x = 0; x < s.n; ++x) {
    for (std::size_t y = x + 1; y < s.n; ++y) {
      const auto k = static_cast<std::size_t>(std::floor(std::abs(s(x, y)) / bin_width));
      ++counts[std::min(k, bins - 1)];
    }
  }
  return counts;
}

PrunedModelReport evaluate(const ModelGraph& original, const ModelGraph& pruned,
                           const PruningPlan& plan, const Tensor& probes, std::size_t batch_size) {
  PrunedModelReport r;
  r.strategy = to_string(plan.strategy);
  r.before = count_flops_params(original);
  r.after = count_flops_params(pruned);
  r.flops_reduction = reduction(r.before.flops, r.after.flops);
  r.params_reduction = reduction(r.before.params, r.after.params);
  const auto taps = tap_correspondences(original, plan);
  r.error = reconstruction_error(original, pruned, probes, taps, batch_size);
  for (const auto& l : plan.layers) {
    r.layers.push_back({l.layer, l.n, l.keep.size(), l.rate, l.theta, l.surrogate_cost,
                        l.promoted, l.forced_merges});
  }
  r.notes.push_back(
      "errors and top-1 agreement are training-free proxies measured against the unpruned "
      "model; no fine-tuning was applied");
  if (!plan.adjust) r.notes.push_back("kernels of pruned filters were dropped without folding");
  return r;
}

std::string report_to_json(const PrunedModelReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer},
                      {"n", l.n},
                      {"kept", l.kept},
                      {"rate", l.rate},
                      {"theta", l.theta},
                      {"surrogate_cost", l.surrogate_cost},
                      {"promoted", l.promoted},
                      {"forced_merges", l.forced_merges}});
  }
  nlohmann::json taps = nlohmann::json::object();
  for (const auto& [tap, e] : r.error.taps) taps[tap] = e;
  const nlohmann::json j = {
      {"strategy", r.strategy},
      {"flops", {{"before", r.before.flops}, {"after", r.after.flops}, {"reduction", r.flops_reduction}}},
      {"params",
       {{"before", r.before.params}, {"after", r.after.params}, {"reduction", r.params_reduction}}},
      {"proxy",
       {{"logit_error", r.error.logits},
        {"top1_agreement", r.error.top1_agreement},
        {"tap_errors", taps},
        {"probes", r.error.probes}}},
      {"layers", layers},
      {"notes", r.notes}};
  return j.dump(2) + "\n";
}

std::string report_to_table(const PrunedModelReport& r) {
  std::string out;
  char line[256];
  auto millions = [](std::uint64_t v) { return static_cast<double>(v) / 1e6; };
  std::snprintf(line, sizeof line, "%-14s %-22s %-22s %-22s\n", "strategy",
                "top-1 agree (proxy)", "FLOPs (PR)", "Parameters (PR)");
  out += line;
  char flops[64], params[64], agree[64];
  std::snprintf(flops, sizeof flops, "%.2fM (%.1f%%)", millions(r.after.flops),
                100.0 * r.flops_reduction);
  std::snprintf(params, sizeof params, "%.2fM (%.1f%%)", millions(r.after.params),
                100.0 * r.params_reduction);
  std::snprintf(agree, sizeof agree, "%.2f%% / err %.2e", 100.0 * r.error.top1_agreement,
                r.error.logits);
  std::snprintf(line, sizeof line, "%-14s %-22s %-22s %-22s\n", r.strategy.c_str(), agree, flops,
                params);
  out += line;
  out += "\n";
  std::snprintf(line, sizeof line, "%-16s %6s %6s %7s %9s %10s\n", "layer", "n", "kept", "rate",
                "theta", "cost");
  out += line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%-16s %6zu %6zu %7.3f %9.5f %10.4f\n", l.layer.c_str(), l.n,
                  l.kept, l.rate, l.theta, l.surrogate_cost);
    out += line;
  }
  for (const auto& note : r.notes) out += "note: " + note + "\n";
  return out;
}

}  // namespace cf
