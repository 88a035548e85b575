#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cf/centrality.hpp"

namespace cf {

inline constexpr const char* kPlanFormat = "cfplan/1";

/// How filters are chosen for removal.
enum class Strategy {
  cf,            // central filters, kernels folded into their centrals
  cf_no_adjust,  // same selection, pruned kernels simply dropped
  random,        // seeded uniform keep set
  reverse,       // least central node picked first
};

const char* to_string(Strategy s) noexcept;
/// Throws InvalidArgument on an unknown name.
Strategy parse_strategy(const std::string& name);

const char* to_string(EdgePolicy p) noexcept;
const char* to_string(ClosenessFormula f) noexcept;
EdgePolicy parse_edge_policy(const std::string& name);
ClosenessFormula parse_closeness_formula(const std::string& name);

enum class ThetaMode { search, fixed };
const char* to_string(ThetaMode m) noexcept;
ThetaMode parse_theta_mode(const std::string& name);

/// Removal record of one filter.
struct PlannedPrune {
  std::optional<std::size_t> central;  // empty: dead channel
  double similarity = 0.0;
  int sign = 1;
  double constant = 0.0;  // dead channels: activation value at the tap

  friend bool operator==(const PlannedPrune&, const PlannedPrune&) = default;
};

struct LayerPlan {
  std::string layer;
  std::size_t n = 0;   // filters before pruning
  double rate = 0.0;   // requested compression rate
  double theta = 1.0;  // graph threshold that produced the assignment
  std::vector<std::size_t> keep;              // sorted, non-empty
  std::map<std::size_t, PlannedPrune> pruned; // keep and pruned partition [0, n)
  std::size_t promoted = 0;
  std::size_t forced_merges = 0;
  double surrogate_cost = 0.0;

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

/// Members of one coupling group whose prune sets were intersected.
struct CouplingRecord {
  std::vector<std::string> members;
  std::map<std::string, std::vector<std::size_t>> proposed;  // per member, before
  std::vector<std::size_t> pruned;                           // intersection

  friend bool operator==(const CouplingRecord&, const CouplingRecord&) = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::string data;  // calibration source description

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PruningPlan {
  std::string format = kPlanFormat;
  Strategy strategy = Strategy::cf;
  bool adjust = true;  // fold pruned kernels into centrals
  EdgePolicy edges = EdgePolicy::positive_only;
  ClosenessFormula formula = ClosenessFormula::distance;
  ThetaMode theta_mode = ThetaMode::search;
  Provenance provenance;
  std::vector<LayerPlan> layers;  // topological order
  std::vector<CouplingRecord> coupling;

  const LayerPlan* find(const std::string& layer) const;

  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

/// Layer plan from a selection. Dead channels take their tap mean from `s`.
LayerPlan make_layer_plan(const SimilarityMatrix& s, const CentralAssignment& a, double rate);

/// A plan that keeps every filter of `layer`.
LayerPlan identity_layer_plan(const std::string& layer, std::size_t n);

std::string plan_to_json(const PruningPlan& plan);
/// Throws Format on malformed input.
PruningPlan plan_from_json(const std::string& text);
void save_plan(const PruningPlan& plan, const std::filesystem::path& path);
PruningPlan load_plan(const std::filesystem::path& path);

}  // namespace cf
