#include <algorithm>
#include <json.hpp>

#include "cf/error.hpp"
#include "cf/model_io.hpp"
#include "cf/plan.hpp"

namespace cf {
namespace {

using nlohmann::json;

template <typename Enum, std::size_t N>
Enum parse_name(const std::string& name, const std::pair<const char*, Enum> (&table)[N],
                const char* what) {
  for (const auto& [text, value] : table) {
    if (name == text) return value;
  }
  std::string known;
  for (const auto& [text, value] : table) known += (known.empty() ? "" : ", ") + std::string(text);
  throw Error(ErrorCode::InvalidArgument,
              "unknown " + std::string(what) + " '" + name + "' (expected " + known + ")");
}

constexpr std::pair<const char*, Strategy> kStrategies[] = {
    {"cf", Strategy::cf},
    {"cf_no_adjust", Strategy::cf_no_adjust},
    {"random", Strategy::random},
    {"reverse", Strategy::reverse},
};
constexpr std::pair<const char*, EdgePolicy> kPolicies[] = {
    {"positive", EdgePolicy::positive_only},
    {"absolute", EdgePolicy::absolute},
};
constexpr std::pair<const char*, ClosenessFormula> kFormulas[] = {
    {"distance", ClosenessFormula::distance},
    {"literal", ClosenessFormula::literal},
};
constexpr std::pair<const char*, ThetaMode> kThetaModes[] = {
    {"search", ThetaMode::search},
    {"fixed", ThetaMode::fixed},
};

template <typename Enum, std::size_t N>
const char* name_of(Enum value, const std::pair<const char*, Enum> (&table)[N]) noexcept {
  for (const auto& [text, v] : table) {
    if (v == value) return text;
  }
  return "?";
}

json layer_to_json(const LayerPlan& l) {
  json pruned = json::array();
  for (const auto& [index, p] : l.pruned) {
    json e = {{"index", index},
              {"central", p.central ? json(*p.central) : json(nullptr)},
              {"similarity", p.similarity},
              {"sign", p.sign}};
    if (!p.central) e["constant"] = p.constant;
    pruned.push_back(std::move(e));
  }
  return {{"layer", l.layer},       {"n", l.n},
          {"rate", l.rate},         {"theta", l.theta},
          {"keep", l.keep},         {"pruned", std::move(pruned)},
          {"promoted", l.promoted}, {"forced_merges", l.forced_merges},
          {"surrogate_cost", l.surrogate_cost}};
}

LayerPlan layer_from_json(const json& j) {
  LayerPlan l;
  l.layer = j.at("layer").get<std::string>();
  l.n = j.at("n").get<std::size_t>();
  l.rate = j.value("rate", 0.0);
  l.theta = j.value("theta", 1.0);
  l.keep = j.at("keep").get<std::vector<std::size_t>>();
  for (const auto& e : j.at("pruned")) {
    PlannedPrune p;
    if (!e.at("central").is_null()) p.central = e.at("central").get<std::size_t>();
    p.similarity = e.value("similarity", 0.0);
    p.sign = e.value("sign", 1);
    p.constant = e.value("constant", 0.0);
    l.pruned[e.at("index").get<std::size_t>()] = p;
  }
  l.promoted = j.value("promoted", std::size_t{0});
  l.forced_merges = j.value("forced_merges", std::size_t{0});
  l.surrogate_cost = j.value("surrogate_cost", 0.0);
  return l;
}

}  // namespace

const char* to_string(Strategy s) noexcept { return name_of(s, kStrategies); }
Strategy parse_strategy(const std::string& name) { return parse_name(name, kStrategies, "strategy"); }
const char* to_string(EdgePolicy p) noexcept { return name_of(p, kPolicies); }
EdgePolicy parse_edge_policy(const std::string& name) {
  return parse_name(name, kPolicies, "edge policy");
}
const char* to_string(ClosenessFormula f) noexcept { return name_of(f, kFormulas); }
ClosenessFormula parse_closeness_formula(const std::string& name) {
  return parse_name(name, kFormulas, "closeness formula");
}
const char* to_string(ThetaMode m) noexcept { return name_of(m, kThetaModes); }
ThetaMode parse_theta_mode(const std::string& name) {
  return parse_name(name, kThetaModes, "theta mode");
}

const LayerPlan* PruningPlan::find(const std::string& layer) const {
  auto it = std::find_if(layers.begin(), layers.end(),
                         [&](const LayerPlan& l) { return l.layer == layer; });
  return it == layers.end() ? nullptr : &*it;
}

LayerPlan make_layer_plan(const SimilarityMatrix& s, const CentralAssignment& a, double rate) {
  LayerPlan l;
  l.layer = a.layer;
  l.n = a.n;
  l.rate = rate;
  l.theta = a.theta;
  l.keep = a.keep();
  for (const auto& [index, rec] : a.assignment) {
    PlannedPrune p{rec.central, rec.similarity, rec.sign, 0.0};
    if (!rec.central && index < s.channel_means.size()) p.constant = s.channel_means[index];
    l.pruned[index] = p;
  }
  l.promoted = a.promoted;
  l.forced_merges = a.forced_merges;
  l.surrogate_cost = surrogate_cost(s, a);
  return l;
}

LayerPlan identity_layer_plan(const std::string& layer, std::size_t n) {
  LayerPlan l;
  l.layer = layer;
  l.n = n;
  l.keep.resize(n);
  for (std::size_t i = 0; i < n; ++i) l.keep[i] = i;
  return l;
}

std::string plan_to_json(const PruningPlan& plan) {
  json layers = json::array();
  for (const auto& l : plan.layers) layers.push_back(layer_to_json(l));
  json coupling = json::array();
  for (const auto& c : plan.coupling) {
    json proposed = json::object();
    for (const auto& [member, pruned] : c.proposed) proposed[member] = pruned;
    coupling.push_back({{"members", c.members}, {"proposed", proposed}, {"pruned", c.pruned}});
  }
  json j = {{"format", plan.format},
            {"strategy", to_string(plan.strategy)},
            {"adjust", plan.adjust},
            {"edges", to_string(plan.edges)},
            {"closeness", to_string(plan.formula)},
            {"theta_mode", to_string(plan.theta_mode)},
            {"provenance",
             {{"seed", plan.provenance.seed},
              {"samples", plan.provenance.samples},
              {"data", plan.provenance.data}}},
            {"layers", std::move(layers)},
            {"coupling", std::move(coupling)}};
  return j.dump(2) + "\n";
}

PruningPlan plan_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    PruningPlan plan;
    plan.format = j.at("format").get<std::string>();
    if (plan.format != kPlanFormat) {
      throw Error(ErrorCode::Format, "unsupported plan format '" + plan.format + "'");
    }
    plan.strategy = parse_strategy(j.value("strategy", std::string("cf")));
    plan.adjust = j.value("adjust", true);
    plan.edges = parse_edge_policy(j.value("edges", std::string("positive")));
    plan.formula = parse_closeness_formula(j.value("closeness", std::string("distance")));
    plan.theta_mode = parse_theta_mode(j.value("theta_mode", std::string("search")));
    if (j.contains("provenance")) {
      const auto& p = j.at("provenance");
      plan.provenance.seed = p.value("seed", std::uint64_t{0});
      plan.provenance.samples = p.value("samples", std::size_t{0});
      plan.provenance.data = p.value("data", std::string());
    }
    for (const auto& l : j.at("layers")) plan.layers.push_back(layer_from_json(l));
    if (j.contains("coupling")) {
      for (const auto& c : j.at("coupling")) {
        CouplingRecord r;
        r.members = c.at("members").get<std::vector<std::string>>();
        for (const auto& [member, pruned] : c.at("proposed").items()) {
          r.proposed[member] = pruned.get<std::vector<std::size_t>>();
        }
        r.pruned = c.at("pruned").get<std::vector<std::size_t>>();
        plan.coupling.push_back(std::move(r));
      }
    }
    return plan;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed plan: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Format) throw;
    throw Error(ErrorCode::Format, std::string("malformed plan: ") + e.what());
  }
}

void save_plan(const PruningPlan& plan, const std::filesystem::path& path) {
  write_text(path, plan_to_json(plan));
}

PruningPlan load_plan(const std::filesystem::path& path) { return plan_from_json(read_text(path)); }

}  // namespace cf
