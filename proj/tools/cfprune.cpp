// cfprune: similarity analysis, central-filter pruning and evaluation from
// the command line. Exit codes: 0 ok, 1 failure, 2 configuration error,
// 3 data error.

#include <spdlog/spdlog.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "cf/complexity.hpp"
#include "cf/datasets.hpp"
#include "cf/dependencies.hpp"
#include "cf/error.hpp"
#include "cf/eval.hpp"
#include "cf/forward.hpp"
#include "cf/model_io.hpp"
#include "cf/plan.hpp"
#include "cf/pruning.hpp"
#include "cf/similarity.hpp"
#include "cf/zoo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr const char* kConfigFormat = "cfconfig/1";
constexpr const char* kSynthetic = "synthetic";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string model;
  std::string data;
  std::size_t samples = 128;
  std::optional<double> rate;
  std::string schedule;
  std::string strategy = "cf";
  std::string theta_mode = "search";
  double theta = 0.9;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string edges = "positive";
  std::string closeness = "distance";
  std::size_t batch_size = 32;
  std::optional<cf::Normalization> normalization;
};

// Values given on the command line; each overrides the config file.
struct Flags {
  RunConfig values;
  CLI::App* app = nullptr;
  std::string config;

  bool given(const std::string& name) const {
    const CLI::Option* o = app->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  }
};

void apply_config_file(RunConfig& c, const std::string& path) {
  json j;
  try {
    j = json::parse(cf::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed config '" + path + "': " + e.what());
  }
  if (j.value("format", std::string(kConfigFormat)) != kConfigFormat) {
    throw ConfigError("config '" + path + "' is not " + std::string(kConfigFormat));
  }
  try {
    c.model = j.value("model", c.model);
    c.data = j.value("data", c.data);
    c.samples = j.value("samples", c.samples);
    if (j.contains("rate")) c.rate = j.at("rate").get<double>();
    c.schedule = j.value("schedule", c.schedule);
    c.strategy = j.value("strategy", c.strategy);
    c.theta_mode = j.value("theta_mode", c.theta_mode);
    c.theta = j.value("theta", c.theta);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.value("out", c.out);
    c.edges = j.value("edges", c.edges);
    c.closeness = j.value("closeness", c.closeness);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("normalization")) {
      cf::Normalization n;
      const auto& jn = j.at("normalization");
      const auto mean = jn.at("mean").get<std::vector<float>>();
      const auto stddev = jn.at("std").get<std::vector<float>>();
      if (mean.size() != 3 || stddev.size() != 3) throw ConfigError("normalization needs 3 channels");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(stddev[i] > 0.0f)) throw ConfigError("normalization std must be positive");
        n.mean[i] = mean[i];
        n.stddev[i] = stddev[i];
      }
      c.normalization = n;
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad value in config '" + path + "': " + e.what());
  }
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) apply_config_file(c, f.config);
  const RunConfig& v = f.values;
  if (f.given("--model")) c.model = v.model;
  if (f.given("--data")) c.data = v.data;
  if (f.given("--samples")) c.samples = v.samples;
  if (f.given("--rate")) c.rate = v.rate;
  if (f.given("--schedule")) c.schedule = v.schedule;
  if (f.given("--strategy")) c.strategy = v.strategy;
  if (f.given("--theta-mode")) c.theta_mode = v.theta_mode;
  if (f.given("--theta")) c.theta = v.theta;
  if (f.given("--seed")) c.seed = v.seed;
  if (f.given("--out")) c.out = v.out;
  if (f.given("--edges")) c.edges = v.edges;
  if (f.given("--closeness")) c.closeness = v.closeness;
  if (f.given("--batch-size")) c.batch_size = v.batch_size;
  if (c.rate && !(*c.rate >= 0.0 && *c.rate < 1.0)) {
    throw ConfigError("--rate must lie in [0, 1)");
  }
  if (c.samples < 2) throw ConfigError("--samples must be at least 2");
  if (c.batch_size == 0) throw ConfigError("--batch-size must be positive");
  return c;
}

std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw ConfigError("--seed is required");
  return *c.seed;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

cf::ModelGraph read_model(const std::string& path) {
  require(path, "--model");
  if (!fs::exists(path)) throw cf::Error(cf::ErrorCode::Io, "model file '" + path + "' not found");
  return cf::load_model(path);
}

cf::Tensor read_calibration(const RunConfig& c, const cf::ModelGraph& model, std::uint64_t seed) {
  require(c.data, "--data");
  if (c.data == kSynthetic) {
    spdlog::warn("calibrating on synthetic uniform images, not real data");
    return cf::random_images(seed, c.samples, model.input_shape());
  }
  return cf::load_calibration(c.data, c.samples, seed, c.normalization);
}

cf::SelectionOptions selection_of(const RunConfig& c) {
  cf::SelectionOptions s;
  s.edges = cf::parse_edge_policy(c.edges);
  s.formula = cf::parse_closeness_formula(c.closeness);
  return s;
}

// Outputs land in a sibling temporary directory that replaces `out` only
// once everything is written.
class StagedOutput {
 public:
  explicit StagedOutput(const std::string& out) : final_(out) {
    require(out, "--out");
    staging_ = final_;
    staging_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    std::error_code ec;
    if (!committed_) fs::remove_all(staging_, ec);
  }

  fs::path path(const std::string& name) const { return staging_ / name; }

  void commit() {
    fs::path old = final_;
    old += ".old-" + std::to_string(::getpid());
    const bool replace = fs::exists(final_);
    if (replace) fs::rename(final_, old);
    fs::rename(staging_, final_);
    if (replace) fs::remove_all(old);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

std::string tap_file_name(const std::string& id) {
  std::string s = id;
  for (char& ch : s) {
    if (ch == '/' || ch == '\\') ch = '_';
  }
  return s;
}

int cmd_analyze(const Flags& f, const std::string& stability, const std::string& stability_layer,
                bool csv) {
  const RunConfig c = resolve(f);
  const std::uint64_t seed = require_seed(c);
  const cf::ModelGraph model = read_model(c.model);
  const cf::Tensor calib = read_calibration(c, model, seed);

  std::vector<std::string> layers = model.conv_layers();
  std::vector<std::string> taps;
  for (const auto& l : layers) taps.push_back(cf::similarity_tap(model, l));
  std::vector<std::string> unique = taps;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  spdlog::info("estimating similarity at {} taps over {} images", unique.size(), calib.dim(0));
  const auto matrices = cf::average_similarity(model, calib, unique, c.batch_size);

  StagedOutput out(c.out);
  fs::create_directories(out.path("similarity"));
  json index = json::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cf::SimilarityMatrix s = matrices.at(taps[i]);
    s.layer = layers[i];
    const std::string name = tap_file_name(layers[i]);
    cf::write_text(out.path("similarity") / (name + ".json"), cf::similarity_to_json(s));
    if (csv) cf::write_text(out.path("similarity") / (name + ".csv"), cf::similarity_to_csv(s));
    const auto hist = cf::similarity_histogram(s, 0.1);
    index.push_back({{"layer", layers[i]},
                     {"tap", taps[i]},
                     {"n", s.n},
                     {"dead_channels", s.dead_channels.size()},
                     {"max_off_diagonal", s.max_off_diagonal()},
                     {"histogram_0.1", hist}});
  }
  cf::write_text(out.path("analysis.json"),
                 json({{"samples", calib.dim(0)}, {"seed", seed}, {"layers", index}}).dump(2) + "\n");

  if (!stability.empty()) {
    std::vector<std::size_t> counts;
    std::stringstream ss(stability);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        counts.push_back(static_cast<std::size_t>(std::stoul(item)));
      } catch (const std::exception&) {
        throw ConfigError("--stability expects comma-separated counts, got '" + stability + "'");
      }
    }
    const std::string layer = stability_layer.empty() ? layers.at(0) : stability_layer;
    const std::string tap = cf::similarity_tap(model, layer);
    const auto report = cf::stability_report(model, calib, tap, counts, c.batch_size);
    cf::write_text(out.path("stability.json"), cf::stability_to_json(report));
  }
  out.commit();
  std::cout << "wrote " << layers.size() << " similarity matrices to " << c.out << "\n";
  return 0;
}

cf::RateSchedule schedule_of(const RunConfig& c) {
  if (!c.schedule.empty()) {
    cf::RateSchedule s = cf::RateSchedule::from_json(cf::read_text(c.schedule));
    if (c.rate) s.global = c.rate;
    return s;
  }
  if (!c.rate) throw ConfigError("either --rate or --schedule is required");
  return cf::RateSchedule::uniform(*c.rate);
}

cf::PruneOptions prune_options(const RunConfig& c, std::uint64_t seed) {
  cf::PruneOptions o;
  o.strategy = cf::parse_strategy(c.strategy);
  o.selection = selection_of(c);
  o.theta_mode = cf::parse_theta_mode(c.theta_mode);
  o.theta = c.theta;
  o.seed = seed;
  o.batch_size = c.batch_size;
  o.data_label = c.data;
  return o;
}

int cmd_prune(const Flags& f) {
  const RunConfig c = resolve(f);
  const std::uint64_t seed = require_seed(c);
  const cf::RateSchedule schedule = schedule_of(c);
  const cf::PruneOptions options = prune_options(c, seed);
  const cf::ModelGraph model = read_model(c.model);
  const cf::Tensor calib = read_calibration(c, model, seed);

  spdlog::info("pruning '{}' with strategy {}", c.model, c.strategy);
  const cf::PruneResult result = cf::prune_model(model, calib, schedule, options);
  StagedOutput out(c.out);
  cf::save_model(result.model, out.path("model.json"));
  cf::save_plan(result.plan, out.path("plan.json"));
  cf::write_text(out.path("report.json"), cf::report_to_json(result.report));
  cf::write_text(out.path("report.txt"), cf::report_to_table(result.report));
  out.commit();
  std::cout << cf::report_to_table(result.report);
  return 0;
}

int cmd_eval(const Flags& f, const std::string& pruned_path, const std::string& plan_path) {
  const RunConfig c = resolve(f);
  const std::uint64_t seed = require_seed(c);
  const cf::ModelGraph model = read_model(c.model);
  const cf::Tensor probes = read_calibration(c, model, seed);

  cf::PrunedModelReport report;
  if (!pruned_path.empty()) {
    const cf::ModelGraph pruned = read_model(pruned_path);
    fs::path plan_file = plan_path;
    if (plan_file.empty()) plan_file = fs::path(pruned_path).parent_path() / "plan.json";
    cf::PruningPlan plan;
    if (fs::exists(plan_file)) {
      plan = cf::load_plan(plan_file);
    } else {
      // Without a plan every conv layer must line up one-to-one.
      for (const auto& layer : model.conv_layers()) {
        const std::size_t n = model.channels(model.index_of(layer));
        const auto other = pruned.find(layer);
        if (!other || pruned.channels(*other) != n) {
          throw ConfigError("models differ at '" + layer + "'; pass --plan");
        }
        plan.layers.push_back(cf::identity_layer_plan(layer, n));
      }
    }
    report = cf::evaluate(model, pruned, plan, probes, c.batch_size);
  } else {
    // Ablation rerun: prune with the requested strategy, then evaluate.
    const cf::RateSchedule schedule = schedule_of(c);
    report = cf::prune_model(model, probes, schedule, prune_options(c, seed)).report;
  }
  const std::string text = cf::report_to_json(report);
  if (!c.out.empty()) {
    StagedOutput out(c.out);
    cf::write_text(out.path("report.json"), text);
    cf::write_text(out.path("report.txt"), cf::report_to_table(report));
    out.commit();
  }
  std::cout << text;
  return 0;
}

cf::ModelGraph build_arch(const std::string& arch, std::uint64_t seed) {
  if (arch == "vgg16") return cf::vgg16_cifar(seed);
  if (arch == "resnet56") return cf::resnet_cifar(56, seed);
  if (arch == "resnet20") return cf::resnet_cifar(20, seed);
  if (arch == "two-conv") return cf::two_conv_net(seed, {3, 32, 32}, 16, 32);
  if (arch == "duplicate") return cf::duplicate_filter_net(seed, {}).model;
  throw ConfigError("unknown architecture '" + arch + "'");
}

int cmd_flops(const Flags& f, const std::string& arch, const std::string& plan_path) {
  const RunConfig c = resolve(f);
  std::optional<cf::ModelGraph> model;
  if (!arch.empty()) {
    model.emplace(build_arch(arch, c.seed.value_or(0)));
  } else {
    model.emplace(read_model(c.model));
  }
  const cf::Complexity base = cf::count_flops_params(*model);
  json j = {{"flops", base.flops}, {"params", base.params}};
  if (!plan_path.empty()) {
    const cf::Complexity pred = cf::predict_complexity(*model, cf::load_plan(plan_path));
    j["pruned"] = {{"flops", pred.flops},
                   {"params", pred.params},
                   {"flops_reduction", 1.0 - static_cast<double>(pred.flops) / base.flops},
                   {"params_reduction", 1.0 - static_cast<double>(pred.params) / base.params}};
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_zoo(const Flags& f, const std::string& arch) {
  const RunConfig c = resolve(f);
  const std::uint64_t seed = require_seed(c);
  const cf::ModelGraph model = build_arch(arch, seed);
  StagedOutput out(c.out);
  cf::save_model(model, out.path("model.json"));
  out.commit();
  std::cout << "wrote " << arch << " to " << c.out << "\n";
  return 0;
}

// Duplicate-filter toy net: pruning exactly the copies must leave the
// logits unchanged.
int cmd_demo(const Flags& f) {
  const RunConfig c = resolve(f);
  const std::uint64_t seed = require_seed(c);
  cf::DuplicateNetSpec spec;
  spec.groups = {2, 2, 1, 1, 1, 1};
  spec.batchnorm = true;
  spec.shuffle = true;
  const cf::DuplicateNet net = cf::duplicate_filter_net(seed, spec);
  const cf::Tensor calib = cf::random_images(cf::derive_seed(seed, 1), c.samples, spec.input_shape);
  const cf::Tensor probes = cf::random_images(cf::derive_seed(seed, 2), 64, spec.input_shape);

  cf::RateSchedule schedule;
  schedule.global = 0.0;
  schedule.keep[net.layer] = net.groups.size();
  cf::PruneOptions options = prune_options(c, seed);
  options.data_label = kSynthetic;
  const cf::PruneResult result = cf::prune_model(net.model, calib, schedule, options, &probes);

  if (!c.out.empty()) {
    StagedOutput out(c.out);
    cf::save_model(net.model, out.path("original.json"));
    fs::create_directories(out.path("pruned"));
    cf::save_model(result.model, out.path("pruned") / "model.json");
    cf::save_plan(result.plan, out.path("pruned") / "plan.json");
    cf::write_text(out.path("report.json"), cf::report_to_json(result.report));
    out.commit();
  }
  std::cout << cf::report_to_table(result.report);
  const double err = result.report.error.logits;
  const bool exact = err <= 1e-4;
  std::cout << "duplicate-filter exactness: logit error " << err << (exact ? " <= " : " > ")
            << "1e-4 -> " << (exact ? "PASS" : "FAIL") << "\n";
  return exact || options.strategy != cf::Strategy::cf ? 0 : kExitFailure;
}

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("CF_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
  spdlog::set_pattern("[%l] %v");
}

int exit_code_for(cf::ErrorCode code) {
  switch (code) {
    case cf::ErrorCode::InvalidArgument:
      return kExitConfig;
    case cf::ErrorCode::Io:
    case cf::ErrorCode::Format:
    case cf::ErrorCode::ChecksumMismatch:
    case cf::ErrorCode::ShapeInconsistency:
    case cf::ErrorCode::ShapeMismatch:
    case cf::ErrorCode::CyclicGraph:
    case cf::ErrorCode::UnknownNode:
      return kExitData;
    default:
      return kExitFailure;
  }
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run configuration (flags override it)");
  sub->add_option("--model", f.values.model, "model manifest (cfmodel/1)");
  sub->add_option("--seed", f.values.seed, "seed for every random choice");
  sub->add_option("--out", f.values.out, "output directory");
  sub->add_option("--batch-size", f.values.batch_size, "images per forward pass");
}

void add_data(CLI::App* sub, Flags& f) {
  sub->add_option("--data", f.values.data,
                  "CIFAR-10 binary directory, probes manifest, or 'synthetic'");
  sub->add_option("--samples", f.values.samples, "calibration images (default 128)");
}

void add_selection(CLI::App* sub, Flags& f) {
  sub->add_option("--rate", f.values.rate, "global compression rate in [0, 1)");
  sub->add_option("--schedule", f.values.schedule, "per-layer rate schedule (JSON)");
  sub->add_option("--strategy", f.values.strategy, "cf | cf_no_adjust | random | reverse");
  sub->add_option("--theta-mode", f.values.theta_mode, "search | fixed");
  sub->add_option("--theta", f.values.theta, "graph threshold for --theta-mode fixed");
  sub->add_option("--edges", f.values.edges, "positive | absolute");
  sub->add_option("--closeness", f.values.closeness, "distance | literal");
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Central filter pruning toolkit"};
  app.require_subcommand(1);

  Flags analyze_f, prune_f, eval_f, flops_f, demo_f, zoo_f;
  std::string stability, stability_layer, pruned_path, plan_path, flops_plan, arch, zoo_arch;
  bool csv = false;

  auto* analyze = app.add_subcommand("analyze", "similarity matrices and stability report");
  analyze_f.app = analyze;
  add_common(analyze, analyze_f);
  add_data(analyze, analyze_f);
  analyze->add_option("--stability", stability, "ascending sample counts, e.g. 16,32,64,128");
  analyze->add_option("--stability-layer", stability_layer, "conv layer for --stability");
  analyze->add_flag("--csv", csv, "also write CSV tables");

  auto* prune = app.add_subcommand("prune", "prune a model");
  prune_f.app = prune;
  add_common(prune, prune_f);
  add_data(prune, prune_f);
  add_selection(prune, prune_f);

  auto* eval = app.add_subcommand("eval", "compare a pruned model with its original");
  eval_f.app = eval;
  add_common(eval, eval_f);
  add_data(eval, eval_f);
  add_selection(eval, eval_f);
  eval->add_option("--pruned", pruned_path, "pruned model manifest");
  eval->add_option("--plan", plan_path, "plan.json (default: next to --pruned)");

  auto* flops = app.add_subcommand("flops", "FLOPs and parameter counts");
  flops_f.app = flops;
  add_common(flops, flops_f);
  flops->add_option("--arch", arch, "built-in template instead of --model");
  flops->add_option("--plan", flops_plan, "also predict the counts after this plan");

  auto* demo = app.add_subcommand("demo", "duplicate-filter exactness check");
  demo_f.app = demo;
  add_common(demo, demo_f);
  add_data(demo, demo_f);
  add_selection(demo, demo_f);

  auto* zoo = app.add_subcommand("zoo", "write a randomly initialised template model");
  zoo_f.app = zoo;
  add_common(zoo, zoo_f);
  zoo->add_option("--arch", zoo_arch, "vgg16 | resnet56 | resnet20 | two-conv | duplicate")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*analyze) return cmd_analyze(analyze_f, stability, stability_layer, csv);
    if (*prune) return cmd_prune(prune_f);
    if (*eval) return cmd_eval(eval_f, pruned_path, plan_path);
    if (*flops) return cmd_flops(flops_f, arch, flops_plan);
    if (*demo) return cmd_demo(demo_f);
    if (*zoo) return cmd_zoo(zoo_f, zoo_arch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
