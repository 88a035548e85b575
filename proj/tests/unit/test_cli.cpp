#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "cf_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && '" CF_CLI_PATH "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json read_json(const fs::path& p) { return json::parse(slurp(workdir() / p)); }

void make_model(const std::string& arch, const std::string& dir) {
  REQUIRE(cli("zoo --arch " + arch + " --seed 1 --out " + dir).code == 0);
}

}  // namespace

TEST_CASE("a missing model is a data error naming the path") {
  const Run r = cli("prune --model nowhere/model.json --data synthetic --seed 1 --rate 0.5 --out p");
  CHECK(r.code == 3);
  CHECK(r.err.find("nowhere/model.json") != std::string::npos);
  CHECK(!fs::exists(workdir() / "p"));
}

TEST_CASE("configuration mistakes exit with code 2") {
  make_model("two-conv", "m_cfg");
  CHECK(cli("prune --model m_cfg/model.json --data synthetic --seed 1 --rate 1.2 --out p").code == 2);
  CHECK(cli("prune --model m_cfg/model.json --data synthetic --rate 0.5 --out p").code == 2);
  CHECK(cli("prune --model m_cfg/model.json --data synthetic --seed 1 --out p").code == 2);
  CHECK(cli("prune --model m_cfg/model.json --data synthetic --seed 1 --rate 0.5 --strategy best --out p").code == 2);
  CHECK(cli("prune --bogus").code == 2);
  std::ofstream(workdir() / "bad.json") << R"({"format": "cfconfig/1", "rate": "half"})";
  CHECK(cli("prune --config bad.json --model m_cfg/model.json --data synthetic --seed 1 --out p").code == 2);
}

TEST_CASE("a config file supplies defaults that flags override") {
  make_model("two-conv", "m_conf");
  std::ofstream(workdir() / "run.json")
      << R"({"format": "cfconfig/1", "model": "m_conf/model.json", "data": "synthetic", "seed": 5, "rate": 0.25, "samples": 16})";
  REQUIRE(cli("prune --config run.json --out c1").code == 0);
  CHECK(read_json("c1/plan.json").at("layers").at(0).at("rate").get<double>() == 0.25);
  REQUIRE(cli("prune --config run.json --rate 0.5 --out c2").code == 0);
  CHECK(read_json("c2/plan.json").at("layers").at(0).at("rate").get<double>() == 0.5);
}

TEST_CASE("analyze is deterministic and reports every stability count") {
  make_model("two-conv", "m_an");
  const std::string args = "analyze --model m_an/model.json --data synthetic --samples 64 --seed 9 --stability 8,16,32,64 --csv --out ";
  REQUIRE(cli(args + "a1").code == 0);
  REQUIRE(cli(args + "a2").code == 0);
  for (const char* f : {"analysis.json", "stability.json", "similarity/conv1.json", "similarity/conv1.csv"}) {
    CHECK(slurp(workdir() / "a1" / f) == slurp(workdir() / "a2" / f));
  }
  const json s = read_json("a1/stability.json");
  CHECK(s.at("counts").size() == 4);
  CHECK(s.at("max_deviation").size() == 4);
  for (const auto& p : s.at("pairs")) CHECK(p.at("similarity").size() == 4);
}

TEST_CASE("rate zero writes the original weights") {
  make_model("two-conv", "m_zero");
  REQUIRE(cli("prune --model m_zero/model.json --data synthetic --samples 8 --seed 2 --rate 0 --out z").code == 0);
  CHECK(slurp(workdir() / "z/weights.bin") == slurp(workdir() / "m_zero/weights.bin"));
}

TEST_CASE("the demo is exact on duplicated filters") {
  const Run r = cli("demo --seed 4 --out demo");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(read_json("demo/report.json").at("proxy").at("logit_error").get<double>() <= 1e-4);
}

TEST_CASE("evaluating a model against itself gives zero error") {
  make_model("two-conv", "m_eval");
  REQUIRE(cli("prune --model m_eval/model.json --data synthetic --samples 8 --seed 2 --rate 0 --out ev_plan").code == 0);
  REQUIRE(cli("eval --model m_eval/model.json --pruned m_eval/model.json --plan ev_plan/plan.json --data synthetic --samples 8 --seed 3 --out ev").code == 0);
  const json r = read_json("ev/report.json");
  CHECK(r.at("proxy").at("logit_error").get<double>() == 0.0);
  for (const auto& [tap, e] : r.at("proxy").at("tap_errors").items()) CHECK(e.get<double>() == 0.0);
}

TEST_CASE("random pruning is reproducible from its seed") {
  make_model("two-conv", "m_rand");
  const std::string args = "prune --model m_rand/model.json --data synthetic --samples 8 --seed 7 --rate 0.5 --strategy random --out ";
  REQUIRE(cli(args + "r1").code == 0);
  REQUIRE(cli(args + "r2").code == 0);
  CHECK(slurp(workdir() / "r1/report.json") == slurp(workdir() / "r2/report.json"));
  CHECK(slurp(workdir() / "r1/plan.json") == slurp(workdir() / "r2/plan.json"));
  CHECK(slurp(workdir() / "r1/weights.bin") == slurp(workdir() / "r2/weights.bin"));
}

TEST_CASE("folding kernels beats dropping them") {
  make_model("duplicate", "m_dup");
  std::ofstream(workdir() / "dup_rates.json") << R"({"default": 0.0, "rates": {"conv1": 0.25}})";
  const std::string args = "prune --model m_dup/model.json --data synthetic --samples 16 --seed 1 --schedule dup_rates.json ";
  REQUIRE(cli(args + "--out adj").code == 0);
  REQUIRE(cli(args + "--strategy cf_no_adjust --out noadj").code == 0);
  const double a = read_json("adj/report.json").at("proxy").at("logit_error").get<double>();
  const double b = read_json("noadj/report.json").at("proxy").at("logit_error").get<double>();
  CHECK(a <= 1e-4);
  CHECK(a < b);
}

TEST_CASE("flops reports the template baselines and plan predictions") {
  const Run r = cli("flops --arch vgg16");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j.at("params").get<std::uint64_t>() == 14987722);
  make_model("two-conv", "m_fl");
  REQUIRE(cli("prune --model m_fl/model.json --data synthetic --samples 8 --seed 2 --rate 0.5 --out fl").code == 0);
  const Run p = cli("flops --model m_fl/model.json --plan fl/plan.json");
  REQUIRE(p.code == 0);
  CHECK(json::parse(p.out).at("pruned").at("flops") == read_json("fl/report.json").at("flops").at("after"));
}
