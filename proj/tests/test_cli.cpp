#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "crowdest/harness.hpp"
#include "crowdest/training.hpp"

using namespace crowdest;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the binary with the default-model variable cleared; stdout only.
Result cli(const std::string& args) {
  const std::string cmd = std::string("env -u CROWDEST_MODEL ") + CROWDEST_CLI + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path work() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / ("crowdest_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return d;
}

fs::path write(const std::string& name, const std::string& text) {
  const auto p = work() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kOneRoom = R"({"version":1,"rooms":[{"id":"a","width":6,"length":8,"exit_size":1.2,"initial_population":12}],"edges":[]})";

const char* kCycle = R"({"version":1,"rooms":[
  {"id":"a","width":6,"length":8,"exit_size":1.2,"initial_population":5},
  {"id":"b","width":6,"length":8,"exit_size":1.2,"initial_population":5}],
  "edges":[{"from":"a","to":"b","fraction":1.0},{"from":"b","to":"a","fraction":1.0}]})";

mlp::MlpModel small_model() {
  auto m = mlp::make_model({6, 8, 1}, mlp::Activation::relu, true);
  mlp::init_weights(m, 9);
  mlp::set_norm(m, est::feature_ranges(kDeskBounds));
  m.output_scale = 30.0;
  return m;
}

fs::path model_file() {
  const auto p = work() / "model.json";
  if (!fs::exists(p)) mlp::save(small_model(), p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("estimate").code, 2);
  EXPECT_EQ(cli("estimate --graph " + write("one.json", kOneRoom).string()).code, 2);
  EXPECT_EQ(cli("validate --only stairs").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, EstimatePrintsTheLibraryResult) {
  const auto g = write("one.json", kOneRoom);
  const auto r = cli("--json estimate --graph " + g.string() + " --model " + model_file().string());
  ASSERT_EQ(r.code, 0);
  auto j = json::parse(r.out);
  EXPECT_EQ(j["schema"], "crowdest.cli/1");
  EXPECT_EQ(j["command"], "estimate");
  EXPECT_TRUE(j["ok"].get<bool>());

  const auto m = small_model();
  est::EstimatorConfig cfg;
  cfg.bounds = est::model_bounds(m);
  cfg.fet_variant = est::FetVariant::diamond;
  const auto e = est::estimate_environment(graph::load(g), est::MlpSurrogate{&m}, cfg);
  j["result"].erase("wall_clock_ms");
  EXPECT_EQ(j["result"].dump(), est::to_json(e, false).dump());

  const auto text = cli("estimate --graph " + g.string() + " --model " + model_file().string());
  EXPECT_EQ(text.code, 0);
  EXPECT_EQ(text.out.rfind("tt_e ", 0), 0u);
}

TEST(Cli, ModelFromEnvironment) {
  const auto g = write("one.json", kOneRoom);
  const std::string cmd = "CROWDEST_MODEL=" + model_file().string() + " " + CROWDEST_CLI + " estimate --graph " + g.string() +
                          " > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(Cli, CyclicGraphIsADomainError) {
  const auto r = cli("--json estimate --graph " + write("cycle.json", kCycle).string() + " --model " + model_file().string());
  EXPECT_EQ(r.code, 1);
  const auto j = json::parse(r.out);
  EXPECT_FALSE(j["ok"].get<bool>());
  bool cycle = false;
  for (const auto& v : j["detail"]["violations"]) cycle = cycle || v["kind"] == "cycle";
  EXPECT_TRUE(cycle);
  EXPECT_EQ(cli("estimate --graph " + write("broken.json", "{\"version\":1,").string() + " --model " + model_file().string()).code, 1);
}

TEST(Cli, SimulateRoomMatchesTheSimulator) {
  const auto r = cli("--json simulate --room 6,8,1.2,2,5,12");
  ASSERT_EQ(r.code, 0);
  sim::SimConfig cfg;
  cfg.max_sim_time = 3000.0;
  const auto m = sim::run_room(RoomSpec{6, 8, 1.2, 2, 5, 12}, cfg);
  EXPECT_EQ(json::parse(r.out)["result"]["tt"].get<double>(), m.tt);
  EXPECT_EQ(cli("simulate --room 1,2,3").code, 2);
}

TEST(Cli, SimulateGraph) {
  const auto r = cli("--json simulate --graph " + write("one.json", kOneRoom).string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["result"]["exited"], 12);
}

TEST(Cli, ValidateOne) {
  const auto r = cli("--json validate --only walk");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(json::parse(r.out)["result"]["checks"][0]["pass"].get<bool>());
}

TEST(Cli, GenerateTrainScore) {
  const auto csv = work() / "tiny.csv";
  const auto model = work() / "tiny_model.json";
  ASSERT_EQ(cli("--seed 5 --threads 2 gen-dataset --count 12 --desk-scale --out " + csv.string()).code, 0);
  GenerateOptions opt;
  opt.count = 12;
  opt.seed = 5;
  opt.bounds = kDeskBounds;
  const auto rows = read_csv(csv);
  const auto expect = generate_records(opt);
  ASSERT_EQ(rows.size(), 12u);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(to_csv(rows[i]), to_csv(expect[i]));

  const auto t = cli("--json train --desk --hidden 8 --epochs 3 --holdout 2 --data " + csv.string() + " --out " + model.string());
  ASSERT_EQ(t.code, 0);
  EXPECT_TRUE(fs::exists(model));
  EXPECT_EQ(json::parse(t.out)["result"]["epochs_run"], 3);

  const auto s = cli("--json score --last 2 --data " + csv.string() + " --model " + model.string());
  ASSERT_EQ(s.code, 0);
  const auto m = mlp::load(model);
  std::vector<DatasetRecord> last(rows.end() - 2, rows.end());
  const auto want = mlp::score_below_threshold(m, training::samples(last, training::Target::tt));
  EXPECT_EQ(json::parse(s.out)["result"]["scored"], want.scored);
  EXPECT_EQ(json::parse(s.out)["result"]["fraction_below"].get<double>(), want.fraction);
}

TEST(Cli, ExperimentCompareOnASmallSuite) {
  const auto suite = write("suite.json", std::string(R"({"version":1,"cases":[{"name":"solo","graph":)") + kOneRoom + "}]}");
  const auto r = cli("--json experiment compare --suite " + suite.string() + " --model " + model_file().string());
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out)["result"];
  ASSERT_EQ(j["cases"].size(), 1u);
  const double st = j["cases"][0]["simulated_tt"];
  const double te = j["cases"][0]["estimated_tt"];
  EXPECT_DOUBLE_EQ(j["cases"][0]["err"].get<double>(), (te - st) / st);
}
