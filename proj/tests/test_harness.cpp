#include <gtest/gtest.h>

#include <atomic>
#include <random>

#include "crowdest/harness.hpp"

using namespace crowdest;
using namespace crowdest::harness;

namespace {

sim::SimConfig fast() {
  sim::SimConfig c;
  c.max_sim_time = 600.0;
  return c;
}

// Naive Spearman on distinct values: 1 - 6 sum d^2 / (n (n^2 - 1)).
double spearman_distinct(const std::vector<double>& a, const std::vector<double>& b) {
  const auto rank = [](const std::vector<double>& v, std::size_t i) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double x) { return x < v[i]; }));
  };
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += std::pow(rank(a, i) - rank(b, i), 2);
  const double n = static_cast<double>(a.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST(ParallelFor, RunsEveryJobOnceAndRethrows) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 5) throw std::runtime_error("x"); }), std::runtime_error);
}

TEST(Spearman, Examples) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // Ties share the average rank.
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 1, 2, 2}), 0.894427190999916, 1e-12);
  EXPECT_THROW(spearman({1}, {1}), std::invalid_argument);
}

TEST(Spearman, MatchesClosedFormOnDistinctValues) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng() % 20;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = u(rng), b[i] = u(rng);
    EXPECT_NEAR(spearman(a, b), spearman_distinct(a, b), 1e-12);
  }
}

TEST(Suite, BundledSuiteHasTenCasesInTwoVariants) {
  const auto cases = load_suite(std::filesystem::path(CROWDEST_DATA_DIR) / "suites" / "comparison.json");
  ASSERT_EQ(cases.size(), 20u);
  for (std::size_t i = 0; i < cases.size(); i += 2) {
    EXPECT_EQ(cases[i].variant, "front");
    EXPECT_EQ(cases[i + 1].variant, "distributed");
    EXPECT_EQ(cases[i].name, cases[i + 1].name);
    int a = 0, b = 0;
    for (const auto& n : cases[i].graph.rooms) a += n.spec.initial_population;
    for (const auto& n : cases[i + 1].graph.rooms) b += n.spec.initial_population;
    EXPECT_EQ(a, b);
    EXPECT_TRUE(graph::validate(cases[i].graph).empty());
  }
  EXPECT_EQ(cases[0].name, "five_rooms");
  EXPECT_EQ(cases[0].graph.rooms.size(), 5u);
}

TEST(Suite, DistributedTotalMustMatch) {
  auto j = nlohmann::json::parse(R"({"version":1,"cases":[{"name":"c","graph":{"version":1,
    "rooms":[{"id":"a","width":5,"length":5,"exit_size":1,"initial_population":4}],"edges":[]},"distributed":[3]}]})");
  EXPECT_THROW(parse_suite(j), std::runtime_error);
  j["cases"][0]["distributed"] = {4};
  EXPECT_EQ(parse_suite(j).size(), 2u);
}

TEST(ReplicateChain, Shape) {
  const RoomSpec rb{28, 6, 5.6, 3.3, 24.7, 99};
  const auto g = replicate_chain(rb, 3);
  ASSERT_EQ(g.rooms.size(), 3u);
  EXPECT_EQ(g.edges.size(), 2u);
  EXPECT_EQ(g.rooms[0].spec.initial_population, 99);
  EXPECT_EQ(g.rooms[1].spec.initial_population, 0);
  EXPECT_EQ(g.rooms[2].spec.width, 28.0);
  EXPECT_EQ(g.rooms[2].spec.input_flow, 0.0);
  EXPECT_TRUE(g.is_exit("r03"));
  EXPECT_EQ(replicate_chain(rb, 29).rooms.size(), 29u);
  EXPECT_THROW(replicate_chain(rb, 4), std::invalid_argument);
  EXPECT_THROW(replicate_chain(rb, 1), std::invalid_argument);
}

TEST(Compare, SingleRoomErrorIsTheSurrogatesOwn) {
  graph::EnvironmentGraph g;
  graph::RoomNode n;
  n.id = "solo";
  n.spec = RoomSpec{6, 8, 1.2, 0, 0, 20};
  g.rooms = {n};
  CompareConfig cfg;
  cfg.sim = fast();
  const auto rep = compare_environments({{"solo", "front", g}}, est::ConstantSurrogate{30.0}, cfg);
  const double st = sim::run_room(n.spec, fast()).tt;
  ASSERT_EQ(rep.cases.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.cases[0].st, st);
  EXPECT_DOUBLE_EQ(rep.cases[0].err, (30.0 - st) / st);
  EXPECT_DOUBLE_EQ(rep.mean_abs_err, std::abs(30.0 - st) / st);
}

TEST(Compare, FiveRoomFixtureProducesARowAndIgnoresThreadCount) {
  const auto cases = load_suite(std::filesystem::path(CROWDEST_DATA_DIR) / "suites" / "comparison.json");
  const std::vector<ComparisonCase> five(cases.begin(), cases.begin() + 2);
  CompareConfig one, four;
  one.sim = four.sim = fast();
  four.threads = 4;
  const auto a = compare_environments(five, est::ConstantSurrogate{20.0}, one);
  const auto b = compare_environments(five, est::ConstantSurrogate{20.0}, four);
  ASSERT_EQ(a.cases.size(), 2u);
  EXPECT_EQ(a.cases[0].rooms, 5u);
  EXPECT_GT(a.cases[0].st, 0.0);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_NE(text_table(a).find("five_rooms"), std::string::npos);
}

TEST(Aggregate, SkipsCensoredCases) {
  ComparisonReport r;
  r.cases = {{"a", "front", 1, 1, 10, 11, 0.1, false, 0, 0}, {"b", "front", 1, 1, 10, 13, 0.3, false, 0, 0},
             {"c", "front", 1, 1, 10, 50, 4.0, true, 0, 0}};
  aggregate(r);
  EXPECT_EQ(r.scored, 2u);
  EXPECT_NEAR(r.mean_abs_err, 0.2, 1e-12);
  EXPECT_NEAR(r.std_abs_err, std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(mean_abs_err(r, "front"), 0.2, 1e-12);
}
