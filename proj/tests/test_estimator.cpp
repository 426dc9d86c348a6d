#include <gtest/gtest.h>

#include <random>

#include "crowdest/estimator.hpp"
#include "support/heuristic_oracle.hpp"

using namespace crowdest;
using namespace crowdest::est;
using crowdest::graph::EnvironmentGraph;
using crowdest::graph::RoomNode;

namespace {

RoomNode node(std::string id, double w, double l, double es, int ip) {
  RoomNode n;
  n.id = std::move(id);
  n.spec = RoomSpec{w, l, es, 0, 0, ip};
  return n;
}

EstimatorConfig raw() {
  EstimatorConfig c;
  c.clamp_inputs = false;
  return c;
}

// Smooth stub that depends on every input, with tt well above fet.
double stub(double w, double l, double es, double f, double F, double ip) {
  return 9.0 + 0.3 * w + 0.7 * l + (ip + f * F) / (1.3 * es) + 0.01 * F;
}

struct StubSurrogate {
  double operator()(const Features& x) const { return stub(x[0], x[1], x[2], x[3], x[4], x[5]); }
};

}  // namespace

TEST(Fet, Examples) {
  EXPECT_EQ(fet(7.0, 0, 1.2), 0.0);
  EXPECT_DOUBLE_EQ(fet(12.0, 5, 1.2), 5.0);
  EXPECT_NEAR(fet(2.0, 1, 1.2), 0.8333333333, 1e-9);
}

TEST(Fet, DiamondVariant) {
  EXPECT_DOUBLE_EQ(fet_diamond(12.0, 0, 1.2), 10.0);
  // Four agents: diamond radius 0.6 * 2 / 2 = 0.6 m.
  EXPECT_DOUBLE_EQ(fet_diamond(12.0, 4, 1.2), (6.0 - 0.6) / 1.2);
  // Never negative for crowded short rooms.
  EXPECT_EQ(fet_diamond(2.0, 99, 1.2), 0.0);
}

TEST(Fet, DiamondVariantKeysOnInitialPopulation) {
  EstimatorConfig cfg;
  cfg.fet_variant = FetVariant::diamond;
  // A room filled only by inflow walks its full length.
  EXPECT_DOUBLE_EQ(first_exit_time(cfg, 12.0, 0, 40), 10.0);
  EXPECT_DOUBLE_EQ(first_exit_time(cfg, 12.0, 4, 40), (6.0 - 0.6) / 1.2);
  EXPECT_DOUBLE_EQ(first_exit_time(EstimatorConfig{}, 12.0, 0, 40), 5.0);
}

TEST(SourceRoom, Empty) {
  const auto r = estimate_source_room(node("a", 5, 5, 1, 0), ConstantSurrogate{3.0});
  EXPECT_EQ(r.fet, 0.0);
  EXPECT_EQ(r.gfet, 0.0);
  EXPECT_EQ(r.pop, 0.0);
  EXPECT_EQ(r.git, 0.0);
}

TEST(SourceRoom, HalfLengthFirstExit) {
  const auto r = estimate_source_room(node("a", 12, 12, 2, 50), ConstantSurrogate{20.0});
  EXPECT_DOUBLE_EQ(r.gfet, 5.0);
  EXPECT_EQ(r.tt, 20.0);
  EXPECT_EQ(r.f, 0.0);
  EXPECT_EQ(r.F, 0.0);
  EXPECT_EQ(r.pop, 50.0);
}

TEST(SourceRoom, ZeroFlowQueryIsInRangeAndSpawnsNobody) {
  const auto r = estimate_source_room(node("a", 12, 12, 2, 50), ConstantSurrogate{1.0});
  EXPECT_EQ(r.query[3], 1.0);
  EXPECT_EQ(r.query[4], 0.2);
  EXPECT_LT(r.query[3] * r.query[4], 1.0);
  EXPECT_TRUE(r.clamped.empty());
}

TEST(DependentRoom, TwoUpstreamWindow) {
  RoomEstimate a, b;
  a.gfet = 5, a.fet = 5, a.tt = 20, a.pop = 60;
  b.gfet = 8, b.fet = 3, b.tt = 30, b.pop = 40;
  const auto r = estimate_dependent_room(node("x", 10, 10, 2, 7), {{&a, 0.5}, {&b, 1.0}}, ConstantSurrogate{1.0}, raw());
  EXPECT_EQ(r.git, 5.0);
  EXPECT_EQ(r.ift, 35.0);
  EXPECT_EQ(r.F, 30.0);
  EXPECT_NEAR(r.f, 70.0 / 30.0, 1e-12);
  EXPECT_NEAR(r.pop, 77.0, 1e-12);
}

TEST(DependentRoom, EmptyUpstreamGivesNoFlow) {
  RoomEstimate a;
  a.gfet = 0, a.fet = 0, a.tt = 4, a.pop = 0;
  const auto r = estimate_dependent_room(node("x", 10, 10, 2, 3), {{&a, 1.0}}, ConstantSurrogate{1.0});
  EXPECT_EQ(r.f, 0.0);
  EXPECT_EQ(r.pop, 3.0);
  EXPECT_FALSE(r.degenerate_window);
}

TEST(DependentRoom, DegenerateWindowIsFlagged) {
  RoomEstimate a;
  a.gfet = 5, a.fet = 5, a.tt = 0, a.pop = 12;
  const auto r = estimate_dependent_room(node("x", 10, 10, 2, 0), {{&a, 1.0}}, ConstantSurrogate{1.0});
  EXPECT_TRUE(r.degenerate_window);
  EXPECT_DOUBLE_EQ(r.F, 0.1);
  EXPECT_DOUBLE_EQ(r.f * r.F, 12.0);
  EXPECT_DOUBLE_EQ(r.ift, r.git + 0.1);
}

TEST(Environment, TwoRoomChainHandComputed) {
  EnvironmentGraph g;
  g.rooms = {node("up", 12, 12, 2, 24), node("down", 12, 12, 2, 0)};
  g.edges = {{"up", "down", 1.0}};
  const auto e = estimate_environment(g, ConstantSurrogate{10.0}, raw());
  const auto& up = e.room("up");
  EXPECT_DOUBLE_EQ(up.fet, 5.0);
  EXPECT_DOUBLE_EQ(up.gfet, 5.0);
  const auto& d = e.room("down");
  EXPECT_DOUBLE_EQ(d.git, 5.0);
  EXPECT_DOUBLE_EQ(d.ift, 10.0);
  EXPECT_DOUBLE_EQ(d.F, 5.0);
  EXPECT_DOUBLE_EQ(d.f, 4.8);
  EXPECT_DOUBLE_EQ(d.pop, 24.0);
  EXPECT_DOUBLE_EQ(d.fet, 5.0);
  EXPECT_DOUBLE_EQ(d.gfet, 10.0);
  EXPECT_DOUBLE_EQ(e.tt_e, 15.0);
  EXPECT_FALSE(up.exit);
  EXPECT_TRUE(d.exit);
}

TEST(Environment, SingleRoom) {
  EnvironmentGraph g;
  g.rooms = {node("solo", 8, 9, 1.5, 30)};
  const auto e = estimate_environment(g, ConstantSurrogate{42.0});
  EXPECT_EQ(e.tt_e, 42.0);
  EXPECT_EQ(e.rooms[0].git, 0.0);
  EXPECT_GE(e.wall_clock_ms, 0.0);
}

TEST(Environment, MaxOverExitRooms) {
  // Sources with gfet 10 and 20 feed two exit rooms whose surrogate times
  // are 50 and 30.
  EnvironmentGraph g;
  g.rooms = {node("s1", 3, 24, 1, 1), node("s2", 3, 48, 1, 1), node("e1", 7, 5, 1, 0), node("e2", 8, 5, 1, 0)};
  g.edges = {{"s1", "e1", 1.0}, {"s2", "e2", 1.0}};
  const auto model = [](const Features& x) { return x[0] == 7 ? 50.0 : x[0] == 8 ? 30.0 : 1.0; };
  const auto e = estimate_environment(g, model, raw());
  EXPECT_DOUBLE_EQ(e.room("e1").git, 10.0);
  EXPECT_DOUBLE_EQ(e.room("e2").git, 20.0);
  EXPECT_DOUBLE_EQ(e.tt_e, 60.0);
}

TEST(Environment, AverageExitTimeAggregation) {
  EnvironmentGraph g;
  g.rooms = {node("up", 12, 12, 2, 24), node("down", 12, 12, 2, 0), node("solo", 5, 5, 1, 3)};
  g.edges = {{"up", "down", 1.0}};
  const AvgModel avg = [](const Features&) { return 4.0; };
  const auto e = estimate_environment(g, ConstantSurrogate{10.0}, raw(), &avg);
  // down: 4 + (5 + 10)/2 = 11.5; solo (source): 4 + 0 = 4.
  ASSERT_TRUE(e.avg_exit_time_e.has_value());
  EXPECT_DOUBLE_EQ(*e.avg_exit_time_e, (11.5 + 4.0) / 2.0);
}

TEST(Environment, RejectsInvalidGraph) {
  EnvironmentGraph g;
  g.rooms = {node("a", 5, 5, 1, 1), node("b", 5, 5, 1, 1)};
  g.edges = {{"a", "b", 1.0}, {"b", "a", 1.0}};
  try {
    estimate_environment(g, ConstantSurrogate{1.0});
    FAIL();
  } catch (const InvalidGraph& e) {
    EXPECT_FALSE(e.violations.empty());
  }
}

TEST(Environment, ClampsOutOfRangeInputsWithWarning) {
  EnvironmentGraph g;
  g.rooms = {node("big", 25, 12, 6, 150), node("next", 10, 10, 2, 0)};
  g.edges = {{"big", "next", 1.0}};
  const auto e = estimate_environment(g, ConstantSurrogate{10.0});
  const auto& big = e.room("big");
  EXPECT_EQ(big.query[0], 20.0);
  EXPECT_EQ(big.query[2], 5.0);
  EXPECT_EQ(big.query[5], 99.0);
  // 150 agents over a 5 s window arrive at 30/s, sent as 10/s over 15 s.
  const auto& next = e.room("next");
  EXPECT_DOUBLE_EQ(next.f, 30.0);
  EXPECT_DOUBLE_EQ(next.query[3], 10.0);
  EXPECT_DOUBLE_EQ(next.query[4], 15.0);
  EXPECT_EQ(e.warnings.size(), 2u);
  EXPECT_NE(e.warnings[1].find("input_flow"), std::string::npos);
}

TEST(SurrogateQuery, LongWindowKeepsRateAndReportsExtension) {
  EstimatorConfig cfg;
  cfg.bounds = kDeskBounds;
  std::vector<std::string> clamped;
  double extension = -1.0;
  const auto x = surrogate_query(RoomSpec{10, 10, 2, 0, 0, 0}, 2.0, 50.0, cfg, clamped, &extension);
  EXPECT_EQ(x[3], 2.0);
  EXPECT_EQ(x[4], 20.0);
  EXPECT_DOUBLE_EQ(extension, 30.0);
  EXPECT_EQ(clamped, (std::vector<std::string>{"flow_duration"}));
}

TEST(SurrogateQuery, ShortWindowRaisesRate) {
  std::vector<std::string> clamped;
  double extension = -1.0;
  const auto x = surrogate_query(RoomSpec{10, 10, 2, 0, 0, 0}, 5.0, 0.1, EstimatorConfig{}, clamped, &extension);
  EXPECT_EQ(x[4], 0.2);
  EXPECT_DOUBLE_EQ(x[3], 2.5);
  EXPECT_EQ(extension, 0.0);
}

TEST(Environment, ExtensionIsAddedToRoomTime) {
  EnvironmentGraph g;
  g.rooms = {node("up", 12, 12, 2, 0), node("down", 12, 12, 2, 0)};
  g.edges = {{"up", "down", 1.0}};
  RoomEstimate up;
  up.gfet = 5, up.fet = 5, up.tt = 55, up.pop = 100;
  EstimatorConfig cfg;
  cfg.bounds = kDeskBounds;
  const auto r = estimate_dependent_room(g.rooms[1], {{&up, 1.0}}, ConstantSurrogate{10.0}, cfg);
  EXPECT_DOUBLE_EQ(r.F, 50.0);
  EXPECT_DOUBLE_EQ(r.window_extension, 30.0);
  EXPECT_DOUBLE_EQ(r.tt, 40.0);
}

TEST(ModelBounds, ReadsNormalizationOrFallsBack) {
  auto m = mlp::make_model({6, 1}, mlp::Activation::linear);
  EXPECT_EQ(model_bounds(m).duration_max, kTrainingBounds.duration_max);
  mlp::set_norm(m, feature_ranges(kDeskBounds));
  const auto b = model_bounds(m);
  EXPECT_EQ(b.duration_max, 20.0);
  EXPECT_EQ(b.exit_min, 0.9);
  EXPECT_EQ(b.pop_max, 99);
}

TEST(Environment, MlpSurrogate) {
  mlp::MlpModel m = mlp::make_model({6, 1}, mlp::Activation::linear);
  m.layers[0].w = {0, 0, 0, 0, 0, 1};  // tt = initial population
  EnvironmentGraph g;
  g.rooms = {node("a", 5, 5, 1, 17)};
  EXPECT_DOUBLE_EQ(estimate_environment(g, MlpSurrogate{&m}).tt_e, 17.0);
}

TEST(Environment, MatchesRecursiveOracleOnRandomDags) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto g = oracle::random_dag(rng);
    ASSERT_TRUE(graph::validate(g).empty());
    const auto e = estimate_environment(g, StubSurrogate{}, raw());
    oracle::HeuristicOracle oracle(g, stub);
    for (const auto& r : e.rooms) {
      const auto& o = oracle.room(r.id);
      EXPECT_NEAR(r.git, o.git, 1e-9);
      EXPECT_NEAR(r.ift, o.ift, 1e-9);
      EXPECT_NEAR(r.F, o.F, 1e-9);
      EXPECT_NEAR(r.f, o.f, 1e-9);
      EXPECT_NEAR(r.pop, o.pop, 1e-9);
      EXPECT_NEAR(r.fet, o.fet, 1e-9);
      EXPECT_NEAR(r.gfet, o.gfet, 1e-9);
      EXPECT_NEAR(r.tt, o.tt, 1e-9);
    }
    EXPECT_NEAR(e.tt_e, oracle.tt_e(), 1e-9);
  }
}

TEST(Environment, PopulationIsConservedAtExits) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = oracle::random_dag(rng);
    const auto e = estimate_environment(g, ConstantSurrogate{12.0}, raw());
    double ip = 0, exits = 0;
    for (const auto& n : g.rooms) ip += n.spec.initial_population;
    for (const auto& r : e.rooms) exits += r.exit ? r.pop : 0.0;
    EXPECT_NEAR(exits, ip, 1e-9 * std::max(1.0, ip));
  }
}

TEST(Environment, LongerChainNeverFinishesEarlier) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    std::vector<RoomNode> rooms;
    for (int k = 0; k < n + 1; ++k) {
      rooms.push_back(node("c" + std::to_string(k), 2 + rng() % 18, 2 + rng() % 18, 0.9, static_cast<int>(rng() % 50)));
    }
    const auto chain = [&](std::size_t skip) {
      EnvironmentGraph g;
      for (std::size_t k = 0; k < rooms.size(); ++k) {
        if (k != skip) g.rooms.push_back(rooms[k]);
      }
      for (std::size_t k = 0; k + 1 < g.rooms.size(); ++k) g.edges.push_back({g.rooms[k].id, g.rooms[k + 1].id, 1.0});
      return g;
    };
    const std::size_t inserted = rng() % rooms.size();
    const ConstantSurrogate model{1.0 + static_cast<double>(rng() % 60)};
    const double shorter = estimate_environment(chain(inserted), model, raw()).tt_e;
    const double longer = estimate_environment(chain(rooms.size()), model, raw()).tt_e;
    EXPECT_GE(longer, shorter - 1e-9);
  }
}

TEST(Environment, PureAndDeterministic) {
  std::mt19937_64 rng(9);
  const auto g = oracle::random_dag(rng);
  const auto a = to_json(estimate_environment(g, StubSurrogate{}), false).dump();
  const auto b = to_json(estimate_environment(g, StubSurrogate{}), false).dump();
  EXPECT_EQ(a, b);
}
