#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "crowdest/envgraph.hpp"

using namespace crowdest;
using namespace crowdest::graph;

namespace {

RoomNode room(std::string id, int ip = 10) {
  RoomNode r;
  r.id = std::move(id);
  r.spec = RoomSpec{10, 10, 2, 0, 0, ip};
  return r;
}

EnvironmentGraph make(std::vector<std::string> ids, std::vector<FlowEdge> edges) {
  EnvironmentGraph g;
  for (auto& id : ids) g.rooms.push_back(room(id));
  g.edges = std::move(edges);
  return g;
}

bool has_kind(const std::vector<Violation>& v, const std::string& kind) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.kind == kind; });
}

}  // namespace

TEST(Validate, SingleRoomIsValid) { EXPECT_TRUE(validate(make({"A"}, {})).empty()); }

TEST(Validate, TwoRoomCycle) {
  const auto v = validate(make({"A", "B"}, {{"A", "B", 1.0}, {"B", "A", 1.0}}));
  EXPECT_TRUE(has_kind(v, "cycle"));
  EXPECT_TRUE(has_kind(v, "no_exit_room"));
}

TEST(Validate, FractionSum) {
  const auto v = validate(make({"A", "B", "C"}, {{"A", "B", 0.6}, {"A", "C", 0.3}}));
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, "fraction_sum");
  EXPECT_NE(v[0].message.find("0.9"), std::string::npos);
}

TEST(Validate, ReportsEveryProblem) {
  EnvironmentGraph g = make({"A", "A", "B"}, {{"A", "Z", 1.0}, {"B", "B", 1.0}, {"A", "B", 0.0}});
  g.rooms[2].spec.exit_size = 20.0;
  const auto v = validate(g);
  for (const char* k : {"duplicate_id", "dangling_edge", "self_loop", "fraction_range", "room", "cycle"}) {
    EXPECT_TRUE(has_kind(v, k)) << k;
  }
}

TEST(Validate, SummedDoorWidthsWithSplitIsAccepted) {
  EnvironmentGraph g = make({"hall", "left", "right"}, {{"hall", "left", 0.25}, {"hall", "right", 0.75}});
  g.rooms[0].spec.exit_size = 3.5;  // two doors, 1.5 + 2.0
  EXPECT_TRUE(validate(g).empty());
}

TEST(TopoOrder, Chain) {
  EXPECT_EQ(topo_order(make({"C", "B", "A"}, {{"A", "B", 1}, {"B", "C", 1}})), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(TopoOrder, DiamondBreaksTiesById) {
  const auto g = make({"D", "C", "B", "A"}, {{"A", "C", 0.5}, {"A", "B", 0.5}, {"C", "D", 1}, {"B", "D", 1}});
  EXPECT_EQ(topo_order(g), (std::vector<std::string>{"A", "B", "C", "D"}));
}

TEST(TopoOrder, SingleAndCycle) {
  EXPECT_EQ(topo_order(make({"only"}, {})), std::vector<std::string>{"only"});
  EXPECT_THROW(topo_order(make({"A", "B"}, {{"A", "B", 1}, {"B", "A", 1}})), std::invalid_argument);
}

TEST(TopoOrder, EveryRoomAfterItsSources) {
  const auto g = load(std::filesystem::path(CROWDEST_DATA_DIR) / "graphs" / "nightclub.json");
  const auto order = topo_order(g);
  ASSERT_EQ(order.size(), g.rooms.size());
  for (const auto& e : g.edges) {
    const auto from = std::find(order.begin(), order.end(), e.from);
    const auto to = std::find(order.begin(), order.end(), e.to);
    EXPECT_LT(from, to) << e.from << "->" << e.to;
  }
}

TEST(Serialize, RoundTrip) {
  EnvironmentGraph g = make({"A", "B", "C"}, {{"A", "B", 0.25}, {"A", "C", 0.75}});
  g.rooms[1].pos = {120.5, -3};
  g.rooms[2].spec = RoomSpec{3.3, 17.25, 0.95, 0, 0, 99};
  EXPECT_EQ(parse(serialize(g)), g);
}

TEST(Parse, MissingFieldNamesRoom) {
  const std::string doc = R"({"version":1,"rooms":[{"id":"lobby","width":5,"length":5,"initial_population":3}],"edges":[]})";
  try {
    parse(doc);
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("exit_size"), std::string::npos);
    EXPECT_NE(msg.find("lobby"), std::string::npos);
  }
}

TEST(Parse, SyntaxErrorIsPositioned) {
  try {
    parse("{\n  \"version\": 1,\n  \"rooms\": [ oops ]\n}");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Parse, WrongVersionAndTypes) {
  EXPECT_THROW(parse(R"({"version":2,"rooms":[],"edges":[]})"), ParseError);
  EXPECT_THROW(parse(R"({"version":1,"rooms":[{"id":"a","width":"wide","length":5,"exit_size":1,"initial_population":0}]})"),
               ParseError);
  EXPECT_THROW(parse("[1,2]"), ParseError);
}

TEST(Fixture, NightclubParsesAndValidates) {
  const auto g = load(std::filesystem::path(CROWDEST_DATA_DIR) / "graphs" / "nightclub.json");
  EXPECT_GE(g.rooms.size(), 10u);
  EXPECT_TRUE(validate(g).empty());
  int total = 0;
  for (const auto& r : g.rooms) total += r.spec.initial_population;
  EXPECT_EQ(total, 240);
}
