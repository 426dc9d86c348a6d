#pragma once

// Scenario fixtures: walkable layouts and scenario parameters stored as JSON
// so geometry can change without a rebuild.
//
//   {"version":1, "name":"...",
//    "world":{"regions":[{"id","lo":[x,y],"hi":[x,y]}],
//             "portals":[{"id","a":[x,y],"b":[x,y],"kind":"exit|pass","region","other"}]},
//    ...scenario keys}

#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/sim.hpp"
#include "crowdest/world.hpp"
#include "json.hpp"

namespace crowdest::scenario {

#ifdef CROWDEST_DATA_DIR
inline const std::filesystem::path kDefaultScenarioDir = std::filesystem::path(CROWDEST_DATA_DIR) / "scenarios";
#else
inline const std::filesystem::path kDefaultScenarioDir = "data/scenarios";
#endif

inline sim::Vec2 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline nlohmann::json to_json(const sim::Vec2& v) { return nlohmann::json::array({v.x, v.y}); }

inline sim::Rect rect_from_json(const nlohmann::json& j) { return {vec_from_json(j.at("lo")), vec_from_json(j.at("hi"))}; }

inline sim::PortalKind portal_kind(const std::string& s) {
  if (s == "exit") return sim::PortalKind::exit;
  if (s == "pass") return sim::PortalKind::pass;
  if (s == "transfer") return sim::PortalKind::transfer;
  throw std::runtime_error("unknown portal kind '" + s + "'");
}

inline sim::World world_from_json(const nlohmann::json& j) {
  std::vector<sim::Region> regions;
  for (const auto& r : j.at("regions")) {
    sim::Region reg;
    reg.id = r.at("id").get<std::string>();
    reg.bounds = rect_from_json(r);
    if (r.contains("entrance")) reg.entrance = sim::Segment{vec_from_json(r["entrance"].at(0)), vec_from_json(r["entrance"].at(1))};
    regions.push_back(std::move(reg));
  }
  const auto index = [&](const std::string& id) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (regions[i].id == id) return static_cast<int>(i);
    }
    throw std::runtime_error("unknown region '" + id + "'");
  };
  std::vector<sim::Portal> portals;
  for (const auto& p : j.at("portals")) {
    sim::Portal out;
    out.id = p.at("id").get<std::string>();
    out.segment = sim::GoalSegment{{vec_from_json(p.at("a")), vec_from_json(p.at("b"))}};
    out.kind = portal_kind(p.value("kind", "exit"));
    out.region = index(p.at("region").get<std::string>());
    if (p.contains("other")) out.other = index(p["other"].get<std::string>());
    portals.push_back(std::move(out));
  }
  return sim::World(std::move(regions), std::move(portals));
}

struct Fixture {
  std::string name;
  std::shared_ptr<const sim::World> world;
  nlohmann::json doc;
};

inline Fixture parse_fixture(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1) throw std::runtime_error("scenario: expected version 1");
  Fixture f;
  f.name = j.at("name").get<std::string>();
  if (j.contains("world")) f.world = std::make_shared<const sim::World>(world_from_json(j["world"]));
  f.doc = j;
  return f;
}

inline Fixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_fixture(nlohmann::json::parse(in));
}

/// Fixture `<name>.json` from `dir`.
inline Fixture load_named(const std::string& name, const std::filesystem::path& dir = kDefaultScenarioDir) {
  return load_fixture(dir / (name + ".json"));
}

/// Route crossing the named portals in order, starting in `region`: each
/// step ends in the region on the far side of its portal.
inline std::vector<sim::RouteStep> route_through(const sim::World& w, int region, const std::vector<std::string>& portal_ids) {
  std::vector<sim::RouteStep> route;
  int cur = region;
  for (const auto& id : portal_ids) {
    const int pi = w.portal_index(id);
    const auto& p = w.portal(pi);
    int next = -1;
    if (p.kind == sim::PortalKind::pass) {
      if (p.region == cur) {
        next = p.other;
      } else if (p.other == cur) {
        next = p.region;
      } else {
        throw std::runtime_error("portal '" + id + "' does not border region '" + w.region(cur).id + "'");
      }
    } else if (p.region != cur) {
      throw std::runtime_error("portal '" + id + "' does not border region '" + w.region(cur).id + "'");
    }
    route.push_back({pi, next});
    cur = next;
  }
  return route;
}

/// Lattice positions filling `area` from its center outwards.
inline std::vector<sim::Vec2> fill_area(std::size_t n, const sim::Rect& area, double radius = sim::kDefaultRadius) {
  return sim::spiral_positions(n, area.width(), area.height(), sim::kSpiralSpacing, radius, area.lo);
}

}  // namespace crowdest::scenario
