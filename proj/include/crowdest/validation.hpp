#pragma once

// Component and qualitative checks of the simulator after the IMO passenger
// ship evacuation guidelines (walking speed, rounding corners, counter flow,
// exit route allocation), plus the letter-morphing ORCA showcase. Every check
// reads its geometry from a scenario fixture and reports JSON.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crowdest/harness.hpp"
#include "crowdest/scenario.hpp"
#include "crowdest/sim.hpp"
#include "json.hpp"

namespace crowdest::validation {

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Pairs of active agents closer than 2r - tol.
inline std::size_t hard_overlaps(const std::vector<sim::Agent>& agents, double tol, double* min_gap = nullptr) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!agents[i].active()) continue;
    for (std::size_t j = i + 1; j < agents.size(); ++j) {
      if (!agents[j].active()) continue;
      const double gap = norm(agents[i].position - agents[j].position) - agents[i].radius - agents[j].radius;
      if (min_gap) *min_gap = std::min(*min_gap, gap);
      if (gap < -tol) ++n;
    }
  }
  return n;
}

/// Active agents whose center left the walkable regions or whose disc
/// reaches more than `tol` into a wall.
inline std::size_t containment_violations(const sim::World& w, const std::vector<sim::Agent>& agents, double tol) {
  std::size_t n = 0;
  for (const auto& a : agents) {
    if (!a.active()) continue;
    bool bad = w.locate(a.position) < 0;
    for (const auto& wall : w.walls()) {
      if (bad) break;
      bad = distance(wall, a.position) < a.radius - tol;
    }
    n += bad;
  }
  return n;
}

}  // namespace detail

struct WalkResult {
  bool pass = false;
  double time = 0.0;
  double max_speed = 0.0;
  double dt = 0.0;
  double lo = 0.0, hi = 0.0;
  double reference = 0.0;
  double runtime_ms = 0.0;
};

/// One agent walks the fixture's straight corridor; passes when it covers
/// the distance within the time window. `max_speed` overrides the fixture.
inline WalkResult walk_test(const scenario::Fixture& fx, sim::SimConfig cfg = {}, std::optional<double> max_speed = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = fx.doc;
  WalkResult r;
  r.max_speed = max_speed.value_or(d.at("max_speed").get<double>());
  r.dt = cfg.dt;
  r.lo = d.at("window").at(0).get<double>();
  r.hi = d.at("window").at(1).get<double>();
  r.reference = d.value("reference_time", 0.0);
  sim::Simulation s(fx.world, cfg);
  const int region = fx.world->locate(scenario::vec_from_json(d.at("start")));
  s.add_agent(scenario::vec_from_json(d.at("start")), region,
              scenario::route_through(*fx.world, region, {d.at("exit").get<std::string>()}), 0,
              sim::AgentParams{sim::kDefaultRadius, r.max_speed});
  const double cap = 10.0 * d.at("distance").get<double>() / r.max_speed;
  while (!s.idle() && s.time() < cap) s.step();
  r.time = s.agents()[0].exited_at.value_or(s.time());
  r.pass = s.idle() && r.time >= r.lo && r.time <= r.hi;
  r.runtime_ms = detail::elapsed_ms(t0);
  return r;
}

struct CornerResult {
  bool pass = false;
  std::size_t agents = 0;
  std::size_t exited = 0;
  std::size_t containment_violations = 0;
  std::size_t overlaps = 0;
  /// Smallest disc-to-disc gap seen (negative when discs touched).
  double min_gap = std::numeric_limits<double>::infinity();
  double time = 0.0;
  bool walls_enabled = true;
  double runtime_ms = 0.0;
};

/// A crowd rounds a 90 degree turn; passes with no agent outside the
/// corridor and no hard overlap on any tick, and everyone through.
inline CornerResult corner_test(const scenario::Fixture& fx, sim::SimConfig cfg = {}, std::optional<std::size_t> agents = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = fx.doc;
  CornerResult r;
  r.agents = agents.value_or(d.at("agents").get<std::size_t>());
  r.walls_enabled = cfg.walls_enabled;
  const double tol = d.at("overlap_tolerance").get<double>();
  const int region = fx.world->region_index(d.at("start_region").get<std::string>());
  const auto route = scenario::route_through(*fx.world, region, d.at("route").get<std::vector<std::string>>());
  const sim::AgentParams params{sim::kDefaultRadius, d.at("max_speed").get<double>()};
  sim::Simulation s(fx.world, cfg);
  for (const auto& p : scenario::fill_area(r.agents, scenario::rect_from_json(d.at("start_area")))) {
    s.add_agent(p, region, route, 0, params);
  }
  const double cap = d.at("max_time").get<double>();
  while (!s.idle() && s.time() < cap) {
    s.step();
    r.containment_violations += detail::containment_violations(*fx.world, s.agents(), tol);
    r.overlaps += detail::hard_overlaps(s.agents(), tol, &r.min_gap);
  }
  for (const auto& a : s.agents()) r.exited += a.exited_at.has_value();
  r.time = s.time();
  r.pass = r.exited == r.agents && r.containment_violations == 0 && r.overlaps == 0;
  r.runtime_ms = detail::elapsed_ms(t0);
  return r;
}

struct CounterflowRun {
  int counter = 0;
  /// Time the last agent of the main group entered the second room.
  double time = 0.0;
  bool censored = false;
};

struct CounterflowResult {
  bool pass = false;
  bool increasing = false;
  bool near_reference = false;
  std::vector<CounterflowRun> runs;
  std::vector<double> reference;
  double reference_tolerance = 0.0;
  double runtime_ms = 0.0;
};

/// The main group crosses from the first room to the second through the
/// corridor, once per counter-flux size; the counter group starts in the
/// second room at the same moment and walks the other way.
inline CounterflowRun counterflow_run(const scenario::Fixture& fx, int counter, const sim::SimConfig& cfg) {
  const auto& d = fx.doc;
  const auto& w = *fx.world;
  const sim::AgentParams params{sim::kDefaultRadius, d.at("max_speed").get<double>()};
  const int room1 = w.region_index("room1");
  const int room2 = w.region_index("room2");
  const auto n = d.at("agents").get<std::size_t>();
  sim::Simulation s(fx.world, cfg);
  const auto main_start = scenario::fill_area(n, scenario::rect_from_json(d.at("main_area")));
  const auto main_goal = scenario::fill_area(n, scenario::rect_from_json(d.at("main_targets")));
  const auto forward = scenario::route_through(w, room1, {"door1", "door2"});
  for (std::size_t i = 0; i < n; ++i) s.add_agent(main_start[i], room1, forward, 0, params, main_goal[i]);
  const auto m = static_cast<std::size_t>(counter);
  const auto counter_start = scenario::fill_area(m, scenario::rect_from_json(d.at("counter_area")));
  const auto counter_goal = scenario::fill_area(m, scenario::rect_from_json(d.at("counter_targets")));
  const auto backward = scenario::route_through(w, room2, {"door2", "door1"});
  for (std::size_t i = 0; i < m; ++i) s.add_agent(counter_start[i], room2, backward, 1, params, counter_goal[i]);

  const double cap = d.at("max_time").get<double>();
  std::size_t arrived = 0;
  std::size_t seen = 0;
  CounterflowRun r;
  r.counter = counter;
  while (arrived < n && s.time() < cap) {
    s.step();
    for (; seen < s.events().size(); ++seen) {
      const auto& e = s.events()[seen];
      if (e.to_region == room2 && s.agents()[static_cast<std::size_t>(e.agent)].group == 0) {
        ++arrived;
        r.time = std::max(r.time, e.time);
      }
    }
  }
  r.censored = arrived < n;
  if (r.censored) r.time = s.time();
  return r;
}

inline CounterflowResult counterflow_test(const scenario::Fixture& fx, const sim::SimConfig& cfg = {}, unsigned threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = fx.doc;
  CounterflowResult r;
  const auto flux = d.at("counter_flux").get<std::vector<int>>();
  r.reference = d.at("reference_times").get<std::vector<double>>();
  r.reference_tolerance = d.at("reference_tolerance").get<double>();
  r.runs.resize(flux.size());
  harness::parallel_for(flux.size(), threads, [&](std::size_t i) { r.runs[i] = counterflow_run(fx, flux[i], cfg); });
  r.increasing = true;
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (r.runs[i].censored) r.increasing = false;
    if (i > 0 && !(r.runs[i].time > r.runs[i - 1].time)) r.increasing = false;
  }
  if (!r.runs.empty() && !r.reference.empty() && flux.front() == 0) {
    r.near_reference = std::abs(r.runs[0].time - r.reference[0]) <= r.reference_tolerance * r.reference[0];
  }
  r.pass = r.increasing && r.near_reference;
  r.runtime_ms = detail::elapsed_ms(t0);
  return r;
}

struct CabinAssignment {
  int cabin = 0;
  std::string id;
  std::size_t agents = 0;
  /// Exit chosen by every agent of the cabin, or "mixed".
  std::string exit;
  double distance = 0.0;
};

struct ExitAllocResult {
  bool pass = false;
  bool swapped = false;
  std::vector<CabinAssignment> cabins;
  std::vector<int> main_cabins;
  std::vector<int> expected_main;
  /// Agents whose simulated exit differs from their assignment.
  std::size_t mismatched_exits = 0;
  std::size_t exited = 0;
  std::size_t agents = 0;
  double time = 0.0;
  double runtime_ms = 0.0;
};

/// Fixture with the two exits' openings exchanged (ids stay with the
/// openings' roles, positions swap).
inline scenario::Fixture swap_exits(const scenario::Fixture& fx) {
  auto doc = fx.doc;
  const auto main = doc.at("main_exit").get<std::string>();
  const auto secondary = doc.at("secondary_exit").get<std::string>();
  nlohmann::json *a = nullptr, *b = nullptr;
  for (auto& p : doc["world"]["portals"]) {
    if (p.at("id") == main) a = &p;
    if (p.at("id") == secondary) b = &p;
  }
  if (!a || !b) throw std::runtime_error("exit allocation fixture: exits not found");
  for (const char* key : {"a", "b", "region"}) std::swap((*a)[key], (*b)[key]);
  return scenario::parse_fixture(doc);
}

/// Every agent takes the exit nearest by route distance; passes when the
/// cabins sent to the main exit are exactly the expected ones (their
/// complement when the exits are swapped) and the simulated crowd leaves
/// through the assigned exits.
inline ExitAllocResult exit_alloc_test(const scenario::Fixture& fixture, const sim::SimConfig& cfg = {}, bool swapped = false) {
  const auto t0 = std::chrono::steady_clock::now();
  const scenario::Fixture fx = swapped ? swap_exits(fixture) : fixture;
  const auto& d = fx.doc;
  const auto& w = *fx.world;
  ExitAllocResult r;
  r.swapped = swapped;
  const auto cabins = d.at("cabins").get<std::vector<std::string>>();
  const auto per_cabin = d.at("agents_per_cabin").get<std::vector<std::size_t>>();
  const auto main_exit = d.at("main_exit").get<std::string>();
  const sim::AgentParams params{sim::kDefaultRadius, d.at("max_speed").get<double>()};
  std::set<int> expected;
  for (int c : d.at("expected_main").get<std::vector<int>>()) expected.insert(c);
  if (swapped) {
    std::set<int> complement;
    for (int c = 1; c <= static_cast<int>(cabins.size()); ++c) {
      if (!expected.count(c)) complement.insert(c);
    }
    expected = complement;
  }
  r.expected_main.assign(expected.begin(), expected.end());

  sim::Simulation s(fx.world, cfg);
  std::vector<int> assigned_portal;
  for (std::size_t c = 0; c < cabins.size(); ++c) {
    CabinAssignment ca;
    ca.cabin = static_cast<int>(c) + 1;
    ca.id = cabins[c];
    ca.agents = per_cabin.at(c);
    const int region = w.region_index(cabins[c]);
    for (const auto& p : scenario::fill_area(ca.agents, w.region(region).bounds)) {
      const auto route = sim::nearest_exit(w, region, p);
      if (!route) throw std::runtime_error("cabin '" + cabins[c] + "' has no route to an exit");
      const auto& exit_id = w.portal(route->exit_portal).id;
      ca.exit = ca.exit.empty() || ca.exit == exit_id ? exit_id : "mixed";
      ca.distance = std::max(ca.distance, route->distance);
      s.add_agent(p, region, route->route, ca.cabin, params);
      assigned_portal.push_back(route->exit_portal);
    }
    if (ca.exit == main_exit) r.main_cabins.push_back(ca.cabin);
    r.cabins.push_back(std::move(ca));
  }
  r.agents = assigned_portal.size();
  const double cap = d.at("max_time").get<double>();
  while (!s.idle() && s.time() < cap) s.step();
  for (const auto& e : s.events()) {
    if (e.to_region != -1) continue;
    ++r.exited;
    r.mismatched_exits += e.portal != assigned_portal[static_cast<std::size_t>(e.agent)];
  }
  r.time = s.time();
  const bool unanimous = std::none_of(r.cabins.begin(), r.cabins.end(), [](const CabinAssignment& c) { return c.exit == "mixed"; });
  r.pass = unanimous && r.main_cabins == r.expected_main && r.exited == r.agents && r.mismatched_exits == 0;
  r.runtime_ms = detail::elapsed_ms(t0);
  return r;
}

struct ShowcaseResult {
  bool pass = false;
  std::size_t agents = 0;
  std::size_t converged = 0;
  double max_error = 0.0;
  std::size_t overlaps = 0;
  double time = 0.0;
  double tolerance = 0.0;
  /// {"groups":[...], "frames":[{"t", "p":[[x,y]...]}]}
  nlohmann::json trajectory;
  double runtime_ms = 0.0;
};

/// Agents laid out as one word walk to the letters of another; passes when
/// everyone settles within tolerance of its target with no hard overlap.
inline ShowcaseResult showcase_test(const scenario::Fixture& fx, const sim::SimConfig& cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = fx.doc;
  ShowcaseResult r;
  r.tolerance = d.at("tolerance").get<double>();
  const double overlap_tol = d.at("overlap_tolerance").get<double>();
  const sim::AgentParams params{sim::kDefaultRadius, d.at("max_speed").get<double>()};
  sim::Simulation s(fx.world, cfg);
  std::vector<sim::Vec2> targets;
  nlohmann::json groups = nlohmann::json::array();
  int g = 0;
  for (const auto& grp : d.at("groups")) {
    const auto& start = grp.at("start");
    const auto& goal = grp.at("targets");
    if (start.size() != goal.size()) throw std::runtime_error("showcase group sizes differ");
    for (std::size_t i = 0; i < start.size(); ++i) {
      const auto p = scenario::vec_from_json(start[i]);
      targets.push_back(scenario::vec_from_json(goal[i]));
      s.add_agent(p, fx.world->locate(p), {}, g, params, targets.back());
    }
    groups.push_back({{"from", grp.value("from", "")}, {"to", grp.value("to", "")}, {"agents", start.size()}});
    ++g;
  }
  r.agents = targets.size();
  const auto every = std::max<std::size_t>(1, d.value("dump_every", std::size_t{12}));
  nlohmann::json frames = nlohmann::json::array();
  const auto dump = [&] {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& a : s.agents()) pts.push_back({std::round(a.position.x * 1000.0) / 1000.0, std::round(a.position.y * 1000.0) / 1000.0});
    frames.push_back({{"t", s.time()}, {"p", pts}});
  };
  const auto worst = [&] {
    double e = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) e = std::max(e, norm(s.agents()[i].position - targets[i]));
    return e;
  };
  const double cap = d.at("max_time").get<double>();
  dump();
  while (worst() > r.tolerance && s.time() < cap) {
    s.step();
    r.overlaps += detail::hard_overlaps(s.agents(), overlap_tol);
    if (s.ticks() % every == 0) dump();
  }
  if (s.ticks() % every != 0) dump();
  r.max_error = worst();
  for (std::size_t i = 0; i < targets.size(); ++i) r.converged += norm(s.agents()[i].position - targets[i]) <= r.tolerance;
  r.time = s.time();
  r.pass = r.converged == r.agents && r.overlaps == 0;
  r.trajectory = {{"groups", groups}, {"dt", cfg.dt}, {"frames", frames}};
  r.runtime_ms = detail::elapsed_ms(t0);
  return r;
}

inline nlohmann::json to_json(const WalkResult& r) {
  return {{"pass", r.pass}, {"time", r.time},       {"window", {r.lo, r.hi}},        {"max_speed", r.max_speed},
          {"dt", r.dt},     {"reference", r.reference}, {"runtime_ms", r.runtime_ms}};
}

inline nlohmann::json to_json(const CornerResult& r) {
  return {{"pass", r.pass},
          {"agents", r.agents},
          {"exited", r.exited},
          {"containment_violations", r.containment_violations},
          {"overlaps", r.overlaps},
          {"min_gap", std::isfinite(r.min_gap) ? nlohmann::json(r.min_gap) : nlohmann::json(nullptr)},
          {"time", r.time},
          {"walls_enabled", r.walls_enabled},
          {"runtime_ms", r.runtime_ms}};
}

inline nlohmann::json to_json(const CounterflowResult& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs) runs.push_back({{"counter_flux", x.counter}, {"time", x.time}, {"censored", x.censored}});
  return {{"pass", r.pass},         {"increasing", r.increasing}, {"near_reference", r.near_reference},
          {"runs", runs},           {"reference", r.reference},   {"reference_tolerance", r.reference_tolerance},
          {"runtime_ms", r.runtime_ms}};
}

inline nlohmann::json to_json(const ExitAllocResult& r) {
  nlohmann::json cabins = nlohmann::json::array();
  for (const auto& c : r.cabins) {
    cabins.push_back({{"cabin", c.cabin}, {"id", c.id}, {"agents", c.agents}, {"exit", c.exit}, {"distance", c.distance}});
  }
  return {{"pass", r.pass},       {"swapped", r.swapped},
          {"cabins", cabins},     {"main_cabins", r.main_cabins},
          {"expected_main", r.expected_main}, {"mismatched_exits", r.mismatched_exits},
          {"agents", r.agents},   {"exited", r.exited},
          {"time", r.time},       {"runtime_ms", r.runtime_ms}};
}

inline nlohmann::json to_json(const ShowcaseResult& r, bool with_trajectory = false) {
  nlohmann::json j = {{"pass", r.pass},         {"agents", r.agents},       {"converged", r.converged},
                      {"max_error", r.max_error}, {"tolerance", r.tolerance}, {"overlaps", r.overlaps},
                      {"time", r.time},         {"runtime_ms", r.runtime_ms}};
  if (with_trajectory) j["trajectory"] = r.trajectory;
  return j;
}

inline const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names{"walk", "corner", "counterflow", "exitalloc", "showcase"};
  return names;
}

struct CheckReport {
  std::string name;
  bool pass = false;
  std::string summary;
  nlohmann::json detail;
};

/// Runs one named check against the bundled fixtures, including its
/// negative control where it has one.
inline CheckReport run_check(const std::string& name, const sim::SimConfig& cfg = {}, unsigned threads = 1,
                             const std::filesystem::path& dir = scenario::kDefaultScenarioDir) {
  CheckReport out;
  out.name = name;
  char line[200];
  if (name == "walk") {
    const auto fx = scenario::load_named("walk", dir);
    const auto r = walk_test(fx, cfg);
    const auto control = walk_test(fx, cfg, 2.0 * r.max_speed);
    out.pass = r.pass && !control.pass;
    std::snprintf(line, sizeof line, "%.2f s in [%.1f, %.1f] (reference %.2f s); double speed %.2f s", r.time, r.lo, r.hi,
                  r.reference, control.time);
    out.detail = {{"run", to_json(r)}, {"negative_control", to_json(control)}};
  } else if (name == "corner") {
    const auto fx = scenario::load_named("corner", dir);
    const auto r = corner_test(fx, cfg);
    auto open = cfg;
    open.walls_enabled = false;
    const auto control = corner_test(fx, open);
    out.pass = r.pass && !control.pass;
    std::snprintf(line, sizeof line, "%zu/%zu through, %zu containment violations, %zu overlaps; without walls %zu violations",
                  r.exited, r.agents, r.containment_violations, r.overlaps, control.containment_violations);
    out.detail = {{"run", to_json(r)}, {"negative_control", to_json(control)}};
  } else if (name == "counterflow") {
    const auto r = counterflow_test(scenario::load_named("counterflow", dir), cfg, threads);
    out.pass = r.pass;
    std::string times;
    for (const auto& x : r.runs) times += (times.empty() ? "" : "/") + std::to_string(static_cast<int>(std::lround(x.time)));
    std::snprintf(line, sizeof line, "times %s s for counter flux 0/10/50/100 (reference 21/30/45/55 s)", times.c_str());
    out.detail = to_json(r);
  } else if (name == "exitalloc") {
    const auto fx = scenario::load_named("exit_allocation", dir);
    const auto r = exit_alloc_test(fx, cfg);
    const auto mirrored = exit_alloc_test(fx, cfg, true);
    out.pass = r.pass && mirrored.pass;
    std::string cabins;
    for (int c : r.main_cabins) cabins += (cabins.empty() ? "" : ",") + std::to_string(c);
    std::snprintf(line, sizeof line, "main exit cabins %s; swapped exits mirror: %s", cabins.c_str(), mirrored.pass ? "yes" : "no");
    out.detail = {{"run", to_json(r)}, {"swapped", to_json(mirrored)}};
  } else if (name == "showcase") {
    const auto r = showcase_test(scenario::load_named("showcase", dir), cfg);
    out.pass = r.pass;
    std::snprintf(line, sizeof line, "%zu/%zu agents within %.1f m at %.1f s, %zu overlaps", r.converged, r.agents, r.tolerance,
                  r.time, r.overlaps);
    out.detail = to_json(r);
  } else {
    throw std::invalid_argument("unknown check '" + name + "'");
  }
  out.summary = line;
  return out;
}

inline nlohmann::json to_json(const CheckReport& r) {
  return {{"name", r.name}, {"pass", r.pass}, {"summary", r.summary}, {"detail", r.detail}};
}

}  // namespace crowdest::validation
