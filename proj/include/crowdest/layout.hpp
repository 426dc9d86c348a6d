#pragma once

// Simulable geometry for an environment graph: every room becomes its own
// rectangular region, laid out side by side, with the room's exit turned into
// a transfer portal to its successors (or a true exit for exit rooms).
// Agents that cross a transfer portal reappear on the entrance band of the
// next room, exactly as inflow enters a room in the single-room simulator.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/envgraph.hpp"
#include "crowdest/room.hpp"
#include "crowdest/sim.hpp"
#include "json.hpp"

namespace crowdest::layout {

struct Successor {
  int region = -1;
  double fraction = 0.0;
};

struct EnvironmentLayout {
  std::shared_ptr<const sim::World> world;
  /// Region index -> room id (regions follow the graph's dependence order).
  std::vector<std::string> room_ids;
  /// Region index -> its exit or transfer portal.
  std::vector<int> portal;
  std::vector<std::vector<Successor>> successors;

  int region_of(const std::string& id) const {
    for (std::size_t i = 0; i < room_ids.size(); ++i) {
      if (room_ids[i] == id) return static_cast<int>(i);
    }
    throw std::out_of_range("no region for room '" + id + "'");
  }
};

/// Rooms are placed left to right with `gap` metres between them, wider than
/// the neighbor radius so agents never react to someone behind a wall.
inline EnvironmentLayout build_layout(const graph::EnvironmentGraph& g, double gap = 6.0) {
  if (auto v = graph::validate(g); !v.empty()) throw std::invalid_argument("build_layout: invalid graph: " + v.front().message);
  EnvironmentLayout out;
  out.room_ids = graph::topo_order(g);
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < out.room_ids.size(); ++i) index[out.room_ids[i]] = static_cast<int>(i);

  std::vector<sim::Region> regions;
  std::vector<sim::Portal> portals;
  double x = 0.0;
  for (std::size_t i = 0; i < out.room_ids.size(); ++i) {
    const auto& node = *g.find(out.room_ids[i]);
    const RoomSpec& s = node.spec;
    sim::Region r;
    r.id = node.id;
    r.bounds = sim::Rect{{x, 0.0}, {x + s.width, s.length}};
    r.entrance = sim::Segment{{x, 0.0}, {x + s.width, 0.0}};
    regions.push_back(r);

    const double x0 = x + (s.width - s.exit_size) * 0.5;
    sim::Portal p;
    p.id = node.id + ":exit";
    p.segment = sim::GoalSegment{{{x0, s.length}, {x0 + s.exit_size, s.length}}};
    p.kind = g.is_exit(node.id) ? sim::PortalKind::exit : sim::PortalKind::transfer;
    p.region = static_cast<int>(i);
    portals.push_back(p);
    out.portal.push_back(static_cast<int>(i));

    std::vector<Successor> succ;
    for (const auto* e : g.outgoing(node.id)) succ.push_back({index.at(e->to), e->fraction});
    std::sort(succ.begin(), succ.end(), [](const Successor& a, const Successor& b) { return a.region < b.region; });
    out.successors.push_back(std::move(succ));
    x += s.width + gap;
  }
  out.world = std::make_shared<const sim::World>(std::move(regions), std::move(portals));
  return out;
}

/// Splits agents leaving each room among its successors in proportion to
/// the edge fractions: the k-th agent routed through a room goes to the
/// successor furthest behind its quota (ties to the lower region index).
class RouteAllocator {
 public:
  explicit RouteAllocator(const EnvironmentLayout& l) : layout_(&l), sent_(l.room_ids.size()) {
    for (std::size_t r = 0; r < sent_.size(); ++r) sent_[r].assign(l.successors[r].size(), 0);
  }

  std::vector<sim::RouteStep> route_from(int region) {
    std::vector<sim::RouteStep> route;
    int cur = region;
    while (true) {
      const auto& succ = layout_->successors[static_cast<std::size_t>(cur)];
      if (succ.empty()) {
        route.push_back({layout_->portal[static_cast<std::size_t>(cur)], -1});
        return route;
      }
      auto& sent = sent_[static_cast<std::size_t>(cur)];
      double total = 1.0;
      for (long c : sent) total += static_cast<double>(c);
      std::size_t pick = 0;
      double best = -1e300;
      for (std::size_t k = 0; k < succ.size(); ++k) {
        const double deficit = succ[k].fraction * total - static_cast<double>(sent[k]);
        if (deficit > best + 1e-12) {
          best = deficit;
          pick = k;
        }
      }
      ++sent[pick];
      route.push_back({layout_->portal[static_cast<std::size_t>(cur)], succ[pick].region});
      cur = succ[pick].region;
    }
  }

 private:
  const EnvironmentLayout* layout_;
  std::vector<std::vector<long>> sent_;
};

struct RoomTimeline {
  std::string id;
  /// Agents that left the room (through its exit or transfer portal).
  std::size_t left = 0;
  double first_leave = 0.0;
  double last_leave = 0.0;
  /// Departures per whole second of simulated time.
  std::vector<int> per_second;
};

struct EnvironmentRun {
  /// Simulated total evacuation time (time cap when censored).
  double tt = 0.0;
  double avg_exit_time = 0.0;
  std::size_t agents = 0;
  std::size_t exited = 0;
  bool censored = false;
  double sim_time = 0.0;
  std::vector<RoomTimeline> rooms;
};

inline sim::Simulation make_environment_simulation(const EnvironmentLayout& l, const graph::EnvironmentGraph& g,
                                                   const sim::SimConfig& cfg, sim::AgentParams params = {}) {
  sim::Simulation s(l.world, cfg);
  RouteAllocator routes(l);
  for (std::size_t r = 0; r < l.room_ids.size(); ++r) {
    const auto& spec = g.find(l.room_ids[r])->spec;
    const auto& bounds = l.world->region(static_cast<int>(r)).bounds;
    for (const auto& p : sim::spiral_positions(static_cast<std::size_t>(spec.initial_population), spec.width, spec.length,
                                               sim::kSpiralSpacing, params.radius, bounds.lo)) {
      s.add_agent(p, static_cast<int>(r), routes.route_from(static_cast<int>(r)), static_cast<int>(r), params);
    }
  }
  return s;
}

inline EnvironmentRun summarize_run(const EnvironmentLayout& l, const sim::Simulation& s) {
  EnvironmentRun out;
  out.agents = s.agents().size();
  out.censored = !s.idle();
  out.sim_time = s.time();
  double sum = 0.0;
  for (const auto& a : s.agents()) {
    if (!a.exited_at) continue;
    ++out.exited;
    sum += *a.exited_at;
    out.tt = std::max(out.tt, *a.exited_at);
  }
  if (out.exited > 0) out.avg_exit_time = sum / static_cast<double>(out.exited);
  if (out.censored) out.tt = s.time();

  const auto seconds = static_cast<std::size_t>(std::ceil(s.time())) + 1;
  for (const auto& id : l.room_ids) out.rooms.push_back({id, 0, 0.0, 0.0, std::vector<int>(seconds, 0)});
  for (const auto& e : s.events()) {
    auto& r = out.rooms[static_cast<std::size_t>(e.from_region)];
    if (r.left == 0) r.first_leave = e.time;
    r.last_leave = std::max(r.last_leave, e.time);
    ++r.left;
    ++r.per_second[std::min(seconds - 1, static_cast<std::size_t>(e.time))];
  }
  return out;
}

/// Full simulation of an environment until everyone has left or the cap.
inline EnvironmentRun run_environment(const graph::EnvironmentGraph& g, const sim::SimConfig& cfg,
                                      sim::AgentParams params = {}) {
  const EnvironmentLayout l = build_layout(g);
  sim::Simulation s = make_environment_simulation(l, g, cfg, params);
  while (!s.idle() && s.time() < cfg.max_sim_time) s.step();
  return summarize_run(l, s);
}

inline nlohmann::json to_json(const EnvironmentRun& r) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& t : r.rooms) {
    rooms.push_back({{"id", t.id}, {"left", t.left}, {"first_leave", t.first_leave}, {"last_leave", t.last_leave},
                     {"per_second", t.per_second}});
  }
  return {{"tt", r.tt},           {"avg_exit_time", r.avg_exit_time}, {"agents", r.agents}, {"exited", r.exited},
          {"censored", r.censored}, {"sim_time", r.sim_time},         {"rooms", rooms}};
}

}  // namespace crowdest::layout
