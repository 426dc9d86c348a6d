#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/sim.hpp"
#include "crowdest/world.hpp"

namespace crowdest {

/// The six per-room parameters the surrogate consumes.
struct RoomSpec {
  double width = 10.0;
  double length = 10.0;
  double exit_size = 1.0;
  double input_flow = 0.0;
  double flow_duration = 0.0;
  int initial_population = 0;

  std::array<double, 6> features() const {
    return {width, length, exit_size, input_flow, flow_duration, static_cast<double>(initial_population)};
  }

  friend bool operator==(const RoomSpec&, const RoomSpec&) = default;
};

namespace sim {

/// Rectangular room [0,width] x [0,length] with the exit centered on the far
/// wall (y = length) and the entrance band on the near wall (y = 0).
inline World room_world(const RoomSpec& spec, Vec2 origin = {}, const std::string& id = "room") {
  if (!(spec.width > 0.0) || !(spec.length > 0.0) || !(spec.exit_size > 0.0)) {
    throw std::invalid_argument("room dimensions must be positive");
  }
  if (spec.exit_size > spec.width + 1e-12) throw std::invalid_argument("exit_size exceeds room width");
  Region r;
  r.id = id;
  r.bounds = Rect{origin, origin + Vec2{spec.width, spec.length}};
  r.entrance = Segment{origin, origin + Vec2{spec.width, 0.0}};

  const double x0 = origin.x + (spec.width - spec.exit_size) * 0.5;
  Portal exit;
  exit.id = id + ":exit";
  exit.segment = GoalSegment{{{x0, origin.y + spec.length}, {x0 + spec.exit_size, origin.y + spec.length}}};
  exit.kind = PortalKind::exit;
  exit.region = 0;
  return World({r}, {exit});
}

/// Metrics of one region from a finished run; exit times are taken from the
/// agents whose exits are listed in `exit_times`.
inline RoomMetrics summarize(const RegionStats& st, const std::vector<double>& exit_times, bool censored, double end_time) {
  RoomMetrics m;
  m.censored = censored;
  if (!exit_times.empty()) {
    double sum = 0.0;
    for (double t : exit_times) sum += t;
    m.avg_exit_time = sum / static_cast<double>(exit_times.size());
    m.tt = *std::max_element(exit_times.begin(), exit_times.end());
  }
  if (censored) m.tt = end_time;
  if (st.agent_ticks > 0) m.avg_speed = st.speed_sum / static_cast<double>(st.agent_ticks);
  if (st.occupied_ticks > 0) m.avg_density = st.density_sum / static_cast<double>(st.occupied_ticks);
  return m;
}

/// Builds the single-room simulation (spiral initial population, inflow on
/// the entrance band) without running it.
inline Simulation make_room_simulation(const RoomSpec& spec, const SimConfig& cfg, AgentParams params = {}) {
  if (spec.initial_population < 0 || spec.input_flow < 0.0 || spec.flow_duration < 0.0) {
    throw std::invalid_argument("room population and flow must be non-negative");
  }
  auto world = std::make_shared<const World>(room_world(spec));
  Simulation sim(world, cfg);
  const std::vector<RouteStep> route{RouteStep{0, -1}};
  for (const Vec2& p : spiral_positions(static_cast<std::size_t>(spec.initial_population), spec.width, spec.length,
                                        kSpiralSpacing, params.radius)) {
    sim.add_agent(p, 0, route, 0, params);
  }
  if (spec.input_flow > 0.0 && spec.flow_duration > 0.0) {
    FlowSource flow;
    flow.region = 0;
    flow.rate = spec.input_flow;
    flow.duration = spec.flow_duration;
    flow.route = route;
    flow.params = params;
    sim.add_flow(std::move(flow));
  }
  return sim;
}

inline RoomMetrics metrics_of(const Simulation& sim, bool censored) {
  std::vector<double> exits;
  for (const auto& a : sim.agents()) {
    if (a.exited_at) exits.push_back(*a.exited_at);
  }
  return summarize(sim.region_stats().at(0), exits, censored, sim.time());
}

/// Simulates one rectangular room until it empties or the time cap hits.
inline RoomMetrics run_room(const RoomSpec& spec, const SimConfig& cfg, AgentParams params = {}) {
  Simulation sim = make_room_simulation(spec, cfg, params);
  while (!sim.idle() && sim.time() < cfg.max_sim_time) sim.step();
  return metrics_of(sim, !sim.idle());
}

}  // namespace sim
}  // namespace crowdest
