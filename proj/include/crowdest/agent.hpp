#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "crowdest/geometry.hpp"

namespace crowdest::sim {

inline constexpr double kDefaultRadius = 0.3;
inline constexpr double kDefaultMaxSpeed = 1.2;

struct SimConfig {
  double dt = 1.0 / 24.0;
  /// Agent-agent ORCA horizon.
  double tau = 3.0;
  /// Agent-wall horizon.
  double tau_obst = 1.0;
  double neighbor_radius = 5.0;
  /// Closest neighbors considered per agent (RVO2 style cap).
  std::size_t max_neighbors = 10;
  double max_sim_time = 1000.0;
  std::uint64_t rng_seed = 0;
  /// Magnitude (m/s) of the random perturbation added to preferred velocities.
  double pref_jitter = 0.0;
  /// Negative-control switch: no wall constraints and no position clamping.
  bool walls_enabled = true;

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be positive");
    if (!(tau >= dt)) throw std::invalid_argument("SimConfig: tau must be >= dt");
    if (!(tau_obst > 0.0)) throw std::invalid_argument("SimConfig: tau_obst must be positive");
    if (!(max_sim_time > 0.0)) throw std::invalid_argument("SimConfig: max_sim_time must be positive");
    if (!(neighbor_radius > 0.0)) throw std::invalid_argument("SimConfig: neighbor_radius must be positive");
  }
};

/// One leg of an agent's route: cross `portal`, ending up in `next_region`
/// (-1 when the portal leaves the world).
struct RouteStep {
  int portal = -1;
  int next_region = -1;
  friend bool operator==(const RouteStep&, const RouteStep&) = default;
};

struct Agent {
  int id = 0;
  Vec2 position;
  Vec2 velocity;
  double radius = kDefaultRadius;
  double max_speed = kDefaultMaxSpeed;
  int region = 0;
  int group = 0;
  std::vector<RouteStep> route;
  std::size_t route_pos = 0;
  /// Point to settle at once the route is exhausted (showcase and counter flow).
  std::optional<Vec2> final_target;
  std::optional<double> exited_at;

  bool active() const { return !exited_at.has_value(); }
  bool has_route_step() const { return route_pos < route.size(); }
  const RouteStep& current_step() const { return route.at(route_pos); }
};

}  // namespace crowdest::sim
