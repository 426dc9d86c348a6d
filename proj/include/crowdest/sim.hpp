#pragma once

// Fixed-timestep agent simulation: goal seeking along portal routes, ORCA
// collision avoidance against agents and walls, flow spawning and transfers
// between regions, and per-region metric integrals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "crowdest/agent.hpp"
#include "crowdest/geometry.hpp"
#include "crowdest/orca.hpp"
#include "crowdest/world.hpp"

namespace crowdest::sim {

/// Lattice pitch of the initial placement (one agent diameter).
inline constexpr double kSpiralSpacing = 0.6;

struct AgentParams {
  double radius = kDefaultRadius;
  double max_speed = kDefaultMaxSpeed;
};

/// Measured outputs of one simulated room.
struct RoomMetrics {
  double tt = 0.0;
  double avg_exit_time = 0.0;
  double avg_speed = 0.0;
  double avg_density = 0.0;
  bool censored = false;
  friend bool operator==(const RoomMetrics&, const RoomMetrics&) = default;
};

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Initial placement on a square lattice around the center of the room
/// [origin, origin + (width, length)], ring by ring in diamond (L1) rings,
/// each ring wound counter-clockwise from +x. Lattice points that fall
/// outside the room shrunk by `radius` are skipped; once the room is full,
/// further agents go on the half-offset lattice and then repeat positions.
inline std::vector<Vec2> spiral_positions(std::size_t n, double width, double length,
                                          double spacing = kSpiralSpacing, double radius = kDefaultRadius,
                                          Vec2 origin = {}) {
  if (!(width > 0.0) || !(length > 0.0)) throw std::invalid_argument("spiral_positions: room dimensions must be positive");
  if (!(spacing > 0.0)) throw std::invalid_argument("spiral_positions: spacing must be positive");

  std::vector<Vec2> out;
  if (n == 0) return out;
  out.reserve(n);

  const Rect inner{{origin.x + radius, origin.y + radius}, {origin.x + width - radius, origin.y + length - radius}};
  const Vec2 center = origin + Vec2{width * 0.5, length * 0.5};
  constexpr double tol = 1e-9;
  const auto clamp_inside = [&](Vec2 p) {
    p.x = std::clamp(p.x, std::min(inner.lo.x, center.x), std::max(inner.hi.x, center.x));
    p.y = std::clamp(p.y, std::min(inner.lo.y, center.y), std::max(inner.hi.y, center.y));
    return p;
  };

  // Largest ring that can still touch the room.
  const long max_ring = static_cast<long>(std::ceil((width + length) / spacing)) + 2;

  const auto enumerate = [&](Vec2 lattice_center, std::size_t limit, std::vector<Vec2>& sink) {
    const auto take = [&](long i, long j) {
      const Vec2 p = lattice_center + Vec2{static_cast<double>(i) * spacing, static_cast<double>(j) * spacing};
      if (inner.contains(p, tol)) sink.push_back(p);
      return sink.size() >= limit;
    };
    if (take(0, 0)) return;
    for (long k = 1; k <= max_ring; ++k) {
      for (long m = 0; m < k; ++m) if (take(k - m, m)) return;
      for (long m = 0; m < k; ++m) if (take(-m, k - m)) return;
      for (long m = 0; m < k; ++m) if (take(-k + m, -m)) return;
      for (long m = 0; m < k; ++m) if (take(m, -k + m)) return;
    }
  };

  enumerate(center, n, out);
  if (out.size() == n) return out;

  std::vector<Vec2> overflow;
  enumerate(center + Vec2{spacing * 0.5, spacing * 0.5}, n - out.size(), overflow);
  if (overflow.empty()) overflow.push_back(clamp_inside(center));
  std::size_t k = 0;
  while (out.size() < n) {
    out.push_back(overflow[k % overflow.size()]);
    ++k;
  }
  return out;
}

struct SpawnCount {
  std::size_t spawn_now = 0;
  double accumulator = 0.0;
};

/// Fractional-accumulation spawning for an inflow of `rate` agents/s that
/// lasts `duration` seconds; the last partial tick is prorated so the total
/// over a run is floor(rate * duration).
inline SpawnCount flow_spawn_count(double rate, double duration, double t, double dt, double accumulator) {
  if (!(rate > 0.0) || t >= duration) return {0, accumulator};
  accumulator += rate * std::min(dt, duration - t);
  const double whole = std::floor(accumulator + 1e-9);
  return {static_cast<std::size_t>(whole), accumulator - whole};
}

namespace detail {

// Goal segment shrunk by the agent radius at both ends.
inline Segment inset(const Segment& s, double radius) {
  const double len = length(s);
  if (len <= 2.0 * radius) {
    const Vec2 m = midpoint(s);
    return {m, m};
  }
  const Vec2 dir = (s.b - s.a) / len;
  return {s.a + dir * radius, s.b - dir * radius};
}

}  // namespace detail

/// Preferred velocity toward the nearest point of a goal opening (inset by
/// the agent radius), at full speed; zero once the agent overlaps it.
inline Vec2 preferred_velocity(const Agent& agent, const GoalSegment& goal) {
  if (distance(goal, agent.position) <= agent.radius) return {};
  const Vec2 target = closest_point(detail::inset(goal, agent.radius), agent.position);
  return normalize(target - agent.position) * agent.max_speed;
}

/// A crossing between regions or out of the world (`to_region` -1).
struct TransitEvent {
  double time = 0.0;
  int agent = -1;
  int portal = -1;
  int from_region = -1;
  int to_region = -1;
};

struct RegionStats {
  double speed_sum = 0.0;
  std::uint64_t agent_ticks = 0;
  double density_sum = 0.0;
  std::uint64_t occupied_ticks = 0;
};

struct FlowSource {
  int region = 0;
  double rate = 0.0;
  double duration = 0.0;
  std::vector<RouteStep> route;
  int group = 0;
  AgentParams params;
  double accumulator = 0.0;
  std::size_t spawned = 0;
};

class Simulation {
 public:
  Simulation(std::shared_ptr<const World> world, SimConfig cfg)
      : world_(std::move(world)), cfg_(cfg), rng_(cfg.rng_seed), stats_(world_->regions().size()) {
    cfg_.validate();
  }

  const World& world() const { return *world_; }
  const SimConfig& config() const { return cfg_; }
  double time() const { return static_cast<double>(tick_) * cfg_.dt; }
  std::uint64_t ticks() const { return tick_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const std::vector<TransitEvent>& events() const { return events_; }
  const std::vector<RegionStats>& region_stats() const { return stats_; }
  /// Number of agent velocity solves that needed the back-off LP.
  std::uint64_t fallback_count() const { return fallbacks_; }
  std::mt19937_64& rng() { return rng_; }

  int add_agent(const Vec2& position, int region, std::vector<RouteStep> route, int group = 0,
                AgentParams params = {}, std::optional<Vec2> final_target = std::nullopt) {
    if (!(params.radius > 0.0)) throw std::invalid_argument("agent radius must be positive");
    if (!(params.max_speed > 0.0)) throw std::invalid_argument("agent max_speed must be positive");
    Agent a;
    a.id = static_cast<int>(agents_.size());
    a.position = position;
    a.radius = params.radius;
    a.max_speed = params.max_speed;
    a.region = region;
    a.group = group;
    a.route = std::move(route);
    a.final_target = final_target;
    note_reach(a);
    agents_.push_back(std::move(a));
    return agents_.back().id;
  }

  void add_flow(FlowSource flow) {
    if (!world_->region(flow.region).entrance) throw std::invalid_argument("flow region has no entrance");
    flows_.push_back(std::move(flow));
  }

  const std::vector<FlowSource>& flows() const { return flows_; }

  bool flows_done() const {
    return std::all_of(flows_.begin(), flows_.end(), [&](const FlowSource& f) {
      return !(f.rate > 0.0) || time() >= f.duration;
    });
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(agents_.begin(), agents_.end(), [](const Agent& a) { return a.active(); }));
  }

  /// Nothing left to do: inflow finished and every agent has left.
  bool idle() const { return flows_done() && active_count() == 0; }

  /// Position on the region's entrance band, redrawn up to 10 times while it
  /// overlaps an active agent.
  Vec2 entrance_position(int region, double radius) {
    const Region& r = world_->region(region);
    const Segment band = detail::inset(*r.entrance, radius);
    Vec2 inward = normalize(perp(r.entrance->b - r.entrance->a));
    if (dot(inward, r.bounds.center() - midpoint(*r.entrance)) < 0.0) inward = -inward;

    Vec2 p;
    for (int attempt = 0; attempt < 10; ++attempt) {
      p = band.a + (band.b - band.a) * uniform01(rng_) + inward * radius;
      const bool overlaps = std::any_of(agents_.begin(), agents_.end(), [&](const Agent& o) {
        return o.active() && abs_sq(o.position - p) < (o.radius + radius) * (o.radius + radius);
      });
      if (!overlaps) break;
    }
    return p;
  }

  void step() {
    const double t = time();
    const double t_next = static_cast<double>(tick_ + 1) * cfg_.dt;

    for (auto& flow : flows_) {
      const auto sc = flow_spawn_count(flow.rate, flow.duration, t, cfg_.dt, flow.accumulator);
      flow.accumulator = sc.accumulator;
      for (std::size_t k = 0; k < sc.spawn_now; ++k) {
        const Vec2 p = entrance_position(flow.region, flow.params.radius);
        add_agent(p, flow.region, flow.route, flow.group, flow.params);
        ++flow.spawned;
      }
    }

    rebuild_agent_grid();
    if (cfg_.walls_enabled && wall_index_range_ < needed_wall_range_) rebuild_wall_index();

    new_velocities_.assign(agents_.size(), Vec2{});
    std::vector<const Agent*> neighbors;
    std::vector<const WallSegment*> walls;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const Agent& a = agents_[i];
      if (!a.active()) continue;
      Vec2 pref = preferred(a);
      if (cfg_.pref_jitter > 0.0) {
        const double angle = 2.0 * std::numbers::pi * uniform01(rng_);
        pref += Vec2{std::cos(angle), std::sin(angle)} * (cfg_.pref_jitter * uniform01(rng_));
      }
      gather_neighbors(a, neighbors);
      gather_walls(a, walls);
      const OrcaConstraints oc = orca_constraints(a, neighbors, walls, cfg_);
      const VelocitySolution sol = solve_velocity(oc.lines, pref, a.max_speed, oc.wall_count);
      if (sol.fallback) ++fallbacks_;
      new_velocities_[i] = sol.velocity;
    }

    std::vector<std::size_t> occupancy(stats_.size(), 0);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      Agent& a = agents_[i];
      if (!a.active()) continue;
      a.velocity = new_velocities_[i];
      const Vec2 before = a.position;
      a.position += a.velocity * cfg_.dt;
      if (cfg_.walls_enabled) clamp_to_walls(a, before);

      auto& st = stats_[static_cast<std::size_t>(a.region)];
      st.speed_sum += norm(a.velocity);
      ++st.agent_ticks;
      ++occupancy[static_cast<std::size_t>(a.region)];
    }
    for (std::size_t r = 0; r < stats_.size(); ++r) {
      if (occupancy[r] == 0) continue;
      stats_[r].density_sum += static_cast<double>(occupancy[r]) / world_->region(static_cast<int>(r)).bounds.area();
      ++stats_[r].occupied_ticks;
    }

    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (agents_[i].active()) advance_route(agents_[i], t_next);
    }
    ++tick_;
  }

 private:
  Vec2 preferred(const Agent& a) const {
    if (!a.has_route_step()) {
      if (!a.final_target) return {};
      Vec2 g = *a.final_target - a.position;
      // Arrival: speed equals the remaining distance per second near the target.
      const double d = norm(g);
      if (d > a.max_speed) g = g * (a.max_speed / d);
      return g;
    }
    const RouteStep& step = a.current_step();
    const Portal& p = world_->portal(step.portal);
    if (p.kind != PortalKind::pass) return preferred_velocity(a, p.segment);
    // Aim just past the opening so the agent walks through it.
    const Vec2 n = world_->portal_normal(step.portal, step.next_region);
    const Vec2 target = closest_point(detail::inset(p.segment, a.radius), a.position) + n * (a.radius + 0.5);
    return normalize(target - a.position) * a.max_speed;
  }

  void advance_route(Agent& a, double t_next) {
    if (!a.has_route_step()) return;
    const RouteStep step = a.current_step();
    const Portal& p = world_->portal(step.portal);
    switch (p.kind) {
      case PortalKind::exit:
        if (distance(p.segment, a.position) <= a.radius) {
          a.exited_at = t_next;
          ++a.route_pos;
          events_.push_back({t_next, a.id, step.portal, a.region, -1});
        }
        break;
      case PortalKind::transfer:
        if (distance(p.segment, a.position) <= a.radius) {
          events_.push_back({t_next, a.id, step.portal, a.region, step.next_region});
          a.position = entrance_position(step.next_region, a.radius);
          a.velocity = {};
          a.region = step.next_region;
          ++a.route_pos;
        }
        break;
      case PortalKind::pass: {
        const Region& to = world_->region(step.next_region);
        const Vec2 n = world_->portal_normal(step.portal, step.next_region);
        if (to.bounds.contains(a.position, 1e-9) && dot(a.position - p.segment.a, n) >= a.radius) {
          events_.push_back({t_next, a.id, step.portal, a.region, step.next_region});
          a.region = step.next_region;
          ++a.route_pos;
        }
        break;
      }
    }
  }

  void note_reach(const Agent& a) {
    const double reach = cfg_.tau_obst * a.max_speed + a.radius + a.max_speed * cfg_.dt + 0.05;
    needed_wall_range_ = std::max(needed_wall_range_, reach);
  }

  void rebuild_agent_grid() {
    const Rect b = world_->bounds();
    cell_ = cfg_.neighbor_radius;
    grid_lo_ = b.lo - Vec2{cell_, cell_};
    grid_w_ = static_cast<std::size_t>((b.width() + 2 * cell_) / cell_) + 1;
    grid_h_ = static_cast<std::size_t>((b.height() + 2 * cell_) / cell_) + 1;
    cell_start_.assign(grid_w_ * grid_h_ + 1, 0);
    agent_cell_.assign(agents_.size(), 0);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (!agents_[i].active()) continue;
      agent_cell_[i] = cell_of(agents_[i].position);
      ++cell_start_[agent_cell_[i] + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    cell_items_.assign(cell_start_.back(), 0);
    std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (!agents_[i].active()) continue;
      cell_items_[fill[agent_cell_[i]]++] = i;
    }
  }

  std::pair<std::size_t, std::size_t> cell_coords(const Vec2& p) const {
    const auto cx = static_cast<long>(std::floor((p.x - grid_lo_.x) / cell_));
    const auto cy = static_cast<long>(std::floor((p.y - grid_lo_.y) / cell_));
    return {static_cast<std::size_t>(std::clamp(cx, 0L, static_cast<long>(grid_w_) - 1)),
            static_cast<std::size_t>(std::clamp(cy, 0L, static_cast<long>(grid_h_) - 1))};
  }

  std::size_t cell_of(const Vec2& p) const {
    const auto [cx, cy] = cell_coords(p);
    return cy * grid_w_ + cx;
  }

  void gather_neighbors(const Agent& a, std::vector<const Agent*>& out) {
    candidates_.clear();
    const double range_sq = cfg_.neighbor_radius * cfg_.neighbor_radius;
    const auto [cx, cy] = cell_coords(a.position);
    for (std::size_t y = cy == 0 ? 0 : cy - 1; y <= std::min(cy + 1, grid_h_ - 1); ++y) {
      for (std::size_t x = cx == 0 ? 0 : cx - 1; x <= std::min(cx + 1, grid_w_ - 1); ++x) {
        const std::size_t c = y * grid_w_ + x;
        for (std::size_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
          const std::size_t j = cell_items_[k];
          if (static_cast<int>(j) == a.id) continue;
          const double d2 = abs_sq(agents_[j].position - a.position);
          if (d2 < range_sq) candidates_.emplace_back(d2, j);
        }
      }
    }
    const std::size_t keep = std::min(candidates_.size(), cfg_.max_neighbors);
    std::partial_sort(candidates_.begin(), candidates_.begin() + static_cast<std::ptrdiff_t>(keep), candidates_.end());
    out.clear();
    for (std::size_t k = 0; k < keep; ++k) out.push_back(&agents_[candidates_[k].second]);
  }

  void rebuild_wall_index() {
    wall_index_range_ = needed_wall_range_;
    const Rect b = world_->bounds();
    wall_lo_ = b.lo - Vec2{1.0, 1.0};
    wall_w_ = static_cast<std::size_t>((b.width() + 2.0) / kWallCell) + 1;
    wall_h_ = static_cast<std::size_t>((b.height() + 2.0) / kWallCell) + 1;
    wall_cells_.assign(wall_w_ * wall_h_, {});
    const double half_diag = kWallCell * std::numbers::sqrt2 * 0.5;
    const auto& walls = world_->walls();
    for (std::size_t y = 0; y < wall_h_; ++y) {
      for (std::size_t x = 0; x < wall_w_; ++x) {
        const Vec2 c = wall_lo_ + Vec2{(static_cast<double>(x) + 0.5) * kWallCell, (static_cast<double>(y) + 0.5) * kWallCell};
        for (std::size_t w = 0; w < walls.size(); ++w) {
          if (distance(walls[w], c) <= wall_index_range_ + half_diag) wall_cells_[y * wall_w_ + x].push_back(w);
        }
      }
    }
  }

  std::span<const std::size_t> walls_near(const Vec2& p) const {
    const auto cx = std::clamp(static_cast<long>(std::floor((p.x - wall_lo_.x) / kWallCell)), 0L, static_cast<long>(wall_w_) - 1);
    const auto cy = std::clamp(static_cast<long>(std::floor((p.y - wall_lo_.y) / kWallCell)), 0L, static_cast<long>(wall_h_) - 1);
    return wall_cells_[static_cast<std::size_t>(cy) * wall_w_ + static_cast<std::size_t>(cx)];
  }

  void gather_walls(const Agent& a, std::vector<const WallSegment*>& out) const {
    out.clear();
    if (!cfg_.walls_enabled) return;
    const double range = cfg_.tau_obst * a.max_speed + a.radius;
    const auto& walls = world_->walls();
    for (std::size_t w : walls_near(a.position)) {
      if (distance(walls[w], a.position) < range) out.push_back(&walls[w]);
    }
  }

  // Pushes the disc back off any wall it penetrates; reverts the move if the
  // center left the walkable regions.
  void clamp_to_walls(Agent& a, const Vec2& before) const {
    const auto& walls = world_->walls();
    const auto near = walls_near(a.position);
    for (int iter = 0; iter < 4; ++iter) {
      bool moved = false;
      for (std::size_t w : near) {
        const Vec2 c = closest_point(walls[w], a.position);
        const Vec2 away = a.position - c;
        const double d = norm(away);
        if (d >= a.radius) continue;
        if (d > 1e-12) {
          a.position = c + away * (a.radius / d);
        } else {
          a.position = before;
        }
        moved = true;
      }
      if (!moved) break;
    }
    if (world_->locate(a.position) < 0) a.position = before;
  }

  static constexpr double kWallCell = 1.0;

  std::shared_ptr<const World> world_;
  SimConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Agent> agents_;
  std::vector<FlowSource> flows_;
  std::vector<TransitEvent> events_;
  std::vector<RegionStats> stats_;
  std::uint64_t tick_ = 0;
  std::uint64_t fallbacks_ = 0;

  std::vector<Vec2> new_velocities_;
  std::vector<std::pair<double, std::size_t>> candidates_;

  double cell_ = 5.0;
  Vec2 grid_lo_;
  std::size_t grid_w_ = 1;
  std::size_t grid_h_ = 1;
  std::vector<std::size_t> cell_start_;
  std::vector<std::size_t> cell_items_;
  std::vector<std::size_t> agent_cell_;

  double needed_wall_range_ = 0.0;
  double wall_index_range_ = -1.0;
  Vec2 wall_lo_;
  std::size_t wall_w_ = 1;
  std::size_t wall_h_ = 1;
  std::vector<std::vector<std::size_t>> wall_cells_;
};

}  // namespace crowdest::sim
