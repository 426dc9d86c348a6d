#pragma once

// Optimal reciprocal collision avoidance: half-plane construction and the
// incremental 2D linear program that picks each agent's new velocity.
// The LP follows the structure of the RVO2 library (van den Berg et al.).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "crowdest/agent.hpp"
#include "crowdest/geometry.hpp"

namespace crowdest::sim {

/// Velocity-space half-plane {v : dot(normal, v - point) >= 0}.
struct HalfPlaneConstraint {
  Vec2 point;
  Vec2 normal;

  bool satisfied(const Vec2& v, double tol = 0.0) const { return dot(normal, v - point) >= -tol; }
  /// Positive when v lies outside the permitted side.
  double violation(const Vec2& v) const { return -dot(normal, v - point); }
};

struct VelocitySolution {
  Vec2 velocity;
  /// True when the constraints were infeasible and the back-off LP ran.
  bool fallback = false;
};

struct OrcaConstraints {
  /// Wall constraints first, then one per neighbor.
  std::vector<HalfPlaneConstraint> lines;
  std::size_t wall_count = 0;
};

namespace detail {

inline constexpr double kLpEpsilon = 1e-9;

// Boundary line with the permitted side to the left of `direction`.
struct Line {
  Vec2 point;
  Vec2 direction;
};

inline Line to_line(const HalfPlaneConstraint& c) { return {c.point, Vec2{c.normal.y, -c.normal.x}}; }

inline bool violates(const Line& line, const Vec2& v) { return det(line.direction, line.point - v) > 0.0; }

// Optimizes along line `line_no` subject to the earlier lines and the disc.
inline bool lp1(std::span<const Line> lines, std::size_t line_no, double radius, const Vec2& opt,
                bool direction_opt, Vec2& result) {
  const Line& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - abs_sq(line.point);
  if (discriminant < 0.0) {
    return false;
  }

  const double sqrt_disc = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_disc;
  double t_right = -dot_product + sqrt_disc;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);

    if (std::fabs(denominator) <= kLpEpsilon) {
      // parallel
      if (numerator < 0.0) {
        return false;
      }
      continue;
    }

    const double t = numerator / denominator;
    if (denominator >= 0.0) {
      t_right = std::min(t_right, t);
    } else {
      t_left = std::max(t_left, t);
    }
    if (t_left > t_right) {
      return false;
    }
  }

  if (direction_opt) {
    result = dot(opt, line.direction) > 0.0 ? line.point + t_right * line.direction
                                            : line.point + t_left * line.direction;
  } else {
    const double t = dot(line.direction, opt - line.point);
    result = line.point + std::clamp(t, t_left, t_right) * line.direction;
  }
  return true;
}

// Returns the index of the first line it failed on, or lines.size().
inline std::size_t lp2(std::span<const Line> lines, double radius, const Vec2& opt, bool direction_opt,
                       Vec2& result) {
  if (direction_opt) {
    result = opt * radius;
  } else if (abs_sq(opt) > radius * radius) {
    result = normalize(opt) * radius;
  } else {
    result = opt;
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (violates(lines[i], result)) {
      const Vec2 previous = result;
      if (!lp1(lines, i, radius, opt, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return lines.size();
}

// Minimizes the maximum violation of the soft lines (index >= hard_count)
// while keeping the hard ones.
inline void lp3(std::span<const Line> lines, std::size_t hard_count, std::size_t begin_line, double radius,
                Vec2& result) {
  double distance = 0.0;
  std::vector<Line> projected;

  for (std::size_t i = begin_line; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= distance) {
      continue;
    }

    projected.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(hard_count));
    for (std::size_t j = hard_count; j < i; ++j) {
      Line line;
      const double determinant = det(lines[i].direction, lines[j].direction);
      if (std::fabs(determinant) <= kLpEpsilon) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) {
          continue;
        }
        line.point = 0.5 * (lines[i].point + lines[j].point);
      } else {
        line.point = lines[i].point +
                     (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) * lines[i].direction;
      }
      line.direction = normalize(lines[j].direction - lines[i].direction);
      projected.push_back(line);
    }

    const Vec2 previous = result;
    if (lp2(projected, radius, Vec2{-lines[i].direction.y, lines[i].direction.x}, true, result) <
        projected.size()) {
      // Only reachable through round-off; keep the previous (feasible) result.
      result = previous;
    }
    distance = det(lines[i].direction, lines[i].point - result);
  }
}

}  // namespace detail

/// Velocity inside the max_speed disc closest to `pref` that satisfies every
/// constraint; when none exists, the one minimizing the largest violation of
/// the soft constraints (the first `hard_count` stay hard).
inline VelocitySolution solve_velocity(std::span<const HalfPlaneConstraint> constraints, const Vec2& pref,
                                       double max_speed, std::size_t hard_count = 0) {
  std::vector<detail::Line> lines;
  lines.reserve(constraints.size());
  for (const auto& c : constraints) {
    lines.push_back(detail::to_line(c));
  }

  VelocitySolution out;
  const std::size_t failed = detail::lp2(lines, max_speed, pref, false, out.velocity);
  if (failed < lines.size()) {
    out.fallback = true;
    detail::lp3(lines, std::min(hard_count, lines.size()), failed, max_speed, out.velocity);
  }
  // Round-off can leave the result a hair outside the disc.
  const double speed = norm(out.velocity);
  if (speed > max_speed) {
    out.velocity = out.velocity * (max_speed / speed);
  }
  return out;
}

/// Reciprocal constraint induced on `self` by `other` (each takes half of the
/// avoidance effort). Pairs already in contact get an escape constraint with
/// horizon dt.
inline HalfPlaneConstraint agent_constraint(const Agent& self, const Agent& other, double tau, double dt) {
  const Vec2 rel_pos = other.position - self.position;
  const Vec2 rel_vel = self.velocity - other.velocity;
  const double dist_sq = abs_sq(rel_pos);
  const double combined_radius = self.radius + other.radius;
  const double combined_radius_sq = combined_radius * combined_radius;

  Vec2 direction;
  Vec2 u;

  if (dist_sq > combined_radius_sq) {
    const double inv_tau = 1.0 / tau;
    // Vector from cutoff center to relative velocity.
    const Vec2 w = rel_vel - inv_tau * rel_pos;
    const double w_len_sq = abs_sq(w);
    const double dot_product = dot(w, rel_pos);

    if (dot_product < 0.0 && dot_product * dot_product > combined_radius_sq * w_len_sq) {
      // Project on cut-off circle.
      const double w_len = std::sqrt(w_len_sq);
      const Vec2 unit_w = w / w_len;
      direction = Vec2{unit_w.y, -unit_w.x};
      u = (combined_radius * inv_tau - w_len) * unit_w;
    } else {
      // Project on legs.
      const double leg = std::sqrt(dist_sq - combined_radius_sq);
      if (det(rel_pos, w) > 0.0) {
        direction = Vec2{rel_pos.x * leg - rel_pos.y * combined_radius, rel_pos.x * combined_radius + rel_pos.y * leg} /
                    dist_sq;
      } else {
        direction = -Vec2{rel_pos.x * leg + rel_pos.y * combined_radius,
                          -rel_pos.x * combined_radius + rel_pos.y * leg} /
                    dist_sq;
      }
      u = dot(rel_vel, direction) * direction - rel_vel;
    }
  } else {
    const double inv_dt = 1.0 / dt;
    const Vec2 w = rel_vel - inv_dt * rel_pos;
    const double w_len = norm(w);
    Vec2 unit_w;
    if (w_len > 0.0) {
      unit_w = w / w_len;
    } else {
      // Coincident centers and equal velocities: separate along a fixed axis
      // ordered by id so the pair moves apart.
      unit_w = self.id < other.id ? Vec2{-1.0, 0.0} : Vec2{1.0, 0.0};
    }
    direction = Vec2{unit_w.y, -unit_w.x};
    u = (combined_radius * inv_dt - w_len) * unit_w;
  }

  const Vec2 point = self.velocity + 0.5 * u;
  return {point, perp(direction)};
}

/// Constraint keeping `self` off a wall for at least tau_obst seconds: the
/// wall is a convex set, so it lies behind the tangent line at its closest
/// point and bounding the approach speed along that normal is sufficient.
/// Returns false for a wall through the agent's center (no usable normal).
inline bool wall_constraint(const Agent& self, const WallSegment& wall, double tau_obst, double dt,
                            HalfPlaneConstraint& out) {
  const Vec2 c = closest_point(wall, self.position);
  const Vec2 away = self.position - c;
  const double d = norm(away);
  if (d <= 1e-12) {
    return false;
  }
  const Vec2 n = away / d;
  const double horizon = d > self.radius ? tau_obst : dt;
  out = HalfPlaneConstraint{n * ((self.radius - d) / horizon), n};
  return true;
}

/// All ORCA constraints for one agent. `neighbors` must exclude `self`;
/// callers pass them sorted nearest-first.
inline OrcaConstraints orca_constraints(const Agent& self, std::span<const Agent* const> neighbors,
                                        std::span<const WallSegment* const> walls, const SimConfig& cfg) {
  OrcaConstraints out;
  out.lines.reserve(walls.size() + neighbors.size());
  for (const WallSegment* wall : walls) {
    HalfPlaneConstraint c;
    if (wall_constraint(self, *wall, cfg.tau_obst, cfg.dt, c)) {
      out.lines.push_back(c);
    }
  }
  out.wall_count = out.lines.size();
  for (const Agent* other : neighbors) {
    out.lines.push_back(agent_constraint(self, *other, cfg.tau, cfg.dt));
  }
  return out;
}

}  // namespace crowdest::sim
