#pragma once

// Walkable layout: a union of axis-aligned regions joined by portals.
// Walls are derived from region edges minus portal openings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "crowdest/agent.hpp"
#include "crowdest/geometry.hpp"

namespace crowdest::sim {

enum class PortalKind {
  /// Shared opening between two regions; agents walk through it.
  pass,
  /// Opening whose crossers reappear on the entrance band of the next region
  /// in their route (multi-room mode).
  transfer,
  /// Opening out of the world.
  exit,
};

struct Region {
  std::string id;
  Rect bounds;
  /// Wall segment on which flow and transferred agents appear.
  std::optional<Segment> entrance;
};

struct Portal {
  std::string id;
  GoalSegment segment;
  PortalKind kind = PortalKind::exit;
  /// Owning region (pass portals: one side).
  int region = -1;
  /// Other side of a pass portal, -1 otherwise.
  int other = -1;
};

namespace detail {

inline constexpr double kGeomTol = 1e-9;

inline bool axis_aligned(const Segment& s) {
  return std::fabs(s.a.x - s.b.x) <= kGeomTol || std::fabs(s.a.y - s.b.y) <= kGeomTol;
}

// Portions of `edge` (axis aligned) not covered by any of `cuts`.
inline std::vector<Segment> subtract_openings(const Segment& edge, const std::vector<Segment>& cuts) {
  const bool horizontal = std::fabs(edge.a.y - edge.b.y) <= kGeomTol;
  const auto coord = [&](const Vec2& p) { return horizontal ? p.x : p.y; };
  const double fixed = horizontal ? edge.a.y : edge.a.x;
  double lo = std::min(coord(edge.a), coord(edge.b));
  double hi = std::max(coord(edge.a), coord(edge.b));

  std::vector<std::pair<double, double>> holes;
  for (const auto& c : cuts) {
    const bool c_horizontal = std::fabs(c.a.y - c.b.y) <= kGeomTol;
    if (c_horizontal != horizontal) continue;
    const double c_fixed = horizontal ? c.a.y : c.a.x;
    if (std::fabs(c_fixed - fixed) > kGeomTol) continue;
    const double c_lo = std::max(lo, std::min(coord(c.a), coord(c.b)));
    const double c_hi = std::min(hi, std::max(coord(c.a), coord(c.b)));
    if (c_hi > c_lo + kGeomTol) holes.emplace_back(c_lo, c_hi);
  }
  std::sort(holes.begin(), holes.end());

  std::vector<Segment> out;
  const auto make = [&](double a, double b) {
    return horizontal ? Segment{{a, fixed}, {b, fixed}} : Segment{{fixed, a}, {fixed, b}};
  };
  double cursor = lo;
  for (const auto& [h_lo, h_hi] : holes) {
    if (h_lo > cursor + kGeomTol) out.push_back(make(cursor, h_lo));
    cursor = std::max(cursor, h_hi);
  }
  if (hi > cursor + kGeomTol) out.push_back(make(cursor, hi));
  return out;
}

}  // namespace detail

class World {
 public:
  World() = default;

  World(std::vector<Region> regions, std::vector<Portal> portals)
      : regions_(std::move(regions)), portals_(std::move(portals)) {
    check();
    build_walls();
  }

  const std::vector<Region>& regions() const { return regions_; }
  const std::vector<Portal>& portals() const { return portals_; }
  const std::vector<WallSegment>& walls() const { return walls_; }

  const Region& region(int i) const { return regions_.at(static_cast<std::size_t>(i)); }
  const Portal& portal(int i) const { return portals_.at(static_cast<std::size_t>(i)); }

  int region_index(const std::string& id) const {
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      if (regions_[i].id == id) return static_cast<int>(i);
    }
    throw std::out_of_range("unknown region '" + id + "'");
  }

  int portal_index(const std::string& id) const {
    for (std::size_t i = 0; i < portals_.size(); ++i) {
      if (portals_[i].id == id) return static_cast<int>(i);
    }
    throw std::out_of_range("unknown portal '" + id + "'");
  }

  Rect bounds() const {
    Rect b{{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()},
           {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()}};
    for (const auto& r : regions_) {
      b.lo.x = std::min(b.lo.x, r.bounds.lo.x);
      b.lo.y = std::min(b.lo.y, r.bounds.lo.y);
      b.hi.x = std::max(b.hi.x, r.bounds.hi.x);
      b.hi.y = std::max(b.hi.y, r.bounds.hi.y);
    }
    return b;
  }

  double walkable_area() const {
    double a = 0.0;
    for (const auto& r : regions_) a += r.bounds.area();
    return a;
  }

  /// Region containing p (first match), or -1.
  int locate(const Vec2& p) const {
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      if (regions_[i].bounds.contains(p, detail::kGeomTol)) return static_cast<int>(i);
    }
    return -1;
  }

  /// Unit normal of the portal pointing into `into` (pass portals) or out of
  /// the owning region (exit and transfer portals).
  Vec2 portal_normal(int portal_idx, int into) const {
    const Portal& p = portal(portal_idx);
    const Vec2 n = normalize(perp(p.segment.b - p.segment.a));
    const Vec2 out_of_owner = dot(n, midpoint(p.segment) - region(p.region).bounds.center()) >= 0.0 ? n : -n;
    if (p.kind == PortalKind::pass && into == p.region) return -out_of_owner;
    return out_of_owner;
  }

  /// True when a disc of `radius` at p is inside the walkable area: its
  /// center lies in some region and no wall comes closer than `radius`.
  bool contains_disc(const Vec2& p, double radius) const {
    if (locate(p) < 0) return false;
    return std::all_of(walls_.begin(), walls_.end(),
                       [&](const WallSegment& w) { return distance(w, p) >= radius; });
  }

 private:
  void check() const {
    for (const auto& r : regions_) {
      if (!(r.bounds.width() > 0.0 && r.bounds.height() > 0.0)) {
        throw std::invalid_argument("region '" + r.id + "' has non-positive size");
      }
    }
    for (const auto& p : portals_) {
      if (p.segment.a == p.segment.b) throw std::invalid_argument("portal '" + p.id + "' is degenerate");
      if (!detail::axis_aligned(p.segment)) {
        throw std::invalid_argument("portal '" + p.id + "' must be axis aligned");
      }
      if (p.region < 0 || static_cast<std::size_t>(p.region) >= regions_.size()) {
        throw std::invalid_argument("portal '" + p.id + "' has no owning region");
      }
      if (p.kind == PortalKind::pass && (p.other < 0 || static_cast<std::size_t>(p.other) >= regions_.size())) {
        throw std::invalid_argument("pass portal '" + p.id + "' needs two regions");
      }
    }
  }

  void build_walls() {
    std::vector<Segment> openings;
    openings.reserve(portals_.size());
    for (const auto& p : portals_) openings.push_back(p.segment);

    std::vector<Segment> pieces;
    for (const auto& r : regions_) {
      const Vec2 lo = r.bounds.lo;
      const Vec2 hi = r.bounds.hi;
      const Segment edges[4] = {
          {lo, {hi.x, lo.y}}, {{hi.x, lo.y}, hi}, {{lo.x, hi.y}, hi}, {lo, {lo.x, hi.y}}};
      for (const auto& e : edges) {
        for (auto& s : detail::subtract_openings(e, openings)) pieces.push_back(s);
      }
    }
    // Regions sharing an edge emit the same piece twice.
    const auto key = [](const Segment& s) {
      const auto lt = std::tie(s.a.x, s.a.y) < std::tie(s.b.x, s.b.y);
      return lt ? std::make_tuple(s.a.x, s.a.y, s.b.x, s.b.y) : std::make_tuple(s.b.x, s.b.y, s.a.x, s.a.y);
    };
    std::sort(pieces.begin(), pieces.end(), [&](const Segment& a, const Segment& b) { return key(a) < key(b); });
    walls_.clear();
    for (const auto& s : pieces) {
      if (!walls_.empty()) {
        const auto k0 = key(walls_.back());
        const auto k1 = key(s);
        if (std::fabs(std::get<0>(k0) - std::get<0>(k1)) <= detail::kGeomTol &&
            std::fabs(std::get<1>(k0) - std::get<1>(k1)) <= detail::kGeomTol &&
            std::fabs(std::get<2>(k0) - std::get<2>(k1)) <= detail::kGeomTol &&
            std::fabs(std::get<3>(k0) - std::get<3>(k1)) <= detail::kGeomTol) {
          continue;
        }
      }
      walls_.push_back(WallSegment{s});
    }
  }

  std::vector<Region> regions_;
  std::vector<Portal> portals_;
  std::vector<WallSegment> walls_;
};

/// Route to one exit and its length (portal midpoints chained from the start).
struct ExitRoute {
  int exit_portal = -1;
  double distance = 0.0;
  std::vector<RouteStep> route;
};

/// Shortest portal-to-portal route from `start` (inside `region`) to every
/// reachable exit. Transfer portals are not traversed.
inline std::vector<ExitRoute> exit_routes(const World& world, int region, const Vec2& start) {
  const std::size_t n = world.portals().size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Node = (portal, region entered after crossing it).
  std::vector<double> dist(n, inf);
  std::vector<int> prev(n, -1);
  std::vector<int> entered(n, -1);

  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;

  const auto touches = [&](const Portal& p, int r) { return p.region == r || (p.kind == PortalKind::pass && p.other == r); };
  const auto relax = [&](int from_portal, int in_region, const Vec2& from_pos, double base) {
    for (std::size_t i = 0; i < n; ++i) {
      const Portal& p = world.portal(static_cast<int>(i));
      if (static_cast<int>(i) == from_portal || p.kind == PortalKind::transfer || !touches(p, in_region)) continue;
      const double d = base + norm(midpoint(p.segment) - from_pos);
      if (d < dist[i]) {
        dist[i] = d;
        prev[i] = from_portal;
        entered[i] = p.kind == PortalKind::exit ? -1 : (p.region == in_region ? p.other : p.region);
        queue.emplace(d, static_cast<int>(i));
      }
    }
  };

  relax(-1, region, start, 0.0);
  while (!queue.empty()) {
    const auto [d, i] = queue.top();
    queue.pop();
    if (d > dist[static_cast<std::size_t>(i)]) continue;
    const Portal& p = world.portal(i);
    if (p.kind == PortalKind::exit) continue;
    relax(i, entered[static_cast<std::size_t>(i)], midpoint(p.segment), d);
  }

  std::vector<ExitRoute> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (world.portal(static_cast<int>(i)).kind != PortalKind::exit || dist[i] == inf) continue;
    ExitRoute er;
    er.exit_portal = static_cast<int>(i);
    er.distance = dist[i];
    for (int cur = static_cast<int>(i); cur >= 0; cur = prev[static_cast<std::size_t>(cur)]) {
      er.route.push_back(RouteStep{cur, entered[static_cast<std::size_t>(cur)]});
    }
    std::reverse(er.route.begin(), er.route.end());
    out.push_back(std::move(er));
  }
  return out;
}

/// Nearest exit by route distance; exact ties go to the exit with the
/// lexicographically smallest id.
inline std::optional<ExitRoute> nearest_exit(const World& world, int region, const Vec2& start) {
  auto routes = exit_routes(world, region, start);
  if (routes.empty()) return std::nullopt;
  constexpr double tie = 1e-9;
  auto best = routes.begin();
  for (auto it = routes.begin(); it != routes.end(); ++it) {
    if (it->distance < best->distance - tie ||
        (std::fabs(it->distance - best->distance) <= tie &&
         world.portal(it->exit_portal).id < world.portal(best->exit_portal).id)) {
      best = it;
    }
  }
  return std::move(*best);
}

}  // namespace crowdest::sim
