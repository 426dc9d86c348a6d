#pragma once

#include <algorithm>
#include <cmath>

namespace crowdest::sim {

/// Planar vector in meters (positions) or meters per second (velocities).
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend constexpr Vec2 operator/(Vec2 a, double s) { return {a.x / s, a.y / s}; }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

/// Cross product z-component; positive when b is counter-clockwise from a.
constexpr double det(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

constexpr double abs_sq(const Vec2& v) { return dot(v, v); }

inline double norm(const Vec2& v) { return std::sqrt(abs_sq(v)); }

inline Vec2 normalize(const Vec2& v) {
  const double n = norm(v);
  return n > 0.0 ? v / n : Vec2{};
}

/// Left-hand perpendicular.
constexpr Vec2 perp(const Vec2& v) { return {-v.y, v.x}; }

inline bool is_finite(const Vec2& v) { return std::isfinite(v.x) && std::isfinite(v.y); }

struct Segment {
  Vec2 a;
  Vec2 b;
  friend constexpr bool operator==(const Segment&, const Segment&) = default;
};

/// A wall piece agents must not cross.
struct WallSegment : Segment {};

/// An opening agents walk toward (door or exit), endpoints in meters.
struct GoalSegment : Segment {};

inline double length(const Segment& s) { return norm(s.b - s.a); }

inline Vec2 midpoint(const Segment& s) { return (s.a + s.b) * 0.5; }

/// Closest point on the segment to p.
inline Vec2 closest_point(const Segment& s, const Vec2& p) {
  const Vec2 d = s.b - s.a;
  const double len_sq = abs_sq(d);
  if (len_sq <= 0.0) {
    return s.a;
  }
  const double t = std::clamp(dot(p - s.a, d) / len_sq, 0.0, 1.0);
  return s.a + d * t;
}

inline double distance(const Segment& s, const Vec2& p) { return norm(p - closest_point(s, p)); }

/// Axis-aligned rectangle [lo, hi].
struct Rect {
  Vec2 lo;
  Vec2 hi;

  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
  double area() const { return width() * height(); }
  Vec2 center() const { return (lo + hi) * 0.5; }

  bool contains(const Vec2& p, double tol = 0.0) const {
    return p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol && p.y <= hi.y + tol;
  }

  friend constexpr bool operator==(const Rect&, const Rect&) = default;
};

/// Distance from p to the closest point of the rectangle (0 inside).
inline double distance(const Rect& r, const Vec2& p) {
  const double dx = std::max({r.lo.x - p.x, 0.0, p.x - r.hi.x});
  const double dy = std::max({r.lo.y - p.y, 0.0, p.y - r.hi.y});
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace crowdest::sim
