#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace eom {

constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(const Vec2& v, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {v.x * c - v.y * s, v.x * s + v.y * c};
}

// Normalize to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// Interpolate along the shortest angular arc, s in [0, 1].
inline double lerp_angle(double a, double b, double s) {
  double d = wrap_angle(b - a);
  return wrap_angle(a + s * d);
}

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 position() const { return {x, y}; }
  Vec2 heading() const { return {std::cos(yaw), std::sin(yaw)}; }
};

// Rectangle footprint: `length` along the heading, `width` across it.
struct OrientedBox {
  Vec2 center;
  double yaw = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const {
    Vec2 u = rotate({1.0, 0.0}, yaw);
    Vec2 v{-u.y, u.x};
    Vec2 du = u * (0.5 * length);
    Vec2 dv = v * (0.5 * width);
    return {center + du + dv, center + du - dv, center - du - dv, center - du + dv};
  }

  bool contains(const Vec2& pt) const {
    Vec2 d = pt - center;
    Vec2 u = rotate({1.0, 0.0}, yaw);
    Vec2 v{-u.y, u.x};
    return std::abs(d.dot(u)) <= 0.5 * length && std::abs(d.dot(v)) <= 0.5 * width;
  }
};

// Axis-aligned rectangle.
struct Rect {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;

  bool contains(const Vec2& pt) const {
    return pt.x >= xmin && pt.x <= xmax && pt.y >= ymin && pt.y <= ymax;
  }
};

// Separating-axis test between an axis-aligned rectangle and an oriented box.
inline bool box_intersects_rect(const OrientedBox& box, const Rect& rect) {
  auto cs = box.corners();
  // rect axes
  double bxmin = cs[0].x, bxmax = cs[0].x, bymin = cs[0].y, bymax = cs[0].y;
  for (int i = 1; i < 4; ++i) {
    bxmin = std::min(bxmin, cs[i].x);
    bxmax = std::max(bxmax, cs[i].x);
    bymin = std::min(bymin, cs[i].y);
    bymax = std::max(bymax, cs[i].y);
  }
  if (bxmax < rect.xmin || bxmin > rect.xmax || bymax < rect.ymin || bymin > rect.ymax)
    return false;
  // box axes
  Vec2 u = rotate({1.0, 0.0}, box.yaw);
  Vec2 axes[2] = {u, {-u.y, u.x}};
  Vec2 rc[4] = {{rect.xmin, rect.ymin}, {rect.xmax, rect.ymin},
                {rect.xmax, rect.ymax}, {rect.xmin, rect.ymax}};
  double half[2] = {0.5 * box.length, 0.5 * box.width};
  for (int a = 0; a < 2; ++a) {
    double c = box.center.dot(axes[a]);
    double rmin = rc[0].dot(axes[a]), rmax = rmin;
    for (int i = 1; i < 4; ++i) {
      double pr = rc[i].dot(axes[a]);
      rmin = std::min(rmin, pr);
      rmax = std::max(rmax, pr);
    }
    if (rmax < c - half[a] || rmin > c + half[a]) return false;
  }
  return true;
}

using Polygon = std::vector<Vec2>;

// Even-odd rule; points exactly on an edge may land on either side.
inline bool point_in_polygon(const Vec2& pt, const Polygon& poly) {
  bool inside = false;
  size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > pt.y) != (b.y > pt.y)) {
      double t = (pt.y - a.y) / (b.y - a.y);
      if (pt.x < a.x + t * (b.x - a.x)) inside = !inside;
    }
  }
  return inside;
}

inline bool point_in_any_polygon(const Vec2& pt, const std::vector<Polygon>& polys) {
  for (const auto& p : polys)
    if (point_in_polygon(pt, p)) return true;
  return false;
}

}  // namespace eom
