#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "eom/geometry.hpp"

namespace eom {

template <class T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  T& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  const T& at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < h && c >= 0 && c < w; }
  size_t size() const { return v.size(); }
  bool operator==(const Grid& o) const { return h == o.h && w == o.w && v == o.v; }
};

// Ego-centric prediction window. Pixel coordinates x in [l, p] (lateral,
// ego-right positive) and y in [m, k] (forward positive), ego at (0, 0).
struct CriticalRegion {
  int l = -250;
  int p = 250;
  int m = -100;
  int k = 400;
  double resolution = 0.1;  // meters per pixel

  int width() const { return p - l + 1; }
  int height() const { return k - m + 1; }

  void validate() const {
    if (l >= p || m >= k) throw std::invalid_argument("critical region bounds must satisfy l < p, m < k");
    if (resolution <= 0.0) throw std::invalid_argument("resolution must be positive");
  }

  // Footprint of the region in ego-frame meters.
  Rect rect_meters() const {
    return {l * resolution, p * resolution, m * resolution, k * resolution};
  }

  static CriticalRegion full_scale() { return {-250, 250, -100, 400, 0.1}; }
  static CriticalRegion desk() { return {-50, 49, -20, 79, 0.5}; }
};

// Timeline indices: `history` steps back, `future` steps ahead of `current`.
struct Horizon {
  int history = 20;
  int future = 30;
  int current = 20;

  void validate() const {
    if (history < 1 || future < 1) throw std::invalid_argument("horizon must have history >= 1 and future >= 1");
  }
};

struct PixelRC {
  int row = 0;
  int col = 0;
  bool operator==(const PixelRC& o) const { return row == o.row && col == o.col; }
};

// Rigid transform into the ego frame: +x is the ego's right, +y its heading.
inline Vec2 world_point_to_ego(const Vec2& pt, const Pose& ego) {
  return rotate(pt - ego.position(), kPi / 2.0 - ego.yaw);
}

inline Pose world_pose_to_ego(const Pose& pose, const Pose& ego) {
  Vec2 p = world_point_to_ego({pose.x, pose.y}, ego);
  return {p.x, p.y, wrap_angle(pose.yaw + kPi / 2.0 - ego.yaw)};
}

inline OrientedBox ego_frame_box(const OrientedBox& box, const Pose& ego) {
  Vec2 c = world_point_to_ego(box.center, ego);
  return {c, wrap_angle(box.yaw + kPi / 2.0 - ego.yaw), box.length, box.width};
}

// Nearest pixel center for an ego-frame point; may be out of bounds.
inline PixelRC ego_point_to_pixel(const Vec2& e, const CriticalRegion& region) {
  int xi = static_cast<int>(std::lround(e.x / region.resolution));
  int yi = static_cast<int>(std::lround(e.y / region.resolution));
  return {region.k - yi, xi - region.l};
}

// Ego-frame location of a pixel center.
inline Vec2 pixel_center_ego(int row, int col, const CriticalRegion& region) {
  return {(region.l + col) * region.resolution, (region.k - row) * region.resolution};
}

// Visits every grid pixel whose center lies inside the box (box given in
// world frame, grid anchored at `ego`).
template <class Fn>
inline void for_each_box_pixel(const OrientedBox& box, const CriticalRegion& region,
                               const Pose& ego, Fn&& fn) {
  OrientedBox eb = ego_frame_box(box, ego);
  auto cs = eb.corners();
  double xmin = cs[0].x, xmax = cs[0].x, ymin = cs[0].y, ymax = cs[0].y;
  for (int i = 1; i < 4; ++i) {
    xmin = std::min(xmin, cs[i].x);
    xmax = std::max(xmax, cs[i].x);
    ymin = std::min(ymin, cs[i].y);
    ymax = std::max(ymax, cs[i].y);
  }
  double res = region.resolution;
  int cmin = std::max(0, static_cast<int>(std::floor(xmin / res)) - region.l - 1);
  int cmax = std::min(region.width() - 1, static_cast<int>(std::ceil(xmax / res)) - region.l + 1);
  int rmin = std::max(0, region.k - static_cast<int>(std::ceil(ymax / res)) - 1);
  int rmax = std::min(region.height() - 1, region.k - static_cast<int>(std::floor(ymin / res)) + 1);
  Vec2 u = rotate({1.0, 0.0}, eb.yaw);
  Vec2 vv{-u.y, u.x};
  double hl = 0.5 * eb.length, hw = 0.5 * eb.width;
  for (int r = rmin; r <= rmax; ++r) {
    for (int c = cmin; c <= cmax; ++c) {
      Vec2 d = pixel_center_ego(r, c, region) - eb.center;
      if (std::abs(d.dot(u)) <= hl && std::abs(d.dot(vv)) <= hw) fn(r, c);
    }
  }
}

// Marks pixels whose center falls inside the polygon (world frame).
template <class T>
inline void fill_polygon(Grid<T>& grid, const Polygon& poly, const CriticalRegion& region,
                         const Pose& ego, T value) {
  Polygon ep;
  ep.reserve(poly.size());
  for (const auto& pt : poly) ep.push_back(world_point_to_ego(pt, ego));
  double xmin = ep[0].x, xmax = ep[0].x, ymin = ep[0].y, ymax = ep[0].y;
  for (const auto& pt : ep) {
    xmin = std::min(xmin, pt.x);
    xmax = std::max(xmax, pt.x);
    ymin = std::min(ymin, pt.y);
    ymax = std::max(ymax, pt.y);
  }
  double res = region.resolution;
  int cmin = std::max(0, static_cast<int>(std::floor(xmin / res)) - region.l - 1);
  int cmax = std::min(grid.w - 1, static_cast<int>(std::ceil(xmax / res)) - region.l + 1);
  int rmin = std::max(0, region.k - static_cast<int>(std::ceil(ymax / res)) - 1);
  int rmax = std::min(grid.h - 1, region.k - static_cast<int>(std::floor(ymin / res)) + 1);
  for (int r = rmin; r <= rmax; ++r)
    for (int c = cmin; c <= cmax; ++c)
      if (point_in_polygon(pixel_center_ego(r, c, region), ep)) grid.at(r, c) = value;
}

}  // namespace eom
