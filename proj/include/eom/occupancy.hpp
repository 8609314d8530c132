#pragma once

#include <cstdint>

#include "eom/grid.hpp"
#include "eom/scene.hpp"

namespace eom {

struct OccupancyOptions {
  bool include_ego = false;  // whether the ego's own future footprint occupies
};

// Pixels whose center lies inside any drivable polygon.
inline Grid<uint8_t> drivable_mask(const Scene& scene, const CriticalRegion& region,
                                   const Pose& anchor) {
  Grid<uint8_t> grid(region.height(), region.width(), 0);
  for (const auto& poly : scene.drivable) fill_polygon(grid, poly, region, anchor, uint8_t{1});
  return grid;
}

// Occupancy at `current + dt`: agent footprints plus everything off the
// drivable area. The grid stays anchored at the ego pose at `current`.
inline Grid<uint8_t> occupancy_at(const Scene& scene, const CriticalRegion& region,
                                  const Horizon& horizon, int dt,
                                  const OccupancyOptions& opts = {}) {
  Pose anchor = scene.ego_anchor(horizon.current);
  Grid<uint8_t> drv = drivable_mask(scene, region, anchor);
  Grid<uint8_t> grid(region.height(), region.width(), 0);
  for (size_t i = 0; i < grid.v.size(); ++i) grid.v[i] = drv.v[i] ? 0 : 1;
  int step = horizon.current + dt;
  for (const auto& agent : scene.agents) {
    if (!opts.include_ego && agent.id == scene.ego_id) continue;
    const Pose* pose = agent.pose_at(step);
    if (!pose) continue;
    for_each_box_pixel(agent.footprint(*pose), region, anchor,
                       [&](int r, int c) { grid.at(r, c) = 1; });
  }
  return grid;
}

// Per-pixel first occupied timestep in {0..T-1}, sentinel T if never occupied
// within the horizon.
inline Grid<float> earliest_occupancy(const Scene& scene, const CriticalRegion& region,
                                      const Horizon& horizon, const OccupancyOptions& opts = {}) {
  Pose anchor = scene.ego_anchor(horizon.current);
  Grid<uint8_t> drv = drivable_mask(scene, region, anchor);
  const float sentinel = static_cast<float>(horizon.future);
  Grid<float> eom(region.height(), region.width(), sentinel);
  for (size_t i = 0; i < eom.v.size(); ++i)
    if (!drv.v[i]) eom.v[i] = 0.0f;
  for (int dt = 0; dt < horizon.future; ++dt) {
    int step = horizon.current + dt;
    float t = static_cast<float>(dt);
    for (const auto& agent : scene.agents) {
      if (!opts.include_ego && agent.id == scene.ego_id) continue;
      const Pose* pose = agent.pose_at(step);
      if (!pose) continue;
      for_each_box_pixel(agent.footprint(*pose), region, anchor, [&](int r, int c) {
        float& e = eom.at(r, c);
        if (t < e) e = t;
      });
    }
  }
  return eom;
}

// Pixels swept by any unseen vehicle within (current, current + T].
inline Grid<uint8_t> unseen_mask(const Scene& scene, const CriticalRegion& region,
                                 const Horizon& horizon) {
  Pose anchor = scene.ego_anchor(horizon.current);
  Grid<uint8_t> mask(region.height(), region.width(), 0);
  auto ids = unseen_agent_ids(scene, region, horizon);
  for (const auto& agent : scene.agents) {
    if (!ids.count(agent.id)) continue;
    for (int dt = 1; dt <= horizon.future; ++dt) {
      const Pose* pose = agent.pose_at(horizon.current + dt);
      if (!pose) continue;
      for_each_box_pixel(agent.footprint(*pose), region, anchor,
                         [&](int r, int c) { mask.at(r, c) = 1; });
    }
  }
  return mask;
}

}  // namespace eom
