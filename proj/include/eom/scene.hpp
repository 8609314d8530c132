#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "eom/geometry.hpp"
#include "eom/grid.hpp"

namespace eom {

enum class AgentClass { ego, vehicle, pedestrian };

inline const char* to_string(AgentClass c) {
  switch (c) {
    case AgentClass::ego: return "ego";
    case AgentClass::vehicle: return "vehicle";
    case AgentClass::pedestrian: return "pedestrian";
  }
  return "vehicle";
}

inline AgentClass agent_class_from_string(const std::string& s) {
  if (s == "ego") return AgentClass::ego;
  if (s == "vehicle") return AgentClass::vehicle;
  if (s == "pedestrian") return AgentClass::pedestrian;
  throw std::invalid_argument("unknown agent class: " + s);
}

struct AgentTrack {
  std::string id;
  AgentClass cls = AgentClass::vehicle;
  double length = 4.5;
  double width = 2.0;
  std::map<int, Pose> poses;  // timestep -> pose; missing steps are gaps

  const Pose* pose_at(int step) const {
    auto it = poses.find(step);
    return it == poses.end() ? nullptr : &it->second;
  }

  OrientedBox footprint(const Pose& pose) const {
    return {{pose.x, pose.y}, pose.yaw, length, width};
  }
};

// Lane centerline; traversal direction follows point order.
struct Lane {
  std::vector<Vec2> pts;
};

struct Scene {
  std::string id;
  double rate_hz = 10.0;
  std::vector<AgentTrack> agents;
  std::string ego_id;
  std::vector<Polygon> drivable;
  std::vector<Lane> lanes;

  const AgentTrack* find_agent(const std::string& agent_id) const {
    for (const auto& a : agents)
      if (a.id == agent_id) return &a;
    return nullptr;
  }

  const AgentTrack& ego() const {
    const AgentTrack* e = find_agent(ego_id);
    if (!e || e->cls != AgentClass::ego) throw std::runtime_error("scene has no ego agent: " + id);
    return *e;
  }

  // Pose anchoring the prediction grid; throws if the ego lacks it.
  Pose ego_anchor(int current_step) const {
    const Pose* p = ego().pose_at(current_step);
    if (!p) throw std::runtime_error("no ego anchor");
    return *p;
  }
};

// Agents whose footprint intersects the region rectangle at `timestep`.
// The rectangle is fixed in the ego frame taken at `anchor`.
inline std::set<std::string> agents_in_region(const Scene& scene, const CriticalRegion& region,
                                              int timestep, const Pose& anchor) {
  std::set<std::string> out;
  Rect rect = region.rect_meters();
  for (const auto& a : scene.agents) {
    const Pose* pose = a.pose_at(timestep);
    if (!pose) continue;
    OrientedBox box = ego_frame_box(a.footprint(*pose), anchor);
    if (box_intersects_rect(box, rect)) out.insert(a.id);
  }
  return out;
}

inline std::set<std::string> agents_in_region(const Scene& scene, const CriticalRegion& region,
                                              const Horizon& horizon, int timestep) {
  return agents_in_region(scene, region, timestep, scene.ego_anchor(horizon.current));
}

// Vehicles absent from the region at every step <= current that enter it
// within the future horizon.
inline std::set<std::string> unseen_agent_ids(const Scene& scene, const CriticalRegion& region,
                                              const Horizon& horizon) {
  Pose anchor = scene.ego_anchor(horizon.current);
  Rect rect = region.rect_meters();
  std::set<std::string> out;
  for (const auto& a : scene.agents) {
    if (a.cls != AgentClass::vehicle) continue;
    bool seen = false;
    bool enters = false;
    for (const auto& [step, pose] : a.poses) {
      if (step > horizon.current + horizon.future) break;
      OrientedBox box = ego_frame_box(a.footprint(pose), anchor);
      if (!box_intersects_rect(box, rect)) continue;
      if (step <= horizon.current) {
        seen = true;
        break;
      }
      enters = true;
    }
    if (!seen && enters) out.insert(a.id);
  }
  return out;
}

// Linear resampling onto a finer timeline. Keyframe indices are scaled by
// dst/src; gaps in the source stay gaps.
inline AgentTrack interpolate_track(const AgentTrack& track, int src_hz, int dst_hz) {
  if (src_hz <= 0 || dst_hz <= 0) throw std::invalid_argument("rates must be positive");
  if (dst_hz % src_hz != 0)
    throw std::invalid_argument("destination rate must be an integer multiple of the source rate");
  int factor = dst_hz / src_hz;
  AgentTrack out = track;
  out.poses.clear();
  for (auto it = track.poses.begin(); it != track.poses.end(); ++it) {
    out.poses[it->first * factor] = it->second;
    auto next = std::next(it);
    if (next == track.poses.end() || next->first != it->first + 1) continue;
    for (int j = 1; j < factor; ++j) {
      double s = static_cast<double>(j) / factor;
      Pose p;
      p.x = it->second.x + s * (next->second.x - it->second.x);
      p.y = it->second.y + s * (next->second.y - it->second.y);
      p.yaw = lerp_angle(it->second.yaw, next->second.yaw, s);
      out.poses[it->first * factor + j] = p;
    }
  }
  return out;
}

inline Scene interpolate_scene(const Scene& scene, int dst_hz) {
  int src_hz = static_cast<int>(scene.rate_hz);
  Scene out = scene;
  out.rate_hz = dst_hz;
  for (auto& a : out.agents) a = interpolate_track(a, src_hz, dst_hz);
  return out;
}

}  // namespace eom
