#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "eom/rng.hpp"
#include "eom/scene.hpp"

namespace eom {

enum class MapTemplate { straight, t_intersection, crossroad };

struct GeneratorConfig {
  int num_scenes = 10;
  std::vector<MapTemplate> templates = {MapTemplate::straight, MapTemplate::t_intersection,
                                        MapTemplate::crossroad};
  int min_agents = 2;
  int max_agents = 6;
  double min_speed = 3.0;   // m/s
  double max_speed = 9.0;   // m/s
  double unseen_prob = 0.5;
  int max_pedestrians = 2;
  CriticalRegion region = CriticalRegion::desk();
  Horizon horizon{20, 30, 20};
  double rate_hz = 10.0;

  void validate() const {
    if (num_scenes <= 0) throw std::invalid_argument("generator needs at least one scene");
    if (min_speed <= 0.0 || max_speed <= 0.0) throw std::invalid_argument("speeds must be positive");
    if (min_speed > max_speed) throw std::invalid_argument("min_speed exceeds max_speed");
    if (min_agents < 0 || max_agents < min_agents) throw std::invalid_argument("bad agent count range");
    if (templates.empty()) throw std::invalid_argument("no map templates selected");
    if (unseen_prob < 0.0 || unseen_prob > 1.0) throw std::invalid_argument("unseen_prob outside [0,1]");
    region.validate();
    horizon.validate();
    if (rate_hz <= 0.0) throw std::invalid_argument("rate must be positive");
  }
};

namespace synth_detail {

constexpr double kRoadHalfLen = 120.0;
constexpr double kRoadHalfWidth = 4.0;
constexpr double kLaneOffset = 1.75;
constexpr double kJunctionHalf = 8.0;

// Polyline lane with arclength lookup; extends straight past both ends.
struct SynthLane {
  std::vector<Vec2> pts;
  std::vector<double> cum;
  bool through = false;

  void finalize() {
    cum.resize(pts.size());
    cum[0] = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  }

  double length() const { return cum.back(); }

  Vec2 dir_at_segment(size_t i) const {
    Vec2 d = pts[i + 1] - pts[i];
    double n = d.norm();
    return {d.x / n, d.y / n};
  }

  Pose pose_at(double s) const {
    if (s <= 0.0) {
      Vec2 d = dir_at_segment(0);
      Vec2 p = pts[0] + d * s;
      return {p.x, p.y, std::atan2(d.y, d.x)};
    }
    if (s >= length()) {
      Vec2 d = dir_at_segment(pts.size() - 2);
      Vec2 p = pts.back() + d * (s - length());
      return {p.x, p.y, std::atan2(d.y, d.x)};
    }
    size_t i = std::upper_bound(cum.begin(), cum.end(), s) - cum.begin() - 1;
    i = std::min(i, pts.size() - 2);
    double t = (s - cum[i]) / (cum[i + 1] - cum[i]);
    Vec2 p = pts[i] + (pts[i + 1] - pts[i]) * t;
    Vec2 d = dir_at_segment(i);
    return {p.x, p.y, std::atan2(d.y, d.x)};
  }

  // Arclength of the point closest to the map origin.
  double center_arclength() const {
    double best_s = 0.0, best_d = 1e30, acc = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
      Vec2 a = pts[i], b = pts[i + 1];
      Vec2 ab = b - a;
      double len2 = ab.dot(ab);
      double t = len2 > 0 ? std::clamp(-(a.dot(ab)) / len2, 0.0, 1.0) : 0.0;
      Vec2 q = a + ab * t;
      double d = q.norm();
      if (d < best_d) {
        best_d = d;
        best_s = acc + ab.norm() * t;
      }
      acc += ab.norm();
    }
    return best_s;
  }
};

struct SynthMap {
  std::vector<SynthLane> lanes;
  std::vector<Polygon> drivable;
};

inline SynthLane straight_lane(Vec2 a, Vec2 b, bool through) {
  SynthLane lane;
  Vec2 d = b - a;
  double len = d.norm();
  int n = std::max(2, static_cast<int>(len / 2.0));
  for (int i = 0; i <= n; ++i) lane.pts.push_back(a + d * (static_cast<double>(i) / n));
  lane.through = through;
  lane.finalize();
  return lane;
}

// Turn lane: straight approach, circular fillet, straight exit.
// `a` is the far end of the approach (travel toward the junction along d1),
// `b` the far end of the exit (travel away along d2).
inline SynthLane turn_lane(Vec2 a, Vec2 d1, Vec2 b, Vec2 d2, double radius) {
  // intersection of the two lane lines
  double det = d1.x * (-d2.y) - (-d2.x) * d1.y;
  Vec2 rhs = b - a;
  double t = (rhs.x * (-d2.y) - (-d2.x) * rhs.y) / det;
  Vec2 x = a + d1 * t;
  double q = radius;  // 90 degree turns: R * tan(45)
  Vec2 p1 = x - d1 * q;
  Vec2 p2 = x + d2 * q;
  double turn = d1.cross(d2) > 0 ? 1.0 : -1.0;  // +1 left, -1 right
  Vec2 n1{-d1.y * turn, d1.x * turn};
  Vec2 center = p1 + n1 * radius;
  double a1 = std::atan2(p1.y - center.y, p1.x - center.x);
  double a2 = std::atan2(p2.y - center.y, p2.x - center.x);
  double sweep = wrap_angle(a2 - a1);

  SynthLane lane;
  double approach = (p1 - a).norm();
  int na = std::max(2, static_cast<int>(approach / 2.0));
  for (int i = 0; i < na; ++i) lane.pts.push_back(a + d1 * (approach * i / na));
  int narc = std::max(8, static_cast<int>(std::abs(sweep) * radius / 0.5));
  for (int i = 0; i <= narc; ++i) {
    double ang = a1 + sweep * i / narc;
    lane.pts.push_back(center + Vec2{std::cos(ang), std::sin(ang)} * radius);
  }
  double exit_len = (b - p2).norm();
  int ne = std::max(2, static_cast<int>(exit_len / 2.0));
  for (int i = 1; i <= ne; ++i) lane.pts.push_back(p2 + d2 * (exit_len * i / ne));
  lane.finalize();
  return lane;
}

inline Polygon rect_polygon(double xmin, double xmax, double ymin, double ymax) {
  return {{xmin, ymin}, {xmax, ymin}, {xmax, ymax}, {xmin, ymax}};
}

inline SynthMap build_map(MapTemplate tmpl) {
  SynthMap map;
  const double L = kRoadHalfLen, W = kRoadHalfWidth, o = kLaneOffset;
  const Vec2 px{1, 0}, mx{-1, 0}, py{0, 1}, my{0, -1};
  // horizontal road exists in every template
  map.drivable.push_back(rect_polygon(-L, L, -W, W));
  map.lanes.push_back(straight_lane({-L, -o}, {L, -o}, true));  // eastbound
  map.lanes.push_back(straight_lane({L, o}, {-L, o}, true));    // westbound
  if (tmpl == MapTemplate::t_intersection) {
    map.drivable.push_back(rect_polygon(-W, W, -W, L));
    map.drivable.push_back(rect_polygon(-kJunctionHalf, kJunctionHalf, -kJunctionHalf, kJunctionHalf));
    map.lanes.push_back(turn_lane({-L, -o}, px, {o, L}, py, 8.0));   // east -> north (left)
    map.lanes.push_back(turn_lane({L, o}, mx, {o, L}, py, 6.0));     // west -> north (right)
    map.lanes.push_back(turn_lane({-o, L}, my, {L, -o}, px, 8.0));   // south -> east (left)
    map.lanes.push_back(turn_lane({-o, L}, my, {-L, o}, mx, 6.0));   // south -> west (right)
  } else if (tmpl == MapTemplate::crossroad) {
    map.drivable.push_back(rect_polygon(-W, W, -L, L));
    map.drivable.push_back(rect_polygon(-kJunctionHalf, kJunctionHalf, -kJunctionHalf, kJunctionHalf));
    map.lanes.push_back(straight_lane({o, -L}, {o, L}, true));   // northbound
    map.lanes.push_back(straight_lane({-o, L}, {-o, -L}, true)); // southbound
    map.lanes.push_back(turn_lane({-L, -o}, px, {o, L}, py, 8.0));    // east -> north
    map.lanes.push_back(turn_lane({-L, -o}, px, {-o, -L}, my, 6.0));  // east -> south
    map.lanes.push_back(turn_lane({L, o}, mx, {-o, -L}, my, 8.0));    // west -> south
    map.lanes.push_back(turn_lane({L, o}, mx, {o, L}, py, 6.0));      // west -> north
    map.lanes.push_back(turn_lane({o, -L}, py, {-L, o}, mx, 8.0));    // north -> west
    map.lanes.push_back(turn_lane({o, -L}, py, {L, -o}, px, 6.0));    // north -> east
    map.lanes.push_back(turn_lane({-o, L}, my, {L, -o}, px, 8.0));    // south -> east
    map.lanes.push_back(turn_lane({-o, L}, my, {-L, o}, mx, 6.0));    // south -> west
  }
  return map;
}

// Integral of clamp(v0 + a*u, 0, vmax) over [0, tau]; exact, tau may be negative.
inline double clamped_speed_integral(double v0, double a, double vmax, double tau) {
  double lo = std::min(0.0, tau), hi = std::max(0.0, tau);
  std::vector<double> brk = {lo, hi};
  if (a != 0.0) {
    double b0 = -v0 / a, b1 = (vmax - v0) / a;
    if (b0 > lo && b0 < hi) brk.push_back(b0);
    if (b1 > lo && b1 < hi) brk.push_back(b1);
  }
  std::sort(brk.begin(), brk.end());
  double s = 0.0;
  for (size_t i = 0; i + 1 < brk.size(); ++i) {
    double u1 = brk[i], u2 = brk[i + 1];
    double vm = v0 + a * 0.5 * (u1 + u2);
    if (vm <= 0.0) continue;
    if (vm >= vmax) {
      s += vmax * (u2 - u1);
    } else {
      s += 0.5 * ((v0 + a * u1) + (v0 + a * u2)) * (u2 - u1);
    }
  }
  return tau >= 0.0 ? s : -s;
}

struct MotionProfile {
  double v0 = 5.0;
  double accel = 0.0;
  double vmax = 15.0;

  double arclength_delta(double tau) const { return clamped_speed_integral(v0, accel, vmax, tau); }
};

struct PlacedAgent {
  int lane = -1;
  double s_now = 0.0;
};

inline AgentTrack make_lane_track(const std::string& id, AgentClass cls, double length, double width,
                                  const SynthLane& lane, double s_now, const MotionProfile& prof,
                                  const Horizon& hz, double dt) {
  AgentTrack track;
  track.id = id;
  track.cls = cls;
  track.length = length;
  track.width = width;
  for (int step = 0; step <= hz.current + hz.future; ++step) {
    double tau = (step - hz.current) * dt;
    track.poses[step] = lane.pose_at(s_now + prof.arclength_delta(tau));
  }
  return track;
}

inline bool track_in_region_at(const AgentTrack& track, int step, const Rect& rect, const Pose& anchor) {
  const Pose* p = track.pose_at(step);
  if (!p) return false;
  return box_intersects_rect(ego_frame_box(track.footprint(*p), anchor), rect);
}

// First step <= limit at which the track enters the region, or nullopt.
inline std::optional<int> first_region_entry(const AgentTrack& track, const Rect& rect,
                                             const Pose& anchor, int limit) {
  for (const auto& [step, pose] : track.poses) {
    if (step > limit) break;
    if (box_intersects_rect(ego_frame_box(track.footprint(pose), anchor), rect)) return step;
  }
  return std::nullopt;
}

}  // namespace synth_detail

// Deterministic synthetic scene set; a pure function of (config, seed).
inline std::vector<Scene> synth_generate(const GeneratorConfig& config, uint64_t seed) {
  using namespace synth_detail;
  config.validate();
  const Horizon& hz = config.horizon;
  const double dt = 1.0 / config.rate_hz;
  std::vector<Scene> scenes;
  scenes.reserve(config.num_scenes);

  for (int index = 0; index < config.num_scenes; ++index) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(index)));
    MapTemplate tmpl = config.templates[rng.uniform_int(0, static_cast<int>(config.templates.size()) - 1)];
    SynthMap map = build_map(tmpl);

    Scene scene;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05d", index);
    scene.id = buf;
    scene.rate_hz = config.rate_hz;
    scene.drivable = map.drivable;
    for (const auto& lane : map.lanes) {
      Lane out;
      double step = 4.0;
      for (double s = 0.0; s < lane.length(); s += step) out.pts.push_back(lane.pose_at(s).position());
      out.pts.push_back(lane.pts.back());
      scene.lanes.push_back(std::move(out));
    }

    // ego on a through lane, steady speed, near the map center at `current`
    std::vector<int> through;
    for (size_t i = 0; i < map.lanes.size(); ++i)
      if (map.lanes[i].through) through.push_back(static_cast<int>(i));
    int ego_lane = through[rng.uniform_int(0, static_cast<int>(through.size()) - 1)];
    MotionProfile ego_prof{rng.uniform(4.0, 8.0), 0.0, config.max_speed};
    double ego_s = map.lanes[ego_lane].center_arclength() + rng.uniform(-25.0, 5.0);
    AgentTrack ego = make_lane_track("ego", AgentClass::ego, 4.5, 2.0, map.lanes[ego_lane], ego_s,
                                     ego_prof, hz, dt);
    Pose anchor = *ego.pose_at(hz.current);
    Rect rect = config.region.rect_meters();
    scene.agents.push_back(ego);
    scene.ego_id = "ego";

    std::vector<PlacedAgent> placed;
    placed.push_back({ego_lane, ego_s});
    auto lane_conflict = [&](int lane, double s) {
      for (const auto& pa : placed)
        if (pa.lane == lane && std::abs(pa.s_now - s) < 10.0) return true;
      return false;
    };

    // visible vehicles
    int want = rng.uniform_int(config.min_agents, config.max_agents);
    int vid = 0;
    for (int a = 0; a < want; ++a) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        int lane = rng.uniform_int(0, static_cast<int>(map.lanes.size()) - 1);
        double s_now = map.lanes[lane].center_arclength() + rng.uniform(-40.0, 40.0);
        if (lane_conflict(lane, s_now)) continue;
        MotionProfile prof;
        prof.v0 = rng.uniform(config.min_speed, config.max_speed);
        prof.vmax = config.max_speed;
        double kind = rng.uniform();
        if (kind < 0.25) prof.accel = rng.uniform(-3.0, -1.0);
        else if (kind < 0.45) prof.accel = rng.uniform(0.5, 2.0);
        std::snprintf(buf, sizeof(buf), "v%02d", vid);
        AgentTrack track = make_lane_track(buf, AgentClass::vehicle, rng.uniform(4.2, 5.0),
                                           rng.uniform(1.8, 2.1), map.lanes[lane], s_now, prof, hz, dt);
        // keep the seen/unseen split intentional: a vehicle must be either
        // visible by `current` or absent for the whole horizon
        auto entry = first_region_entry(track, rect, anchor, hz.current + hz.future);
        if (entry && *entry > hz.current) continue;
        scene.agents.push_back(std::move(track));
        placed.push_back({lane, s_now});
        ++vid;
        break;
      }
    }

    // unseen vehicles enter the region only after `current`
    if (rng.bernoulli(config.unseen_prob)) {
      int want_unseen = 1 + (rng.bernoulli(0.35) ? 1 : 0);
      for (int u = 0; u < want_unseen; ++u) {
        for (int attempt = 0; attempt < 12; ++attempt) {
          int lane = rng.uniform_int(0, static_cast<int>(map.lanes.size()) - 1);
          const SynthLane& ln = map.lanes[lane];
          double speed = rng.uniform(std::max(3.0, config.min_speed), config.max_speed);
          int delay = rng.uniform_int(5, hz.future - 5);
          // first arclength at which a box on this lane touches the region
          double s_enter = -1.0;
          double probe_len = 4.6, probe_wid = 2.0;
          for (double s = 0.0; s <= ln.length(); s += 0.5) {
            Pose pose = ln.pose_at(s);
            OrientedBox box{{pose.x, pose.y}, pose.yaw, probe_len, probe_wid};
            if (box_intersects_rect(ego_frame_box(box, anchor), rect)) {
              s_enter = s;
              break;
            }
          }
          if (s_enter < 0.0) continue;
          double s_now = s_enter - speed * (delay * dt) - 1.5;
          if (s_now < 1.0 || lane_conflict(lane, s_now)) continue;
          MotionProfile prof{speed, 0.0, config.max_speed};
          std::snprintf(buf, sizeof(buf), "u%02d", u);
          AgentTrack track = make_lane_track(buf, AgentClass::vehicle, 4.6, 2.0, ln, s_now, prof, hz, dt);
          auto entry = first_region_entry(track, rect, anchor, hz.current + hz.future);
          if (!entry || *entry <= hz.current) continue;
          scene.agents.push_back(std::move(track));
          placed.push_back({lane, s_now});
          break;
        }
      }
    }

    // pedestrians walk parallel to the horizontal road
    int peds = config.max_pedestrians > 0 ? rng.uniform_int(0, config.max_pedestrians) : 0;
    for (int pd = 0; pd < peds; ++pd) {
      double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      double y = side * (kRoadHalfWidth + 1.5);
      double dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
      double x0 = anchor.x + rng.uniform(-25.0, 25.0);
      double speed = rng.uniform(0.8, 1.5);
      AgentTrack track;
      std::snprintf(buf, sizeof(buf), "p%02d", pd);
      track.id = buf;
      track.cls = AgentClass::pedestrian;
      track.length = 0.6;
      track.width = 0.6;
      for (int step = 0; step <= hz.current + hz.future; ++step) {
        double tau = (step - hz.current) * dt;
        track.poses[step] = {x0 + dir * speed * tau, y, dir > 0 ? 0.0 : kPi};
      }
      scene.agents.push_back(std::move(track));
    }

    // random rigid world transform
    double psi = rng.uniform(0.0, 2.0 * kPi);
    Vec2 offset{rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)};
    auto xform_pt = [&](const Vec2& v) { return rotate(v, psi) + offset; };
    for (auto& agent : scene.agents)
      for (auto& [step, pose] : agent.poses) {
        Vec2 p = xform_pt({pose.x, pose.y});
        pose = {p.x, p.y, wrap_angle(pose.yaw + psi)};
      }
    for (auto& poly : scene.drivable)
      for (auto& pt : poly) pt = xform_pt(pt);
    for (auto& lane : scene.lanes)
      for (auto& pt : lane.pts) pt = xform_pt(pt);

    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace eom
