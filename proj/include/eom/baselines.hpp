#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "eom/grid.hpp"
#include "eom/occupancy.hpp"
#include "eom/rng.hpp"
#include "eom/scene.hpp"

namespace eom {

enum class KinModel { cv, ca, cm, cy };

inline const char* to_string(KinModel m) {
  switch (m) {
    case KinModel::cv: return "cv";
    case KinModel::ca: return "ca";
    case KinModel::cm: return "cm";
    case KinModel::cy: return "cy";
  }
  return "cv";
}

inline KinModel kin_model_from_string(const std::string& s) {
  if (s == "cv") return KinModel::cv;
  if (s == "ca") return KinModel::ca;
  if (s == "cm") return KinModel::cm;
  if (s == "cy") return KinModel::cy;
  throw std::invalid_argument("unknown physical model: " + s);
}

struct KinematicState {
  Vec2 position;
  Vec2 velocity;
  Vec2 acceleration;
  double yaw = 0.0;
  double yaw_rate = 0.0;
  double speed = 0.0;
  bool has_yaw_rate = false;
};

// Finite differences over the track tail: two poses give velocity and yaw,
// three give acceleration and yaw rate.
inline KinematicState estimate_state(const AgentTrack& track, int step, double dt) {
  const Pose* p0 = track.pose_at(step);
  if (!p0) throw std::invalid_argument("estimate_state: no pose at requested step");
  KinematicState st;
  st.position = p0->position();
  st.yaw = p0->yaw;
  const Pose* p1 = track.pose_at(step - 1);
  if (p1) {
    st.velocity = (p0->position() - p1->position()) * (1.0 / dt);
    st.speed = st.velocity.norm();
    const Pose* p2 = track.pose_at(step - 2);
    if (p2) {
      Vec2 v_prev = (p1->position() - p2->position()) * (1.0 / dt);
      st.acceleration = (st.velocity - v_prev) * (1.0 / dt);
      st.yaw_rate = wrap_angle(p0->yaw - p1->yaw) / dt;
      st.has_yaw_rate = true;
    }
  }
  return st;
}

struct Trajectory {
  std::vector<std::pair<int, Pose>> steps;  // (future step index, pose), strictly increasing
  double length = 4.5;
  double width = 2.0;
};

namespace baseline_detail {

constexpr double kYawRateFloor = 1e-6;  // below this a turn degenerates to a line

// Exact segment displacement for linearly varying speed along a linearly
// varying heading: integral of s(u) * (cos, sin)(yaw0 + omega*u).
inline Vec2 arc_displacement(double s0, double s_rate, double yaw0, double omega, double u1,
                             double u2) {
  if (s_rate < 0.0) {  // clamp at standstill
    double stop = -s0 / s_rate;
    if (stop <= u1) return {0.0, 0.0};
    u2 = std::min(u2, stop);
  }
  if (std::abs(omega) < kYawRateFloor) {
    double dist = s0 * (u2 - u1) + 0.5 * s_rate * (u2 * u2 - u1 * u1);
    return Vec2{std::cos(yaw0), std::sin(yaw0)} * dist;
  }
  auto ix = [&](double u) {
    return (s0 + s_rate * u) * std::sin(yaw0 + omega * u) / omega +
           s_rate * std::cos(yaw0 + omega * u) / (omega * omega);
  };
  auto iy = [&](double u) {
    return -(s0 + s_rate * u) * std::cos(yaw0 + omega * u) / omega +
           s_rate * std::sin(yaw0 + omega * u) / (omega * omega);
  };
  return {ix(u2) - ix(u1), iy(u2) - iy(u1)};
}

}  // namespace baseline_detail

// Constant-velocity / constant-acceleration / constant rates-of-change /
// constant-turn-rate forecasts over the future horizon.
inline Trajectory rollout(KinModel model, const KinematicState& state, const Horizon& horizon,
                          double dt) {
  if (dt <= 0.0) throw std::invalid_argument("rollout: dt must be positive");
  if ((model == KinModel::cm || model == KinModel::cy) && !state.has_yaw_rate)
    throw std::invalid_argument("rollout: yaw rate unavailable for this model");
  Trajectory traj;
  traj.steps.reserve(horizon.future);
  double heading = state.speed > 1e-9
                       ? std::atan2(state.velocity.y, state.velocity.x)
                       : state.yaw;
  switch (model) {
    case KinModel::cv: {
      for (int i = 1; i <= horizon.future; ++i) {
        double tau = i * dt;
        Vec2 p = state.position + state.velocity * tau;
        traj.steps.push_back({i, {p.x, p.y, heading}});
      }
      break;
    }
    case KinModel::ca: {
      for (int i = 1; i <= horizon.future; ++i) {
        double tau = i * dt;
        Vec2 p = state.position + state.velocity * tau + state.acceleration * (0.5 * tau * tau);
        traj.steps.push_back({i, {p.x, p.y, heading}});
      }
      break;
    }
    case KinModel::cm: {
      // tangential speed rate from the acceleration vector
      double s_rate = state.acceleration.dot({std::cos(heading), std::sin(heading)});
      Vec2 pos = state.position;
      for (int i = 1; i <= horizon.future; ++i) {
        pos = pos + baseline_detail::arc_displacement(state.speed, s_rate, heading,
                                                      state.yaw_rate, (i - 1) * dt, i * dt);
        double yaw = wrap_angle(heading + state.yaw_rate * i * dt);
        traj.steps.push_back({i, {pos.x, pos.y, yaw}});
      }
      break;
    }
    case KinModel::cy: {
      for (int i = 1; i <= horizon.future; ++i) {
        double tau = i * dt;
        Vec2 p;
        if (std::abs(state.yaw_rate) < baseline_detail::kYawRateFloor) {
          p = state.position + Vec2{std::cos(heading), std::sin(heading)} * (state.speed * tau);
        } else {
          double r = state.speed / state.yaw_rate;
          p = state.position + Vec2{r * (std::sin(heading + state.yaw_rate * tau) - std::sin(heading)),
                                    r * (-std::cos(heading + state.yaw_rate * tau) + std::cos(heading))};
        }
        traj.steps.push_back({i, {p.x, p.y, wrap_angle(heading + state.yaw_rate * tau)}});
      }
      break;
    }
  }
  return traj;
}

// Natural cubic spline through (x_i, y_i), x strictly increasing.
class CubicSpline {
 public:
  CubicSpline(std::vector<double> xs, std::vector<double> ys)
      : x_(std::move(xs)), y_(std::move(ys)) {
    size_t n = x_.size();
    if (n < 2 || n != y_.size()) throw std::invalid_argument("spline needs >= 2 points");
    m_.assign(n, 0.0);
    if (n > 2) {
      std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
      for (size_t i = 1; i + 1 < n; ++i) {
        double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
        a[i] = h0;
        b[i] = 2.0 * (h0 + h1);
        c[i] = h1;
        d[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
      }
      for (size_t i = 2; i + 1 < n; ++i) {  // forward elimination
        double f = a[i] / b[i - 1];
        b[i] -= f * c[i - 1];
        d[i] -= f * d[i - 1];
      }
      for (size_t i = n - 2; i >= 1; --i) {
        m_[i] = (d[i] - c[i] * (i + 2 < n ? m_[i + 1] : 0.0)) / b[i];
        if (i == 1) break;
      }
    }
  }

  double eval(double x) const {
    size_t i = segment(x);
    double h = x_[i + 1] - x_[i];
    double t0 = x_[i + 1] - x, t1 = x - x_[i];
    return m_[i] * t0 * t0 * t0 / (6.0 * h) + m_[i + 1] * t1 * t1 * t1 / (6.0 * h) +
           (y_[i] / h - m_[i] * h / 6.0) * t0 + (y_[i + 1] / h - m_[i + 1] * h / 6.0) * t1;
  }

  double deriv(double x) const {
    size_t i = segment(x);
    double h = x_[i + 1] - x_[i];
    double t0 = x_[i + 1] - x, t1 = x - x_[i];
    return -m_[i] * t0 * t0 / (2.0 * h) + m_[i + 1] * t1 * t1 / (2.0 * h) -
           (y_[i] / h - m_[i] * h / 6.0) + (y_[i + 1] / h - m_[i + 1] * h / 6.0);
  }

 private:
  size_t segment(double x) const {
    size_t n = x_.size();
    if (x <= x_[0]) return 0;
    if (x >= x_[n - 1]) return n - 2;
    size_t lo = 0, hi = n - 1;
    while (hi - lo > 1) {
      size_t mid = (lo + hi) / 2;
      (x_[mid] <= x ? lo : hi) = mid;
    }
    return lo;
  }

  std::vector<double> x_, y_;
  std::vector<double> m_;  // second derivatives, natural ends
};

// Sweep spline-densified trajectories into a per-pixel earliest arrival map.
// Off-drivable pixels are 0; pixels never covered stay at T.
inline Grid<float> trajectory_to_eom(const std::vector<Trajectory>& trajs,
                                     const CriticalRegion& region, const Pose& ego_anchor,
                                     const std::vector<Polygon>& drivable,
                                     const Horizon& horizon) {
  const float sentinel = static_cast<float>(horizon.future);
  Grid<float> eom(region.height(), region.width(), 0.0f);
  {
    Grid<uint8_t> drv(region.height(), region.width(), 0);
    for (const auto& poly : drivable) fill_polygon(drv, poly, region, ego_anchor, uint8_t{1});
    for (size_t i = 0; i < eom.v.size(); ++i)
      if (drv.v[i]) eom.v[i] = sentinel;
  }
  auto stamp = [&](const OrientedBox& box, float arrival) {
    for_each_box_pixel(box, region, ego_anchor, [&](int r, int c) {
      float& e = eom.at(r, c);
      if (arrival < e) e = arrival;
    });
  };
  for (const auto& traj : trajs) {
    if (traj.steps.empty()) continue;
    if (traj.steps.size() < 2) {
      const auto& [step, pose] = traj.steps.front();
      OrientedBox box{{pose.x, pose.y}, pose.yaw, traj.length, traj.width};
      stamp(box, static_cast<float>(step));
      continue;
    }
    std::vector<double> us, xs, ys;
    for (const auto& [step, pose] : traj.steps) {
      us.push_back(static_cast<double>(step));
      xs.push_back(pose.x);
      ys.push_back(pose.y);
    }
    CubicSpline sx(us, xs), sy(us, ys);
    double u0 = us.front(), u1 = us.back();
    double du = 0.1;  // ten samples per native step
    int n = static_cast<int>(std::ceil((u1 - u0) / du));
    double last_yaw = traj.steps.front().second.yaw;
    for (int i = 0; i <= n; ++i) {
      double u = std::min(u1, u0 + i * du);
      double dx = sx.deriv(u), dy = sy.deriv(u);
      double yaw = std::hypot(dx, dy) > 1e-9 ? std::atan2(dy, dx) : last_yaw;
      last_yaw = yaw;
      OrientedBox box{{sx.eval(u), sy.eval(u)}, yaw, traj.length, traj.width};
      stamp(box, static_cast<float>(std::min(u, static_cast<double>(horizon.future))));
    }
  }
  return eom;
}

// Hand-crafted unseen protocol: Poisson-many vehicles dropped on the region
// boundary at random arrival steps, each lowering covered pixels via min.
inline Grid<float> inject_poisson_unseen(const Grid<float>& eom, const CriticalRegion& region,
                                         double lambda, uint64_t seed, int horizon_steps) {
  if (lambda < 0.0) throw std::invalid_argument("inject_poisson_unseen: lambda must be >= 0");
  Grid<float> out = eom;
  Rng rng(seed);
  int n = rng.poisson(lambda);
  const Pose identity{0.0, 0.0, kPi / 2.0};  // grid frame == world frame
  for (int i = 0; i < n; ++i) {
    int side = rng.uniform_int(0, 3);
    int row, col;
    double yaw;  // inward, perpendicular to the edge (ego-frame axes)
    switch (side) {
      case 0: row = 0; col = rng.uniform_int(0, region.width() - 1); yaw = -kPi / 2.0; break;
      case 1: row = region.height() - 1; col = rng.uniform_int(0, region.width() - 1); yaw = kPi / 2.0; break;
      case 2: row = rng.uniform_int(0, region.height() - 1); col = 0; yaw = 0.0; break;
      default: row = rng.uniform_int(0, region.height() - 1); col = region.width() - 1; yaw = kPi; break;
    }
    int arrival = rng.uniform_int(1, horizon_steps);
    Vec2 center = pixel_center_ego(row, col, region);
    OrientedBox box{center, yaw, 4.5, 2.0};
    for_each_box_pixel(box, region, identity, [&](int r, int c) {
      float& e = out.at(r, c);
      if (static_cast<float>(arrival) < e) e = static_cast<float>(arrival);
    });
  }
  return out;
}

// Full physical-baseline prediction for one scene: forecast every agent
// visible in the region at the current step, then rasterize.
inline Grid<float> physical_predict(const Scene& scene, const CriticalRegion& region,
                                    const Horizon& horizon, KinModel model,
                                    double inject_lambda = 0.0, uint64_t inject_seed = 0) {
  Pose anchor = scene.ego_anchor(horizon.current);
  Rect rect = region.rect_meters();
  double dt = 1.0 / scene.rate_hz;
  std::vector<Trajectory> trajs;
  for (const auto& agent : scene.agents) {
    if (agent.id == scene.ego_id) continue;
    const Pose* pose = agent.pose_at(horizon.current);
    if (!pose) continue;
    if (!box_intersects_rect(ego_frame_box(agent.footprint(*pose), anchor), rect)) continue;
    KinematicState st = estimate_state(agent, horizon.current, dt);
    KinModel m = model;
    if ((m == KinModel::cm || m == KinModel::cy) && !st.has_yaw_rate) m = KinModel::cv;
    Trajectory traj = rollout(m, st, horizon, dt);
    traj.length = agent.length;
    traj.width = agent.width;
    trajs.push_back(std::move(traj));
  }
  Grid<float> eom = trajectory_to_eom(trajs, region, anchor, scene.drivable, horizon);
  if (inject_lambda > 0.0)
    eom = inject_poisson_unseen(eom, region, inject_lambda, inject_seed, horizon.future);
  return eom;
}

}  // namespace eom
