#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "eom/grid.hpp"
#include "eom/scene.hpp"

namespace eom {

// Ego-centric multi-channel history image, values in [0, 1]. The ego heading
// points toward decreasing row index.
struct RasterImage {
  enum Channel { kDrivable = 0, kLanes, kEgoHist, kVehicleHist, kPedestrianHist, kChannels };

  int h = 0;
  int w = 0;
  std::vector<float> data;  // channel-major
  CriticalRegion region;
  int fade_frames = 1;

  RasterImage() = default;
  RasterImage(const CriticalRegion& r)
      : h(r.height()), w(r.width()),
        data(static_cast<size_t>(kChannels) * r.height() * r.width(), 0.0f), region(r) {}

  float& at(int channel, int row, int col) {
    return data[(static_cast<size_t>(channel) * h + row) * w + col];
  }
  float at(int channel, int row, int col) const {
    return data[(static_cast<size_t>(channel) * h + row) * w + col];
  }

  Grid<float> channel(int c) const {
    Grid<float> g(h, w);
    std::copy(data.begin() + static_cast<size_t>(c) * h * w,
              data.begin() + static_cast<size_t>(c + 1) * h * w, g.v.begin());
    return g;
  }
};

// World point to raster pixel; out-of-bounds indices are returned unchanged.
inline PixelRC world_to_pixel(const Vec2& point, const CriticalRegion& region, const Pose& ego_pose) {
  return ego_point_to_pixel(world_point_to_ego(point, ego_pose), region);
}

namespace raster_detail {

inline void draw_polyline(RasterImage& img, int channel, const std::vector<Vec2>& pts,
                          const Pose& ego) {
  double step = img.region.resolution * 0.5;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec2 a = pts[i], b = pts[i + 1];
    double len = (b - a).norm();
    int n = std::max(1, static_cast<int>(len / step));
    for (int j = 0; j <= n; ++j) {
      Vec2 q = a + (b - a) * (static_cast<double>(j) / n);
      PixelRC px = world_to_pixel(q, img.region, ego);
      if (px.row >= 0 && px.row < img.h && px.col >= 0 && px.col < img.w)
        img.at(channel, px.row, px.col) = 1.0f;
    }
  }
}

}  // namespace raster_detail

// Map channels plus per-class agent history with linear brightness fading:
// the newest frame renders at 1.0, the oldest at 1/F.
inline RasterImage rasterize_history(const Scene& scene, const CriticalRegion& region,
                                     const Horizon& horizon, int history_hz) {
  int rate = static_cast<int>(scene.rate_hz);
  if (history_hz <= 0 || rate % history_hz != 0)
    throw std::invalid_argument("history rate must divide the scene rate");
  Pose ego = scene.ego_anchor(horizon.current);

  RasterImage img(region);
  int stride = rate / history_hz;
  int frames = horizon.history / stride + 1;
  img.fade_frames = frames;

  Grid<float> tmp(img.h, img.w, 0.0f);
  for (const auto& poly : scene.drivable) fill_polygon(tmp, poly, region, ego, 1.0f);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) img.at(RasterImage::kDrivable, r, c) = tmp.at(r, c);
  for (const auto& lane : scene.lanes)
    raster_detail::draw_polyline(img, RasterImage::kLanes, lane.pts, ego);

  for (int rank = 0; rank < frames; ++rank) {  // oldest first; newer frames overwrite
    int step = horizon.current - (frames - 1 - rank) * stride;
    float intensity = static_cast<float>(rank + 1) / frames;
    for (const auto& agent : scene.agents) {
      const Pose* pose = agent.pose_at(step);
      if (!pose) continue;
      int channel = agent.cls == AgentClass::ego ? RasterImage::kEgoHist
                    : agent.cls == AgentClass::vehicle ? RasterImage::kVehicleHist
                                                       : RasterImage::kPedestrianHist;
      for_each_box_pixel(agent.footprint(*pose), region, ego,
                         [&](int r, int c) { img.at(channel, r, c) = intensity; });
    }
  }
  return img;
}

// RGB export: drivable gray, lanes light gray, ego red, vehicles yellow,
// pedestrians orange, brightness following the fade.
inline std::vector<uint8_t> raster_to_rgb(const RasterImage& img) {
  std::vector<uint8_t> rgb(static_cast<size_t>(img.h) * img.w * 3, 0);
  const float palette[3][3] = {{1.0f, 0.1f, 0.1f}, {1.0f, 0.85f, 0.1f}, {1.0f, 0.55f, 0.1f}};
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) {
      float base = img.at(RasterImage::kDrivable, r, c) > 0 ? 0.35f : 0.05f;
      if (img.at(RasterImage::kLanes, r, c) > 0) base = 0.55f;
      float out[3] = {base, base, base};
      const int hist[3] = {RasterImage::kEgoHist, RasterImage::kVehicleHist,
                           RasterImage::kPedestrianHist};
      for (int k = 0; k < 3; ++k) {
        float v = img.at(hist[k], r, c);
        if (v > 0) {
          out[0] = palette[k][0] * v;
          out[1] = palette[k][1] * v;
          out[2] = palette[k][2] * v;
        }
      }
      size_t idx = (static_cast<size_t>(r) * img.w + c) * 3;
      for (int k = 0; k < 3; ++k) rgb[idx + k] = static_cast<uint8_t>(std::lround(255.0f * out[k]));
    }
  }
  return rgb;
}

}  // namespace eom
