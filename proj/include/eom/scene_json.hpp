#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eom/io.hpp"
#include "eom/scene.hpp"

namespace eom {

using json = nlohmann::json;

inline json scene_to_json(const Scene& scene) {
  json j;
  j["id"] = scene.id;
  j["rate_hz"] = scene.rate_hz;
  json drv = json::array();
  for (const auto& poly : scene.drivable) {
    json pj = json::array();
    for (const auto& pt : poly) pj.push_back({pt.x, pt.y});
    drv.push_back(pj);
  }
  j["drivable"] = drv;
  json lanes = json::array();
  for (const auto& lane : scene.lanes) {
    json lj = json::array();
    for (const auto& pt : lane.pts) lj.push_back({pt.x, pt.y});
    lanes.push_back(lj);
  }
  j["lanes"] = lanes;
  json agents = json::array();
  for (const auto& a : scene.agents) {
    json aj;
    aj["id"] = a.id;
    aj["class"] = to_string(a.cls);
    aj["extent"] = {a.length, a.width};
    json poses = json::object();
    for (const auto& [step, pose] : a.poses)
      poses[std::to_string(step)] = {pose.x, pose.y, pose.yaw};
    aj["poses"] = poses;
    agents.push_back(aj);
  }
  j["agents"] = agents;
  j["ego_id"] = scene.ego_id;
  return j;
}

inline Scene scene_from_json(const json& j) {
  Scene scene;
  scene.id = j.at("id").get<std::string>();
  scene.rate_hz = j.at("rate_hz").get<double>();
  for (const auto& pj : j.at("drivable")) {
    Polygon poly;
    for (const auto& pt : pj) poly.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    scene.drivable.push_back(std::move(poly));
  }
  if (j.contains("lanes")) {
    for (const auto& lj : j.at("lanes")) {
      Lane lane;
      for (const auto& pt : lj) lane.pts.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      scene.lanes.push_back(std::move(lane));
    }
  }
  for (const auto& aj : j.at("agents")) {
    AgentTrack a;
    a.id = aj.at("id").get<std::string>();
    a.cls = agent_class_from_string(aj.at("class").get<std::string>());
    a.length = aj.at("extent").at(0).get<double>();
    a.width = aj.at("extent").at(1).get<double>();
    for (const auto& [key, pj] : aj.at("poses").items()) {
      Pose pose{pj.at(0).get<double>(), pj.at(1).get<double>(), pj.at(2).get<double>()};
      a.poses[std::stoi(key)] = pose;
    }
    scene.agents.push_back(std::move(a));
  }
  scene.ego_id = j.at("ego_id").get<std::string>();
  return scene;
}

inline void save_scene(const Scene& scene, const std::string& dir) {
  std::filesystem::path path = std::filesystem::path(dir) / (scene.id + ".json");
  atomic_write_file(path.string(), scene_to_json(scene).dump(2) + "\n");
}

inline Scene load_scene(const std::string& path) {
  return scene_from_json(json::parse(read_file(path)));
}

// Loads every *.json in the directory, sorted by filename.
inline std::vector<Scene> load_scene_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Scene> scenes;
  scenes.reserve(files.size());
  for (const auto& f : files) scenes.push_back(load_scene(f.string()));
  return scenes;
}

}  // namespace eom
