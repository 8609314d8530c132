#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eom/grid.hpp"

namespace eom {

struct FootprintStep {
  int dt = 0;                 // future step of arrival, in (0, T]
  std::vector<PixelRC> cells; // ego pixels occupied at that step
};

struct CandidateTrajectory {
  std::string id;
  std::vector<FootprintStep> steps;
};

struct Conflict {
  std::string id;
  int dt = 0;
  PixelRC cell;
};

struct FilterResult {
  std::vector<std::string> safe;
  std::vector<Conflict> unsafe;
};

// A candidate is unsafe iff some cell it enters at dt is predicted occupied
// at or before dt + margin. Earlier predictions can only shrink the safe set.
inline FilterResult filter_safe(const std::vector<CandidateTrajectory>& candidates,
                                const Grid<float>& prediction, double margin = 0.0) {
  if (margin < 0.0) throw std::invalid_argument("filter_safe: margin must be >= 0");
  FilterResult result;
  for (const auto& cand : candidates) {
    bool unsafe = false;
    Conflict conflict;
    for (const auto& step : cand.steps) {
      for (const auto& cell : step.cells) {
        if (!prediction.in_bounds(cell.row, cell.col))
          throw std::invalid_argument("filter_safe: footprint cell out of bounds for candidate " +
                                      cand.id);
        if (!unsafe && prediction.at(cell.row, cell.col) <= static_cast<float>(step.dt) + margin) {
          unsafe = true;
          conflict = {cand.id, step.dt, cell};
        }
      }
      // keep scanning remaining steps only to validate bounds
    }
    if (unsafe)
      result.unsafe.push_back(conflict);
    else
      result.safe.push_back(cand.id);
  }
  return result;
}

inline std::vector<CandidateTrajectory> candidates_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("candidates") ? j.at("candidates") : j;
  if (!list.is_array()) throw std::invalid_argument("candidate file must hold a JSON array");
  std::vector<CandidateTrajectory> out;
  for (const auto& cj : list) {
    CandidateTrajectory cand;
    cand.id = cj.at("id").get<std::string>();
    int prev_dt = 0;
    for (const auto& sj : cj.at("steps")) {
      FootprintStep step;
      step.dt = sj.at("dt").get<int>();
      if (step.dt <= prev_dt)
        throw std::invalid_argument("candidate " + cand.id + ": step indices must be strictly increasing and positive");
      prev_dt = step.dt;
      for (const auto& cell : sj.at("cells"))
        step.cells.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
      cand.steps.push_back(std::move(step));
    }
    out.push_back(std::move(cand));
  }
  return out;
}

inline nlohmann::json filter_result_to_json(const FilterResult& result) {
  nlohmann::json j;
  j["safe"] = result.safe;
  nlohmann::json uj = nlohmann::json::array();
  for (const auto& c : result.unsafe) {
    nlohmann::json cj;
    cj["id"] = c.id;
    cj["dt"] = c.dt;
    cj["cell"] = {c.cell.row, c.cell.col};
    uj.push_back(cj);
  }
  j["unsafe"] = uj;
  return j;
}

}  // namespace eom
