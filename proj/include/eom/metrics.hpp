#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "eom/grid.hpp"
#include "eom/io.hpp"

namespace eom {

struct MetricsConfig {
  double C = 31.0;  // aggressiveness offset, chosen above T
  std::vector<double> alphas = {0.3, 0.5, 0.7};
  int T = 30;
};

struct GridPair {
  const Grid<float>* p = nullptr;
  const Grid<float>* e = nullptr;
};

// Percentage of pixels predicted strictly later than ground truth.
inline double missing_rate(const std::vector<GridPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("missing_rate: no scenes");
  long late = 0, total = 0;
  for (const auto& pr : pairs) {
    if (pr.p->h != pr.e->h || pr.p->w != pr.e->w)
      throw std::invalid_argument("missing_rate: shape mismatch");
    for (size_t i = 0; i < pr.p->v.size(); ++i)
      if (pr.p->v[i] > pr.e->v[i]) ++late;
    total += static_cast<long>(pr.p->v.size());
  }
  return 100.0 * static_cast<double>(late) / static_cast<double>(total);
}

// Mean of (C - P) over pixels whose ground truth is not already occupied.
// The all-zero predictor scores exactly C.
inline double aggressiveness(const std::vector<GridPair>& pairs, double C) {
  double acc = 0.0;
  long count = 0;
  for (const auto& pr : pairs) {
    for (size_t i = 0; i < pr.p->v.size(); ++i) {
      if (pr.e->v[i] != 0.0f) {
        acc += C - pr.p->v[i];
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("aggressiveness: no evaluable pixels");
  return acc / static_cast<double>(count);
}

// Recall-style overlap: |M-hat intersect P-hat| / |M-hat| where P-hat is the
// set of pixels predicted occupied strictly inside (0, T).
inline double unseen_iou(const Grid<float>& p, const Grid<uint8_t>& m, int T) {
  if (p.h != m.h || p.w != m.w) throw std::invalid_argument("unseen_iou: shape mismatch");
  long inter = 0, mask = 0;
  for (size_t i = 0; i < p.v.size(); ++i) {
    if (!m.v[i]) continue;
    ++mask;
    if (p.v[i] > 0.0f && p.v[i] < static_cast<float>(T)) ++inter;
  }
  if (mask == 0) throw std::invalid_argument("unseen_iou: empty unseen mask");
  return static_cast<double>(inter) / static_cast<double>(mask);
}

// Fraction of unseen-containing scenes whose IoU strictly exceeds alpha.
inline std::map<double, double> unseen_recall(const std::vector<double>& ious,
                                              const std::vector<double>& alphas) {
  if (ious.empty()) throw std::invalid_argument("unseen_recall: no scenes with unseen vehicles");
  std::map<double, double> out;
  for (double a : alphas) {
    long hit = 0;
    for (double iou : ious)
      if (iou > a) ++hit;
    out[a] = 100.0 * static_cast<double>(hit) / static_cast<double>(ious.size());
  }
  return out;
}

inline double mse_metric(const std::vector<GridPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mse_metric: no scenes");
  double acc = 0.0;
  long count = 0;
  for (const auto& pr : pairs) {
    if (pr.p->h != pr.e->h || pr.p->w != pr.e->w)
      throw std::invalid_argument("mse_metric: shape mismatch");
    for (size_t i = 0; i < pr.p->v.size(); ++i) {
      double d = static_cast<double>(pr.p->v[i]) - pr.e->v[i];
      acc += d * d;
    }
    count += static_cast<long>(pr.p->v.size());
  }
  return acc / static_cast<double>(count);
}

// Snap a continuous prediction onto the integer timestep grid.
inline Grid<float> quantize_eom(const Grid<float>& p, int T) {
  Grid<float> out(p.h, p.w);
  for (size_t i = 0; i < p.v.size(); ++i) {
    float v = std::round(p.v[i]);
    out.v[i] = std::min(static_cast<float>(T), std::max(0.0f, v));
  }
  return out;
}

struct SceneEval {
  std::string id;
  Grid<float> p;
  Grid<float> e;
  Grid<uint8_t> m;
  Grid<uint8_t> drivable;
  bool has_drivable = false;
};

struct SceneRow {
  std::string id;
  long late = 0;
  long total = 0;
  double mse = 0.0;
  bool has_unseen = false;
  double iou = 0.0;  // valid only when has_unseen
};

struct EvalReport {
  double mr = 0.0;
  double aggressive = 0.0;
  std::map<double, double> ur;
  double mse = 0.0;
  double mse_drivable = std::nan("");
  int n_scenes = 0;
  int n_unseen_scenes = 0;
  std::vector<SceneRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mr_percent"] = mr;
    j["aggressiveness"] = aggressive;
    nlohmann::json urj;
    for (const auto& [a, v] : ur) urj[std::to_string(a)] = v;
    j["unseen_recall_percent"] = urj;
    j["mse"] = mse;
    if (!std::isnan(mse_drivable)) j["mse_drivable"] = mse_drivable;
    j["scenes"] = n_scenes;
    j["scenes_with_unseen"] = n_unseen_scenes;
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row;
      row["id"] = r.id;
      row["late_pixels"] = r.late;
      row["total_pixels"] = r.total;
      row["mse"] = r.mse;
      if (r.has_unseen) row["unseen_iou"] = r.iou;
      rj.push_back(row);
    }
    j["rows"] = rj;
    return j;
  }

  std::string to_csv() const {
    std::string out = "scene,late_pixels,total_pixels,mse,unseen_iou\n";
    char buf[160];
    for (const auto& r : rows) {
      if (r.has_unseen)
        std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%.6f,%.6f\n", r.id.c_str(), r.late, r.total,
                      r.mse, r.iou);
      else
        std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%.6f,\n", r.id.c_str(), r.late, r.total, r.mse);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "summary,mr=%.4f,aggressiveness=%.4f,mse=%.4f,", mr,
                  aggressive, mse);
    out += buf;
    bool first = true;
    for (const auto& [a, v] : ur) {
      std::snprintf(buf, sizeof(buf), "%sur%.1f=%.2f", first ? "" : ";", a, v);
      out += buf;
      first = false;
    }
    out += "\n";
    return out;
  }
};

inline EvalReport compute_report(const std::vector<SceneEval>& scenes, const MetricsConfig& cfg) {
  if (scenes.empty()) throw std::invalid_argument("compute_report: no scenes");
  EvalReport report;
  std::vector<GridPair> pairs;
  std::vector<double> ious;
  double drv_acc = 0.0;
  long drv_count = 0;
  for (const auto& s : scenes) {
    pairs.push_back({&s.p, &s.e});
    SceneRow row;
    row.id = s.id;
    row.total = static_cast<long>(s.p.v.size());
    double acc = 0.0;
    for (size_t i = 0; i < s.p.v.size(); ++i) {
      if (s.p.v[i] > s.e.v[i]) ++row.late;
      double d = static_cast<double>(s.p.v[i]) - s.e.v[i];
      acc += d * d;
      if (s.has_drivable && s.drivable.v[i]) {
        drv_acc += d * d;
        ++drv_count;
      }
    }
    row.mse = acc / static_cast<double>(row.total);
    bool any_mask = false;
    for (uint8_t v : s.m.v)
      if (v) {
        any_mask = true;
        break;
      }
    if (any_mask) {
      row.has_unseen = true;
      row.iou = unseen_iou(s.p, s.m, cfg.T);
      ious.push_back(row.iou);
    }
    report.rows.push_back(std::move(row));
  }
  report.mr = missing_rate(pairs);
  report.aggressive = aggressiveness(pairs, cfg.C);
  report.mse = mse_metric(pairs);
  if (drv_count > 0) report.mse_drivable = drv_acc / static_cast<double>(drv_count);
  report.n_scenes = static_cast<int>(scenes.size());
  report.n_unseen_scenes = static_cast<int>(ious.size());
  if (!ious.empty()) report.ur = unseen_recall(ious, cfg.alphas);
  return report;
}

inline void write_report(const EvalReport& report, const std::string& prefix) {
  atomic_write_file(prefix + ".csv", report.to_csv());
  atomic_write_file(prefix + ".json", report.to_json().dump(2) + "\n");
}

}  // namespace eom
