#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "eom/baselines.hpp"
#include "eom/losses.hpp"
#include "eom/metrics.hpp"
#include "eom/net.hpp"
#include "eom/occupancy.hpp"
#include "eom/raster.hpp"
#include "eom/scene_json.hpp"
#include "eom/synth.hpp"
#include "eom/tensor.hpp"

namespace eom {

// One scene prepared for training: raster stored as fade levels (0..F),
// ground truth as integer steps, masks as 0/1.
struct DatasetSample {
  std::string id;
  std::vector<uint8_t> raster;  // channels * h * w, level / fade_frames = value
  uint8_t fade_frames = 1;
  std::vector<uint8_t> eom;     // h * w, 0..T
  std::vector<uint8_t> mask;    // h * w
  std::vector<uint8_t> drivable;
  bool has_unseen = false;
};

struct Dataset {
  CriticalRegion region;
  Horizon horizon;
  int h = 0, w = 0;
  std::vector<DatasetSample> samples;
  std::vector<Scene> scenes;  // kept for trajectory-based predictors
};

inline Dataset build_dataset(std::vector<Scene> scenes, const CriticalRegion& region,
                             const Horizon& horizon, int history_hz) {
  Dataset ds;
  ds.region = region;
  ds.horizon = horizon;
  ds.h = region.height();
  ds.w = region.width();
  ds.samples.reserve(scenes.size());
  for (const auto& scene : scenes) {
    DatasetSample s;
    s.id = scene.id;
    RasterImage img = rasterize_history(scene, region, horizon, history_hz);
    s.fade_frames = static_cast<uint8_t>(img.fade_frames);
    s.raster.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i)
      s.raster[i] = static_cast<uint8_t>(std::lround(img.data[i] * img.fade_frames));
    Grid<float> e = earliest_occupancy(scene, region, horizon);
    s.eom.resize(e.v.size());
    for (size_t i = 0; i < e.v.size(); ++i) s.eom[i] = static_cast<uint8_t>(e.v[i]);
    Grid<uint8_t> m = unseen_mask(scene, region, horizon);
    s.mask = m.v;
    s.has_unseen = std::any_of(m.v.begin(), m.v.end(), [](uint8_t v) { return v != 0; });
    Grid<uint8_t> d = drivable_mask(scene, region, scene.ego_anchor(horizon.current));
    s.drivable = d.v;
    ds.samples.push_back(std::move(s));
  }
  ds.scenes = std::move(scenes);
  return ds;
}

struct RunConfig {
  GeneratorConfig gen;
  int train_scenes = 2000;
  int val_scenes = 400;
  uint64_t seed = 1;
  NetConfig net;
  LossWeights weights;
  AblationFlags ablation;
  double lr = 1e-4;
  int batch_size = 8;
  int epochs = 30;
  int history_hz = 2;
  MetricsConfig metrics;

  void validate() const {
    if (train_scenes <= 0 || val_scenes <= 0) throw std::invalid_argument("split sizes must be positive");
    if (batch_size <= 0 || epochs <= 0) throw std::invalid_argument("batch size and epochs must be positive");
    net.validate();
    weights.validate();
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["train_scenes"] = c.train_scenes;
  j["val_scenes"] = c.val_scenes;
  j["seed"] = c.seed;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["history_hz"] = c.history_hz;
  j["gen"] = {{"min_agents", c.gen.min_agents},
              {"max_agents", c.gen.max_agents},
              {"min_speed", c.gen.min_speed},
              {"max_speed", c.gen.max_speed},
              {"unseen_prob", c.gen.unseen_prob},
              {"max_pedestrians", c.gen.max_pedestrians},
              {"rate_hz", c.gen.rate_hz}};
  j["region"] = {{"l", c.gen.region.l}, {"p", c.gen.region.p}, {"m", c.gen.region.m},
                 {"k", c.gen.region.k}, {"resolution", c.gen.region.resolution}};
  j["horizon"] = {{"history", c.gen.horizon.history}, {"future", c.gen.horizon.future},
                  {"current", c.gen.horizon.current}};
  j["net"] = {{"in_channels", c.net.in_channels}, {"base_channels", c.net.base_channels},
              {"depth", c.net.depth}, {"dilation_rates", c.net.dilation_rates},
              {"attention_enabled", c.net.attention_enabled}, {"norm_enabled", c.net.norm_enabled},
              {"output_scale", c.net.output_scale}};
  j["weights"] = {{"beta", c.weights.beta}, {"gamma_h", c.weights.gamma_h},
                  {"gamma_u", c.weights.gamma_u}};
  j["ablation"] = {{"no_hard", c.ablation.no_hard}, {"no_soft", c.ablation.no_soft},
                   {"no_unseen", c.ablation.no_unseen}, {"no_attention", !c.net.attention_enabled}};
  j["metrics"] = {{"C", c.metrics.C}, {"alphas", c.metrics.alphas}, {"T", c.metrics.T}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.train_scenes = j.value("train_scenes", c.train_scenes);
  c.val_scenes = j.value("val_scenes", c.val_scenes);
  c.seed = j.value("seed", c.seed);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.history_hz = j.value("history_hz", c.history_hz);
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    c.gen.min_agents = g.value("min_agents", c.gen.min_agents);
    c.gen.max_agents = g.value("max_agents", c.gen.max_agents);
    c.gen.min_speed = g.value("min_speed", c.gen.min_speed);
    c.gen.max_speed = g.value("max_speed", c.gen.max_speed);
    c.gen.unseen_prob = g.value("unseen_prob", c.gen.unseen_prob);
    c.gen.max_pedestrians = g.value("max_pedestrians", c.gen.max_pedestrians);
    c.gen.rate_hz = g.value("rate_hz", c.gen.rate_hz);
  }
  if (j.contains("region")) {
    const auto& r = j.at("region");
    c.gen.region.l = r.value("l", c.gen.region.l);
    c.gen.region.p = r.value("p", c.gen.region.p);
    c.gen.region.m = r.value("m", c.gen.region.m);
    c.gen.region.k = r.value("k", c.gen.region.k);
    c.gen.region.resolution = r.value("resolution", c.gen.region.resolution);
  }
  if (j.contains("horizon")) {
    const auto& h = j.at("horizon");
    c.gen.horizon.history = h.value("history", c.gen.horizon.history);
    c.gen.horizon.future = h.value("future", c.gen.horizon.future);
    c.gen.horizon.current = h.value("current", c.gen.horizon.current);
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    c.net.in_channels = n.value("in_channels", c.net.in_channels);
    c.net.base_channels = n.value("base_channels", c.net.base_channels);
    c.net.depth = n.value("depth", c.net.depth);
    if (n.contains("dilation_rates")) c.net.dilation_rates = n.at("dilation_rates").get<std::vector<int>>();
    c.net.attention_enabled = n.value("attention_enabled", c.net.attention_enabled);
    c.net.norm_enabled = n.value("norm_enabled", c.net.norm_enabled);
    c.net.output_scale = n.value("output_scale", c.net.output_scale);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.beta = w.value("beta", c.weights.beta);
    c.weights.gamma_h = w.value("gamma_h", c.weights.gamma_h);
    c.weights.gamma_u = w.value("gamma_u", c.weights.gamma_u);
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.no_hard = a.value("no_hard", false);
    c.ablation.no_soft = a.value("no_soft", false);
    c.ablation.no_unseen = a.value("no_unseen", false);
    if (a.value("no_attention", false)) c.net.attention_enabled = false;
  }
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    c.metrics.C = m.value("C", c.metrics.C);
    if (m.contains("alphas")) c.metrics.alphas = m.at("alphas").get<std::vector<double>>();
    c.metrics.T = m.value("T", c.metrics.T);
  }
  return c;
}

namespace trainer_detail {

// Assemble a float batch from stored u8 samples.
inline Tensor<float> batch_input(const Dataset& ds, const std::vector<int>& idx) {
  int n = static_cast<int>(idx.size());
  size_t plane = static_cast<size_t>(RasterImage::kChannels) * ds.h * ds.w;
  std::vector<float> data(static_cast<size_t>(n) * plane);
  for (int b = 0; b < n; ++b) {
    const DatasetSample& s = ds.samples[idx[b]];
    float inv = 1.0f / s.fade_frames;
    for (size_t i = 0; i < plane; ++i) data[static_cast<size_t>(b) * plane + i] = s.raster[i] * inv;
  }
  return Tensor<float>::from({n, RasterImage::kChannels, ds.h, ds.w}, std::move(data));
}

inline Tensor<float> batch_target(const Dataset& ds, const std::vector<int>& idx, bool mask) {
  int n = static_cast<int>(idx.size());
  size_t plane = static_cast<size_t>(ds.h) * ds.w;
  std::vector<float> data(static_cast<size_t>(n) * plane);
  for (int b = 0; b < n; ++b) {
    const DatasetSample& s = ds.samples[idx[b]];
    const auto& src = mask ? s.mask : s.eom;
    for (size_t i = 0; i < plane; ++i)
      data[static_cast<size_t>(b) * plane + i] = static_cast<float>(src[i]);
  }
  return Tensor<float>::from({n, 1, ds.h, ds.w}, std::move(data));
}

}  // namespace trainer_detail

// --- predictors for the evaluation harness ---

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual Grid<float> predict(const Dataset& ds, size_t index) = 0;
};

// Calibration row: prediction equals ground truth.
class OraclePredictor : public Predictor {
 public:
  std::string name() const override { return "oracle"; }
  Grid<float> predict(const Dataset& ds, size_t index) override {
    Grid<float> g(ds.h, ds.w);
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = ds.samples[index].eom[i];
    return g;
  }
};

class ConstantPredictor : public Predictor {
 public:
  explicit ConstantPredictor(float value) : value_(value) {}
  std::string name() const override { return "constant"; }
  Grid<float> predict(const Dataset& ds, size_t) override {
    return Grid<float>(ds.h, ds.w, value_);
  }

 private:
  float value_;
};

class NetPredictor : public Predictor {
 public:
  explicit NetPredictor(UNet<float>& net) : net_(net) {}
  std::string name() const override { return "net"; }
  Grid<float> predict(const Dataset& ds, size_t index) override {
    ad::NoGradGuard no_grad;
    Tensor<float> x = trainer_detail::batch_input(ds, {static_cast<int>(index)});
    Tensor<float> p = net_.forward(x, false);
    Grid<float> g(ds.h, ds.w);
    std::copy(p.val().begin(), p.val().end(), g.v.begin());
    return g;
  }

 private:
  UNet<float>& net_;
};

class PhysicalPredictor : public Predictor {
 public:
  PhysicalPredictor(KinModel model, double inject_lambda = 0.0, uint64_t seed = 0)
      : model_(model), lambda_(inject_lambda), seed_(seed) {}
  std::string name() const override { return to_string(model_); }
  Grid<float> predict(const Dataset& ds, size_t index) override {
    return physical_predict(ds.scenes[index], ds.region, ds.horizon, model_, lambda_,
                            mix_seed(seed_, index));
  }

 private:
  KinModel model_;
  double lambda_;
  uint64_t seed_;
};

// Runs a predictor over the dataset and scores it. Continuous predictions are
// snapped to the integer timestep grid unless quantize is disabled.
inline EvalReport evaluate(Predictor& predictor, const Dataset& ds, const MetricsConfig& cfg,
                           bool quantize = true) {
  std::vector<SceneEval> evals;
  evals.reserve(ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const DatasetSample& s = ds.samples[i];
    SceneEval ev;
    ev.id = s.id;
    ev.p = predictor.predict(ds, i);
    if (ev.p.h != ds.h || ev.p.w != ds.w)
      throw std::invalid_argument("evaluate: predictor grid geometry mismatch");
    if (quantize) ev.p = quantize_eom(ev.p, cfg.T);
    ev.e = Grid<float>(ds.h, ds.w);
    for (size_t j = 0; j < ev.e.v.size(); ++j) ev.e.v[j] = s.eom[j];
    ev.m = Grid<uint8_t>(ds.h, ds.w);
    ev.m.v = s.mask;
    ev.drivable = Grid<uint8_t>(ds.h, ds.w);
    ev.drivable.v = s.drivable;
    ev.has_drivable = true;
    evals.push_back(std::move(ev));
  }
  return compute_report(evals, cfg);
}

struct TrainLogRow {
  int step = 0;
  double rec = 0.0, hard = 0.0, soft = 0.0, unseen = 0.0, total = 0.0;
};

struct TrainResult {
  UNet<float> net;
  std::vector<TrainLogRow> log;
  std::vector<double> epoch_loss;
  EvalReport val_report;
  Dataset dataset;  // train + val, in generation order
  int val_offset = 0;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "step,rec,hard,soft,unseen,total\n";
  char buf[200];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.step, row.rec, row.hard,
                  row.soft, row.unseen, row.total);
    out += buf;
  }
  return out;
}

// End-to-end training run. Deterministic for a fixed config. When `out_dir`
// is nonempty, writes config.json, checkpoints/epoch_N, log.csv and the
// validation report there.
inline TrainResult train(const RunConfig& config, const std::string& out_dir = "",
                         std::ostream* progress = nullptr) {
  config.validate();
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    atomic_write_file((fs::path(out_dir) / "config.json").string(),
                      run_config_to_json(config).dump(2) + "\n");
  }

  GeneratorConfig gen = config.gen;
  gen.num_scenes = config.train_scenes + config.val_scenes;
  Dataset ds = build_dataset(synth_generate(gen, config.seed), gen.region, gen.horizon,
                             config.history_hz);
  const int n_train = config.train_scenes;

  TrainResult result;
  result.net = UNet<float>(config.net, config.seed);
  std::vector<Tensor<float>> params = result.net.params();
  Adam<float> opt(static_cast<float>(config.lr));
  Rng shuffle_rng(mix_seed(config.seed, 0x5bf));

  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the run's own stream
    for (int i = n_train - 1; i > 0; --i) {
      int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[i], order[j]);
    }
    double epoch_total = 0.0;
    int batches = 0;
    for (int start = 0; start < n_train; start += config.batch_size) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(n_train, start + config.batch_size));
      Tensor<float> x = trainer_detail::batch_input(ds, idx);
      Tensor<float> e = trainer_detail::batch_target(ds, idx, false);
      Tensor<float> m = trainer_detail::batch_target(ds, idx, true);
      Tensor<float> p = result.net.forward(x, true);
      LossBreakdown<float> loss = total_loss(p, e, m, config.weights, config.ablation);
      double total = loss.total.item();
      if (!std::isfinite(total)) {
        std::cerr << "non-finite loss at step " << step << "; batch scenes:";
        for (int i : idx) std::cerr << " " << ds.samples[i].id;
        std::cerr << " (rec=" << loss.rec << " hard=" << loss.hard << " soft=" << loss.soft
                  << " unseen=" << loss.unseen << ")\n";
        throw std::runtime_error("training aborted on non-finite loss");
      }
      zero_grads(params);
      backward(loss.total);
      opt.step(params);
      result.log.push_back({step, loss.rec, loss.hard, loss.soft, loss.unseen, total});
      epoch_total += total;
      ++batches;
      ++step;
    }
    result.epoch_loss.push_back(epoch_total / std::max(1, batches));
    if (progress)
      (*progress) << "epoch " << (epoch + 1) << "/" << config.epochs << " loss "
                  << result.epoch_loss.back() << std::endl;
    if (!out_dir.empty())
      result.net.save((fs::path(out_dir) / "checkpoints" /
                       ("epoch_" + std::to_string(epoch + 1))).string());
  }

  // validation report over the held-out tail
  Dataset val;
  val.region = ds.region;
  val.horizon = ds.horizon;
  val.h = ds.h;
  val.w = ds.w;
  val.samples.assign(ds.samples.begin() + n_train, ds.samples.end());
  val.scenes.assign(ds.scenes.begin() + n_train, ds.scenes.end());
  NetPredictor net_pred(result.net);
  result.val_report = evaluate(net_pred, val, config.metrics);

  if (!out_dir.empty()) {
    atomic_write_file((fs::path(out_dir) / "log.csv").string(), train_log_csv(result.log));
    write_report(result.val_report, (fs::path(out_dir) / "report").string());
  }
  result.dataset = std::move(ds);
  result.val_offset = n_train;
  return result;
}

}  // namespace eom
