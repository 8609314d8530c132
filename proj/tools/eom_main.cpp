#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eom/baselines.hpp"
#include "eom/io.hpp"
#include "eom/metrics.hpp"
#include "eom/occupancy.hpp"
#include "eom/planner.hpp"
#include "eom/raster.hpp"
#include "eom/scene_json.hpp"
#include "eom/synth.hpp"
#include "eom/trainer.hpp"

namespace fs = std::filesystem;
using eom::json;

namespace {

struct GeoFlags {
  bool full_scale = false;
  eom::CriticalRegion region = eom::CriticalRegion::desk();
  eom::Horizon horizon{20, 30, 20};

  void resolve() {
    if (full_scale) region = eom::CriticalRegion::full_scale();
    region.validate();
    horizon.validate();
  }
};

void add_geo_options(CLI::App* cmd, GeoFlags& geo) {
  cmd->add_flag("--full-scale", geo.full_scale,
                "use the 501x501 grid at 0.1 m/px instead of the desk 100x100 at 0.5 m/px");
  cmd->add_option("--resolution-m-per-px", geo.region.resolution, "meters per pixel");
  cmd->add_option("--region-l", geo.region.l, "left pixel bound");
  cmd->add_option("--region-p", geo.region.p, "right pixel bound");
  cmd->add_option("--region-m", geo.region.m, "rear pixel bound");
  cmd->add_option("--region-k", geo.region.k, "front pixel bound");
  cmd->add_option("--history-steps", geo.horizon.history, "history timesteps H");
  cmd->add_option("--future-steps", geo.horizon.future, "future timesteps T");
  cmd->add_option("--current-step", geo.horizon.current, "timeline index of the current step");
}

std::string grid_path(const std::string& dir, const std::string& prefix, const std::string& id) {
  return (fs::path(dir) / (prefix + "_" + id + ".eomg")).string();
}

int run_gen_scenes(int n, uint64_t seed, const std::string& out, eom::GeneratorConfig gen,
                   GeoFlags geo, bool as_json) {
  geo.resolve();
  gen.num_scenes = n;
  gen.region = geo.region;
  gen.horizon = geo.horizon;
  auto scenes = eom::synth_generate(gen, seed);
  fs::create_directories(out);
  for (const auto& scene : scenes) eom::save_scene(scene, out);
  if (as_json) {
    json j{{"scenes", scenes.size()}, {"dir", out}};
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "wrote " << scenes.size() << " scenes to " << out << "\n";
  }
  return 0;
}

int run_rasterize(const std::string& scenes_dir, const std::string& out, int history_hz,
                  bool ppm, GeoFlags geo) {
  geo.resolve();
  auto scenes = eom::load_scene_dir(scenes_dir);
  fs::create_directories(out);
  for (const auto& scene : scenes) {
    eom::RasterImage img = eom::rasterize_history(scene, geo.region, geo.horizon, history_hz);
    for (int c = 0; c < eom::RasterImage::kChannels; ++c)
      eom::write_grid(img.channel(c),
                      (fs::path(out) / (scene.id + "_raster_c" + std::to_string(c) + ".eomg")).string());
    if (ppm)
      eom::write_ppm(img.h, img.w, eom::raster_to_rgb(img),
                     (fs::path(out) / (scene.id + "_raster.ppm")).string());
  }
  std::cout << "rasterized " << scenes.size() << " scenes to " << out << "\n";
  return 0;
}

int run_gt(const std::string& scenes_dir, const std::string& out, bool include_ego, bool pgm,
           int interpolate_hz, GeoFlags geo) {
  geo.resolve();
  auto scenes = eom::load_scene_dir(scenes_dir);
  fs::create_directories(out);
  eom::OccupancyOptions opts;
  opts.include_ego = include_ego;
  for (auto& scene : scenes) {
    eom::Horizon horizon = geo.horizon;
    if (interpolate_hz > 0 && interpolate_hz != static_cast<int>(scene.rate_hz)) {
      int factor = interpolate_hz / static_cast<int>(scene.rate_hz);
      scene = eom::interpolate_scene(scene, interpolate_hz);
      horizon.history *= factor;
      horizon.future *= factor;
      horizon.current *= factor;
    }
    eom::Grid<float> e = eom::earliest_occupancy(scene, geo.region, horizon, opts);
    eom::Grid<uint8_t> m = eom::unseen_mask(scene, geo.region, horizon);
    eom::Grid<uint8_t> d = eom::drivable_mask(scene, geo.region, scene.ego_anchor(horizon.current));
    eom::write_grid(e, grid_path(out, "E", scene.id));
    eom::write_grid(m, grid_path(out, "M", scene.id));
    eom::write_grid(d, grid_path(out, "D", scene.id));
    if (pgm) {
      eom::write_eom_pgm(e, horizon.future, (fs::path(out) / ("E_" + scene.id + ".pgm")).string());
      eom::write_mask_pgm(m, (fs::path(out) / ("M_" + scene.id + ".pgm")).string());
    }
  }
  std::cout << "wrote ground truth for " << scenes.size() << " scenes to " << out << "\n";
  return 0;
}

int run_baseline(const std::string& model_name, const std::string& scenes_dir,
                 const std::string& out, double inject_lambda, uint64_t seed, GeoFlags geo) {
  geo.resolve();
  eom::KinModel model = eom::kin_model_from_string(model_name);
  auto scenes = eom::load_scene_dir(scenes_dir);
  fs::create_directories(out);
  for (size_t i = 0; i < scenes.size(); ++i) {
    eom::Grid<float> p = eom::physical_predict(scenes[i], geo.region, geo.horizon, model,
                                               inject_lambda, eom::mix_seed(seed, i));
    eom::write_grid(p, grid_path(out, "P", scenes[i].id));
  }
  std::cout << "wrote " << scenes.size() << " " << model_name << " predictions to " << out << "\n";
  return 0;
}

int run_train(const eom::RunConfig& config, const std::string& out) {
  eom::TrainResult result = eom::train(config, out, &std::cerr);
  std::cout << "run written to " << out << "\n";
  std::cout << "val MR " << result.val_report.mr << "%  aggressiveness "
            << result.val_report.aggressive << "  MSE " << result.val_report.mse << "\n";
  return 0;
}

void print_report_row(const std::string& name, const eom::EvalReport& r,
                      const std::vector<double>& alphas) {
  std::printf("%-10s %8.2f %14.2f", name.c_str(), r.mr, r.aggressive);
  for (double a : alphas) {
    auto it = r.ur.find(a);
    if (it != r.ur.end())
      std::printf(" %8.2f", it->second);
    else
      std::printf(" %8s", "-");
  }
  std::printf(" %10.2f\n", r.mse);
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& report_prefix,
             eom::MetricsConfig cfg, bool no_quantize, bool with_oracle, bool as_json) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(pred_dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("P_", 0) == 0 && entry.path().extension() == ".eomg")
      ids.push_back(name.substr(2, name.size() - 7));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::runtime_error("no P_*.eomg predictions in " + pred_dir);
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("E_", 0) == 0 && entry.path().extension() == ".eomg") {
      std::string id = name.substr(2, name.size() - 7);
      if (!std::binary_search(ids.begin(), ids.end(), id))
        throw std::runtime_error("scene id mismatch: ground truth " + id + " has no prediction");
    }
  }
  std::vector<eom::SceneEval> evals, oracle_evals;
  for (const auto& id : ids) {
    std::string epath = grid_path(gt_dir, "E", id);
    if (!fs::exists(epath))
      throw std::runtime_error("scene id mismatch: prediction " + id + " has no ground truth");
    eom::SceneEval ev;
    ev.id = id;
    ev.p = eom::read_grid_f32(grid_path(pred_dir, "P", id));
    ev.e = eom::read_grid_f32(epath);
    ev.m = eom::read_grid_u8(grid_path(gt_dir, "M", id));
    std::string dpath = grid_path(gt_dir, "D", id);
    if (fs::exists(dpath)) {
      ev.drivable = eom::read_grid_u8(dpath);
      ev.has_drivable = true;
    }
    if (ev.p.h != ev.e.h || ev.p.w != ev.e.w)
      throw std::runtime_error("grid geometry mismatch for scene " + id);
    if (!no_quantize) ev.p = eom::quantize_eom(ev.p, cfg.T);
    if (with_oracle) {
      eom::SceneEval ov = ev;
      ov.p = ov.e;
      oracle_evals.push_back(std::move(ov));
    }
    evals.push_back(std::move(ev));
  }
  eom::EvalReport report = eom::compute_report(evals, cfg);
  if (as_json) {
    std::cout << report.to_json().dump() << "\n";
  } else {
    std::printf("%-10s %8s %14s", "method", "MR(%)", "aggressiveness");
    for (double a : cfg.alphas) std::printf("   UR%.1f(%%)", a);
    std::printf(" %10s\n", "MSE");
    print_report_row("pred", report, cfg.alphas);
    if (with_oracle) print_report_row("oracle", eom::compute_report(oracle_evals, cfg), cfg.alphas);
  }
  if (!report_prefix.empty()) eom::write_report(report, report_prefix);
  return 0;
}

int run_filter(const std::string& eom_path, const std::string& trajs_path, double margin,
               const std::string& out, bool as_json) {
  eom::Grid<float> p = eom::read_grid_f32(eom_path);
  auto candidates = eom::candidates_from_json(json::parse(eom::read_file(trajs_path)));
  eom::FilterResult result = eom::filter_safe(candidates, p, margin);
  json j = eom::filter_result_to_json(result);
  if (!out.empty()) eom::atomic_write_file(out, j.dump(2) + "\n");
  if (as_json) {
    std::cout << j.dump() << "\n";
  } else {
    std::cout << result.safe.size() << " safe, " << result.unsafe.size() << " unsafe\n";
    for (const auto& c : result.unsafe)
      std::cout << "  " << c.id << " first conflict at dt=" << c.dt << " cell=(" << c.cell.row
                << "," << c.cell.col << ")\n";
  }
  return 0;
}

int run_viz(const std::string& in, const std::string& out, int horizon_steps) {
  std::string bytes = eom::read_file(in);
  if (bytes.size() < 7 || bytes.compare(0, 4, "EOMG") != 0)
    throw std::runtime_error("bad magic in grid file: " + in);
  uint8_t dtype = static_cast<uint8_t>(bytes[6]);
  if (dtype == eom::kGridDtypeF32)
    eom::write_eom_pgm(eom::read_grid_f32(in), horizon_steps, out);
  else
    eom::write_mask_pgm(eom::read_grid_u8(in), out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"earliest-occupancy motion prediction toolkit"};
  app.require_subcommand(1);

  // gen-scenes
  auto* gen_cmd = app.add_subcommand("gen-scenes", "generate synthetic scenes");
  int gen_n = 10;
  uint64_t gen_seed = 1;
  std::string gen_out;
  bool gen_json = false;
  eom::GeneratorConfig gen_cfg;
  GeoFlags gen_geo;
  gen_cmd->add_option("--n", gen_n, "number of scenes")->required();
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--unseen-prob", gen_cfg.unseen_prob, "probability a scene spawns unseen vehicles");
  gen_cmd->add_option("--min-agents", gen_cfg.min_agents, "minimum visible vehicles");
  gen_cmd->add_option("--max-agents", gen_cfg.max_agents, "maximum visible vehicles");
  gen_cmd->add_option("--min-speed", gen_cfg.min_speed, "minimum agent speed m/s");
  gen_cmd->add_option("--max-speed", gen_cfg.max_speed, "maximum agent speed m/s");
  gen_cmd->add_option("--max-pedestrians", gen_cfg.max_pedestrians, "maximum pedestrians");
  gen_cmd->add_flag("--json", gen_json, "machine-readable stdout");
  add_geo_options(gen_cmd, gen_geo);

  // rasterize
  auto* ras_cmd = app.add_subcommand("rasterize", "render history raster images");
  std::string ras_scenes, ras_out;
  int ras_hz = 2;
  bool ras_ppm = false;
  GeoFlags ras_geo;
  ras_cmd->add_option("--scenes", ras_scenes, "scene directory")->required();
  ras_cmd->add_option("--out", ras_out, "output directory")->required();
  ras_cmd->add_option("--history-hz", ras_hz, "history sampling rate");
  ras_cmd->add_flag("--ppm", ras_ppm, "also write RGB previews");
  add_geo_options(ras_cmd, ras_geo);

  // gt
  auto* gt_cmd = app.add_subcommand("gt", "compute ground-truth maps (E, M, D)");
  std::string gt_scenes, gt_out;
  bool gt_ego = false, gt_pgm = false;
  int gt_interp = 0;
  GeoFlags gt_geo;
  gt_cmd->add_option("--scenes", gt_scenes, "scene directory")->required();
  gt_cmd->add_option("--out", gt_out, "output directory")->required();
  gt_cmd->add_flag("--include-ego", gt_ego, "treat the ego's own future footprint as occupancy");
  gt_cmd->add_flag("--pgm", gt_pgm, "also write PGM previews");
  gt_cmd->add_option("--interpolate-hz", gt_interp, "interpolate scenes to this rate first");
  add_geo_options(gt_cmd, gt_geo);

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "physical-model predictions");
  std::string base_model = "cv", base_scenes, base_out;
  double base_lambda = 0.0;
  uint64_t base_seed = 0;
  GeoFlags base_geo;
  base_cmd->add_option("--model", base_model, "cv|ca|cm|cy")->required();
  base_cmd->add_option("--scenes", base_scenes, "scene directory")->required();
  base_cmd->add_option("--out", base_out, "output directory")->required();
  base_cmd->add_option("--inject-lambda", base_lambda, "Poisson rate for injected unseen vehicles");
  base_cmd->add_option("--seed", base_seed, "seed for the injection protocol");
  add_geo_options(base_cmd, base_geo);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the predictor");
  std::string train_out, train_config_path;
  eom::RunConfig run_cfg;
  GeoFlags train_geo;
  bool no_hard = false, no_soft = false, no_unseen = false, no_attention = false, no_norm = false;
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_option("--config", train_config_path, "JSON run config (flags override it)");
  train_cmd->add_option("--train-scenes", run_cfg.train_scenes, "training scenes");
  train_cmd->add_option("--val-scenes", run_cfg.val_scenes, "validation scenes");
  train_cmd->add_option("--seed", run_cfg.seed, "run seed");
  train_cmd->add_option("--epochs", run_cfg.epochs, "epochs");
  train_cmd->add_option("--batch", run_cfg.batch_size, "batch size");
  train_cmd->add_option("--lr", run_cfg.lr, "learning rate");
  train_cmd->add_option("--base-channels", run_cfg.net.base_channels, "network width");
  train_cmd->add_option("--depth", run_cfg.net.depth, "encoder stages");
  train_cmd->add_option("--beta", run_cfg.weights.beta, "sigmoid sharpness");
  train_cmd->add_option("--gamma-h", run_cfg.weights.gamma_h, "hard loss weight");
  train_cmd->add_option("--gamma-u", run_cfg.weights.gamma_u, "unseen loss weight");
  train_cmd->add_option("--unseen-prob", run_cfg.gen.unseen_prob, "generator unseen probability");
  train_cmd->add_flag("--no-hard", no_hard, "ablation: drop the hard loss");
  train_cmd->add_flag("--no-soft", no_soft, "ablation: drop the soft loss");
  train_cmd->add_flag("--no-unseen", no_unseen, "ablation: drop the unseen loss");
  train_cmd->add_flag("--no-attention", no_attention, "ablation: drop the attention unit");
  train_cmd->add_flag("--no-norm", no_norm, "disable normalization layers");
  add_geo_options(train_cmd, train_geo);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  std::string eval_pred, eval_gt, eval_report;
  eom::MetricsConfig eval_cfg;
  bool eval_noq = false, eval_oracle = false, eval_json = false;
  eval_cmd->add_option("--pred-dir", eval_pred, "directory of P_*.eomg")->required();
  eval_cmd->add_option("--gt-dir", eval_gt, "directory of E_/M_/D_*.eomg")->required();
  eval_cmd->add_option("--report", eval_report, "write report CSV/JSON with this prefix");
  eval_cmd->add_option("--agg-c", eval_cfg.C, "aggressiveness constant C");
  eval_cmd->add_option("--alphas", eval_cfg.alphas, "recall thresholds");
  eval_cmd->add_option("--horizon-steps", eval_cfg.T, "future horizon T");
  eval_cmd->add_flag("--no-quantize", eval_noq, "score raw continuous predictions");
  eval_cmd->add_flag("--with-oracle", eval_oracle, "print the ground-truth-oracle row");
  eval_cmd->add_flag("--json", eval_json, "machine-readable stdout");

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "safety-filter candidate ego trajectories");
  std::string filter_eom, filter_trajs, filter_out;
  double filter_margin = 0.0;
  bool filter_json = false;
  filter_cmd->add_option("--eom", filter_eom, "predicted earliest occupancy grid")->required();
  filter_cmd->add_option("--trajs", filter_trajs, "candidate trajectories JSON")->required();
  filter_cmd->add_option("--margin", filter_margin, "extra timesteps of clearance");
  filter_cmd->add_option("--out", filter_out, "write the partition JSON here");
  filter_cmd->add_flag("--json", filter_json, "machine-readable stdout");

  // viz
  auto* viz_cmd = app.add_subcommand("viz", "render a grid file to PGM");
  std::string viz_in, viz_out;
  int viz_t = 30;
  viz_cmd->add_option("--in", viz_in, "grid file")->required();
  viz_cmd->add_option("--out", viz_out, "output PGM")->required();
  viz_cmd->add_option("--horizon-steps", viz_t, "horizon T for value scaling");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed())
      return run_gen_scenes(gen_n, gen_seed, gen_out, gen_cfg, gen_geo, gen_json);
    if (ras_cmd->parsed()) return run_rasterize(ras_scenes, ras_out, ras_hz, ras_ppm, ras_geo);
    if (gt_cmd->parsed()) return run_gt(gt_scenes, gt_out, gt_ego, gt_pgm, gt_interp, gt_geo);
    if (base_cmd->parsed())
      return run_baseline(base_model, base_scenes, base_out, base_lambda, base_seed, base_geo);
    if (train_cmd->parsed()) {
      if (!train_config_path.empty()) {
        eom::RunConfig flag_cfg = run_cfg;  // values parsed from flags
        run_cfg = eom::run_config_from_json(json::parse(eom::read_file(train_config_path)));
        auto set = [&](const char* name) { return train_cmd->count(name) > 0; };
        if (set("--train-scenes")) run_cfg.train_scenes = flag_cfg.train_scenes;
        if (set("--val-scenes")) run_cfg.val_scenes = flag_cfg.val_scenes;
        if (set("--seed")) run_cfg.seed = flag_cfg.seed;
        if (set("--epochs")) run_cfg.epochs = flag_cfg.epochs;
        if (set("--batch")) run_cfg.batch_size = flag_cfg.batch_size;
        if (set("--lr")) run_cfg.lr = flag_cfg.lr;
        if (set("--base-channels")) run_cfg.net.base_channels = flag_cfg.net.base_channels;
        if (set("--depth")) run_cfg.net.depth = flag_cfg.net.depth;
        if (set("--beta")) run_cfg.weights.beta = flag_cfg.weights.beta;
        if (set("--gamma-h")) run_cfg.weights.gamma_h = flag_cfg.weights.gamma_h;
        if (set("--gamma-u")) run_cfg.weights.gamma_u = flag_cfg.weights.gamma_u;
        if (set("--unseen-prob")) run_cfg.gen.unseen_prob = flag_cfg.gen.unseen_prob;
      }
      if (train_config_path.empty() || train_geo.full_scale ||
          train_cmd->count("--resolution-m-per-px") || train_cmd->count("--region-l") ||
          train_cmd->count("--region-p") || train_cmd->count("--region-m") ||
          train_cmd->count("--region-k") || train_cmd->count("--history-steps") ||
          train_cmd->count("--future-steps") || train_cmd->count("--current-step")) {
        train_geo.resolve();
        run_cfg.gen.region = train_geo.region;
        run_cfg.gen.horizon = train_geo.horizon;
      }
      run_cfg.net.output_scale = run_cfg.gen.horizon.future;
      run_cfg.metrics.T = run_cfg.gen.horizon.future;
      if (no_hard) run_cfg.ablation.no_hard = true;
      if (no_soft) run_cfg.ablation.no_soft = true;
      if (no_unseen) run_cfg.ablation.no_unseen = true;
      if (no_attention) run_cfg.net.attention_enabled = false;
      if (no_norm) run_cfg.net.norm_enabled = false;
      return run_train(run_cfg, train_out);
    }
    if (eval_cmd->parsed())
      return run_eval(eval_pred, eval_gt, eval_report, eval_cfg, eval_noq, eval_oracle, eval_json);
    if (filter_cmd->parsed())
      return run_filter(filter_eom, filter_trajs, filter_margin, filter_out, filter_json);
    if (viz_cmd->parsed()) return run_viz(viz_in, viz_out, viz_t);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
