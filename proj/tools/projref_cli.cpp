// projref: command-line front end for the projector-referenced pose
// estimation toolkit. Subcommands: simulate, reconstruct, estimate, icp,
// experiment {repeatability|overlap|sampling|propagation|plane|sweep}, stats.
//
// Exit codes: 0 success, 2 config error, 3 estimator unsuccessful, 4 I/O error.

#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "projref/experiments.hpp"
#include "projref/io.hpp"

namespace pr = projref;
using pr::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitEstimator = 3;
constexpr int kExitIo = 4;

std::string now_iso8601() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  int workers = pr::default_workers();
};

Json load_or_empty(const std::string& path) {
  if (path.empty()) return Json::object();
  return pr::load_config(path);
}

pr::RigSpec rig_from(const Json& cfg) {
  if (!cfg.contains("rig")) throw pr::ConfigError("config missing field 'rig'");
  return pr::rig_from_json(cfg["rig"]);
}

pr::Scene scene_from(const Json& cfg) {
  return cfg.contains("scene") ? pr::scene_from_json(cfg["scene"]) : pr::plane_scene();
}

pr::RigidTransform camera_pose_from(const Json& cfg) {
  return cfg.contains("camera_pose") ? pr::transform_from_json(cfg["camera_pose"])
                                     : pr::default_camera_pose();
}

pr::MaskConfig mask_from(const Json& cfg) {
  pr::MaskConfig def = pr::small_rig_mask_config();
  return cfg.contains("mask") ? pr::mask_from_json(cfg["mask"], def) : def;
}

pr::RunManifest make_manifest(const std::string& sub, const CommonOpts& opts, const Json& cfg,
                              const std::string& out_dir, uint64_t seed) {
  pr::RunManifest m;
  m.subcommand = sub;
  m.config_path = opts.config_path;
  m.config_hash = pr::config_hash(cfg);
  m.seed = seed;
  m.output_dir = out_dir;
  m.timestamp = now_iso8601();
  return m;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOpts& opts, const std::string& out_dir) {
  Json cfg = load_or_empty(opts.config_path);
  pr::RigSpec rig = rig_from(cfg);
  pr::Scene scene = scene_from(cfg);
  pr::RigidTransform pose = camera_pose_from(cfg);
  pr::NoiseSpec noise =
      cfg.contains("noise") ? pr::noise_from_json(cfg["noise"]) : pr::NoiseSpec{};
  if (opts.seed) noise.seed = *opts.seed;

  pr::SimFrame frame = pr::render_views(scene, rig, pose, noise, opts.workers);
  pr::save_frame(out_dir, frame);
  pr::write_manifest(out_dir, make_manifest("simulate", opts, cfg, out_dir, noise.seed), cfg);
  std::cout << "simulated frame written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_reconstruct(const CommonOpts& opts, const std::string& frame_dir,
                    const std::string& out_dir) {
  Json cfg = load_or_empty(opts.config_path);
  pr::SimFrame frame = pr::load_frame(frame_dir);
  pr::ProcessedFrame pf = pr::process_frame(frame, mask_from(cfg));

  pr::fs::create_directories(out_dir);
  pr::write_ply(pr::fs::path(out_dir) / "cloud.ply", pf.cloud);
  pr::write_cloud_csv(pr::fs::path(out_dir) / "cloud.csv", pf.cloud);
  pr::write_raw_grid(pr::fs::path(out_dir) / "local_phase.f64", pf.maps.local_phase, "rad");
  if (pf.maps.global_phase_h)
    pr::write_raw_grid(pr::fs::path(out_dir) / "global_phase_h.f64", *pf.maps.global_phase_h,
                       "rad");
  if (pf.maps.global_phase_v)
    pr::write_raw_grid(pr::fs::path(out_dir) / "global_phase_v.f64", *pf.maps.global_phase_v,
                       "rad");
  pr::ImageF reasons(pf.mask.reason.width, pf.mask.reason.height);
  for (size_t i = 0; i < reasons.data.size(); ++i) reasons.data[i] = pf.mask.reason.data[i] / 255.0;
  pr::write_pgm(pr::fs::path(out_dir) / "mask_reasons.pgm", reasons, 255);
  pr::write_manifest(out_dir, make_manifest("reconstruct", opts, cfg, out_dir, 0), cfg);
  std::cout << "reconstructed " << pf.cloud.size() << " points ("
            << pf.mask.count_valid() << " valid pixels) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_estimate(const CommonOpts& opts, const std::string& frame_dir,
                 const std::string& out_path) {
  Json cfg = load_or_empty(opts.config_path);
  pr::SimFrame frame = pr::load_frame(frame_dir);
  pr::ProcessedFrame pf = pr::process_frame(frame, mask_from(cfg));

  pr::EstimatorConfig ecfg = cfg.contains("estimator") ? pr::estimator_from_json(cfg["estimator"])
                                                       : pr::EstimatorConfig{};
  if (opts.seed) ecfg.seed = *opts.seed;  // overrides sampling only
  ecfg.workers = opts.workers;

  pr::PoseEstimate est = pr::estimate_pose(pf.cloud.constraints(), frame.rig, ecfg);
  Json out = pr::pose_estimate_to_json(est);
  out["gt_available"] = true;
  out["gt_e_t_mm"] = (est.pose.t - frame.camera_pose.t).norm() * 1000.0;
  out["gt_e_r_mrad"] = pr::rotation_error_mrad(est.pose.R, frame.camera_pose.R);
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(out_path);
    if (!f) throw pr::IoError("cannot write " + out_path);
    f << out.dump(2) << "\n";
    std::cout << "pose written to " << out_path << "\n";
  }
  return est.success ? kExitOk : kExitEstimator;
}

int cmd_icp(const CommonOpts& opts, const std::string& source_path,
            const std::string& target_path, const std::string& out_path) {
  Json cfg = load_or_empty(opts.config_path);
  pr::IcpConfig icfg = cfg.contains("icp") ? pr::icp_from_json(cfg["icp"]) : pr::IcpConfig{};
  icfg.workers = opts.workers;

  auto load_cloud = [](const std::string& p) {
    pr::PointCloud c = p.ends_with(".csv") ? pr::read_cloud_csv(p) : pr::read_ply(p);
    return c.points;
  };
  pr::IcpResult res = pr::icp_point_to_plane(load_cloud(source_path), load_cloud(target_path),
                                             icfg);
  Json out = {{"transform", pr::to_json(res.transform)},
              {"rmse_m", res.rmse},
              {"iterations", res.iterations},
              {"correspondences", res.correspondences},
              {"converged", res.converged}};
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream f(out_path);
    if (!f) throw pr::IoError("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment

pr::ExperimentSpec experiment_spec_from(const Json& cfg, const CommonOpts& opts) {
  pr::ExperimentSpec spec;
  if (cfg.contains("rig")) spec.rig = pr::rig_from_json(cfg["rig"]);
  if (cfg.contains("scene")) spec.scene = pr::scene_from_json(cfg["scene"]);
  if (cfg.contains("camera_pose")) spec.camera_pose = pr::transform_from_json(cfg["camera_pose"]);
  spec.mask = mask_from(cfg);
  if (cfg.contains("estimator")) spec.estimator = pr::estimator_from_json(cfg["estimator"]);
  if (cfg.contains("noise")) spec.noise = pr::noise_from_json(cfg["noise"]);
  spec.trials = cfg.value("trials", spec.trials);
  if (cfg.contains("overlap_ratios"))
    spec.overlap_ratios = cfg["overlap_ratios"].get<std::vector<double>>();
  if (cfg.contains("sigma_scales"))
    spec.sigma_scales = cfg["sigma_scales"].get<std::vector<double>>();
  if (cfg.contains("schemes")) {
    spec.schemes.clear();
    for (const auto& s : cfg["schemes"]) spec.schemes.push_back(pr::scheme_from_name(s));
  }
  if (cfg.contains("sweep")) {
    const Json& s = cfg["sweep"];
    spec.sweep_sizes = s.value("sizes", spec.sweep_sizes);
    spec.sweep_min_mm = s.value("min_mm", spec.sweep_min_mm);
    spec.sweep_max_mm = s.value("max_mm", spec.sweep_max_mm);
  }
  spec.plane_placements = cfg.value("plane_placements", spec.plane_placements);
  spec.sweep_placements = cfg.value("sweep_placements", spec.sweep_placements);
  spec.pixel_stride = cfg.value("pixel_stride", spec.pixel_stride);
  spec.master_seed = cfg.value("seed", spec.master_seed);
  if (opts.seed) spec.master_seed = *opts.seed;
  spec.workers = opts.workers;
  spec.validate();
  return spec;
}

Json dispersion_json(const pr::DispersionSummary& s) {
  return {{"label", s.label},       {"trials", s.d_t_mm.size()}, {"failures", s.failures},
          {"infeasible", s.infeasible}, {"median_dt_mm", s.median_dt}, {"iqr_dt_mm", s.iqr_dt},
          {"max_dt_mm", s.max_dt},  {"mean_dt_mm", s.mean_dt},   {"sd_dt_mm", s.sd_dt},
          {"median_dr_mrad", s.median_dr}, {"iqr_dr_mrad", s.iqr_dr}, {"max_dr_mrad", s.max_dr},
          {"mean_dr_mrad", s.mean_dr},     {"sd_dr_mrad", s.sd_dr}};
}

void write_dispersion_outputs(const pr::fs::path& dir, const pr::DispersionSummary& s) {
  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i < s.d_t_mm.size(); ++i)
    rows.push_back({std::to_string(i), pr::fmt_double(s.d_t_mm[i]), pr::fmt_double(s.d_r_mrad[i])});
  pr::write_csv(dir / (s.label + "_trials.csv"), {"trial", "d_t_mm", "d_r_mrad"}, rows);

  std::vector<double> sorted = s.d_t_mm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::vector<std::string>> ecdf;
  for (size_t i = 0; i < sorted.size(); ++i)
    ecdf.push_back({pr::fmt_double(sorted[i]),
                    pr::fmt_double(double(i + 1) / double(sorted.size()))});
  pr::write_csv(dir / (s.label + "_ecdf.csv"), {"d_t_mm", "cumulative_probability"}, ecdf);
}

Json paired_json(const pr::SweepPaired& p) {
  return {{"median_delta", p.median_delta}, {"ci_lo", p.ci_lo},   {"ci_hi", p.ci_hi},
          {"p_one_sided", p.p_one_sided},   {"p_two_sided", p.p_two_sided}};
}

int cmd_experiment(const CommonOpts& opts, const std::string& study, const std::string& out_dir,
                   bool resume) {
  pr::fs::path dir(out_dir);
  if (resume && pr::fs::exists(dir / "summary.json")) {
    std::cout << "experiment already complete in " << out_dir << "; nothing to do\n";
    return kExitOk;
  }
  Json cfg = load_or_empty(opts.config_path);
  pr::ExperimentSpec spec = experiment_spec_from(cfg, opts);
  pr::fs::create_directories(dir);

  Json summary = {{"schema", "experiment-summary-v1"}, {"study", study},
                  {"seed", spec.master_seed}};

  if (study == "repeatability") {
    pr::DispersionSummary s = pr::run_repeatability(spec);
    write_dispersion_outputs(dir, s);
    summary["result"] = dispersion_json(s);
  } else if (study == "overlap") {
    Json arr = Json::array();
    for (const auto& s : pr::run_overlap(spec)) {
      if (!s.infeasible) write_dispersion_outputs(dir, s);
      arr.push_back(dispersion_json(s));
    }
    summary["result"] = arr;
  } else if (study == "sampling") {
    Json arr = Json::array();
    for (const auto& s : pr::run_sampling_comparison(spec)) {
      write_dispersion_outputs(dir, s);
      arr.push_back(dispersion_json(s));
    }
    summary["result"] = arr;
  } else if (study == "propagation") {
    Json arr = Json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : pr::run_propagation(spec)) {
      arr.push_back({{"sigma_scale", r.sigma_scale}, {"sigma_cloud_m", r.sigma_cloud},
                     {"sigma_px", r.sigma_px},
                     {"median_dt_mm", r.median_dt}, {"p95_dt_mm", r.p95_dt},
                     {"median_dr_mrad", r.median_dr}, {"p95_dr_mrad", r.p95_dr},
                     {"failures", r.failures}});
      rows.push_back({pr::fmt_double(r.sigma_scale), pr::fmt_double(r.median_dt),
                      pr::fmt_double(r.p95_dt), pr::fmt_double(r.median_dr),
                      pr::fmt_double(r.p95_dr)});
    }
    pr::write_csv(dir / "propagation.csv",
                  {"sigma_scale", "median_dt_mm", "p95_dt_mm", "median_dr_mrad", "p95_dr_mrad"},
                  rows);
    summary["result"] = arr;
  } else if (study == "plane") {
    pr::PlaneTrajectoryResult r = pr::run_plane_trajectory(spec);
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < r.model.e_t_mm.size(); ++i)
      rows.push_back({std::to_string(i), pr::fmt_double(r.model.e_t_mm[i]),
                      pr::fmt_double(r.model.e_r_mrad[i]), pr::fmt_double(r.icp.e_t_mm[i]),
                      pr::fmt_double(r.icp.e_r_mrad[i])});
    pr::write_csv(dir / "plane_poses.csv",
                  {"placement", "model_e_t_mm", "model_e_r_mrad", "icp_e_t_mm", "icp_e_r_mrad"},
                  rows);
    summary["result"] = {{"model_E_T_mm", r.model.score_t},
                         {"model_E_R_mrad", r.model.score_r},
                         {"icp_E_T_mm", r.icp.score_t},
                         {"icp_E_R_mrad", r.icp.score_r},
                         {"icp_rmse_m", r.icp_rmse},
                         {"cloud_mean_dist_m", r.cloud_mean_dist},
                         {"cloud_p95_dist_m", r.cloud_p95_dist},
                         {"merged_extent_err_frac", r.merged_extent_err_frac},
                         {"loop_gap_t_mm", r.loop_gap_t_mm},
                         {"loop_gap_r_mrad", r.loop_gap_r_mrad}};
  } else if (study == "sweep") {
    pr::VoxelSweepResult r = pr::run_voxel_sweep(spec);
    std::vector<std::vector<std::string>> rows;
    for (size_t v = 0; v < r.voxel_mm.size(); ++v)
      rows.push_back({pr::fmt_double(r.voxel_mm[v]),
                      pr::fmt_double(r.icp_records[v].score_t),
                      pr::fmt_double(r.icp_records[v].score_r),
                      pr::fmt_double(r.corrected_records[v].score_t),
                      pr::fmt_double(r.corrected_records[v].score_r)});
    pr::write_csv(dir / "sweep_scores.csv",
                  {"voxel_mm", "icp_E_T_mm", "icp_E_R_mrad", "corrected_E_T_mm",
                   "corrected_E_R_mrad"},
                  rows);
    std::vector<std::vector<std::string>> pose_rows;
    for (size_t v = 0; v < r.voxel_mm.size(); ++v)
      for (size_t i = 0; i < r.icp_records[v].e_t_mm.size(); ++i)
        pose_rows.push_back({pr::fmt_double(r.voxel_mm[v]), std::to_string(i + 1),
                             pr::fmt_double(r.icp_records[v].e_t_mm[i]),
                             pr::fmt_double(r.icp_records[v].e_r_mrad[i]),
                             pr::fmt_double(r.corrected_records[v].e_t_mm[i]),
                             pr::fmt_double(r.corrected_records[v].e_r_mrad[i])});
    pr::write_csv(dir / "sweep_poses.csv",
                  {"voxel_mm", "pose", "icp_e_t_mm", "icp_e_r_mrad", "corrected_e_t_mm",
                   "corrected_e_r_mrad"},
                  pose_rows);
    summary["result"] = {{"E_T", paired_json(r.paired_et)},
                         {"E_R", paired_json(r.paired_er)},
                         {"sigma_T", paired_json(r.paired_sigma_t)},
                         {"sigma_R", paired_json(r.paired_sigma_r)},
                         {"correction_fallbacks", r.correction_fallbacks}};
  } else {
    std::cerr << "unknown study '" << study
              << "'; valid: repeatability overlap sampling propagation plane sweep\n";
    return kExitConfig;
  }

  std::ofstream sf(dir / "summary.json");
  if (!sf) throw pr::IoError("cannot write summary.json in " + out_dir);
  sf << summary.dump(2) << "\n";
  pr::write_manifest(dir, make_manifest("experiment-" + study, opts, cfg, out_dir,
                                        spec.master_seed),
                     cfg);
  std::cout << "experiment '" << study << "' written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& input_csv, uint64_t seed) {
  auto rows = pr::read_csv(input_csv);
  if (rows.size() < 2) throw pr::IoError("stats: CSV needs a header and data rows");
  std::vector<double> diffs;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.empty()) continue;
    if (r.size() >= 2)
      diffs.push_back(std::stod(r[0]) - std::stod(r[1]));  // paired columns
    else
      diffs.push_back(std::stod(r[0]));  // precomputed differences
  }
  pr::WilcoxonResult w = pr::wilcoxon_signed_rank(diffs);
  auto ci = pr::bootstrap_ci(diffs, 0.95, 10000, seed);
  Json out = {{"n", w.n},
              {"w_plus", w.w_plus},
              {"exact", w.exact},
              {"p_one_sided_greater", w.p_greater},
              {"p_one_sided_less", w.p_less},
              {"p_two_sided", w.p_two_sided},
              {"median", pr::median_of(diffs)},
              {"ci95_lo", ci.first},
              {"ci95_hi", ci.second}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"projector-referenced pose estimation toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out_dir, frame_dir, out_path, source_path, target_path, study, input_csv;
  bool resume = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config,-c", opts.config_path, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--seed", [&](const std::vector<std::string>& v) {
      opts.seed = std::stoull(v[0]);
      return true;
    }, "override the config seed");
    sub->add_option("--workers", opts.workers, "parallel worker cap");
  };

  auto* sim = app.add_subcommand("simulate", "render a synthetic acquisition");
  add_common(sim, true);
  sim->add_option("--out,-o", out_dir, "output frame directory")->required();

  auto* rec = app.add_subcommand("reconstruct", "phase pipeline + point cloud from a frame");
  add_common(rec, false);
  rec->add_option("--frame,-f", frame_dir, "simulated frame directory")->required();
  rec->add_option("--out,-o", out_dir, "output directory")->required();

  auto* est = app.add_subcommand("estimate", "estimate the camera pose from a frame");
  add_common(est, false);
  est->add_option("--frame,-f", frame_dir, "simulated frame directory")->required();
  est->add_option("--out,-o", out_path, "pose JSON path (default: stdout)");

  auto* icp = app.add_subcommand("icp", "point-to-plane ICP between two clouds");
  add_common(icp, false);
  icp->add_option("--source,-s", source_path, "source cloud (PLY or CSV)")->required();
  icp->add_option("--target,-t", target_path, "target cloud (PLY or CSV)")->required();
  icp->add_option("--out,-o", out_path, "result JSON path (default: stdout)");

  auto* exp = app.add_subcommand("experiment", "run a scripted study");
  add_common(exp, true);
  exp->add_option("study", study,
                  "one of: repeatability overlap sampling propagation plane sweep")
      ->required();
  exp->add_option("--out,-o", out_dir, "result directory")->required();
  exp->add_flag("--resume", resume, "skip if the result directory is already complete");

  auto* st = app.add_subcommand("stats", "Wilcoxon + bootstrap on paired CSV data");
  st->add_option("--input,-i", input_csv, "CSV: one difference column or two paired columns")
      ->required();
  uint64_t stats_seed = 0;
  st->add_option("--seed", stats_seed, "bootstrap seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(opts, out_dir);
    if (rec->parsed()) return cmd_reconstruct(opts, frame_dir, out_dir);
    if (est->parsed()) return cmd_estimate(opts, frame_dir, out_path);
    if (icp->parsed()) return cmd_icp(opts, source_path, target_path, out_path);
    if (exp->parsed()) return cmd_experiment(opts, study, out_dir, resume);
    if (st->parsed()) return cmd_stats(input_csv, stats_seed);
  } catch (const pr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const pr::InsufficientValidPoints& e) {
    std::cerr << "estimator error: " << e.what() << "\n";
    return kExitEstimator;
  } catch (const pr::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
