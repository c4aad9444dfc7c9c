// Scripted studies: sampling repeatability, overlap restriction, scheme
// comparison, noise propagation, the featureless-plane trajectory, and the
// voxel-size sweep with paired ICP-versus-corrected statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "projref/estimator.hpp"
#include "projref/presets.hpp"
#include "projref/reconstruction.hpp"
#include "projref/registration.hpp"
#include "projref/scene.hpp"
#include "projref/stats.hpp"

namespace projref {

struct ExperimentSpec {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform camera_pose = default_camera_pose();
  MaskConfig mask = small_rig_mask_config();
  EstimatorConfig estimator;
  NoiseSpec noise;                       // measurement-noise regime for trials
  int trials = 100;                      // K
  std::vector<double> overlap_ratios{0.10, 0.01, 0.001, 0.0001};
  std::vector<double> sigma_scales{1.0, 2.0, 4.0, 8.0};
  std::vector<SamplingScheme> schemes{SamplingScheme::Random, SamplingScheme::Uniform,
                                      SamplingScheme::VoxelNearest};
  int sweep_sizes = 20;
  double sweep_min_mm = 0.3, sweep_max_mm = 3.0;
  int plane_placements = 6;
  int sweep_placements = 8;
  int pixel_stride = 1;                  // constraint subsampling for trajectory studies
  uint64_t master_seed = 0;
  int workers = 1;

  void validate() const {
    if (trials < 2) throw std::invalid_argument("experiment spec: trials must be >= 2");
    if (overlap_ratios.empty() || sigma_scales.empty() || schemes.empty() || sweep_sizes < 1)
      throw std::invalid_argument("experiment spec: parameter grids must be non-empty");
  }
};

// ---------------------------------------------------------------------------
// Dispersion bookkeeping

struct DispersionSummary {
  std::string label;
  std::vector<double> d_t_mm, d_r_mrad;  // per successful trial, vs trial-median pose
  int failures = 0;
  bool infeasible = false;

  double median_dt = 0, iqr_dt = 0, max_dt = 0, mean_dt = 0, sd_dt = 0;
  double median_dr = 0, iqr_dr = 0, max_dr = 0, mean_dr = 0, sd_dr = 0;

  void finalize() {
    if (d_t_mm.empty()) return;
    median_dt = median_of(d_t_mm);
    iqr_dt = iqr_of(d_t_mm);
    max_dt = *std::max_element(d_t_mm.begin(), d_t_mm.end());
    mean_dt = mean_of(d_t_mm);
    sd_dt = stddev_of(d_t_mm);
    median_dr = median_of(d_r_mrad);
    iqr_dr = iqr_of(d_r_mrad);
    max_dr = *std::max_element(d_r_mrad.begin(), d_r_mrad.end());
    mean_dr = mean_of(d_r_mrad);
    sd_dr = stddev_of(d_r_mrad);
  }
};

namespace detail {

inline EulerPose component_median_pose(const std::vector<EulerPose>& poses) {
  Vec6 med;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> v;
    for (const auto& p : poses) v.push_back(p.vec()[i]);
    med[i] = median_of(v);
  }
  return EulerPose::from_vec(med);
}

/// Per-trial deviations from the component-wise-median pose.
inline DispersionSummary dispersion_from_poses(const std::vector<EulerPose>& poses,
                                               int failures) {
  DispersionSummary s;
  s.failures = failures;
  if (poses.size() < 2) {
    s.infeasible = poses.empty();
    return s;
  }
  EulerPose med = component_median_pose(poses);
  Mat3 r_med = euler_to_rotation(med);
  for (const auto& p : poses) {
    s.d_t_mm.push_back((p.translation() - med.translation()).norm() * 1000.0);
    s.d_r_mrad.push_back(rotation_geodesic_rad(euler_to_rotation(p), r_med) * 1000.0);
  }
  s.finalize();
  return s;
}

/// K estimator runs on a fixed constraint set, varying only the sampling
/// seed; deterministic for any worker count.
inline DispersionSummary repeat_trials(const std::vector<Constraint>& cs, const RigSpec& rig,
                                       const EstimatorConfig& base, int trials, uint64_t seed,
                                       int workers, const std::string& label) {
  std::vector<PoseEstimate> results(trials);
  parallel_for(trials, workers, [&](int k) {
    EstimatorConfig cfg = base;
    cfg.workers = 1;
    cfg.seed = derive_seed(seed, 0x7121, k);
    results[k] = estimate_pose(cs, rig, cfg);
  });
  std::vector<EulerPose> poses;
  int failures = 0;
  for (const auto& r : results)
    if (r.success)
      poses.push_back(r.theta);
    else
      ++failures;
  DispersionSummary s = dispersion_from_poses(poses, failures);
  s.label = label;
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frame preparation

/// Rendered frame reduced to what the studies need: the processed cloud's
/// constraint set (optionally pixel-strided) and the validity mask.
struct PreparedFrame {
  std::vector<Constraint> constraints;
  ValidityMask mask;
  PointCloud cloud;
};

inline PreparedFrame prepare_frame(const Scene& scene, const RigSpec& rig,
                                   const RigidTransform& pose, const NoiseSpec& render_noise,
                                   const MaskConfig& mask_cfg, int stride = 1, int workers = 1) {
  NoiseSpec rn = render_noise;
  rn.sigma_cloud = 0.0;  // measurement noise is injected downstream, per trial
  rn.sigma_px = 0.0;
  SimFrame frame = render_views(scene, rig, pose, rn, workers);
  ProcessedFrame pf = process_frame(frame, mask_cfg);
  PreparedFrame out;
  out.mask = std::move(pf.mask);
  out.cloud = std::move(pf.cloud);
  if (stride <= 1) {
    out.constraints = out.cloud.constraints();
  } else {
    for (size_t i = 0; i < out.cloud.size(); ++i) {
      if (!out.cloud.has_global[i]) continue;
      int x = int(out.cloud.camera_px[i].u), y = int(out.cloud.camera_px[i].v);
      if (x % stride == 0 && y % stride == 0)
        out.constraints.push_back(
            {out.cloud.points[i], out.cloud.global_px[i], out.cloud.camera_px[i]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Repeatability (fixed inputs, vary sampling only)

inline DispersionSummary run_repeatability(const ExperimentSpec& spec) {
  spec.validate();
  PreparedFrame pf = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise, spec.mask,
                                   spec.pixel_stride, spec.workers);
  std::vector<Constraint> cs =
      perturb_constraints(pf.constraints, spec.noise, derive_seed(spec.master_seed, 0xF17));
  return detail::repeat_trials(cs, spec.rig, spec.estimator, spec.trials, spec.master_seed,
                               spec.workers, "repeatability");
}

// ---------------------------------------------------------------------------
// Overlap restriction

/// Contiguous axis-aligned rectangle, centered on the valid region, holding
/// approximately fraction r of the valid constraints.
inline std::vector<Constraint> restrict_overlap(const std::vector<Constraint>& cs, double r) {
  if (r >= 1.0) return cs;
  double cu = 0.0, cv = 0.0;
  for (const auto& c : cs) {
    cu += c.camera_px.u;
    cv += c.camera_px.v;
  }
  cu /= double(cs.size());
  cv /= double(cs.size());
  double ulo = cs[0].camera_px.u, uhi = ulo, vlo = cs[0].camera_px.v, vhi = vlo;
  for (const auto& c : cs) {
    ulo = std::min(ulo, c.camera_px.u);
    uhi = std::max(uhi, c.camera_px.u);
    vlo = std::min(vlo, c.camera_px.v);
    vhi = std::max(vhi, c.camera_px.v);
  }
  double hw = 0.5 * (uhi - ulo), hh = 0.5 * (vhi - vlo);
  size_t target = size_t(std::max(1.0, r * double(cs.size())));
  auto count_in = [&](double scale) {
    size_t n = 0;
    for (const auto& c : cs)
      if (std::abs(c.camera_px.u - cu) <= scale * hw && std::abs(c.camera_px.v - cv) <= scale * hh)
        ++n;
    return n;
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 40; ++it) {
    double mid = 0.5 * (lo + hi);
    (count_in(mid) < target ? lo : hi) = mid;
  }
  std::vector<Constraint> out;
  for (const auto& c : cs)
    if (std::abs(c.camera_px.u - cu) <= hi * hw && std::abs(c.camera_px.v - cv) <= hi * hh)
      out.push_back(c);
  return out;
}

inline std::vector<DispersionSummary> run_overlap(const ExperimentSpec& spec) {
  spec.validate();
  PreparedFrame pf = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise, spec.mask,
                                   spec.pixel_stride, spec.workers);
  std::vector<Constraint> cs =
      perturb_constraints(pf.constraints, spec.noise, derive_seed(spec.master_seed, 0xF17));
  std::vector<DispersionSummary> out;
  for (double r : spec.overlap_ratios) {
    std::vector<Constraint> sub = restrict_overlap(cs, r);
    char label[64];
    std::snprintf(label, sizeof label, "overlap-r=%g", r);
    if (sub.size() < size_t(spec.estimator.batch_size)) {
      DispersionSummary s;
      s.label = label;
      s.infeasible = true;  // fewer valid pixels than one batch needs
      out.push_back(s);
      continue;
    }
    DispersionSummary s = detail::repeat_trials(sub, spec.rig, spec.estimator, spec.trials,
                                                derive_seed(spec.master_seed, 0x0F2, 0),
                                                spec.workers, label);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling-scheme comparison at matched counts

inline std::vector<DispersionSummary> run_sampling_comparison(const ExperimentSpec& spec) {
  spec.validate();
  PreparedFrame pf = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise, spec.mask,
                                   spec.pixel_stride, spec.workers);
  std::vector<Constraint> cs =
      perturb_constraints(pf.constraints, spec.noise, derive_seed(spec.master_seed, 0xF17));
  size_t target = std::min<size_t>(cs.size() / 2, 4000);
  target = std::max<size_t>(target, size_t(spec.estimator.batch_size));
  std::vector<DispersionSummary> out;
  for (SamplingScheme scheme : spec.schemes) {
    EstimatorConfig cfg = spec.estimator;
    cfg.scheme = scheme;
    cfg.pool_target = target;  // voxel size auto-tunes to match this count
    DispersionSummary s =
        detail::repeat_trials(cs, spec.rig, cfg, spec.trials,
                              derive_seed(spec.master_seed, 0x5CE, int(scheme)), spec.workers,
                              std::string("scheme-") + sampling_scheme_name(scheme));
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noise propagation

struct PropagationRow {
  double sigma_scale = 1.0;
  double sigma_cloud = 0.0;        // meters
  double sigma_px = 0.0;
  std::vector<double> dt_mm, dr_mrad;  // per trial, vs the unperturbed estimate
  double median_dt = 0, p95_dt = 0, median_dr = 0, p95_dr = 0;
  int failures = 0;
};

inline std::vector<PropagationRow> run_propagation(const ExperimentSpec& spec) {
  spec.validate();
  PreparedFrame pf = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise, spec.mask,
                                   spec.pixel_stride, spec.workers);
  EstimatorConfig cfg = spec.estimator;
  cfg.seed = derive_seed(spec.master_seed, 0xBA5E);
  PoseEstimate base = estimate_pose(pf.constraints, spec.rig, cfg);
  if (!base.success)
    throw std::runtime_error("propagation study: unperturbed estimate failed (" +
                             base.failure_reason + ")");
  Vec3 t0 = base.theta.translation();
  Mat3 r0 = euler_to_rotation(base.theta);

  std::vector<PropagationRow> rows;
  for (size_t lvl = 0; lvl < spec.sigma_scales.size(); ++lvl) {
    PropagationRow row;
    row.sigma_scale = spec.sigma_scales[lvl];
    // the noise level scales as a whole: depth noise and pixel noise together
    row.sigma_cloud = spec.noise.sigma_cloud * row.sigma_scale;
    row.sigma_px = spec.noise.sigma_px * row.sigma_scale;
    std::vector<PoseEstimate> results(spec.trials);
    parallel_for(spec.trials, spec.workers, [&](int k) {
      NoiseSpec n = spec.noise;
      n.sigma_cloud = row.sigma_cloud;
      n.sigma_px = row.sigma_px;
      std::vector<Constraint> cs = perturb_constraints(
          pf.constraints, n, derive_seed(spec.master_seed, 0xD00 + int(lvl), k));
      EstimatorConfig c = cfg;  // same estimator seed: only the data changes
      c.workers = 1;
      results[k] = estimate_pose(cs, spec.rig, c);
    });
    for (const auto& r : results) {
      if (!r.success) {
        ++row.failures;
        continue;
      }
      row.dt_mm.push_back((r.theta.translation() - t0).norm() * 1000.0);
      row.dr_mrad.push_back(rotation_geodesic_rad(euler_to_rotation(r.theta), r0) * 1000.0);
    }
    if (!row.dt_mm.empty()) {
      row.median_dt = median_of(row.dt_mm);
      row.p95_dt = percentile_of(row.dt_mm, 0.95);
      row.median_dr = median_of(row.dr_mrad);
      row.p95_dr = percentile_of(row.dr_mrad, 0.95);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Trajectory scoring

struct TrajectoryRecord {
  std::string method;
  double condition = 0.0;             // voxel size in mm, when applicable
  std::vector<EulerPose> poses;       // estimated camera->global, per placement
  std::vector<double> e_t_mm, e_r_mrad;
  std::vector<uint8_t> flagged;       // fell back / failed markers
  double score_t = 0.0, score_r = 0.0;  // RMS of per-pose errors
};

struct MismatchedIndices : std::invalid_argument {
  MismatchedIndices() : std::invalid_argument("trajectory records have mismatched pose counts") {}
};

/// RMS trajectory scores over the per-pose errors.
inline std::pair<double, double> trajectory_scores(const TrajectoryRecord& rec) {
  if (rec.e_t_mm.empty() || rec.e_t_mm.size() != rec.e_r_mrad.size()) throw MismatchedIndices();
  double st = 0.0, sr = 0.0;
  for (double e : rec.e_t_mm) st += e * e;
  for (double e : rec.e_r_mrad) sr += e * e;
  return {std::sqrt(st / double(rec.e_t_mm.size())), std::sqrt(sr / double(rec.e_r_mrad.size()))};
}

/// Per-pose spread across conditions: SD of deviations from the across-
/// condition mean pose (arithmetic translation mean; chordal rotation mean).
inline std::pair<std::vector<double>, std::vector<double>> pose_spreads(
    const std::vector<TrajectoryRecord>& records) {
  if (records.empty()) throw MismatchedIndices();
  size_t n_poses = records[0].poses.size();
  for (const auto& r : records)
    if (r.poses.size() != n_poses) throw MismatchedIndices();
  std::vector<double> sigma_t(n_poses), sigma_r(n_poses);
  for (size_t i = 0; i < n_poses; ++i) {
    Vec3 t_mean = Vec3::Zero();
    std::vector<Mat3> rots;
    for (const auto& r : records) {
      t_mean += r.poses[i].translation();
      rots.push_back(euler_to_rotation(r.poses[i]));
    }
    t_mean /= double(records.size());
    Mat3 r_mean = chordal_mean_rotation(rots);
    std::vector<double> dt, dr;
    for (const auto& r : records) {
      dt.push_back((r.poses[i].translation() - t_mean).norm() * 1000.0);
      dr.push_back(rotation_geodesic_rad(euler_to_rotation(r.poses[i]), r_mean) * 1000.0);
    }
    sigma_t[i] = stddev_of(dt);
    sigma_r[i] = stddev_of(dr);
  }
  return {sigma_t, sigma_r};
}

namespace detail {

inline void score_against_gt(TrajectoryRecord& rec, const std::vector<RigidTransform>& gt,
                             size_t first_scored = 0) {
  rec.e_t_mm.clear();
  rec.e_r_mrad.clear();
  for (size_t i = first_scored; i < rec.poses.size(); ++i) {
    RigidTransform est = pose_to_transform(rec.poses[i]);
    rec.e_t_mm.push_back((est.t - gt[i].t).norm() * 1000.0);
    rec.e_r_mrad.push_back(rotation_error_mrad(est.R, gt[i].R));
  }
  auto [st, sr] = trajectory_scores(rec);
  rec.score_t = st;
  rec.score_r = sr;
}

/// Unit vector tangent to the scene surface (camera frame of the pose).
inline Vec3 in_plane_direction(const Vec3& plane_normal_global, const RigidTransform& pose) {
  Vec3 n_cam = pose.R.transpose() * plane_normal_global;
  Vec3 seed = std::abs(n_cam.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  return n_cam.cross(seed).normalized();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Featureless-plane trajectory

struct PlaneTrajectoryResult {
  TrajectoryRecord model;   // direct per-placement estimates in the global frame
  TrajectoryRecord icp;     // chained point-to-plane ICP
  std::vector<double> icp_rmse;       // final point-to-plane RMSE per step, meters
  double cloud_mean_dist = 0.0;       // symmetric mean NN distance, merged vs GT merged
  double cloud_p95_dist = 0.0;        // trimmed Hausdorff (95th percentile)
  double merged_extent_err_frac = 0.0;
  double loop_gap_t_mm = 0.0, loop_gap_r_mrad = 0.0;
};

/// Symmetric bidirectional cloud distance and 95th-percentile trimmed
/// Hausdorff between two clouds.
inline std::pair<double, double> cloud_consistency(const std::vector<Vec3>& a,
                                                   const std::vector<Vec3>& b) {
  KdTree ta(a), tb(b);
  std::vector<double> dists;
  dists.reserve(a.size() + b.size());
  double sum = 0.0;
  for (const auto& p : a) {
    double d = (b[tb.nearest(p)] - p).norm();
    sum += d;
    dists.push_back(d);
  }
  for (const auto& p : b) {
    double d = (a[ta.nearest(p)] - p).norm();
    sum += d;
    dists.push_back(d);
  }
  return {sum / double(dists.size()), percentile_of(dists, 0.95)};
}

inline PlaneTrajectoryResult run_plane_trajectory(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<RigidTransform> gt = plane_trajectory(spec.plane_placements);
  const Vec3 plane_normal(0, 0, -1);

  std::vector<PreparedFrame> frames;
  for (int i = 0; i < spec.plane_placements; ++i)
    frames.push_back(prepare_frame(spec.scene, spec.rig, gt[size_t(i)], spec.noise, spec.mask,
                                   std::max(2, spec.pixel_stride), spec.workers));

  PlaneTrajectoryResult out;
  out.model.method = "model";
  out.icp.method = "icp";

  // direct global-frame estimates, no chaining
  for (int i = 0; i < spec.plane_placements; ++i) {
    std::vector<Constraint> cs = perturb_constraints(
        frames[size_t(i)].constraints, spec.noise, derive_seed(spec.master_seed, 0x9A0, i));
    EstimatorConfig cfg = spec.estimator;
    cfg.seed = derive_seed(spec.master_seed, 0x9A1, i);
    cfg.workers = spec.workers;
    PoseEstimate est = estimate_pose(cs, spec.rig, cfg);
    out.model.poses.push_back(est.success ? est.theta
                                          : transform_to_pose(gt[size_t(i)]));
    out.model.flagged.push_back(est.success ? 0 : 1);
  }
  detail::score_against_gt(out.model, gt);

  // ICP chain anchored at the GT initial pose; each step starts from the
  // true relative motion shifted a few mm in-plane, exposing the planar
  // null space the way an odometry-quality initialization would
  std::vector<RigidTransform> icp_abs{gt[0]};
  for (int i = 0; i + 1 < spec.plane_placements; ++i) {
    const auto& target = frames[size_t(i)].cloud.points;
    const auto& source = frames[size_t(i) + 1].cloud.points;
    RigidTransform t_true = gt[size_t(i)].inverse() * gt[size_t(i) + 1];
    Vec3 d = 0.004 * detail::in_plane_direction(plane_normal, gt[size_t(i) + 1]);
    RigidTransform init{t_true.R, t_true.t + t_true.R * d};
    IcpConfig icfg;
    icfg.workers = spec.workers;
    IcpResult res = icp_point_to_plane(source, target, icfg, init);
    out.icp_rmse.push_back(res.rmse);
    icp_abs.push_back(icp_abs.back() * res.transform);
  }
  for (const auto& t : icp_abs) out.icp.poses.push_back(transform_to_pose(t));
  out.icp.flagged.assign(icp_abs.size(), 0);
  detail::score_against_gt(out.icp, gt);

  // merged-cloud consistency in the global frame (model poses vs GT poses)
  std::vector<Vec3> merged_est, merged_gt;
  for (int i = 0; i < spec.plane_placements; ++i) {
    RigidTransform est = pose_to_transform(out.model.poses[size_t(i)]);
    for (const auto& p : frames[size_t(i)].constraints) {
      merged_est.push_back(est * p.point);
      merged_gt.push_back(gt[size_t(i)] * p.point);
    }
  }
  auto [mean_d, p95_d] = cloud_consistency(merged_est, merged_gt);
  out.cloud_mean_dist = mean_d;
  out.cloud_p95_dist = p95_d;

  auto extent = [](const std::vector<Vec3>& pts) {
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
  };
  out.merged_extent_err_frac =
      std::abs(extent(merged_est) - extent(merged_gt)) / extent(merged_gt);

  // loop closure: relative pose first->last, estimated vs GT
  RigidTransform rel_est = pose_to_transform(out.model.poses.front()).inverse() *
                           pose_to_transform(out.model.poses.back());
  RigidTransform rel_gt = gt.front().inverse() * gt.back();
  out.loop_gap_t_mm = (rel_est.t - rel_gt.t).norm() * 1000.0;
  out.loop_gap_r_mrad = rotation_error_mrad(rel_est.R, rel_gt.R);
  return out;
}

// ---------------------------------------------------------------------------
// Voxel-size sweep: ICP versus ICP + model-based correction

struct SweepPaired {
  std::vector<double> icp, corrected;  // per condition (or per pose for spreads)
  double median_delta = 0.0;           // median(icp - corrected)
  double ci_lo = 0.0, ci_hi = 0.0;
  double p_one_sided = 1.0;            // improvement > 0
  double p_two_sided = 1.0;

  void finalize(uint64_t seed) {
    std::vector<double> delta;
    for (size_t i = 0; i < icp.size(); ++i) delta.push_back(icp[i] - corrected[i]);
    median_delta = median_of(delta);
    auto ci = bootstrap_ci(delta, 0.95, 10000, seed);
    ci_lo = ci.first;
    ci_hi = ci.second;
    try {
      WilcoxonResult w = wilcoxon_signed_rank(delta);
      p_one_sided = w.p_greater;
      p_two_sided = w.p_two_sided;
    } catch (const std::exception&) {
      // too few non-zero differences; p-values stay at 1
    }
  }
};

struct VoxelSweepResult {
  std::vector<double> voxel_mm;
  std::vector<TrajectoryRecord> icp_records, corrected_records;  // per voxel size
  SweepPaired paired_et, paired_er;      // E_T, E_R across voxel sizes
  SweepPaired paired_sigma_t, paired_sigma_r;  // per-pose spreads (Eq.-16 style)
  int correction_fallbacks = 0;
};

inline VoxelSweepResult run_voxel_sweep(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<RigidTransform> gt = statue_trajectory(spec.sweep_placements);

  std::vector<PreparedFrame> frames;
  std::vector<std::vector<Constraint>> noisy_cs;
  for (int i = 0; i < spec.sweep_placements; ++i) {
    frames.push_back(prepare_frame(spec.scene, spec.rig, gt[size_t(i)], spec.noise, spec.mask,
                                   std::max(2, spec.pixel_stride), spec.workers));
    noisy_cs.push_back(perturb_constraints(frames.back().constraints, spec.noise,
                                           derive_seed(spec.master_seed, 0x5EE, i)));
  }
  // the clouds ICP sees carry the same measurement noise as the constraints
  std::vector<std::vector<Vec3>> clouds;
  for (const auto& cs : noisy_cs) {
    std::vector<Vec3> pts;
    pts.reserve(cs.size());
    for (const auto& c : cs) pts.push_back(c.point);
    clouds.push_back(std::move(pts));
  }

  VoxelSweepResult out;
  for (int v = 0; v < spec.sweep_sizes; ++v) {
    double frac = spec.sweep_sizes == 1 ? 0.0 : double(v) / double(spec.sweep_sizes - 1);
    double s_mm = spec.sweep_min_mm + frac * (spec.sweep_max_mm - spec.sweep_min_mm);
    double s = s_mm * 1e-3;
    out.voxel_mm.push_back(s_mm);

    std::vector<std::vector<Vec3>> down;
    for (const auto& c : clouds) down.push_back(voxel_nearest_downsample(c, s));

    TrajectoryRecord icp_rec, cor_rec;
    icp_rec.method = "icp";
    cor_rec.method = "icp+model";
    icp_rec.condition = cor_rec.condition = s_mm;
    icp_rec.poses.push_back(transform_to_pose(gt[0]));
    cor_rec.poses.push_back(transform_to_pose(gt[0]));
    icp_rec.flagged.push_back(0);
    cor_rec.flagged.push_back(0);

    RigidTransform icp_abs = gt[0];
    for (int i = 0; i + 1 < spec.sweep_placements; ++i) {
      RigidTransform t_true = gt[size_t(i)].inverse() * gt[size_t(i) + 1];
      // odometry-quality initialization: true relative motion, slightly off
      Rng prng(derive_seed(spec.master_seed, 0x1C0 + v, i));
      Vec3 dt(prng.gaussian(), prng.gaussian(), prng.gaussian());
      RigidTransform init{t_true.R * rot_z(1e-3 * prng.gaussian()),
                          t_true.t + 5e-4 * dt.normalized()};
      IcpConfig icfg;
      icfg.max_corr_dist = std::max(10.0 * s, 5e-3);
      icfg.workers = spec.workers;
      RigidTransform rel;
      bool icp_ok = true;
      try {
        IcpResult res = icp_point_to_plane(down[size_t(i) + 1], down[size_t(i)], icfg, init);
        rel = res.transform;
      } catch (const std::exception&) {
        rel = init;
        icp_ok = false;
      }
      icp_abs = icp_abs * rel;
      icp_rec.poses.push_back(transform_to_pose(icp_abs));
      icp_rec.flagged.push_back(icp_ok ? 0 : 1);

      // the ICP chain pose initializes the model-based estimator
      EstimatorConfig cfg = spec.estimator;
      cfg.seed = derive_seed(spec.master_seed, 0xC02 + v, i);
      cfg.workers = spec.workers;
      PoseEstimate est =
          estimate_pose(noisy_cs[size_t(i) + 1], spec.rig, cfg, transform_to_pose(icp_abs));
      if (est.success) {
        cor_rec.poses.push_back(est.theta);
        cor_rec.flagged.push_back(0);
      } else {
        cor_rec.poses.push_back(transform_to_pose(icp_abs));  // fall back, flagged
        cor_rec.flagged.push_back(1);
        ++out.correction_fallbacks;
      }
    }
    detail::score_against_gt(icp_rec, gt, 1);  // initial pose excluded from scoring
    detail::score_against_gt(cor_rec, gt, 1);
    out.icp_records.push_back(std::move(icp_rec));
    out.corrected_records.push_back(std::move(cor_rec));
  }

  for (size_t v = 0; v < out.icp_records.size(); ++v) {
    out.paired_et.icp.push_back(out.icp_records[v].score_t);
    out.paired_et.corrected.push_back(out.corrected_records[v].score_t);
    out.paired_er.icp.push_back(out.icp_records[v].score_r);
    out.paired_er.corrected.push_back(out.corrected_records[v].score_r);
  }
  out.paired_et.finalize(derive_seed(spec.master_seed, 0xC1A));
  out.paired_er.finalize(derive_seed(spec.master_seed, 0xC1B));

  auto [icp_st, icp_sr] = pose_spreads(out.icp_records);
  auto [cor_st, cor_sr] = pose_spreads(out.corrected_records);
  // drop the fixed initial pose (zero spread by construction)
  out.paired_sigma_t.icp.assign(icp_st.begin() + 1, icp_st.end());
  out.paired_sigma_t.corrected.assign(cor_st.begin() + 1, cor_st.end());
  out.paired_sigma_r.icp.assign(icp_sr.begin() + 1, icp_sr.end());
  out.paired_sigma_r.corrected.assign(cor_sr.begin() + 1, cor_sr.end());
  out.paired_sigma_t.finalize(derive_seed(spec.master_seed, 0xC1C));
  out.paired_sigma_r.finalize(derive_seed(spec.master_seed, 0xC1D));
  return out;
}

}  // namespace projref
