// Projector-referenced pose estimator: validity-aware batch sampling,
// per-batch first-order optimization of the global reprojection objective,
// cross-batch consensus filtering, and geometry-consistency refinement.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "projref/geometry.hpp"
#include "projref/parallel.hpp"
#include "projref/pointcloud.hpp"
#include "projref/reconstruction.hpp"
#include "projref/registration.hpp"
#include "projref/rng.hpp"

namespace projref {

enum class SamplingScheme { Grid, Random, Uniform, VoxelNearest };

inline const char* sampling_scheme_name(SamplingScheme s) {
  switch (s) {
    case SamplingScheme::Grid: return "grid";
    case SamplingScheme::Random: return "random";
    case SamplingScheme::Uniform: return "uniform";
    case SamplingScheme::VoxelNearest: return "voxel-nearest";
  }
  return "?";
}

struct EstimatorConfig {
  int batches = 12;                  // B
  int batch_size = 120;              // n
  int max_iters = 2000;              // T_max
  double alpha0 = 1e-2;              // initial Adam step
  int warmup_iters = 50;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double lambda_stage2 = 1e-2;       // unit-balancing weight on f_X
  double early_stop_threshold = 1e-7;
  int patience = 10;                 // T_patience
  double convergence_rms_px = 1.0;   // "converged" RMS cutoff for non-early-stopped runs
  SamplingScheme scheme = SamplingScheme::Grid;
  bool use_bounded_translation = true;  // stage 1 only; released for stage 2
  bool median_aggregation = false;
  bool run_stage2 = true;
  double stage2_trust_dt = 2e-3;     // meters
  double stage2_trust_dr = 2e-3;     // radians
  FringeAxis stage2_axis = FringeAxis::Horizontal;
  size_t pool_target = 0;            // matched-count pool for random/uniform/voxel (0 = all)
  double voxel_size = 0.0;           // meters; 0 = auto-tune to pool_target
  uint64_t seed = 0;
  int workers = 1;
  bool record_trace = false;
};

struct Hypothesis {
  EulerPose theta;
  double loss = std::numeric_limits<double>::infinity();  // final stage-1 f1, px^2
  double rms_px = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  int batch_id = -1;
  std::vector<double> trace;  // per-iteration f1 when requested
};

struct PoseEstimate {
  RigidTransform pose;
  EulerPose theta;
  int inlier_count = 0;
  int rejected_count = 0;
  int failed_batches = 0;
  bool stage2_applied = false;
  bool success = false;
  std::string failure_reason;  // "insufficient-valid-points" | "no-consensus" | ""
  double stage1_loss = 0.0;    // f1 of the aggregated pose on pooled inlier constraints
  double rms_px = 0.0;
  double elapsed_seconds = 0.0;
  std::vector<Hypothesis> hypotheses;
};

struct InsufficientValidPoints : std::runtime_error {
  InsufficientValidPoints(size_t have, size_t need)
      : std::runtime_error("insufficient valid constraints: have " + std::to_string(have) +
                           ", need " + std::to_string(need)) {}
};

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

/// Candidate pool for the coordinate-preserving schemes. Grid builds no
/// pool (it stratifies directly over the image frame).
inline std::vector<size_t> build_pool(const std::vector<Constraint>& cs,
                                      const EstimatorConfig& cfg) {
  size_t count = cs.size();
  size_t target = cfg.pool_target == 0 ? count : std::min(cfg.pool_target, count);
  std::vector<size_t> pool;
  switch (cfg.scheme) {
    case SamplingScheme::Grid:
      break;
    case SamplingScheme::Random: {
      std::vector<size_t> idx(count);
      for (size_t i = 0; i < count; ++i) idx[i] = i;
      Rng rng(derive_seed(cfg.seed, 0x900C));
      rng.shuffle(idx);
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
      pool = std::move(idx);
      break;
    }
    case SamplingScheme::Uniform: {
      double stride = double(count) / double(target);
      for (size_t i = 0; i < target; ++i) pool.push_back(size_t(i * stride));
      break;
    }
    case SamplingScheme::VoxelNearest: {
      std::vector<Vec3> pts(count);
      for (size_t i = 0; i < count; ++i) pts[i] = cs[i].point;
      double s = cfg.voxel_size;
      if (s <= 0.0) {
        // bisect voxel size until the surviving count is near target
        double lo = 1e-5, hi = 0.1;
        for (int it = 0; it < 40; ++it) {
          double mid = std::sqrt(lo * hi);
          size_t kept = voxel_nearest_indices(pts, mid).size();
          if (kept > target) lo = mid; else hi = mid;
        }
        s = std::sqrt(lo * hi);
      }
      pool = voxel_nearest_indices(pts, s);
      break;
    }
  }
  return pool;
}

inline std::vector<Constraint> draw_random(const std::vector<Constraint>& cs,
                                           const std::vector<size_t>& pool, int n, Rng& rng) {
  std::vector<size_t> idx = pool;
  if (idx.empty()) {
    idx.resize(cs.size());
    for (size_t i = 0; i < cs.size(); ++i) idx[i] = i;
  }
  // partial Fisher-Yates
  std::vector<Constraint> out;
  out.reserve(n);
  for (int i = 0; i < n && size_t(i) < idx.size(); ++i) {
    size_t j = i + rng.index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(cs[idx[i]]);
  }
  return out;
}

}  // namespace detail

/// Draws B batches of n constraints. The grid scheme stratifies the valid
/// region into roughly n cells and takes one constraint per occupied cell,
/// topping up randomly; the other schemes draw from a coordinate-preserving
/// candidate pool. Throws InsufficientValidPoints when fewer than n
/// constraints exist.
inline std::vector<std::vector<Constraint>> sample_batches(const std::vector<Constraint>& cs,
                                                           const EstimatorConfig& cfg) {
  if (cs.size() < size_t(cfg.batch_size))
    throw InsufficientValidPoints(cs.size(), cfg.batch_size);

  std::vector<std::vector<Constraint>> batches(cfg.batches);

  if (cfg.scheme != SamplingScheme::Grid) {
    std::vector<size_t> pool = detail::build_pool(cs, cfg);
    if (!pool.empty() && pool.size() < size_t(cfg.batch_size))
      throw InsufficientValidPoints(pool.size(), cfg.batch_size);
    for (int b = 0; b < cfg.batches; ++b) {
      Rng rng(derive_seed(cfg.seed, 0xBA7C, b));
      if (cfg.scheme == SamplingScheme::Uniform && cfg.pool_target == 0) {
        // evenly spaced with a per-batch random phase
        double stride = double(cs.size()) / double(cfg.batch_size);
        double phase = rng.uniform() * stride;
        for (int i = 0; i < cfg.batch_size; ++i)
          batches[b].push_back(cs[size_t(phase + i * stride) % cs.size()]);
      } else {
        batches[b] = detail::draw_random(cs, pool, cfg.batch_size, rng);
      }
    }
    return batches;
  }

  // grid scheme: bucket constraints by image cell once, then sample
  double ulo = cs[0].camera_px.u, uhi = ulo, vlo = cs[0].camera_px.v, vhi = vlo;
  for (const auto& c : cs) {
    ulo = std::min(ulo, c.camera_px.u);
    uhi = std::max(uhi, c.camera_px.u);
    vlo = std::min(vlo, c.camera_px.v);
    vhi = std::max(vhi, c.camera_px.v);
  }
  double bw = std::max(uhi - ulo, 1e-9), bh = std::max(vhi - vlo, 1e-9);
  int rows = std::max(1, int(std::round(std::sqrt(double(cfg.batch_size) * bh / bw))));
  int cols = std::max(1, (cfg.batch_size + rows - 1) / rows);
  std::vector<std::vector<size_t>> cells(size_t(rows) * cols);
  for (size_t i = 0; i < cs.size(); ++i) {
    int cx = std::min(cols - 1, int((cs[i].camera_px.u - ulo) / bw * cols));
    int cy = std::min(rows - 1, int((cs[i].camera_px.v - vlo) / bh * rows));
    cells[size_t(cy) * cols + cx].push_back(i);
  }
  for (int b = 0; b < cfg.batches; ++b) {
    Rng rng(derive_seed(cfg.seed, 0xBA7C, b));
    std::vector<size_t> picked;
    picked.reserve(cfg.batch_size);
    for (const auto& cell : cells)
      if (!cell.empty()) picked.push_back(cell[rng.index(cell.size())]);
    rng.shuffle(picked);
    if (picked.size() > size_t(cfg.batch_size)) picked.resize(cfg.batch_size);
    std::unordered_set<size_t> used(picked.begin(), picked.end());
    while (picked.size() < size_t(cfg.batch_size)) {  // top-up from empty cells
      size_t i = rng.index(cs.size());
      if (used.insert(i).second) picked.push_back(i);
    }
    for (size_t i : picked) batches[b].push_back(cs[i]);
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Stage-1 objective

namespace detail {

struct ThetaParams {
  Vec6 p;            // [roll, pitch, yaw, t-or-t~]
  bool bounded;      // translation realized as t_max * tanh

  EulerPose pose() const {
    EulerPose e{p[0], p[1], p[2], p[3], p[4], p[5]};
    if (bounded) {
      Vec3 t = bounded_translation(Vec3(p[3], p[4], p[5]));
      e.tx = t.x();
      e.ty = t.y();
      e.tz = t.z();
    }
    return e;
  }

  static ThetaParams from_pose(const EulerPose& e, bool bounded) {
    ThetaParams tp{e.vec(), bounded};
    if (bounded) {
      Vec3 t = e.translation().cwiseMax(-kTranslationBound + 1e-9)
                   .cwiseMin(kTranslationBound - 1e-9);
      tp.p.tail<3>() = unbound_translation(t);
    }
    return tp;
  }
};

struct LossGrad {
  double f = 0.0;
  Vec6 g = Vec6::Zero();
};

/// Mean-squared reprojection error and its gradient in parameter space.
/// Points behind the projector contribute a fixed penalty equal to the
/// squared image diagonal; their gradient is zero.
inline LossGrad stage1_loss_grad(const ThetaParams& tp, const std::vector<Constraint>& batch,
                                 const Intrinsics& kg, bool want_grad = true) {
  EulerPose pose = tp.pose();
  Mat3 r = euler_to_rotation(pose);
  Vec3 t = pose.translation();
  auto dr = euler_rotation_derivatives(pose);
  Vec3 dt_dp = tp.bounded ? bounded_translation_derivative(tp.p.tail<3>()) : Vec3::Ones();
  double diag = std::hypot(double(kg.width), double(kg.height));

  LossGrad out;
  for (const auto& c : batch) {
    Vec3 xp = r * c.point + t;
    if (xp.z() <= 1e-12) {
      out.f += diag * diag;
      continue;
    }
    double xn = xp.x() / xp.z(), yn = xp.y() / xp.z();
    double r2 = xn * xn + yn * yn;
    double d = 1.0 + kg.k1 * r2 + kg.k2 * r2 * r2;
    Eigen::Vector2d pred(kg.fx * xn * d + kg.skew * yn * d + kg.cx, kg.fy * yn * d + kg.cy);
    Eigen::Vector2d e(c.global_px.u - pred.x(), c.global_px.v - pred.y());
    out.f += e.squaredNorm();
    if (!want_grad) continue;
    Eigen::Matrix<double, 2, 3> jp = projection_point_jacobian(kg, xp);
    Eigen::Matrix<double, 2, 6> j;
    for (int a = 0; a < 3; ++a) j.col(a) = jp * (dr[a] * c.point);
    for (int a = 0; a < 3; ++a) j.col(3 + a) = jp.col(a) * dt_dp[a];
    out.g -= 2.0 * (j.transpose() * e);
  }
  double inv_n = 1.0 / double(batch.size());
  out.f *= inv_n;
  out.g *= inv_n;
  return out;
}

inline bool batch_degenerate(const std::vector<Constraint>& batch) {
  if (batch.size() < 6) return true;
  Vec3 mean = Vec3::Zero();
  for (const auto& c : batch) mean += c.point;
  mean /= double(batch.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& c : batch) {
    Vec3 d = c.point - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // collinear (or coincident) when the second-largest spread vanishes
  return es.eigenvalues()[1] <= 1e-16 * std::max(es.eigenvalues()[2], 1e-300);
}

inline double schedule_lr(const EstimatorConfig& cfg, int iter, int max_iters) {
  if (iter < cfg.warmup_iters) return cfg.alpha0 * double(iter + 1) / double(cfg.warmup_iters);
  double span = std::max(1, max_iters - cfg.warmup_iters);
  double x = double(iter - cfg.warmup_iters) / span;
  return cfg.alpha0 * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

}  // namespace detail

/// Eq.-7 stage-1 loss at a pose (mean px^2 over the batch).
inline double stage1_loss(const EulerPose& theta, const std::vector<Constraint>& batch,
                          const Intrinsics& kg) {
  auto tp = detail::ThetaParams{theta.vec(), false};
  return detail::stage1_loss_grad(tp, batch, kg, false).f;
}

/// Analytic gradient of stage1_loss in the plain (unbounded) parameters.
inline Vec6 stage1_gradient(const EulerPose& theta, const std::vector<Constraint>& batch,
                            const Intrinsics& kg) {
  auto tp = detail::ThetaParams{theta.vec(), false};
  return detail::stage1_loss_grad(tp, batch, kg, true).g;
}

inline Hypothesis lm_optimize_batch(const std::vector<Constraint>& batch,
                                    const EstimatorConfig& cfg, const Intrinsics& kg,
                                    const EulerPose& init = {}, int batch_id = -1);

/// Adam with linear warmup and cosine decay on the batch objective, finished
/// by a damped Gauss-Newton polish that is kept only when it lowers the loss.
inline Hypothesis optimize_batch(const std::vector<Constraint>& batch,
                                 const EstimatorConfig& cfg, const Intrinsics& kg,
                                 const EulerPose& init = {}, int batch_id = -1) {
  Hypothesis hyp;
  hyp.batch_id = batch_id;
  if (detail::batch_degenerate(batch)) {
    hyp.failed = true;
    return hyp;
  }

  auto tp = detail::ThetaParams::from_pose(init, cfg.use_bounded_translation);
  Vec6 m = Vec6::Zero(), v = Vec6::Zero();
  double f_prev = std::numeric_limits<double>::infinity();
  int streak = 0;
  bool early = false;

  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    auto lg = detail::stage1_loss_grad(tp, batch, kg);
    if (!std::isfinite(lg.f)) {
      hyp.failed = true;
      return hyp;
    }
    if (cfg.record_trace) hyp.trace.push_back(lg.f);
    double rel = (f_prev - lg.f) / std::max(f_prev, 1e-30);
    if (rel < cfg.early_stop_threshold) {
      if (++streak >= cfg.patience) {
        early = true;
        hyp.loss = lg.f;
        break;
      }
    } else {
      streak = 0;
    }
    f_prev = lg.f;
    hyp.loss = lg.f;

    double lr = detail::schedule_lr(cfg, iter, cfg.max_iters);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * lg.g;
    v = cfg.beta2 * v.array().matrix() +
        (1.0 - cfg.beta2) * lg.g.cwiseProduct(lg.g);
    double bc1 = 1.0 - std::pow(cfg.beta1, iter + 1);
    double bc2 = 1.0 - std::pow(cfg.beta2, iter + 1);
    Vec6 mh = m / bc1;
    Vec6 vh = v / bc2;
    tp.p -= lr * (mh.array() / (vh.array().sqrt() + cfg.eps)).matrix();
  }

  hyp.iterations = iter;
  hyp.theta = tp.pose();
  hyp.loss = stage1_loss(hyp.theta, batch, kg);

  // the first-order schedule can stall in a narrow curved valley close to
  // the optimum; a curvature-aware finish from its endpoint is accepted
  // only when it lowers the loss
  Hypothesis polish = lm_optimize_batch(batch, cfg, kg, hyp.theta, batch_id);
  if (!polish.failed && std::isfinite(polish.loss) && polish.loss < hyp.loss) {
    hyp.theta = polish.theta;
    hyp.loss = polish.loss;
  }

  hyp.rms_px = std::sqrt(hyp.loss);
  hyp.converged = early || hyp.rms_px < cfg.convergence_rms_px;
  return hyp;
}

// ---------------------------------------------------------------------------
// Consensus

struct ConsensusResult {
  bool ok = false;
  std::vector<int> inlier_ids;    // batch ids kept
  std::vector<int> rejected_ids;
  EulerPose aggregated;
};

/// Batch-median consensus: deviations are measured against the
/// component-wise-median pose; a hypothesis is rejected when its translation
/// or rotation deviation lies more than one standard deviation beyond the
/// mean deviation. Inliers are aggregated by component mean (median behind
/// the flag). Identical hypotheses all pass (zero spread keeps everything).
inline ConsensusResult consensus_filter(const std::vector<Hypothesis>& hypotheses,
                                        bool median_aggregation = false) {
  ConsensusResult out;
  std::vector<const Hypothesis*> ok;
  for (const auto& h : hypotheses)
    if (h.converged && !h.failed) ok.push_back(&h);
  if (ok.size() < 2) return out;

  auto component_median = [&](auto&& get) {
    std::vector<double> vals;
    for (auto* h : ok) vals.push_back(get(*h));
    std::sort(vals.begin(), vals.end());
    size_t n = vals.size();
    return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
  };
  Vec6 med;
  for (int i = 0; i < 6; ++i)
    med[i] = component_median([i](const Hypothesis& h) { return h.theta.vec()[i]; });
  EulerPose med_pose = EulerPose::from_vec(med);
  Mat3 r_med = euler_to_rotation(med_pose);
  Vec3 t_med = med_pose.translation();

  std::vector<double> dt(ok.size()), dr(ok.size());
  for (size_t i = 0; i < ok.size(); ++i) {
    dt[i] = (ok[i]->theta.translation() - t_med).norm();
    dr[i] = rotation_geodesic_rad(euler_to_rotation(ok[i]->theta), r_med);
  }
  auto cut = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return mean + std::sqrt(acc / double(v.size()));
  };
  double cut_t = cut(dt), cut_r = cut(dr);

  std::vector<const Hypothesis*> inliers;
  for (size_t i = 0; i < ok.size(); ++i) {
    if (dt[i] > cut_t || dr[i] > cut_r)
      out.rejected_ids.push_back(ok[i]->batch_id);
    else {
      inliers.push_back(ok[i]);
      out.inlier_ids.push_back(ok[i]->batch_id);
    }
  }
  if (inliers.size() < 2) {
    out.ok = false;
    out.inlier_ids.clear();
    return out;
  }

  Vec6 agg = Vec6::Zero();
  if (median_aggregation) {
    for (int i = 0; i < 6; ++i) {
      std::vector<double> vals;
      for (auto* h : inliers) vals.push_back(h->theta.vec()[i]);
      std::sort(vals.begin(), vals.end());
      size_t n = vals.size();
      agg[i] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
  } else {
    for (auto* h : inliers) agg += h->theta.vec();
    agg /= double(inliers.size());
  }
  out.aggregated = EulerPose::from_vec(agg);
  out.ok = true;
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2

/// Stage-2 objective: f1 plus the lambda-weighted Frobenius discrepancy
/// between the sampled local points and the triangulation implied by the
/// global projector under theta.
inline double stage2_loss(const EulerPose& theta, const std::vector<Constraint>& constraints,
                          const Intrinsics& cam, const Intrinsics& kg, FringeAxis axis,
                          double lambda) {
  double f1 = stage1_loss(theta, constraints, kg);
  auto sec = secondary_cloud(theta, constraints, axis, cam, kg);
  double fx = 0.0;
  for (size_t j = 0; j < sec.kept.size(); ++j)
    fx += (constraints[sec.kept[j]].point - sec.points[j]).squaredNorm();
  fx /= double(std::max<size_t>(1, constraints.size()));
  return f1 + lambda * fx;
}

/// Refines the consensus pose against f2 with a quarter iteration budget.
/// The refinement is discarded when it degrades f1 by more than 1.5x or
/// moves the pose outside the trust bound (the term is a stabilizer, not a
/// second estimator).
inline EulerPose stage2_refine(const EulerPose& theta_init,
                               const std::vector<Constraint>& constraints, const Intrinsics& cam,
                               const Intrinsics& kg, const EstimatorConfig& cfg) {
  EstimatorConfig c2 = cfg;
  c2.max_iters = std::max(1, cfg.max_iters / 4);

  auto tp = detail::ThetaParams::from_pose(theta_init, false);  // bound released
  Vec6 m = Vec6::Zero(), v = Vec6::Zero();
  double f_prev = std::numeric_limits<double>::infinity();
  int streak = 0;

  auto loss_at = [&](const detail::ThetaParams& t) {
    return stage2_loss(t.pose(), constraints, cam, kg, cfg.stage2_axis, cfg.lambda_stage2);
  };
  // analytic f1 gradient plus central differences on the f_X term
  auto grad_at = [&](const detail::ThetaParams& t) {
    Vec6 g = detail::stage1_loss_grad(t, constraints, kg).g;
    for (int a = 0; a < 6; ++a) {
      double h = 1e-7;
      detail::ThetaParams tplus = t, tminus = t;
      tplus.p[a] += h;
      tminus.p[a] -= h;
      auto fx_only = [&](const detail::ThetaParams& q) {
        auto sec = secondary_cloud(q.pose(), constraints, cfg.stage2_axis, cam, kg);
        double fx = 0.0;
        for (size_t j = 0; j < sec.kept.size(); ++j)
          fx += (constraints[sec.kept[j]].point - sec.points[j]).squaredNorm();
        return fx / double(std::max<size_t>(1, constraints.size()));
      };
      g[a] += cfg.lambda_stage2 * (fx_only(tplus) - fx_only(tminus)) / (2.0 * h);
    }
    return g;
  };

  for (int iter = 0; iter < c2.max_iters; ++iter) {
    double f = loss_at(tp);
    if (!std::isfinite(f)) break;
    double rel = (f_prev - f) / std::max(f_prev, 1e-30);
    if (rel < cfg.early_stop_threshold) {
      if (++streak >= cfg.patience) break;
    } else {
      streak = 0;
    }
    f_prev = f;
    Vec6 g = grad_at(tp);
    double lr = detail::schedule_lr(c2, iter, c2.max_iters);
    m = c2.beta1 * m + (1.0 - c2.beta1) * g;
    v = c2.beta2 * v + (1.0 - c2.beta2) * g.cwiseProduct(g).eval();
    double bc1 = 1.0 - std::pow(c2.beta1, iter + 1);
    double bc2 = 1.0 - std::pow(c2.beta2, iter + 1);
    tp.p -= lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + c2.eps)).matrix();
  }

  EulerPose refined = tp.pose();
  double f1_before = stage1_loss(theta_init, constraints, kg);
  double f1_after = stage1_loss(refined, constraints, kg);
  if (f1_after > 1.5 * f1_before + 1e-30) return theta_init;
  if ((refined.translation() - theta_init.translation()).norm() > cfg.stage2_trust_dt)
    return theta_init;
  if (rotation_geodesic_rad(euler_to_rotation(refined), euler_to_rotation(theta_init)) >
      cfg.stage2_trust_dr)
    return theta_init;
  return refined;
}

// ---------------------------------------------------------------------------
// Full estimator

/// Sample -> B parallel batch optimizations -> consensus -> stage-2 refine.
/// Deterministic for a fixed seed and any worker count.
inline PoseEstimate estimate_pose(const std::vector<Constraint>& constraints, const RigSpec& rig,
                                  const EstimatorConfig& cfg, const EulerPose& init = {}) {
  PoseEstimate out;
  auto t0 = std::chrono::steady_clock::now();
  auto finish = [&]() {
    out.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  };

  std::vector<std::vector<Constraint>> batches;
  try {
    batches = sample_batches(constraints, cfg);
  } catch (const InsufficientValidPoints&) {
    out.failure_reason = "insufficient-valid-points";
    return finish();
  }

  out.hypotheses.resize(batches.size());
  parallel_for(int(batches.size()), cfg.workers, [&](int b) {
    out.hypotheses[b] = optimize_batch(batches[b], cfg, rig.global_projector, init, b);
  });
  for (const auto& h : out.hypotheses) out.failed_batches += h.failed ? 1 : 0;

  ConsensusResult cons = consensus_filter(out.hypotheses, cfg.median_aggregation);
  if (!cons.ok) {
    out.failure_reason = "no-consensus";
    return finish();
  }
  out.inlier_count = int(cons.inlier_ids.size());
  out.rejected_count = int(cons.rejected_ids.size());

  EulerPose theta = cons.aggregated;

  // pooled inlier constraints, ordered by batch id for worker independence
  std::vector<Constraint> pooled;
  std::vector<int> ids = cons.inlier_ids;
  std::sort(ids.begin(), ids.end());
  for (int id : ids) pooled.insert(pooled.end(), batches[id].begin(), batches[id].end());

  if (cfg.run_stage2) {
    theta = stage2_refine(theta, pooled, rig.camera, rig.global_projector, cfg);
    out.stage2_applied = true;
  }

  out.theta = theta;
  out.pose = pose_to_transform(theta);
  out.stage1_loss = stage1_loss(theta, pooled, rig.global_projector);
  out.rms_px = std::sqrt(out.stage1_loss);
  out.success = true;
  return finish();
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt backend

/// Damped Gauss-Newton on the stacked pixel residuals; plain translation
/// parameters. Serves both as the curvature-aware finishing step of the
/// first-order solver and as a standalone backend for the
/// initialization-sensitivity comparison.
inline Hypothesis lm_optimize_batch(const std::vector<Constraint>& batch,
                                    const EstimatorConfig& cfg, const Intrinsics& kg,
                                    const EulerPose& init, int batch_id) {
  Hypothesis hyp;
  hyp.batch_id = batch_id;
  if (detail::batch_degenerate(batch)) {
    hyp.failed = true;
    return hyp;
  }

  auto residuals = [&](const EulerPose& pose, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
    Mat3 rot = euler_to_rotation(pose);
    Vec3 t = pose.translation();
    auto dr = euler_rotation_derivatives(pose);
    r.resize(2 * batch.size());
    if (j) j->resize(2 * batch.size(), 6);
    double diag = std::hypot(double(kg.width), double(kg.height));
    for (size_t i = 0; i < batch.size(); ++i) {
      Vec3 xp = rot * batch[i].point + t;
      if (xp.z() <= 1e-12) {
        r[2 * i] = diag;
        r[2 * i + 1] = 0.0;
        if (j) j->block<2, 6>(2 * i, 0).setZero();
        continue;
      }
      auto px = project(kg, {rot, t}, batch[i].point);
      r[2 * i] = batch[i].global_px.u - px->u;
      r[2 * i + 1] = batch[i].global_px.v - px->v;
      if (j) {
        Eigen::Matrix<double, 2, 3> jp = projection_point_jacobian(kg, xp);
        for (int a = 0; a < 3; ++a) j->block<2, 1>(2 * i, a) = -jp * (dr[a] * batch[i].point);
        j->block<2, 3>(2 * i, 3) = -jp;
      }
    }
  };

  EulerPose pose = init;
  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  residuals(pose, r, &j);
  double cost = r.squaredNorm();
  double mu = 1e-3 * (j.transpose() * j).diagonal().maxCoeff();
  if (!(mu > 0.0) || !std::isfinite(mu)) mu = 1e-3;

  int iter = 0;
  int max_iters = std::min(cfg.max_iters, 200);
  if (cost < 1e-24) max_iters = 0;  // already at a numerically zero residual
  for (; iter < max_iters; ++iter) {
    Eigen::Matrix<double, 6, 6> h = j.transpose() * j;
    Vec6 g = j.transpose() * r;
    Eigen::Matrix<double, 6, 6> a = h + mu * Eigen::Matrix<double, 6, 6>::Identity();
    Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(a);
    if (ldlt.info() != Eigen::Success) {
      hyp.failed = true;
      return hyp;
    }
    Vec6 delta = ldlt.solve(-g);
    if (!delta.allFinite()) {
      hyp.failed = true;
      return hyp;
    }
    EulerPose trial = EulerPose::from_vec(pose.vec() + delta);
    Eigen::VectorXd rt;
    residuals(trial, rt, nullptr);
    double trial_cost = rt.squaredNorm();
    if (trial_cost < cost) {
      pose = trial;
      residuals(pose, r, &j);
      double gain = (cost - trial_cost) / std::max(cost, 1e-300);
      cost = trial_cost;
      mu = std::max(mu / 3.0, 1e-15);
      if (delta.norm() < 1e-12 || gain < 1e-12) {
        ++iter;
        break;
      }
    } else {
      mu *= 2.0;
      if (mu > 1e12) break;
    }
  }

  hyp.iterations = iter;
  hyp.theta = pose;
  hyp.loss = cost / double(batch.size());
  hyp.rms_px = std::sqrt(hyp.loss);
  hyp.converged = hyp.rms_px < cfg.convergence_rms_px;
  return hyp;
}

}  // namespace projref
