// Synthetic two-projector/one-camera rig: analytic surfaces, per-pixel
// ray-cast rendering of fringe and Gray-code stacks, ground-truth maps,
// and the noise models used by the sensitivity studies.
#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "projref/fringe.hpp"
#include "projref/geometry.hpp"
#include "projref/image.hpp"
#include "projref/parallel.hpp"
#include "projref/pointcloud.hpp"
#include "projref/rng.hpp"

namespace projref {

// Surfaces live in the global projector frame {P_g}.

struct PlaneSurface {
  Vec3 point = Vec3(0, 0, 0.35);
  Vec3 normal = Vec3(0, 0, -1);     // toward the projector
  double ripple_amp = 0.0;          // meters (flatness deviation along normal)
  double ripple_period = 0.01;      // meters
};

/// Height offsets toward the camera over the base plane z = base_z,
/// bilinearly interpolated; zero outside the grid footprint.
struct HeightFieldSurface {
  double base_z = 0.35;
  double x0 = -0.05, y0 = -0.05;    // grid origin in global x/y
  double cell = 0.002;              // meters per grid step
  ImageF heights;                   // h >= 0, surface z = base_z - h(x,y)
};

struct SphereSurface {
  Vec3 center = Vec3(0, 0, 0.37);
  double radius = 0.03;
};

using SceneSurface = std::variant<PlaneSurface, HeightFieldSurface, SphereSurface>;

struct Scene {
  SceneSurface surface;
  std::vector<SceneSurface> occluders;  // block projector light only (shadow tests)
};

namespace detail {

inline double heightfield_h(const HeightFieldSurface& s, double x, double y) {
  double gx = (x - s.x0) / s.cell;
  double gy = (y - s.y0) / s.cell;
  int ix = int(std::floor(gx)), iy = int(std::floor(gy));
  if (ix < 0 || iy < 0 || ix + 1 >= s.heights.width || iy + 1 >= s.heights.height) return 0.0;
  double fx = gx - ix, fy = gy - iy;
  return (1 - fx) * (1 - fy) * s.heights.at(ix, iy) + fx * (1 - fy) * s.heights.at(ix + 1, iy) +
         (1 - fx) * fy * s.heights.at(ix, iy + 1) + fx * fy * s.heights.at(ix + 1, iy + 1);
}

inline std::optional<double> intersect_plane(const PlaneSurface& s, const Vec3& o, const Vec3& d) {
  double denom = s.normal.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  double t = s.normal.dot(s.point - o) / denom;
  if (t <= 1e-9) return std::nullopt;
  if (s.ripple_amp == 0.0) return t;
  // tiny-amplitude ripple: fixed-point refinement along the ray
  Vec3 ex = std::abs(s.normal.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  Vec3 bu = s.normal.cross(ex).normalized();
  Vec3 bv = s.normal.cross(bu);
  for (int it = 0; it < 12; ++it) {
    Vec3 p = o + t * d;
    double u = bu.dot(p - s.point), v = bv.dot(p - s.point);
    double rip = s.ripple_amp * std::sin(kTwoPi * u / s.ripple_period) *
                 std::sin(kTwoPi * v / s.ripple_period);
    double f = s.normal.dot(p - s.point) - rip;  // want 0
    t -= f / denom;
  }
  return t > 1e-9 ? std::optional<double>(t) : std::nullopt;
}

inline std::optional<double> intersect_heightfield(const HeightFieldSurface& s, const Vec3& o,
                                                   const Vec3& d) {
  if (std::abs(d.z()) < 1e-12) return std::nullopt;
  double h_max = 0.0;
  for (double h : s.heights.data) h_max = std::max(h_max, h);
  double z_near = s.base_z - h_max - 1e-6, z_far = s.base_z + 1e-6;
  double t0 = (z_near - o.z()) / d.z();
  double t1 = (z_far - o.z()) / d.z();
  if (t0 > t1) std::swap(t0, t1);
  if (t1 <= 1e-9) return std::nullopt;
  t0 = std::max(t0, 1e-9);
  auto f = [&](double t) {
    Vec3 p = o + t * d;
    return p.z() - (s.base_z - heightfield_h(s, p.x(), p.y()));
  };
  double step = std::min(s.cell, std::max(h_max, s.cell) / 8.0) / std::abs(d.z());
  int nsteps = std::max(2, int(std::ceil((t1 - t0) / step)));
  double prev_t = t0, prev_f = f(t0);
  if (prev_f >= 0.0) return std::nullopt;  // ray starts beyond the surface
  for (int i = 1; i <= nsteps; ++i) {
    double t = t0 + (t1 - t0) * i / nsteps;
    double ft = f(t);
    if (ft >= 0.0) {
      double lo = prev_t, hi = t;
      for (int b = 0; b < 60; ++b) {
        double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    prev_t = t;
    prev_f = ft;
  }
  return std::nullopt;
}

inline std::optional<double> intersect_sphere(const SphereSurface& s, const Vec3& o, const Vec3& d) {
  Vec3 oc = o - s.center;
  double a = d.squaredNorm();
  double b = 2.0 * oc.dot(d);
  double c = oc.squaredNorm() - s.radius * s.radius;
  double disc = b * b - 4 * a * c;
  if (disc < 0) return std::nullopt;
  double sq = std::sqrt(disc);
  double t = (-b - sq) / (2 * a);
  if (t <= 1e-9) t = (-b + sq) / (2 * a);
  if (t <= 1e-9) return std::nullopt;
  return t;
}

}  // namespace detail

/// Ray parameter of the first surface hit, or nullopt. The ray is
/// p(t) = origin + t * dir (dir need not be unit length).
inline std::optional<double> ray_intersect(const SceneSurface& surf, const Vec3& origin,
                                           const Vec3& dir) {
  return std::visit(
      [&](const auto& s) -> std::optional<double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PlaneSurface>) return detail::intersect_plane(s, origin, dir);
        else if constexpr (std::is_same_v<T, HeightFieldSurface>)
          return detail::intersect_heightfield(s, origin, dir);
        else return detail::intersect_sphere(s, origin, dir);
      },
      surf);
}

/// The physical rig: camera, rigidly attached local projector, and the
/// fixed global projector whose frame is the reporting frame.
struct RigSpec {
  Intrinsics camera;
  Intrinsics local_projector;
  RigidTransform cam_to_local;    // {C} -> {P_l}, fixed
  Intrinsics global_projector;    // extrinsic to {P_g} is the estimand
  double working_distance = 0.170;  // meters, nominal
  PatternSpec local_pattern;      // 18-step single-axis sequence
  PatternSpec global_pattern;     // 6-step, both axes
  FringeAxis local_axis = FringeAxis::Horizontal;
};

enum class CloudNoiseMode { ConstantOffset, SmoothField };

struct NoiseSpec {
  double sigma_intensity = 0.0;  // normalized intensity units
  int quant_bits = 0;            // 0 = no quantization
  double sigma_cloud = 0.0;      // meters, Eq.-13 style correlated 3D offset
  CloudNoiseMode cloud_mode = CloudNoiseMode::ConstantOffset;
  double sigma_px = 0.0;         // pixels, i.i.d. on global constraints
  double field_scale_frac = 0.25;  // smooth-field correlation length / extent
  uint64_t seed = 0;
};

/// Everything one simulated acquisition produces: image stacks for both
/// projectors plus per-pixel ground truth.
struct SimFrame {
  RigSpec rig;
  RigidTransform camera_pose;  // GT {C} -> {P_g}
  NoiseSpec noise;

  // image stacks (camera grid)
  std::vector<ImageF> local_fringe;    // N images, local projector, local_axis
  std::vector<ImageF> local_gray;      // 2 * gray_bits
  std::vector<ImageF> global_fringe_h;
  std::vector<ImageF> global_gray_h;
  std::vector<ImageF> global_fringe_v;
  std::vector<ImageF> global_gray_v;

  // ground truth (camera grid)
  GridU8 hit;                 // 1 where the camera ray meets the surface
  ImageF gt_x, gt_y, gt_z;    // camera-frame point
  ImageF gt_phase_local;      // unwrapped phase, local projector, local_axis
  ImageF gt_phase_global_h;
  ImageF gt_phase_global_v;
  GridU8 occl_local;          // shadowed or outside local projector frustum
  GridU8 occl_global;

  Vec3 gt_point(int x, int y) const { return Vec3(gt_x.at(x, y), gt_y.at(x, y), gt_z.at(x, y)); }

  PixelCoord gt_global_px(int x, int y) const {
    return {phase_to_pixel(gt_phase_global_h.at(x, y), rig.global_pattern.period_h),
            phase_to_pixel(gt_phase_global_v.at(x, y), rig.global_pattern.period_v)};
  }
};

namespace detail {

struct ProjectorSample {
  bool lit = false;        // inside frustum, positive depth, not shadowed
  double u = 0.0, v = 0.0; // continuous projector coordinate
};

inline bool shadowed(const Scene& scene, const Vec3& proj_origin, const Vec3& x_global) {
  Vec3 d = x_global - proj_origin;
  auto check = [&](const SceneSurface& s) {
    auto t = ray_intersect(s, proj_origin, d);
    return t && *t < 1.0 - 1e-6;
  };
  if (check(scene.surface)) return true;
  for (const auto& occ : scene.occluders)
    if (check(occ)) return true;
  return false;
}

inline ProjectorSample sample_projector(const Scene& scene, const Intrinsics& k,
                                        const RigidTransform& cam_to_proj,
                                        const RigidTransform& proj_pose_global, const Vec3& x_cam,
                                        const Vec3& x_global) {
  ProjectorSample out;
  auto px = project(k, cam_to_proj, x_cam);
  if (!px || !k.contains(*px)) return out;
  if (shadowed(scene, proj_pose_global.t, x_global)) return out;
  out.lit = true;
  out.u = px->u;
  out.v = px->v;
  return out;
}

}  // namespace detail

/// Renders one acquisition. Pattern evaluation is continuous (no projector
/// pixel sampling), so the noiseless phase pipeline round-trips exactly.
inline SimFrame render_views(const Scene& scene, const RigSpec& rig,
                             const RigidTransform& camera_pose, const NoiseSpec& noise,
                             int workers = 1) {
  rig.local_pattern.validate();
  rig.global_pattern.validate();
  const int w = rig.camera.width, h = rig.camera.height;

  SimFrame f;
  f.rig = rig;
  f.camera_pose = camera_pose;
  f.noise = noise;
  f.hit = GridU8(w, h);
  f.gt_x = f.gt_y = f.gt_z = ImageF(w, h);
  f.gt_phase_local = f.gt_phase_global_h = f.gt_phase_global_v = ImageF(w, h);
  f.occl_local = GridU8(w, h, 1);
  f.occl_global = GridU8(w, h, 1);

  auto alloc = [&](std::vector<ImageF>& stack, int n) {
    stack.assign(n, ImageF(w, h));
  };
  alloc(f.local_fringe, rig.local_pattern.steps);
  alloc(f.local_gray, 2 * rig.local_pattern.gray_bits);
  alloc(f.global_fringe_h, rig.global_pattern.steps);
  alloc(f.global_gray_h, 2 * rig.global_pattern.gray_bits);
  alloc(f.global_fringe_v, rig.global_pattern.steps);
  alloc(f.global_gray_v, 2 * rig.global_pattern.gray_bits);

  const RigidTransform local_pose_global = camera_pose * rig.cam_to_local.inverse();
  const RigidTransform global_identity = RigidTransform::identity();

  parallel_for(h, workers, [&](int y) {
    for (int x = 0; x < w; ++x) {
      Vec3 dir_cam = rig.camera.ray({double(x), double(y)});
      Vec3 origin = camera_pose.t;
      Vec3 dir_global = camera_pose.R * dir_cam;
      auto t = ray_intersect(scene.surface, origin, dir_global);
      double ambient_local = rig.local_pattern.mean_intensity;
      double ambient_global = rig.global_pattern.mean_intensity;
      detail::ProjectorSample lp, gp;
      if (t) {
        Vec3 x_global = origin + *t * dir_global;
        Vec3 x_cam = *t * dir_cam;  // dir_cam has unit z, so *t is camera depth
        f.hit.at(x, y) = 1;
        f.gt_x.at(x, y) = x_cam.x();
        f.gt_y.at(x, y) = x_cam.y();
        f.gt_z.at(x, y) = x_cam.z();
        lp = detail::sample_projector(scene, rig.local_projector, rig.cam_to_local,
                                      local_pose_global, x_cam, x_global);
        gp = detail::sample_projector(scene, rig.global_projector, camera_pose, global_identity,
                                      x_cam, x_global);
        f.occl_local.at(x, y) = lp.lit ? 0 : 1;
        f.occl_global.at(x, y) = gp.lit ? 0 : 1;
        double lc = rig.local_axis == FringeAxis::Horizontal ? lp.u : lp.v;
        f.gt_phase_local.at(x, y) = kTwoPi * lc / rig.local_pattern.period(rig.local_axis);
        f.gt_phase_global_h.at(x, y) = kTwoPi * gp.u / rig.global_pattern.period_h;
        f.gt_phase_global_v.at(x, y) = kTwoPi * gp.v / rig.global_pattern.period_v;
      }

      size_t px_idx = size_t(y) * w + x;
      uint64_t img_id = 0;
      auto emit = [&](ImageF& img, double clean) {
        double val = clean;
        if (noise.sigma_intensity > 0.0)
          val += noise.sigma_intensity *
                 counter_gaussian(derive_seed(noise.seed, 0x1337, img_id), px_idx);
        val = std::clamp(val, 0.0, 1.0);
        if (noise.quant_bits > 0) {
          double levels = double((1 << noise.quant_bits) - 1);
          val = std::round(val * levels) / levels;
        }
        img.at(x, y) = val;
        ++img_id;
      };

      const auto& lsp = rig.local_pattern;
      const auto& gsp = rig.global_pattern;
      double lcoord = rig.local_axis == FringeAxis::Horizontal ? lp.u : lp.v;
      for (int n = 0; n < lsp.steps; ++n)
        emit(f.local_fringe[n],
             lp.lit ? fringe_intensity(lsp, rig.local_axis, lcoord, n) : ambient_local);
      for (int b = 0; b < lsp.gray_bits; ++b)
        for (int c = 0; c < 2; ++c)
          emit(f.local_gray[2 * b + c],
               lp.lit ? gray_intensity(lsp, rig.local_axis, lcoord, b, c == 1) : ambient_local);
      for (int n = 0; n < gsp.steps; ++n)
        emit(f.global_fringe_h[n],
             gp.lit ? fringe_intensity(gsp, FringeAxis::Horizontal, gp.u, n) : ambient_global);
      for (int b = 0; b < gsp.gray_bits; ++b)
        for (int c = 0; c < 2; ++c)
          emit(f.global_gray_h[2 * b + c],
               gp.lit ? gray_intensity(gsp, FringeAxis::Horizontal, gp.u, b, c == 1)
                      : ambient_global);
      for (int n = 0; n < gsp.steps; ++n)
        emit(f.global_fringe_v[n],
             gp.lit ? fringe_intensity(gsp, FringeAxis::Vertical, gp.v, n) : ambient_global);
      for (int b = 0; b < gsp.gray_bits; ++b)
        for (int c = 0; c < 2; ++c)
          emit(f.global_gray_v[2 * b + c],
               gp.lit ? gray_intensity(gsp, FringeAxis::Vertical, gp.v, b, c == 1)
                      : ambient_global);
    }
  });
  return f;
}

/// Exact (3D point, global pixel) pairs for the given camera pixels,
/// bypassing image synthesis. Pixels whose ray misses the surface or whose
/// global projection is unusable are skipped.
inline std::vector<Constraint> analytic_constraints(const Scene& scene, const RigSpec& rig,
                                                    const RigidTransform& camera_pose,
                                                    const std::vector<PixelCoord>& pixels) {
  std::vector<Constraint> out;
  out.reserve(pixels.size());
  for (const auto& px : pixels) {
    Vec3 dir_cam = rig.camera.ray(px);
    Vec3 dir_global = camera_pose.R * dir_cam;
    auto t = ray_intersect(scene.surface, camera_pose.t, dir_global);
    if (!t) continue;
    Vec3 x_cam = *t * dir_cam;
    Vec3 x_global = camera_pose.t + *t * dir_global;
    auto g = project(rig.global_projector, camera_pose, x_cam);
    if (!g || !rig.global_projector.contains(*g)) continue;
    if (detail::shadowed(scene, Vec3::Zero(), x_global)) continue;
    out.push_back({x_cam, *g, px});
  }
  return out;
}

/// Eq.-13 style measurement perturbation. ConstantOffset draws one shared
/// 3D offset per call; SmoothField adds a low-frequency Gaussian field with
/// pointwise standard deviation sigma.
inline std::vector<Vec3> perturb_cloud(const std::vector<Vec3>& points, double sigma,
                                       CloudNoiseMode mode, uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("perturb_cloud: sigma must be >= 0");
  std::vector<Vec3> out = points;
  if (sigma == 0.0 || points.empty()) return out;
  Rng rng(derive_seed(seed, 0xC10D));
  if (mode == CloudNoiseMode::ConstantOffset) {
    Vec3 d(rng.gaussian(), rng.gaussian(), rng.gaussian());
    d *= sigma;
    for (auto& p : out) p += d;
    return out;
  }
  // smooth field over the cloud bounding box; control spacing = correlation
  // length; interpolated values renormalized to pointwise SD sigma
  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  double corr = std::max(extent * 0.25, 1e-9);
  int nx = int((hi.x() - lo.x()) / corr) + 2;
  int ny = int((hi.y() - lo.y()) / corr) + 2;
  std::vector<Vec3> ctrl(size_t(nx) * ny);
  for (auto& c : ctrl) c = sigma * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
  for (auto& p : out) {
    double gx = std::clamp((p.x() - lo.x()) / corr, 0.0, double(nx - 1) - 1e-9);
    double gy = std::clamp((p.y() - lo.y()) / corr, 0.0, double(ny - 1) - 1e-9);
    int ix = int(gx), iy = int(gy);
    double fx = gx - ix, fy = gy - iy;
    double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
    Vec3 val = w00 * ctrl[iy * nx + ix] + w10 * ctrl[iy * nx + ix + 1] +
               w01 * ctrl[(iy + 1) * nx + ix] + w11 * ctrl[(iy + 1) * nx + ix + 1];
    double norm = std::sqrt(w00 * w00 + w10 * w10 + w01 * w01 + w11 * w11);
    p += val / std::max(norm, 1e-12);
  }
  return out;
}

/// i.i.d. zero-mean Gaussian pixel perturbation, sigma_px per component.
inline std::vector<PixelCoord> perturb_pixels(const std::vector<PixelCoord>& pixels,
                                              double sigma_px, uint64_t seed) {
  if (sigma_px < 0.0) throw std::invalid_argument("perturb_pixels: sigma_px must be >= 0");
  std::vector<PixelCoord> out = pixels;
  if (sigma_px == 0.0) return out;
  Rng rng(derive_seed(seed, 0xB1E5));
  for (auto& p : out) {
    p.u += sigma_px * rng.gaussian();
    p.v += sigma_px * rng.gaussian();
  }
  return out;
}

/// Applies the measurement noise model to a constraint set (shared or
/// smooth 3D offset plus i.i.d. pixel noise).
inline std::vector<Constraint> perturb_constraints(const std::vector<Constraint>& cs,
                                                   const NoiseSpec& noise, uint64_t seed) {
  std::vector<Vec3> pts(cs.size());
  std::vector<PixelCoord> pxs(cs.size());
  for (size_t i = 0; i < cs.size(); ++i) {
    pts[i] = cs[i].point;
    pxs[i] = cs[i].global_px;
  }
  pts = perturb_cloud(pts, noise.sigma_cloud, noise.cloud_mode, seed);
  pxs = perturb_pixels(pxs, noise.sigma_px, seed);
  std::vector<Constraint> out = cs;
  for (size_t i = 0; i < cs.size(); ++i) {
    out[i].point = pts[i];
    out[i].global_px = pxs[i];
  }
  return out;
}

}  // namespace projref
