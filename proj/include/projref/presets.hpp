// Ready-made rigs, scenes, and trajectories: a full-resolution rig matching
// the reference hardware layout and a reduced rig sized for fast synthetic
// studies, plus the plane and relief ("statue") scenes the experiments use.
#pragma once

#include <cmath>
#include <vector>

#include "projref/fringe.hpp"
#include "projref/geometry.hpp"
#include "projref/rng.hpp"
#include "projref/scene.hpp"

namespace projref {

/// Local projector mounted beside the camera with toe-in so both are
/// centered on the same working point at the given distance.
inline RigidTransform make_cam_to_local(double baseline, double working_distance) {
  double a = std::atan2(baseline, working_distance);
  Mat3 r = rot_y(a);
  Vec3 p(baseline, 0.0, 0.0);  // projector position in the camera frame
  return {r, -(r * p)};
}

/// Full-resolution rig mirroring the reference hardware: 2448x2048 camera,
/// two 912x1140 projectors, 170 mm working distance, 18-step local fringes
/// and 6-step dual-axis global fringes.
inline RigSpec full_rig() {
  RigSpec rig;
  rig.camera = {3500.0, 3500.0, 1223.5, 1023.5, 0.0, 0.0, 0.0, 2448, 2048};
  rig.local_projector = {1100.0, 1100.0, 455.5, 569.5, 0.0, 0.0, 0.0, 912, 1140};
  rig.global_projector = {2300.0, 2300.0, 455.5, 569.5, 0.0, 0.0, 0.0, 912, 1140};
  rig.working_distance = 0.170;
  rig.cam_to_local = make_cam_to_local(0.08, rig.working_distance);
  rig.local_pattern = {18, 18.0, 18.0, 6, 912, 1140, 0.5, 0.45};
  rig.global_pattern = {6, 18.0, 18.0, 6, 912, 1140, 0.5, 0.45};
  rig.local_axis = FringeAxis::Horizontal;
  return rig;
}

/// Reduced rig for fast rendering; same geometry and protocol, scaled so a
/// camera pixel spans well under half a fringe period on both projectors.
inline RigSpec small_rig() {
  RigSpec rig;
  rig.camera = {200.0, 200.0, 79.5, 63.5, 0.0, 0.0, 0.0, 160, 128};
  rig.local_projector = {190.0, 190.0, 75.5, 94.5, 0.0, 0.0, 0.0, 152, 190};
  rig.global_projector = {380.0, 380.0, 75.5, 94.5, 0.0, 0.0, 0.0, 152, 190};
  rig.working_distance = 0.170;
  rig.cam_to_local = make_cam_to_local(0.05, rig.working_distance);
  rig.local_pattern = {18, 16.0, 16.0, 4, 152, 190, 0.5, 0.45};
  rig.global_pattern = {6, 16.0, 16.0, 4, 152, 190, 0.5, 0.45};
  rig.local_axis = FringeAxis::Horizontal;
  return rig;
}

/// Masking thresholds matched to the reduced rig, where a camera pixel
/// sweeps a sizable fraction of a period and the nominal phase gradient is
/// correspondingly larger.
inline MaskConfig small_rig_mask_config() {
  MaskConfig cfg;
  cfg.fringe_edge_gradient = 1.8;  // rad per camera pixel
  return cfg;
}

/// Non-trivial ground-truth camera placement: offset from the global
/// projector, looking at the surface from the nominal working distance.
inline RigidTransform default_camera_pose() {
  EulerPose p{0.06, -0.04, 0.03, 0.010, -0.008, 0.185};
  return pose_to_transform(p);
}

inline Scene plane_scene(double z = 0.35) {
  Scene s;
  s.surface = PlaneSurface{Vec3(0, 0, z), Vec3(0, 0, -1), 0.0, 0.01};
  return s;
}

/// Smooth relief built from deterministic Gaussian bumps over the base
/// plane; curvature-rich so point-to-plane ICP is well conditioned.
inline Scene statue_scene(uint64_t seed = 7) {
  HeightFieldSurface hf;
  hf.base_z = 0.35;
  hf.x0 = -0.07;
  hf.y0 = -0.07;
  hf.cell = 0.0025;
  int n = 57;  // covers [-0.07, 0.07]
  hf.heights = ImageF(n, n);
  Rng rng(derive_seed(seed, 0x57A7));
  struct Bump {
    double cx, cy, amp, width;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 14; ++i)
    bumps.push_back({-0.05 + 0.10 * rng.uniform(), -0.05 + 0.10 * rng.uniform(),
                     0.002 + 0.008 * rng.uniform(), 0.006 + 0.014 * rng.uniform()});
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      double x = hf.x0 + ix * hf.cell, y = hf.y0 + iy * hf.cell;
      double h = 0.0;
      for (const auto& b : bumps) {
        double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
        h += b.amp * std::exp(-d2 / (2.0 * b.width * b.width));
      }
      // taper to zero at the grid rim so the surface meets the base plane
      double rim = std::min({double(ix), double(iy), double(n - 1 - ix), double(n - 1 - iy)});
      double taper = std::min(1.0, rim / 6.0);
      hf.heights.at(ix, iy) = h * taper;
    }
  Scene s;
  s.surface = hf;
  return s;
}

/// Rectangular scan over the plane: placements along a loop, each looking
/// at the surface with large mutual overlap. count=6 matches the plane
/// study; the last placement returns near the first (loop closure).
inline std::vector<RigidTransform> plane_trajectory(int count = 6) {
  std::vector<RigidTransform> poses;
  // rectangle corners/edges in the global x/y plane
  std::vector<std::pair<double, double>> xy = {{0.000, 0.000}, {0.025, 0.000}, {0.050, 0.000},
                                               {0.050, 0.020}, {0.025, 0.020}, {0.000, 0.020},
                                               {0.000, 0.010}, {0.025, 0.010}};
  for (int i = 0; i < count; ++i) {
    auto [dx, dy] = xy[size_t(i) % xy.size()];
    EulerPose p{0.05 - 0.01 * i, -0.03 + 0.008 * i, 0.02, 0.008 + dx, -0.006 + dy, 0.185};
    poses.push_back(pose_to_transform(p));
  }
  return poses;
}

/// Scan over the relief scene: small lateral steps with mild rotation so
/// consecutive views overlap strongly (ICP-chainable). count=8 matches the
/// sweep study (7 relative steps from the initial pose).
inline std::vector<RigidTransform> statue_trajectory(int count = 8) {
  std::vector<RigidTransform> poses;
  for (int i = 0; i < count; ++i) {
    double s = double(i) / std::max(1, count - 1);
    EulerPose p{0.05 - 0.06 * s, -0.04 + 0.05 * s, 0.02 + 0.02 * s,
                0.008 + 0.030 * s, -0.006 + 0.014 * s, 0.185 - 0.006 * s};
    poses.push_back(pose_to_transform(p));
  }
  return poses;
}

}  // namespace projref
