// Phase-to-3D triangulation in the camera frame, whole-frame cloud
// reconstruction, and the pose-conditioned secondary reconstruction used
// by the stage-2 objective.
#pragma once

#include <optional>
#include <vector>

#include "projref/fringe.hpp"
#include "projref/geometry.hpp"
#include "projref/pointcloud.hpp"
#include "projref/scene.hpp"

namespace projref {

enum class TriangulationStatus { Ok, DegenerateRay, NegativeDepth };

struct TriangulationResult {
  TriangulationStatus status = TriangulationStatus::DegenerateRay;
  Vec3 point = Vec3::Zero();  // camera frame
};

// Reconstructed depths outside this envelope are treated as gross outliers
// (matches the 2 m translation bound).
inline constexpr double kMinDepth = 0.02;
inline constexpr double kMaxDepth = 2.0;

/// Intersects the camera pixel's back-projected ray with the projector's
/// plane of constant column (Horizontal) or row (Vertical) at proj_coord.
inline TriangulationResult triangulate_ray_plane(const PixelCoord& cam_pixel, double proj_coord,
                                                 FringeAxis axis, const Intrinsics& cam,
                                                 const Intrinsics& proj,
                                                 const RigidTransform& cam_to_proj) {
  // plane through the projector center: n . X_p = 0
  Vec3 n_proj = axis == FringeAxis::Horizontal
                    ? Vec3(proj.fx, proj.skew, proj.cx - proj_coord)
                    : Vec3(0.0, proj.fy, proj.cy - proj_coord);
  Vec3 n_cam = cam_to_proj.R.transpose() * n_proj;
  double offset = n_proj.dot(cam_to_proj.t);
  Vec3 ray = cam.ray(cam_pixel);
  double denom = n_cam.dot(ray);
  if (std::abs(denom) < 1e-12) return {TriangulationStatus::DegenerateRay, Vec3::Zero()};
  double depth = -offset / denom;  // ray has unit z, so this is camera depth
  if (depth < kMinDepth || depth > kMaxDepth)
    return {TriangulationStatus::NegativeDepth, Vec3::Zero()};
  return {TriangulationStatus::Ok, depth * ray};
}

struct ReconstructionMaps {
  ImageF local_phase;                       // unwrapped, local projector axis
  std::optional<ImageF> global_phase_h;
  std::optional<ImageF> global_phase_v;
};

/// Triangulates every valid pixel against the local projector and attaches
/// the global-projector pixel when both global phase maps are present.
/// Per-pixel triangulation failures invalidate the pixel in the mask copy
/// returned alongside the cloud; nothing aborts.
struct ReconstructCloudResult {
  PointCloud cloud;
  ValidityMask mask;  // input mask with triangulation failures folded in
};

inline ReconstructCloudResult reconstruct_cloud(const ReconstructionMaps& maps,
                                                const ValidityMask& mask, const RigSpec& rig) {
  ReconstructCloudResult out;
  out.mask = mask;
  const ImageF& lp = maps.local_phase;
  bool with_global = maps.global_phase_h && maps.global_phase_v;
  for (int y = 0; y < lp.height; ++y)
    for (int x = 0; x < lp.width; ++x) {
      if (!mask.valid(x, y)) continue;
      PixelCoord cam_px{double(x), double(y)};
      double coord =
          phase_to_pixel(lp.at(x, y), rig.local_pattern.period(rig.local_axis));
      auto tri = triangulate_ray_plane(cam_px, coord, rig.local_axis, rig.camera,
                                       rig.local_projector, rig.cam_to_local);
      if (tri.status != TriangulationStatus::Ok) {
        out.mask.reason.at(x, y) = uint8_t(MaskReason::FringeEdge);
        continue;
      }
      PixelCoord gpx{};
      bool global_ok = false;
      if (with_global) {
        gpx = {phase_to_pixel(maps.global_phase_h->at(x, y), rig.global_pattern.period_h),
               phase_to_pixel(maps.global_phase_v->at(x, y), rig.global_pattern.period_v)};
        global_ok = rig.global_projector.contains(gpx);
      }
      out.cloud.push(tri.point, cam_px, coord, gpx, global_ok);
    }
  return out;
}

/// Reconstruction implied by the global projector under the pose estimate:
/// triangulates each constraint's camera ray against the global projector
/// plane decoded at that pixel, treating T(theta) as the camera-to-global
/// extrinsic. Returns the points and the count of excluded degenerate rays.
struct SecondaryCloudResult {
  std::vector<Vec3> points;             // camera frame, aligned with kept indices
  std::vector<size_t> kept;             // indices into the input constraints
  size_t excluded = 0;
};

inline SecondaryCloudResult secondary_cloud(const EulerPose& theta,
                                            const std::vector<Constraint>& constraints,
                                            FringeAxis axis, const Intrinsics& cam,
                                            const Intrinsics& global_proj) {
  RigidTransform t = pose_to_transform(theta);
  SecondaryCloudResult out;
  out.points.reserve(constraints.size());
  for (size_t i = 0; i < constraints.size(); ++i) {
    const auto& c = constraints[i];
    double coord = axis == FringeAxis::Horizontal ? c.global_px.u : c.global_px.v;
    auto tri = triangulate_ray_plane(c.camera_px, coord, axis, cam, global_proj, t);
    if (tri.status != TriangulationStatus::Ok) {
      ++out.excluded;
      continue;
    }
    out.points.push_back(tri.point);
    out.kept.push_back(i);
  }
  return out;
}

/// Full phase pipeline on a rendered frame: wrapped phase, Gray decode,
/// unwrap, masking for both projectors, then cloud reconstruction.
struct ProcessedFrame {
  ReconstructionMaps maps;
  ValidityMask mask;        // combined local+global validity
  PointCloud cloud;
};

inline ProcessedFrame process_frame(const SimFrame& frame, const MaskConfig& cfg,
                                    double gray_ambiguity_band = 0.1) {
  const RigSpec& rig = frame.rig;

  auto run_axis = [&](const std::vector<ImageF>& fringe, const std::vector<ImageF>& gray,
                      const PatternSpec& spec, const GridU8& occluded) {
    auto wp = extract_wrapped_phase(fringe);
    auto gd = decode_gray(gray, spec.gray_bits, gray_ambiguity_band);
    ImageF phi = unwrap(wp.phase, gd.order);
    ValidityMask m =
        build_validity_mask(fringe, wp.modulation, wp.phase, gd.transition, cfg, &occluded);
    return std::pair<ImageF, ValidityMask>(std::move(phi), std::move(m));
  };

  auto [local_phi, local_mask] =
      run_axis(frame.local_fringe, frame.local_gray, rig.local_pattern, frame.occl_local);
  auto [gh_phi, gh_mask] =
      run_axis(frame.global_fringe_h, frame.global_gray_h, rig.global_pattern, frame.occl_global);
  auto [gv_phi, gv_mask] =
      run_axis(frame.global_fringe_v, frame.global_gray_v, rig.global_pattern, frame.occl_global);

  ProcessedFrame out;
  out.maps.local_phase = std::move(local_phi);
  out.maps.global_phase_h = std::move(gh_phi);
  out.maps.global_phase_v = std::move(gv_phi);
  out.mask = intersect_masks(intersect_masks(local_mask, gh_mask), gv_mask);
  // pixels whose camera ray missed the surface are never valid
  for (size_t i = 0; i < out.mask.reason.size(); ++i)
    if (!frame.hit.data[i] && out.mask.reason.data[i] == uint8_t(MaskReason::Ok))
      out.mask.reason.data[i] = uint8_t(MaskReason::LowModulation);
  auto rec = reconstruct_cloud(out.maps, out.mask, rig);
  out.mask = std::move(rec.mask);
  out.cloud = std::move(rec.cloud);
  return out;
}

}  // namespace projref
