// Reconstructed point clouds and the estimator's atomic observation:
// a camera-frame 3D point paired with its global-projector pixel.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "projref/fringe.hpp"
#include "projref/geometry.hpp"

namespace projref {

/// One sampled observation: local 3D point (camera frame), the global
/// projector pixel decoded at the same camera pixel, and that camera pixel.
struct Constraint {
  Vec3 point = Vec3::Zero();     // x_i, meters, camera frame
  PixelCoord global_px;          // (u_i^g, v_i^g)
  PixelCoord camera_px;          // source pixel, used by stage-2 triangulation
};

/// Camera-frame cloud with parallel per-point provenance records.
struct PointCloud {
  std::vector<Vec3> points;              // meters, camera frame
  std::vector<PixelCoord> camera_px;     // source camera pixel
  std::vector<double> local_coord;       // decoded local-projector coordinate
  std::vector<PixelCoord> global_px;     // decoded global-projector pixel
  std::vector<uint8_t> has_global;       // 1 when global_px is usable

  size_t size() const { return points.size(); }

  void push(const Vec3& p, PixelCoord cam, double lcoord, PixelCoord gpx, bool global_ok) {
    points.push_back(p);
    camera_px.push_back(cam);
    local_coord.push_back(lcoord);
    global_px.push_back(gpx);
    has_global.push_back(global_ok ? 1 : 0);
  }

  void check_parallel() const {
    size_t n = points.size();
    if (camera_px.size() != n || local_coord.size() != n || global_px.size() != n ||
        has_global.size() != n)
      throw std::logic_error("PointCloud: parallel arrays out of sync");
  }

  std::vector<Constraint> constraints() const {
    std::vector<Constraint> out;
    for (size_t i = 0; i < points.size(); ++i)
      if (has_global[i]) out.push_back({points[i], global_px[i], camera_px[i]});
    return out;
  }
};

}  // namespace projref
