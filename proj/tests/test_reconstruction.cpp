#include <catch2/catch_amalgamated.hpp>

#include "projref/presets.hpp"
#include "projref/reconstruction.hpp"

using namespace projref;

TEST_CASE("triangulation inverts the local projection exactly") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  std::vector<PixelCoord> pixels;
  for (int y = 12; y < 120; y += 13)
    for (int x = 12; x < 150; x += 13) pixels.push_back({double(x), double(y)});

  int checked = 0;
  for (const auto& px : pixels) {
    auto cs = analytic_constraints(scene, rig, pose, {px});
    if (cs.empty()) continue;
    Vec3 x_cam = cs[0].point;
    auto proj_px = project(rig.local_projector, rig.cam_to_local, x_cam);
    if (!proj_px || !rig.local_projector.contains(*proj_px)) continue;
    double coord = rig.local_axis == FringeAxis::Horizontal ? proj_px->u : proj_px->v;
    auto tri = triangulate_ray_plane(px, coord, rig.local_axis, rig.camera, rig.local_projector,
                                     rig.cam_to_local);
    REQUIRE(tri.status == TriangulationStatus::Ok);
    CHECK((tri.point - x_cam).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("triangulation on the vertical axis also round-trips") {
  RigSpec rig = small_rig();
  rig.local_axis = FringeAxis::Vertical;
  Vec3 x_cam(0.012, -0.008, 0.18);
  auto cam_px = project(rig.camera, RigidTransform::identity(), x_cam);
  auto proj_px = project(rig.local_projector, rig.cam_to_local, x_cam);
  REQUIRE((cam_px && proj_px));
  auto tri = triangulate_ray_plane(*cam_px, proj_px->v, FringeAxis::Vertical, rig.camera,
                                   rig.local_projector, rig.cam_to_local);
  REQUIRE(tri.status == TriangulationStatus::Ok);
  CHECK((tri.point - x_cam).norm() < 1e-9);
}

TEST_CASE("degenerate ray is reported, not inverted") {
  // camera and projector coincide: every constant-column plane contains the
  // camera center, so the denominator vanishes
  RigSpec rig = small_rig();
  RigidTransform coincident = RigidTransform::identity();
  auto tri = triangulate_ray_plane({79.5, 63.5}, rig.local_projector.cx, FringeAxis::Horizontal,
                                   rig.camera, rig.local_projector, coincident);
  CHECK(tri.status == TriangulationStatus::DegenerateRay);
}

TEST_CASE("depth outside the envelope is rejected") {
  RigSpec rig = small_rig();
  // pick a valid pixel/coordinate pair, then push the projector coordinate
  // until the implied depth leaves [kMinDepth, kMaxDepth]
  Vec3 x_cam(0.0, 0.0, 0.17);
  auto cam_px = project(rig.camera, RigidTransform::identity(), x_cam);
  auto proj_px = project(rig.local_projector, rig.cam_to_local, x_cam);
  REQUIRE((cam_px && proj_px));
  auto ok = triangulate_ray_plane(*cam_px, proj_px->u, FringeAxis::Horizontal, rig.camera,
                                  rig.local_projector, rig.cam_to_local);
  REQUIRE(ok.status == TriangulationStatus::Ok);

  bool saw_reject = false;
  for (double coord = proj_px->u; coord < proj_px->u + 120.0; coord += 5.0) {
    auto tri = triangulate_ray_plane(*cam_px, coord, FringeAxis::Horizontal, rig.camera,
                                     rig.local_projector, rig.cam_to_local);
    saw_reject |= tri.status == TriangulationStatus::NegativeDepth;
  }
  CHECK(saw_reject);
}

TEST_CASE("depth responds monotonically to the projector coordinate") {
  RigSpec rig = small_rig();
  Vec3 x_cam(0.0, 0.0, 0.17);
  auto cam_px = project(rig.camera, RigidTransform::identity(), x_cam);
  auto proj_px = project(rig.local_projector, rig.cam_to_local, x_cam);
  REQUIRE((cam_px && proj_px));
  double prev = 0.0;
  bool first = true, increasing = true, decreasing = true;
  for (double d = -3.0; d <= 3.0; d += 0.5) {
    auto tri = triangulate_ray_plane(*cam_px, proj_px->u + d, FringeAxis::Horizontal, rig.camera,
                                     rig.local_projector, rig.cam_to_local);
    REQUIRE(tri.status == TriangulationStatus::Ok);
    if (!first) {
      increasing &= tri.point.z() > prev;
      decreasing &= tri.point.z() < prev;
    }
    prev = tri.point.z();
    first = false;
  }
  CHECK((increasing || decreasing));
}

TEST_CASE("full phase pipeline reconstructs the plane to sub-micron accuracy") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  SimFrame frame = render_views(scene, rig, pose, {});
  ProcessedFrame pf = process_frame(frame, small_rig_mask_config());

  REQUIRE(pf.cloud.size() > 2000);
  double sq = 0.0, max_err = 0.0;
  for (size_t i = 0; i < pf.cloud.size(); ++i) {
    int x = int(pf.cloud.camera_px[i].u), y = int(pf.cloud.camera_px[i].v);
    double e = (pf.cloud.points[i] - frame.gt_point(x, y)).norm();
    sq += e * e;
    max_err = std::max(max_err, e);
  }
  double rms = std::sqrt(sq / double(pf.cloud.size()));
  CHECK(rms < 1e-6);     // < 1 micron on clean data
  CHECK(max_err < 1e-5);
}

TEST_CASE("recovered phase maps match ground truth on valid pixels") {
  RigSpec rig = small_rig();
  SimFrame frame = render_views(plane_scene(), rig, default_camera_pose(), {});
  ProcessedFrame pf = process_frame(frame, small_rig_mask_config());

  int checked = 0;
  for (int y = 0; y < rig.camera.height; ++y)
    for (int x = 0; x < rig.camera.width; ++x) {
      if (!pf.mask.valid(x, y)) continue;
      CHECK(std::abs(pf.maps.local_phase.at(x, y) - frame.gt_phase_local.at(x, y)) < 1e-9);
      CHECK(std::abs(pf.maps.global_phase_h->at(x, y) - frame.gt_phase_global_h.at(x, y)) < 1e-9);
      CHECK(std::abs(pf.maps.global_phase_v->at(x, y) - frame.gt_phase_global_v.at(x, y)) < 1e-9);
      ++checked;
    }
  CHECK(checked > 2000);
}

TEST_CASE("decoded global pixels reproject through the true pose") {
  RigSpec rig = small_rig();
  RigidTransform pose = default_camera_pose();
  SimFrame frame = render_views(plane_scene(), rig, pose, {});
  ProcessedFrame pf = process_frame(frame, small_rig_mask_config());

  auto cs = pf.cloud.constraints();
  REQUIRE(cs.size() > 1000);
  for (size_t i = 0; i < cs.size(); i += 37) {
    auto px = project(rig.global_projector, pose, cs[i].point);
    REQUIRE(px);
    CHECK(std::abs(px->u - cs[i].global_px.u) < 1e-6);
    CHECK(std::abs(px->v - cs[i].global_px.v) < 1e-6);
  }
}

TEST_CASE("an all-invalid mask yields an empty cloud") {
  RigSpec rig = small_rig();
  ReconstructionMaps maps;
  maps.local_phase = ImageF(rig.camera.width, rig.camera.height, 1.0);
  ValidityMask mask{GridU8(rig.camera.width, rig.camera.height, uint8_t(MaskReason::Saturated))};
  auto rec = reconstruct_cloud(maps, mask, rig);
  CHECK(rec.cloud.size() == 0);
}

TEST_CASE("cloud without global maps produces zero constraints") {
  RigSpec rig = small_rig();
  SimFrame frame = render_views(plane_scene(), rig, default_camera_pose(), {});
  ProcessedFrame pf = process_frame(frame, small_rig_mask_config());
  ReconstructionMaps local_only;
  local_only.local_phase = pf.maps.local_phase;
  auto rec = reconstruct_cloud(local_only, pf.mask, rig);
  CHECK(rec.cloud.size() > 0);
  CHECK(rec.cloud.constraints().empty());
  rec.cloud.check_parallel();
}

TEST_CASE("triangulation failures are folded into the returned mask") {
  RigSpec rig = small_rig();
  ReconstructionMaps maps;
  // a constant coordinate map puts many rays behind the plane or outside
  // the depth envelope
  double coord = rig.local_projector.cx;
  double phase = kTwoPi * coord / rig.local_pattern.period(rig.local_axis);
  maps.local_phase = ImageF(rig.camera.width, rig.camera.height, phase);
  ValidityMask mask{GridU8(rig.camera.width, rig.camera.height, uint8_t(MaskReason::Ok))};
  auto rec = reconstruct_cloud(maps, mask, rig);
  // a constant phase map is inconsistent with most rays; failures must be
  // recorded, and cloud size plus invalid count must cover the frame
  size_t invalid = rec.mask.reason.size() - rec.mask.count_valid();
  CHECK(rec.cloud.size() + invalid == size_t(rig.camera.width) * rig.camera.height);
  CHECK(invalid > 0);
}

TEST_CASE("secondary reconstruction is exact at the true pose") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  std::vector<PixelCoord> pixels;
  for (int i = 15; i < 145; i += 7) pixels.push_back({double(i), 50.0 + (i % 3) * 11.0});
  auto cs = analytic_constraints(scene, rig, pose, pixels);
  REQUIRE(cs.size() > 10);

  EulerPose gt = transform_to_pose(pose);
  auto sec = secondary_cloud(gt, cs, FringeAxis::Horizontal, rig.camera, rig.global_projector);
  REQUIRE(sec.kept.size() == cs.size());
  double fx = 0.0;
  for (size_t j = 0; j < sec.kept.size(); ++j)
    fx = std::max(fx, (cs[sec.kept[j]].point - sec.points[j]).norm());
  CHECK(fx < 1e-9);

  // a pose shifted by 1 mm produces a visible discrepancy
  EulerPose off = gt;
  off.tx += 0.001;
  auto sec2 = secondary_cloud(off, cs, FringeAxis::Horizontal, rig.camera, rig.global_projector);
  double fx2 = 0.0;
  for (size_t j = 0; j < sec2.kept.size(); ++j)
    fx2 += (cs[sec2.kept[j]].point - sec2.points[j]).squaredNorm();
  CHECK(fx2 > 1e-10);

  auto empty = secondary_cloud(gt, {}, FringeAxis::Horizontal, rig.camera, rig.global_projector);
  CHECK(empty.points.empty());
  CHECK(empty.excluded == 0);
}

TEST_CASE("no unwrap errors occur outside the masked band") {
  RigSpec rig = small_rig();
  SimFrame frame = render_views(plane_scene(), rig, default_camera_pose(), {});
  ProcessedFrame pf = process_frame(frame, small_rig_mask_config());

  int errors = 0, checked = 0;
  for (int y = 0; y < rig.camera.height; ++y)
    for (int x = 0; x < rig.camera.width; ++x) {
      if (!pf.mask.valid(x, y)) continue;
      double diff = pf.maps.local_phase.at(x, y) - frame.gt_phase_local.at(x, y);
      if (std::abs(diff) > std::numbers::pi) ++errors;  // a period slip
      ++checked;
    }
  CHECK(checked > 2000);
  CHECK(errors == 0);
}
