#include <catch2/catch_amalgamated.hpp>

#include "projref/presets.hpp"
#include "projref/scene.hpp"

using namespace projref;

namespace {

bool images_equal(const ImageF& a, const ImageF& b) {
  return a.width == b.width && a.height == b.height && a.data == b.data;
}

bool frames_equal(const SimFrame& a, const SimFrame& b) {
  auto stacks_equal = [](const std::vector<ImageF>& x, const std::vector<ImageF>& y) {
    if (x.size() != y.size()) return false;
    for (size_t i = 0; i < x.size(); ++i)
      if (!images_equal(x[i], y[i])) return false;
    return true;
  };
  return stacks_equal(a.local_fringe, b.local_fringe) && stacks_equal(a.local_gray, b.local_gray) &&
         stacks_equal(a.global_fringe_h, b.global_fringe_h) &&
         stacks_equal(a.global_gray_h, b.global_gray_h) &&
         stacks_equal(a.global_fringe_v, b.global_fringe_v) &&
         stacks_equal(a.global_gray_v, b.global_gray_v);
}

}  // namespace

TEST_CASE("ray intersection closed forms") {
  PlaneSurface plane{Vec3(0, 0, 0.35), Vec3(0, 0, -1), 0.0, 0.01};
  auto t = ray_intersect(plane, Vec3::Zero(), Vec3(0, 0, 1));
  REQUIRE(t);
  CHECK(*t == Catch::Approx(0.35).margin(1e-12));
  CHECK_FALSE(ray_intersect(plane, Vec3::Zero(), Vec3(1, 0, 0)));  // parallel
  CHECK_FALSE(ray_intersect(plane, Vec3(0, 0, 0.5), Vec3(0, 0, 1)));  // behind

  SphereSurface sph{Vec3(0, 0, 0.37), 0.03};
  auto ts = ray_intersect(sph, Vec3::Zero(), Vec3(0, 0, 1));
  REQUIRE(ts);
  CHECK(*ts == Catch::Approx(0.34).margin(1e-12));

  // heightfield with zero heights degenerates to the base plane
  HeightFieldSurface hf;
  hf.base_z = 0.3;
  hf.heights = ImageF(8, 8, 0.0);
  auto th = ray_intersect(SceneSurface{hf}, Vec3::Zero(), Vec3(0, 0, 1));
  REQUIRE(th);
  CHECK(*th == Catch::Approx(0.3).margin(1e-6));
}

TEST_CASE("heightfield bump is hit where expected") {
  HeightFieldSurface hf;
  hf.base_z = 0.3;
  hf.x0 = hf.y0 = -0.01;
  hf.cell = 0.002;
  hf.heights = ImageF(11, 11, 0.0);
  hf.heights.at(5, 5) = 0.005;  // bump at (x, y) = (0, 0)
  auto t = ray_intersect(SceneSurface{hf}, Vec3::Zero(), Vec3(0, 0, 1));
  REQUIRE(t);
  CHECK(*t == Catch::Approx(0.295).margin(1e-6));
  // off the bump: base plane
  auto t2 = ray_intersect(SceneSurface{hf}, Vec3(0.008, 0.008, 0.0), Vec3(0, 0, 1));
  REQUIRE(t2);
  CHECK(*t2 == Catch::Approx(0.3).margin(1e-6));
}

TEST_CASE("fronto-parallel plane ground truth at the optical center") {
  RigSpec rig = small_rig();
  rig.camera.cx = 80.0;
  rig.camera.cy = 64.0;
  Scene scene = plane_scene(0.170);
  RigidTransform pose = RigidTransform::identity();

  SimFrame f = render_views(scene, rig, pose, {});
  REQUIRE(f.hit.at(80, 64) == 1);
  CHECK((f.gt_point(80, 64) - Vec3(0, 0, 0.170)).norm() < 1e-12);

  // the same pixel through the analytic path
  auto cs = analytic_constraints(scene, rig, pose, {{80.0, 64.0}});
  REQUIRE(cs.size() == 1);
  CHECK((cs[0].point - Vec3(0, 0, 0.170)).norm() < 1e-12);
  CHECK(cs[0].global_px.u == Catch::Approx(rig.global_projector.cx).margin(1e-9));
  CHECK(cs[0].global_px.v == Catch::Approx(rig.global_projector.cy).margin(1e-9));
}

TEST_CASE("rendered ground truth agrees with the analytic path") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  SimFrame f = render_views(scene, rig, pose, {});

  std::vector<PixelCoord> pixels;
  for (int y = 10; y < rig.camera.height; y += 25)
    for (int x = 10; x < rig.camera.width; x += 25) pixels.push_back({double(x), double(y)});

  int compared = 0;
  for (const auto& px : pixels) {
    int x = int(px.u), y = int(px.v);
    if (!f.hit.at(x, y) || f.occl_global.at(x, y)) continue;
    auto cs = analytic_constraints(scene, rig, pose, {px});
    REQUIRE(cs.size() == 1);
    CHECK((cs[0].point - f.gt_point(x, y)).norm() < 1e-10);
    auto gpx = f.gt_global_px(x, y);
    CHECK(std::abs(cs[0].global_px.u - gpx.u) < 1e-9);
    CHECK(std::abs(cs[0].global_px.v - gpx.v) < 1e-9);
    ++compared;
  }
  CHECK(compared > 10);
}

TEST_CASE("ground truth maps are self-consistent under projection") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  SimFrame f = render_views(scene, rig, pose, {});

  int checked = 0;
  for (int y = 5; y < rig.camera.height; y += 17)
    for (int x = 5; x < rig.camera.width; x += 17) {
      if (!f.hit.at(x, y) || f.occl_global.at(x, y)) continue;
      auto px = project(rig.global_projector, pose, f.gt_point(x, y));
      REQUIRE(px);
      auto gt = f.gt_global_px(x, y);
      CHECK(std::abs(px->u - gt.u) < 1e-9);
      CHECK(std::abs(px->v - gt.v) < 1e-9);
      ++checked;
    }
  CHECK(checked > 20);
}

TEST_CASE("occluders shadow the global projector only") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene(0.35);
  // small sphere on the global projector's line of sight to the surface
  // center, well away from the camera and local projector rays
  RigidTransform pose = default_camera_pose();
  Vec3 target(0.0, 0.0, 0.35);
  scene.occluders.push_back(SphereSurface{0.3 * target, 0.004});

  SimFrame f = render_views(scene, rig, pose, {});
  int global_only = 0, local_shadowed = 0, lit_both = 0;
  for (int y = 0; y < rig.camera.height; ++y)
    for (int x = 0; x < rig.camera.width; ++x) {
      if (!f.hit.at(x, y)) continue;
      if (f.occl_global.at(x, y) && !f.occl_local.at(x, y)) ++global_only;
      if (f.occl_local.at(x, y)) ++local_shadowed;
      if (!f.occl_global.at(x, y) && !f.occl_local.at(x, y)) ++lit_both;
    }
  CHECK(global_only > 0);   // shadow cast in the global channel
  CHECK(lit_both > 1000);   // most of the frame is unaffected

  // without the occluder the same rig has no global-only shadow
  SimFrame clean = render_views(plane_scene(0.35), rig, pose, {});
  int clean_global_only = 0;
  for (int y = 0; y < rig.camera.height; ++y)
    for (int x = 0; x < rig.camera.width; ++x)
      if (clean.hit.at(x, y) && clean.occl_global.at(x, y) && !clean.occl_local.at(x, y))
        ++clean_global_only;
  CHECK(global_only > clean_global_only);
}

TEST_CASE("rendering is deterministic and worker-count independent") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  RigidTransform pose = default_camera_pose();
  NoiseSpec noise;
  noise.sigma_intensity = 0.01;
  noise.quant_bits = 8;
  noise.seed = 42;

  SimFrame a = render_views(scene, rig, pose, noise, 1);
  SimFrame b = render_views(scene, rig, pose, noise, 1);
  SimFrame c = render_views(scene, rig, pose, noise, 3);
  CHECK(frames_equal(a, b));
  CHECK(frames_equal(a, c));

  NoiseSpec other = noise;
  other.seed = 43;
  SimFrame d = render_views(scene, rig, pose, other, 1);
  CHECK_FALSE(frames_equal(a, d));
}

TEST_CASE("quantized intensities live on the code grid") {
  RigSpec rig = small_rig();
  NoiseSpec noise;
  noise.quant_bits = 8;
  SimFrame f = render_views(plane_scene(), rig, default_camera_pose(), noise);
  for (double v : f.local_fringe[0].data) {
    double code = v * 255.0;
    CHECK(std::abs(code - std::round(code)) < 1e-9);
    CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("cloud perturbation modes") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i)
    pts.emplace_back(0.001 * i, 0.02 - 0.0007 * i, 0.17 + 0.0002 * i);

  SECTION("zero sigma is the identity") {
    auto out = perturb_cloud(pts, 0.0, CloudNoiseMode::ConstantOffset, 9);
    for (size_t i = 0; i < pts.size(); ++i) CHECK((out[i] - pts[i]).norm() == 0.0);
  }
  SECTION("negative sigma is rejected") {
    CHECK_THROWS_AS(perturb_cloud(pts, -1.0, CloudNoiseMode::ConstantOffset, 9),
                    std::invalid_argument);
  }
  SECTION("constant offset preserves pairwise differences") {
    auto out = perturb_cloud(pts, 1e-4, CloudNoiseMode::ConstantOffset, 9);
    Vec3 d0 = out[0] - pts[0];
    CHECK(d0.norm() > 0.0);
    for (size_t i = 1; i < pts.size(); ++i)
      CHECK(((out[i] - pts[i]) - d0).norm() < 1e-15);
  }
  SECTION("constant offset magnitude follows the 3-dof chi mean") {
    double sigma = 1e-4;
    double acc = 0.0;
    int trials = 4000;
    for (int s = 0; s < trials; ++s)
      acc += (perturb_cloud(pts, sigma, CloudNoiseMode::ConstantOffset, s)[0] - pts[0]).norm();
    double mean = acc / trials;
    double expect = sigma * 2.0 * std::sqrt(2.0 / std::numbers::pi);  // E[chi_3]
    CHECK(mean == Catch::Approx(expect).epsilon(0.05));
  }
  SECTION("smooth field has pointwise sd sigma and spatial correlation") {
    double sigma = 1e-4;
    int trials = 2000;
    double acc = 0.0, acc2 = 0.0;
    double neighbour_gap = 0.0, far_gap = 0.0;
    for (int s = 0; s < trials; ++s) {
      auto out = perturb_cloud(pts, sigma, CloudNoiseMode::SmoothField, s);
      double dx = (out[10] - pts[10]).x();
      acc += dx;
      acc2 += dx * dx;
      neighbour_gap += ((out[10] - pts[10]) - (out[11] - pts[11])).norm();
      far_gap += ((out[0] - pts[0]) - (out[49] - pts[49])).norm();
    }
    double var = acc2 / trials - (acc / trials) * (acc / trials);
    CHECK(std::sqrt(var) == Catch::Approx(sigma).epsilon(0.10));
    CHECK(neighbour_gap < far_gap);  // nearby points move together
  }
  SECTION("determinism") {
    auto a = perturb_cloud(pts, 1e-4, CloudNoiseMode::SmoothField, 7);
    auto b = perturb_cloud(pts, 1e-4, CloudNoiseMode::SmoothField, 7);
    for (size_t i = 0; i < pts.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
  }
}

TEST_CASE("pixel perturbation statistics") {
  std::vector<PixelCoord> px(100000, PixelCoord{10.0, 20.0});
  double sigma = 0.05;
  auto out = perturb_pixels(px, sigma, 3);
  double mu = 0.0, m2 = 0.0;
  for (const auto& p : out) mu += p.u - 10.0;
  mu /= double(out.size());
  for (const auto& p : out) m2 += (p.u - 10.0 - mu) * (p.u - 10.0 - mu);
  double var = m2 / double(out.size());
  CHECK(var == Catch::Approx(sigma * sigma).epsilon(0.02));
  CHECK(std::abs(mu) < 3.0 * sigma / std::sqrt(double(out.size())) * 4.0);

  auto same = perturb_pixels(px, sigma, 3);
  CHECK(same[0].u == out[0].u);
  auto zero = perturb_pixels(px, 0.0, 3);
  CHECK(zero[0].u == 10.0);
  CHECK_THROWS_AS(perturb_pixels(px, -0.1, 3), std::invalid_argument);
}

TEST_CASE("constraint perturbation touches points and pixels coherently") {
  RigSpec rig = small_rig();
  Scene scene = plane_scene();
  std::vector<PixelCoord> pixels;
  for (int i = 20; i < 140; i += 10) pixels.push_back({double(i), 64.0});
  auto cs = analytic_constraints(scene, rig, default_camera_pose(), pixels);
  REQUIRE(cs.size() > 5);

  NoiseSpec noise;
  noise.sigma_cloud = 1e-4;
  noise.sigma_px = 0.05;
  auto out = perturb_constraints(cs, noise, 11);
  REQUIRE(out.size() == cs.size());
  bool point_moved = false, px_moved = false, cam_fixed = true;
  for (size_t i = 0; i < cs.size(); ++i) {
    point_moved |= (out[i].point - cs[i].point).norm() > 0.0;
    px_moved |= std::abs(out[i].global_px.u - cs[i].global_px.u) > 0.0;
    cam_fixed &= out[i].camera_px.u == cs[i].camera_px.u;
  }
  CHECK(point_moved);
  CHECK(px_moved);
  CHECK(cam_fixed);
}
