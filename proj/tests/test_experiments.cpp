#include <catch2/catch_amalgamated.hpp>

#include "projref/experiments.hpp"

using namespace projref;

namespace {

/// Fast estimator settings for smoke-level studies.
EstimatorConfig quick_estimator() {
  EstimatorConfig cfg;
  cfg.max_iters = 400;
  return cfg;
}

ExperimentSpec quick_spec() {
  ExperimentSpec spec;
  spec.estimator = quick_estimator();
  spec.trials = 6;
  spec.pixel_stride = 4;
  spec.master_seed = 11;
  return spec;
}

std::vector<Constraint> synthetic_grid(int n) {
  std::vector<Constraint> cs;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      cs.push_back({Vec3(x * 0.001, y * 0.001, 0.2),
                    {double(10 + x), double(10 + y)},
                    {double(x), double(y)}});
  return cs;
}

}  // namespace

TEST_CASE("trajectory scores are the rms of per-pose errors") {
  TrajectoryRecord rec;
  rec.e_t_mm = {3.0, 4.0};
  rec.e_r_mrad = {3.0, 4.0};
  auto [st, sr] = trajectory_scores(rec);
  CHECK(st == Catch::Approx(std::sqrt(12.5)));
  CHECK(sr == Catch::Approx(std::sqrt(12.5)));

  rec.e_r_mrad.pop_back();
  CHECK_THROWS_AS(trajectory_scores(rec), MismatchedIndices);
  TrajectoryRecord empty;
  CHECK_THROWS_AS(trajectory_scores(empty), MismatchedIndices);
}

TEST_CASE("pose spreads vanish for identical trajectories") {
  TrajectoryRecord a;
  a.poses = {EulerPose{0.1, -0.2, 0.3, 0.01, 0.02, 0.2}, EulerPose{0.0, 0.0, 0.0, 0.0, 0.0, 0.3}};
  std::vector<TrajectoryRecord> records{a, a, a};
  auto [st, sr] = pose_spreads(records);
  REQUIRE(st.size() == 2);
  CHECK(st[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(st[1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(sr[0] == Catch::Approx(0.0).margin(1e-9));
  CHECK(sr[1] == Catch::Approx(0.0).margin(1e-9));

  SECTION("a 1 mm deviation in one record shows up as spread") {
    records[1].poses[0].tx += 0.001;
    auto [st2, sr2] = pose_spreads(records);
    // population sd of the {2/3, 1/3, 1/3} mm deviations is ~0.157
    CHECK(st2[0] == Catch::Approx(std::sqrt(2.0) / 9.0).epsilon(1e-6));
    CHECK(st2[1] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("mismatched pose counts throw") {
    records[2].poses.pop_back();
    CHECK_THROWS_AS(pose_spreads(records), MismatchedIndices);
    CHECK_THROWS_AS(pose_spreads({}), MismatchedIndices);
  }
}

TEST_CASE("dispersion over duplicate poses is zero") {
  EulerPose p{0.05, -0.03, 0.2, 0.1, -0.05, 0.2};
  auto s = detail::dispersion_from_poses({p, p, p, p}, 1);
  CHECK(s.failures == 1);
  CHECK_FALSE(s.infeasible);
  CHECK(s.median_dt == Catch::Approx(0.0).margin(1e-12));
  CHECK(s.max_dr == Catch::Approx(0.0).margin(1e-9));
  CHECK(s.d_t_mm.size() == 4);

  CHECK(detail::dispersion_from_poses({}, 3).infeasible);
  CHECK_FALSE(detail::dispersion_from_poses({p}, 0).infeasible);
  CHECK(detail::dispersion_from_poses({p}, 0).d_t_mm.empty());
}

TEST_CASE("overlap restriction keeps a centered fraction") {
  auto cs = synthetic_grid(40);  // 1600 constraints

  SECTION("full ratio is the identity") {
    CHECK(restrict_overlap(cs, 1.0).size() == cs.size());
  }
  SECTION("counts shrink monotonically with the ratio") {
    size_t prev = cs.size() + 1;
    for (double r : {0.5, 0.1, 0.01, 0.001}) {
      auto sub = restrict_overlap(cs, r);
      CHECK(sub.size() >= 1);
      CHECK(sub.size() <= prev);
      // approximately the requested fraction (grid discreteness allowed)
      CHECK(double(sub.size()) >= 0.5 * r * double(cs.size()));
      CHECK(double(sub.size()) <= 4.0 * r * double(cs.size()) + 4.0);
      prev = sub.size();
    }
  }
  SECTION("the restricted set is centered") {
    auto sub = restrict_overlap(cs, 0.1);
    for (const auto& c : sub) {
      CHECK(std::abs(c.camera_px.u - 19.5) < 12.0);
      CHECK(std::abs(c.camera_px.v - 19.5) < 12.0);
    }
  }
}

TEST_CASE("cloud consistency of identical clouds is zero") {
  std::vector<Vec3> a{{0, 0, 0}, {0.01, 0, 0}, {0, 0.02, 0.1}};
  auto [mean_d, p95_d] = cloud_consistency(a, a);
  CHECK(mean_d == 0.0);
  CHECK(p95_d == 0.0);

  std::vector<Vec3> b = a;
  for (auto& p : b) p.x() += 0.001;
  auto [m2, p2] = cloud_consistency(a, b);
  CHECK(m2 > 0.0);
  CHECK(m2 <= 0.001 + 1e-12);
}

TEST_CASE("repeatability on clean data has negligible sampling scatter") {
  ExperimentSpec spec = quick_spec();
  DispersionSummary s = run_repeatability(spec);
  CHECK(s.label == "repeatability");
  CHECK(s.failures == 0);
  REQUIRE(s.d_t_mm.size() == 6);
  CHECK(s.median_dt < 0.005);  // < 5 um of pure sampling scatter
  CHECK(s.median_dr < 0.01);

  SECTION("deterministic and worker-count independent") {
    DispersionSummary again = run_repeatability(spec);
    CHECK(again.d_t_mm == s.d_t_mm);
    CHECK(again.d_r_mrad == s.d_r_mrad);

    ExperimentSpec wide = spec;
    wide.workers = 3;
    DispersionSummary parallel = run_repeatability(wide);
    CHECK(parallel.d_t_mm == s.d_t_mm);

    ExperimentSpec other = spec;
    other.master_seed = 12;
    other.noise.sigma_cloud = 1e-5;
    other.noise.cloud_mode = CloudNoiseMode::SmoothField;
    spec.noise = other.noise;
    DispersionSummary na = run_repeatability(spec);
    DispersionSummary nb = run_repeatability(other);
    CHECK(na.d_t_mm != nb.d_t_mm);
  }
}

TEST_CASE("propagation at zero noise reproduces the baseline exactly") {
  ExperimentSpec spec = quick_spec();
  spec.trials = 2;
  spec.sigma_scales = {1.0, 2.0};
  spec.noise.sigma_cloud = 0.0;  // scaling zero stays zero
  auto rows = run_propagation(spec);
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    CHECK(row.failures == 0);
    CHECK(row.sigma_cloud == 0.0);
    CHECK(row.median_dt == 0.0);  // identical data + identical seed
    CHECK(row.median_dr == 0.0);
    CHECK(row.p95_dt == 0.0);
  }
}

TEST_CASE("experiment spec validation") {
  ExperimentSpec spec;
  spec.trials = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.trials = 2;
  spec.sigma_scales.clear();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("prepared frames honor the pixel stride") {
  ExperimentSpec spec = quick_spec();
  PreparedFrame full = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise, spec.mask,
                                     1, 1);
  PreparedFrame strided = prepare_frame(spec.scene, spec.rig, spec.camera_pose, spec.noise,
                                        spec.mask, 4, 1);
  CHECK(full.constraints.size() > 1000);
  CHECK(strided.constraints.size() < full.constraints.size() / 8);
  for (const auto& c : strided.constraints) {
    CHECK(int(c.camera_px.u) % 4 == 0);
    CHECK(int(c.camera_px.v) % 4 == 0);
  }
}
