#include <catch2/catch_amalgamated.hpp>

#include "projref/stats.hpp"

using namespace projref;

TEST_CASE("order statistic helpers") {
  CHECK(median_of({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median_of({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median_of({}), std::invalid_argument);

  std::vector<double> v{1, 2, 3, 4, 5};
  CHECK(percentile_of(v, 0.0) == 1.0);
  CHECK(percentile_of(v, 1.0) == 5.0);
  CHECK(percentile_of(v, 0.5) == 3.0);
  CHECK(percentile_of(v, 0.25) == 2.0);
  CHECK(percentile_of({1.0, 2.0}, 0.75) == Catch::Approx(1.75));
  CHECK_THROWS_AS(percentile_of(v, 1.5), std::invalid_argument);
  CHECK(iqr_of(v) == Catch::Approx(2.0));

  CHECK(mean_of({1.0, 2.0, 6.0}) == Catch::Approx(3.0));
  // population standard deviation
  CHECK(stddev_of({1.0, 3.0}) == Catch::Approx(1.0));
  CHECK(stddev_of({2.0, 2.0, 2.0}) == 0.0);
}

TEST_CASE("normal survival function") {
  CHECK(normal_sf(0.0) == Catch::Approx(0.5));
  CHECK(normal_sf(1.959963985) == Catch::Approx(0.025).epsilon(1e-6));
  CHECK(normal_sf(-1.0) + normal_sf(1.0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("wilcoxon exact tail for a clean sweep of 20 positives") {
  std::vector<double> d;
  for (int i = 1; i <= 20; ++i) d.push_back(double(i));
  auto res = wilcoxon_signed_rank(d);
  CHECK(res.exact);
  CHECK(res.n == 20);
  CHECK(res.w_plus == Catch::Approx(210.0));
  CHECK(res.p_greater == Catch::Approx(std::ldexp(1.0, -20)).epsilon(1e-9));  // 2^-20
  CHECK(res.p_two_sided == Catch::Approx(2.0 * std::ldexp(1.0, -20)).epsilon(1e-9));

  // the same data under the normal-approximation convention
  auto approx = wilcoxon_signed_rank(d, WilcoxonMethod::NormalApprox);
  CHECK_FALSE(approx.exact);
  CHECK(approx.p_greater > 4.5e-5);
  CHECK(approx.p_greater < 5.1e-5);
}

TEST_CASE("wilcoxon exact values for n = 5 match hand enumeration") {
  SECTION("all positive") {
    auto res = wilcoxon_signed_rank({1.0, 2.0, 3.0, 4.0, 5.0});
    CHECK(res.w_plus == 15.0);
    CHECK(res.p_greater == Catch::Approx(1.0 / 32.0).margin(1e-12));
    CHECK(res.p_less == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("smallest flipped") {
    // W+ = 14; subsets of {1..5} with rank-sum >= 14: {all}, {2,3,4,5}
    auto res = wilcoxon_signed_rank({-1.0, 2.0, 3.0, 4.0, 5.0});
    CHECK(res.w_plus == 14.0);
    CHECK(res.p_greater == Catch::Approx(2.0 / 32.0).margin(1e-12));
  }
  SECTION("second smallest flipped") {
    // W+ = 13; qualifying subsets: sum 15, 14, 13 -> 3 of 32
    auto res = wilcoxon_signed_rank({1.0, -2.0, 3.0, 4.0, 5.0});
    CHECK(res.w_plus == 13.0);
    CHECK(res.p_greater == Catch::Approx(3.0 / 32.0).margin(1e-12));
  }
}

TEST_CASE("wilcoxon handles ties through average ranks") {
  // |d| = {1, 1, 2, 2, 3}: ranks 1.5, 1.5, 3.5, 3.5, 5
  auto res = wilcoxon_signed_rank({1.0, -1.0, 2.0, 2.0, 3.0});
  CHECK(res.w_plus == Catch::Approx(1.5 + 3.5 + 3.5 + 5.0));
  CHECK(res.exact);
  CHECK((res.p_greater > 0.0 && res.p_greater < 1.0));
}

TEST_CASE("wilcoxon input handling") {
  CHECK_THROWS_AS(wilcoxon_signed_rank({0.0, 0.0, 0.0}), AllZeroDifferences);
  CHECK_THROWS_AS(wilcoxon_signed_rank({1.0, 2.0, 3.0, 4.0}), std::invalid_argument);
  // zeros are dropped before the size check
  CHECK_THROWS_AS(wilcoxon_signed_rank({0.0, 1.0, 2.0, 3.0, 4.0}), std::invalid_argument);
  auto res = wilcoxon_signed_rank({0.0, 1.0, 2.0, 3.0, 4.0, 5.0});
  CHECK(res.n == 5);
}

TEST_CASE("flipping one sign never decreases the upper-tail p-value") {
  std::vector<double> d;
  for (int i = 1; i <= 12; ++i) d.push_back(double(i));
  double prev = wilcoxon_signed_rank(d).p_greater;
  for (int flip = 0; flip < 12; ++flip) {
    d[flip] = -d[flip];
    double p = wilcoxon_signed_rank(d).p_greater;
    CHECK(p >= prev);
    prev = p;
  }
}

TEST_CASE("wilcoxon p-values are calibrated under the null") {
  Rng rng(555);
  std::vector<double> pvals;
  for (int sim = 0; sim < 400; ++sim) {
    std::vector<double> d(16);
    for (auto& x : d) x = rng.gaussian();  // symmetric about zero
    pvals.push_back(wilcoxon_signed_rank(d).p_greater);
  }
  // p_greater is (super-)uniform under the null up to discreteness; the KS
  // distance from Uniform(0,1) must stay below a generous alpha = 0.01 bound
  // plus the lattice spacing of the exact distribution
  double ks = ks_uniform_statistic(pvals);
  CHECK(ks < 1.63 / std::sqrt(400.0) + 0.02);
  double m = mean_of(pvals);
  CHECK((m > 0.44 && m < 0.56));
}

TEST_CASE("bootstrap interval basics") {
  SECTION("constant sample collapses to a point") {
    auto [lo, hi] = bootstrap_ci(std::vector<double>(20, 3.5));
    CHECK(lo == 3.5);
    CHECK(hi == 3.5);
  }
  SECTION("interval brackets the sample median") {
    std::vector<double> v{0.3, -1.2, 0.8, 2.1, -0.4, 0.9, 1.4, -0.7, 0.2, 1.1};
    double med = median_of(v);
    auto [lo, hi] = bootstrap_ci(v, 0.95, 4000, 1);
    CHECK(lo <= med);
    CHECK(hi >= med);
    CHECK(lo < hi);
  }
  SECTION("deterministic for a fixed seed") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7};
    auto a = bootstrap_ci(v, 0.9, 500, 9);
    auto b = bootstrap_ci(v, 0.9, 500, 9);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
  SECTION("argument validation") {
    CHECK_THROWS_AS(bootstrap_ci({1.0}), std::invalid_argument);
    CHECK_THROWS_AS(bootstrap_ci({1.0, 2.0}, 1.5), std::invalid_argument);
  }
}

TEST_CASE("bootstrap coverage is close to nominal for a gaussian median") {
  Rng rng(808);
  int covered = 0;
  int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> sample(30);
    for (auto& x : sample) x = rng.gaussian();  // true median 0
    auto [lo, hi] = bootstrap_ci(sample, 0.95, 2000, uint64_t(r));
    if (lo <= 0.0 && 0.0 <= hi) ++covered;
  }
  double coverage = double(covered) / reps;
  CHECK(coverage > 0.92);
  CHECK(coverage < 0.99);
}

TEST_CASE("ks statistic detects non-uniform samples") {
  std::vector<double> uniform;
  for (int i = 0; i < 1000; ++i) uniform.push_back((i + 0.5) / 1000.0);
  CHECK(ks_uniform_statistic(uniform) < 0.001);
  std::vector<double> clumped(1000, 0.5);
  CHECK(ks_uniform_statistic(clumped) > 0.45);
}
