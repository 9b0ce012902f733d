#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nbploc/geometry.hpp"
#include "nbploc/rng.hpp"

using namespace nbploc;

namespace {

Scenario paper_scenario() {
  Scenario sc;
  sc.base_station = {0.0, 0.0};
  sc.mobile = {{70.0, 70.0}, kPi / 4.0};
  sc.incidence_points = {{20.0, 10.0}, {80.0, -10.0}, {40.0, 0.0}};
  return sc;
}

}  // namespace

TEST_CASE("wrap_angle maps onto (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0));
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(7.0 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-5.5 * kPi) == doctest::Approx(0.5 * kPi));

  // Idempotence and congruence mod 2*pi on a sweep of values.
  for (int i = -100; i <= 100; ++i) {
    const double x = 0.173 * static_cast<double>(i);
    const double w = wrap_angle(x);
    CHECK(w > -kPi);
    CHECK(w <= kPi);
    CHECK(wrap_angle(w) == doctest::Approx(w));
    CHECK(std::remainder(w - x, 2.0 * kPi) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("true path parameters match direct evaluation on the reference scenario") {
  const Scenario sc = paper_scenario();

  // Independent oracle: direct evaluation of the closed-form expressions.
  const double d0 = std::sqrt(500.0) + std::sqrt(6100.0);
  const PathTriple t0 = true_path_parameters(sc, 0);
  CHECK(t0.d == doctest::Approx(d0).epsilon(1e-14));
  CHECK(t0.d == doctest::Approx(100.463176534064445).epsilon(1e-12));
  CHECK(t0.theta_tx == doctest::Approx(0.463647609000806).epsilon(1e-12));
  CHECK(t0.theta_rx == doctest::Approx(-3.050932766389048).epsilon(1e-12));

  const PathTriple t1 = true_path_parameters(sc, 1);
  CHECK(t1.d == doctest::Approx(161.24515496597098).epsilon(1e-12));
  CHECK(t1.theta_tx == doctest::Approx(-0.12435499454676144).epsilon(1e-12));

  const PathTriple t2 = true_path_parameters(sc, 2);
  CHECK(t2.d == doctest::Approx(116.15773105863909).epsilon(1e-12));
  CHECK(t2.theta_tx == 0.0);
}

TEST_CASE("degenerate geometry is rejected") {
  Scenario sc = paper_scenario();
  sc.incidence_points[0] = sc.base_station;
  CHECK_THROWS_AS(true_path_parameters(sc, 0), std::invalid_argument);
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);

  Scenario two_paths = paper_scenario();
  two_paths.incidence_points.pop_back();
  CHECK_THROWS_AS(two_paths.validate(), InsufficientPathsError);
  CHECK_THROWS_AS(true_path_parameters(paper_scenario(), 3), std::out_of_range);
}

TEST_CASE("sampled observations are deterministic and unbiased") {
  const Scenario sc = paper_scenario();
  const NoiseSpec noise = NoiseSpec::uniform(3, 0.2, 0.02, 0.02);

  const Observations a = sample_observations(sc, noise, 42);
  const Observations b = sample_observations(sc, noise, 42);
  REQUIRE(a.num_paths() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(a.triplets[j].d == b.triplets[j].d);
    CHECK(a.triplets[j].theta_tx == b.triplets[j].theta_tx);
    CHECK(a.triplets[j].theta_rx == b.triplets[j].theta_rx);
  }

  // Near-zero noise reproduces the true parameters.
  const NoiseSpec tiny = NoiseSpec::uniform(3, 1e-12, 1e-12, 1e-12);
  const Observations c = sample_observations(sc, tiny, 7);
  for (int j = 0; j < 3; ++j) {
    const PathTriple t = true_path_parameters(sc, j);
    CHECK(c.triplets[j].d == doctest::Approx(t.d).epsilon(1e-10));
    CHECK(c.triplets[j].theta_tx == doctest::Approx(t.theta_tx).epsilon(1e-10));
    CHECK(c.triplets[j].theta_rx == doctest::Approx(t.theta_rx).epsilon(1e-10));
  }

  // Law of large numbers on d_0 over many draws.
  const int n = 100000;
  const double sigma_d = 0.2;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const Observations o = sample_observations(sc, noise, 1000 + static_cast<std::uint64_t>(i));
    sum += o.triplets[0].d;
    sum_sq += o.triplets[0].d * o.triplets[0].d;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sum_sq / n - mean * mean);
  const double true_d = true_path_parameters(sc, 0).d;
  CHECK(std::abs(mean - true_d) < 3.0 * sigma_d / std::sqrt(static_cast<double>(n)));
  CHECK(stddev == doctest::Approx(sigma_d).epsilon(0.02));

  NoiseSpec bad = noise;
  bad.sigma_d[1] = 0.0;
  CHECK_THROWS_AS(sample_observations(sc, bad, 1), std::invalid_argument);
}

TEST_CASE("log factors vanish at the true state and scale as Gaussian exponents") {
  const Scenario sc = paper_scenario();
  const Point2 q = sc.base_station;
  const Point2 p = sc.mobile.position;

  for (int j = 0; j < 3; ++j) {
    const PathTriple t = true_path_parameters(sc, j);
    const Point2 s = sc.incidence_points[j];
    CHECK(log_factor_distance(t.d, p, q, s, 0.2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_factor_aod(t.theta_tx, q, s, 0.01) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_factor_aoa(t.theta_rx, p, s, sc.mobile.orientation, 0.01) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  // Residual of one sigma -> -1/2; two sigma -> -2.
  const Point2 s0 = sc.incidence_points[0];
  const PathTriple t0 = true_path_parameters(sc, 0);
  CHECK(log_factor_distance(t0.d + 0.2, p, q, s0, 0.2) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(log_factor_aod(t0.theta_tx + 0.02, q, s0, 0.01) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(log_factor_aoa(t0.theta_rx + 0.01, p, s0, sc.mobile.orientation, 0.01) ==
        doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("angle factors wrap the residual across the +-pi seam") {
  // True bearing -3.1, measured +3.1: the wrapped residual is 2*pi - 6.2,
  // not 6.2.
  const Point2 q{0.0, 0.0};
  const double true_bearing = -3.1;
  const Point2 s{10.0 * std::cos(true_bearing), 10.0 * std::sin(true_bearing)};
  const double sigma = 0.1;
  const double residual = 2.0 * kPi - 6.2;
  CHECK(log_factor_aod(3.1, q, s, sigma) ==
        doctest::Approx(-(residual * residual) / (2.0 * sigma * sigma)).epsilon(1e-9));

  // Shifting the measurement by 2*pi changes nothing.
  const double base = log_factor_aod(0.7, q, s, sigma);
  CHECK(log_factor_aod(0.7 + 2.0 * kPi, q, s, sigma) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("joint translation leaves distances and wrapped AOA invariant") {
  const Scenario sc = paper_scenario();
  Scenario shifted = sc;
  const Point2 t{-137.25, 41.5};
  shifted.base_station = sc.base_station + t;
  shifted.mobile.position = sc.mobile.position + t;
  for (auto& s : shifted.incidence_points) s = s + t;

  for (int j = 0; j < 3; ++j) {
    const PathTriple a = true_path_parameters(sc, j);
    const PathTriple b = true_path_parameters(shifted, j);
    CHECK(b.d == doctest::Approx(a.d).epsilon(1e-12));
    CHECK(b.theta_tx == doctest::Approx(a.theta_tx).epsilon(1e-12));
    CHECK(b.theta_rx == doctest::Approx(a.theta_rx).epsilon(1e-12));
  }
}

TEST_CASE("TOA conversion round-trips through the speed of light") {
  CHECK(distance_from_toa(1e-6) == doctest::Approx(299.792458).epsilon(1e-12));
  CHECK(toa_from_distance(distance_from_toa(3.7e-7)) == doctest::Approx(3.7e-7).epsilon(1e-15));
}
