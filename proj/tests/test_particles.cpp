#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "nbploc/particles.hpp"
#include "nbploc/rng.hpp"

using namespace nbploc;

namespace {

ParticleSet random_cloud(std::size_t n, std::uint64_t seed) {
  RngEngine rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uw(0.1, 1.0);
  ParticleSet ps(2);
  ps.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ps.append(Point2{3.0 * gauss(rng), 2.0 * gauss(rng) + 1.0}, uw(rng));
  }
  normalize_in_place(ps);
  return ps;
}

}  // namespace

TEST_CASE("normalize scales positive weights and rejects degenerate input") {
  CHECK(normalize({2.0, 2.0}) == std::vector<double>{0.5, 0.5});
  CHECK(normalize({0.0, 3.0}) == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(normalize({0.0, 0.0}), DegenerateWeightsError);
  CHECK_THROWS_AS(normalize({1.0, -0.5}), DegenerateWeightsError);
  CHECK_THROWS_AS(normalize({1.0, std::nan("")}), DegenerateWeightsError);
  CHECK_THROWS_AS(normalize({}), DegenerateWeightsError);

  // Sum within 1e-12 for a large random vector, and idempotence.
  RngEngine rng = make_rng(99);
  std::vector<double> raw(10000);
  for (double& w : raw) w = uniform01(rng) * 1e-3;
  const auto n1 = normalize(raw);
  double sum = 0.0;
  for (double w : n1) sum += w;
  CHECK(std::abs(sum - 1.0) < 1e-12);
  const auto n2 = normalize(n1);
  for (std::size_t k = 0; k < n1.size(); ++k) CHECK(n2[k] == doctest::Approx(n1[k]).epsilon(1e-13));
}

TEST_CASE("log-domain normalization matches the linear path and spots degeneracy") {
  const std::vector<double> logw{-1000.0, -1001.0, -1000.5};
  const auto w = normalize_log_weights(logw);
  const double z = 1.0 + std::exp(-1.0) + std::exp(-0.5);
  CHECK(w[0] == doctest::Approx(1.0 / z).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));

  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(normalize_log_weights({-inf, -inf}), DegenerateWeightsError);
  const auto mixed = normalize_log_weights({-inf, 0.0});
  CHECK(mixed[0] == 0.0);
  CHECK(mixed[1] == 1.0);
}

TEST_CASE("systematic resampling preserves support, mass, and the mean") {
  ParticleSet ps(2);
  ps.append(Point2{1.0, 1.0}, 1.0);
  ps.append(Point2{5.0, -2.0}, 0.0);
  ps.append(Point2{9.0, 3.0}, 0.0);
  const ParticleSet all_first = resample(ps, 3);
  for (std::size_t k = 0; k < all_first.size(); ++k) {
    CHECK(all_first.point(k).x == 1.0);
    CHECK(all_first.point(k).y == 1.0);
    CHECK(all_first.weights[k] == doctest::Approx(1.0 / 3.0));
  }

  const ParticleSet cloud = random_cloud(10000, 5);
  const Point2 mean_before = mmse_point(cloud);
  double var_x = 0.0, var_y = 0.0;
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    const Point2 d = cloud.point(k) - mean_before;
    var_x += cloud.weights[k] * d.x * d.x;
    var_y += cloud.weights[k] * d.y * d.y;
  }
  const double bound_x = 4.0 * std::sqrt(var_x / static_cast<double>(cloud.size()));
  const double bound_y = 4.0 * std::sqrt(var_y / static_cast<double>(cloud.size()));

  // Support preservation checked via exact sample membership.
  std::set<std::pair<double, double>> support;
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    support.emplace(cloud.point(k).x, cloud.point(k).y);
  }

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ParticleSet rs = resample(cloud, seed);
    REQUIRE(rs.size() == cloud.size());
    const Point2 mean_after = mmse_point(rs);
    CHECK(std::abs(mean_after.x - mean_before.x) < bound_x);
    CHECK(std::abs(mean_after.y - mean_before.y) < bound_y);
    if (seed < 3) {
      for (std::size_t k = 0; k < rs.size(); ++k) {
        CHECK(support.count({rs.point(k).x, rs.point(k).y}) == 1);
      }
    }
  }
}

TEST_CASE("KDE matches the closed-form Gaussian mixture") {
  ParticleSet one(2);
  one.append(Point2{3.0, -1.0}, 1.0);
  const double h = 0.7;
  const Kde kde = make_kde(one, h);
  const double peak = 1.0 / (2.0 * kPi * h * h);
  CHECK(kde_density(kde, Point2{3.0, -1.0}) == doctest::Approx(peak).epsilon(1e-12));
  CHECK(kde_density(kde, Point2{3.0 + h, -1.0}) ==
        doctest::Approx(peak * std::exp(-0.5)).epsilon(1e-12));

  // Linearity: the mixture density is the average of the component kernels.
  ParticleSet two(2);
  two.append(Point2{0.0, 0.0}, 0.5);
  two.append(Point2{2.0, 0.0}, 0.5);
  const Kde kde2 = make_kde(two, h);
  const Kde kde_a = make_kde(ParticleSet::dirac(Point2{0.0, 0.0}), h);
  const Kde kde_b = make_kde(ParticleSet::dirac(Point2{2.0, 0.0}), h);
  const Point2 x{0.7, 0.3};
  CHECK(kde_density(kde2, x) ==
        doctest::Approx(0.5 * (kde_density(kde_a, x) + kde_density(kde_b, x))).epsilon(1e-12));

  // Orientation kernels wrap across the seam.
  ParticleSet ang(1);
  ang.append(kPi - 0.01, 1.0);
  const Kde kde_ang = make_kde(ang, 0.1);
  const double peak1 = 1.0 / (std::sqrt(2.0 * kPi) * 0.1);
  CHECK(kde_density_angle(kde_ang, kPi - 0.01) == doctest::Approx(peak1).epsilon(1e-12));
  const double wrapped_dist = 0.02;
  CHECK(kde_density_angle(kde_ang, -kPi + 0.01) ==
        doctest::Approx(peak1 * std::exp(-0.5 * wrapped_dist * wrapped_dist / 0.01))
            .epsilon(1e-12));

  // Duplicate atoms merge without changing the density.
  ParticleSet dup(2);
  dup.append(Point2{1.0, 1.0}, 0.25);
  dup.append(Point2{1.0, 1.0}, 0.25);
  dup.append(Point2{4.0, 4.0}, 0.5);
  const Kde kde_dup = make_kde(dup, h);
  CHECK(kde_dup.particles.size() == 2);
  ParticleSet merged(2);
  merged.append(Point2{1.0, 1.0}, 0.5);
  merged.append(Point2{4.0, 4.0}, 0.5);
  const Kde kde_merged = make_kde(merged, h);
  CHECK(kde_density(kde_dup, Point2{2.0, 2.5}) ==
        doctest::Approx(kde_density(kde_merged, Point2{2.0, 2.5})).epsilon(1e-14));
}

TEST_CASE("KDE integrates to one (Monte Carlo over a 6-sigma bounding box)") {
  const ParticleSet cloud = resample_to(random_cloud(400, 11), 50, 1);
  const double h = 0.8;
  const Kde kde = make_kde(cloud, h);

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (std::size_t k = 0; k < kde.particles.size(); ++k) {
    const Point2 s = kde.particles.point(k);
    min_x = std::min(min_x, s.x);
    max_x = std::max(max_x, s.x);
    min_y = std::min(min_y, s.y);
    max_y = std::max(max_y, s.y);
  }
  min_x -= 6.0 * h;
  max_x += 6.0 * h;
  min_y -= 6.0 * h;
  max_y += 6.0 * h;

  RngEngine rng = make_rng(123);
  const std::size_t n = 1000000;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 x{min_x + (max_x - min_x) * uniform01(rng),
                   min_y + (max_y - min_y) * uniform01(rng)};
    acc += kde_density(kde, x);
  }
  const double integral = acc / static_cast<double>(n) * (max_x - min_x) * (max_y - min_y);
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("MMSE estimates: centroid, delta case, circular mean") {
  ParticleSet ps(2);
  ps.append(Point2{0.0, 0.0}, 0.5);
  ps.append(Point2{2.0, 0.0}, 0.5);
  const Point2 c = mmse_point(ps);
  CHECK(c.x == doctest::Approx(1.0));
  CHECK(c.y == doctest::Approx(0.0));

  ParticleSet single(2);
  single.append(Point2{-4.2, 13.0}, 1.0);
  const Point2 s = mmse_point(single);
  CHECK(s.x == -4.2);
  CHECK(s.y == 13.0);

  ParticleSet ang(1);
  ang.append(3.1, 0.5);
  ang.append(-3.1, 0.5);
  CHECK(mmse_angle(ang) == doctest::Approx(kPi).epsilon(1e-12));

  ParticleSet opposite(1);
  opposite.append(0.0, 0.5);
  opposite.append(kPi, 0.5);
  CHECK_THROWS_AS(mmse_angle(opposite), DegenerateOrientationError);
}

TEST_CASE("proposal sampling is uniform over disks and intervals") {
  const DiskRegion disk{{12.0, -7.0}, 30.0};
  const std::size_t n = 100000;
  const ParticleSet ds = sample_proposal(disk, n, 77);
  REQUIRE(ds.size() == n);
  double mx = 0.0, my = 0.0;
  std::size_t inside_half = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 x = ds.point(k);
    CHECK(distance(x, disk.center) <= disk.radius);
    mx += x.x;
    my += x.y;
    if (distance(x, disk.center) <= disk.radius / std::sqrt(2.0)) ++inside_half;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  const double mean_bound = 4.0 * disk.radius / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mx - disk.center.x) < mean_bound);
  CHECK(std::abs(my - disk.center.y) < mean_bound);
  // Half the area lies within r/sqrt(2).
  CHECK(static_cast<double>(inside_half) / static_cast<double>(n) ==
        doctest::Approx(0.5).epsilon(0.02));

  const IntervalRegion interval{-kPi, kPi};
  const ParticleSet is = sample_proposal(interval, n, 78);
  double mean = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = is.scalar(k);
    CHECK(t > -kPi);
    CHECK(t <= kPi);
    mean += t;
    sq += t * t;
  }
  mean /= static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  CHECK(var == doctest::Approx(kPi * kPi / 3.0).epsilon(0.02));
}

TEST_CASE("effective sample size") {
  ParticleSet uniform(1);
  for (int k = 0; k < 100; ++k) uniform.append(0.1 * k, 0.01);
  CHECK(effective_sample_size(uniform) == doctest::Approx(100.0).epsilon(1e-12));

  ParticleSet degenerate(1);
  degenerate.append(0.0, 1.0);
  degenerate.append(1.0, 0.0);
  CHECK(effective_sample_size(degenerate) == doctest::Approx(1.0).epsilon(1e-12));

  ParticleSet mixed(1);
  mixed.append(0.0, 0.5);
  mixed.append(1.0, 0.25);
  mixed.append(2.0, 0.25);
  CHECK(effective_sample_size(mixed) == doctest::Approx(8.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("importance sampling through a uniform proposal recovers a known Gaussian") {
  const Point2 mu{1.0, 2.0};
  const double sx = 0.5, sy = 0.8;
  const DiskRegion disk{mu, 5.0};
  const std::size_t n = 20000;
  ParticleSet ps = sample_proposal(disk, n, 2024);

  // w ~ target / proposal; the proposal density is constant over the disk.
  std::vector<double> raw(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 x = ps.point(k);
    const double zx = (x.x - mu.x) / sx;
    const double zy = (x.y - mu.y) / sy;
    raw[k] = std::exp(-0.5 * (zx * zx + zy * zy));
  }
  ps.weights = normalize(raw);

  const Point2 mean = mmse_point(ps);
  double var_x = 0.0, var_y = 0.0, se_mx = 0.0, se_my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 d = ps.point(k) - mean;
    var_x += ps.weights[k] * d.x * d.x;
    var_y += ps.weights[k] * d.y * d.y;
    se_mx += ps.weights[k] * ps.weights[k] * d.x * d.x;
    se_my += ps.weights[k] * ps.weights[k] * d.y * d.y;
  }
  se_mx = std::sqrt(se_mx);
  se_my = std::sqrt(se_my);
  CHECK(std::abs(mean.x - mu.x) < 3.0 * se_mx);
  CHECK(std::abs(mean.y - mu.y) < 3.0 * se_my);

  // Variance recovery within 3 standard errors of the variance estimator.
  const double ess = effective_sample_size(ps);
  const double se_vx = sx * sx * std::sqrt(2.0 / ess);
  const double se_vy = sy * sy * std::sqrt(2.0 / ess);
  CHECK(std::abs(var_x - sx * sx) < 3.0 * se_vx);
  CHECK(std::abs(var_y - sy * sy) < 3.0 * se_vy);
}

TEST_CASE("resampled MMSE stays within sampling error of the original") {
  const ParticleSet cloud = random_cloud(4000, 21);
  const Point2 before = mmse_point(cloud);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Point2 after = mmse_point(resample(cloud, seed));
    worst = std::max(worst, distance(after, before));
  }
  // Weighted std is ~3.6 in x; allow 5 std/sqrt(N).
  CHECK(worst < 5.0 * 3.6 / std::sqrt(4000.0));
}

TEST_CASE("particle CSV export") {
  ParticleSet ps(2);
  ps.append(Point2{1.5, -2.0}, 0.25);
  ps.append(Point2{0.0, 4.0}, 0.75);
  std::ostringstream out;
  write_particles_csv(ps, out);
  CHECK(out.str() == "x,y,weight\n1.5,-2,0.25\n0,4,0.75\n");

  ParticleSet ang(1);
  ang.append(0.5, 1.0);
  std::ostringstream out1;
  write_particles_csv(ang, out1);
  CHECK(out1.str() == "theta,weight\n0.5,1\n");
}
