#include "nbploc/geometry.hpp"

#include <random>

#include "nbploc/rng.hpp"

namespace nbploc {

double wrap_angle(double x) {
  // remainder() lands in [-pi, pi]; fold -pi onto +pi for the half-open
  // convention.
  double w = std::remainder(x, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

double bearing(Point2 from, Point2 to) { return std::atan2(to.y - from.y, to.x - from.x); }

void Scenario::validate() const {
  if (num_paths() < 3) {
    throw InsufficientPathsError("scenario needs at least 3 NLOS paths, got " +
                                 std::to_string(num_paths()));
  }
  for (const Point2& s : incidence_points) {
    if (distance(s, base_station) == 0.0) {
      throw std::invalid_argument("incidence point coincides with the base station");
    }
    if (distance(s, mobile.position) == 0.0) {
      throw std::invalid_argument("incidence point coincides with the mobile");
    }
  }
  if (!std::isfinite(mobile.orientation)) {
    throw std::invalid_argument("mobile orientation must be finite");
  }
}

NoiseSpec NoiseSpec::uniform(int num_paths, double sd, double stx, double srx) {
  NoiseSpec spec;
  spec.sigma_d.assign(num_paths, sd);
  spec.sigma_tx.assign(num_paths, stx);
  spec.sigma_rx.assign(num_paths, srx);
  spec.validate(num_paths);
  return spec;
}

void NoiseSpec::validate(int expected_paths) const {
  if (num_paths() != expected_paths ||
      static_cast<int>(sigma_tx.size()) != expected_paths ||
      static_cast<int>(sigma_rx.size()) != expected_paths) {
    throw std::invalid_argument("noise spec path count mismatch");
  }
  for (int j = 0; j < expected_paths; ++j) {
    if (!(sigma_d[j] > 0.0) || !(sigma_tx[j] > 0.0) || !(sigma_rx[j] > 0.0)) {
      throw std::invalid_argument("noise standard deviations must be strictly positive");
    }
  }
}

void Observations::validate() const {
  if (num_paths() < 3) {
    throw InsufficientPathsError("observations need at least 3 NLOS paths, got " +
                                 std::to_string(num_paths()));
  }
  noise.validate(num_paths());
  for (const PathTriple& t : triplets) {
    if (!(t.d > 0.0) || !std::isfinite(t.theta_tx) || !std::isfinite(t.theta_rx)) {
      throw std::invalid_argument("invalid observation triplet");
    }
  }
}

PathTriple true_path_parameters(const Scenario& scenario, int j) {
  if (j < 0 || j >= scenario.num_paths()) {
    throw std::out_of_range("path index out of range");
  }
  const Point2 q = scenario.base_station;
  const Point2 p = scenario.mobile.position;
  const Point2 s = scenario.incidence_points[static_cast<std::size_t>(j)];
  if (distance(s, q) == 0.0 || distance(s, p) == 0.0) {
    throw std::invalid_argument("degenerate geometry: incidence point coincides with endpoint");
  }
  PathTriple t;
  t.d = distance(q, s) + distance(s, p);
  t.theta_tx = bearing(q, s);
  t.theta_rx = wrap_angle(bearing(p, s) - scenario.mobile.orientation);
  return t;
}

Observations sample_observations(const Scenario& scenario, const NoiseSpec& noise,
                                 std::uint64_t seed) {
  scenario.validate();
  noise.validate(scenario.num_paths());

  RngEngine rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Observations obs;
  obs.noise = noise;
  obs.triplets.reserve(static_cast<std::size_t>(scenario.num_paths()));
  for (int j = 0; j < scenario.num_paths(); ++j) {
    PathTriple t = true_path_parameters(scenario, j);
    t.d += noise.sigma_d[j] * gauss(rng);
    t.theta_tx = wrap_angle(t.theta_tx + noise.sigma_tx[j] * gauss(rng));
    t.theta_rx = wrap_angle(t.theta_rx + noise.sigma_rx[j] * gauss(rng));
    obs.triplets.push_back(t);
  }
  return obs;
}

double log_factor_distance(double d_hat, Point2 p, Point2 q, Point2 s, double sigma) {
  const double residual = d_hat - distance(q, s) - distance(s, p);
  return -(residual * residual) / (2.0 * sigma * sigma);
}

double log_factor_aod(double theta_hat, Point2 q, Point2 s, double sigma) {
  const double residual = wrap_angle(theta_hat - bearing(q, s));
  return -(residual * residual) / (2.0 * sigma * sigma);
}

double log_factor_aoa(double theta_hat, Point2 p, Point2 s, double alpha, double sigma) {
  const double residual = wrap_angle(theta_hat - bearing(p, s) + alpha);
  return -(residual * residual) / (2.0 * sigma * sigma);
}

}  // namespace nbploc
