#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nbploc/errors.hpp"

namespace nbploc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLightMps = 299792458.0;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

// Wrap to the half-open interval (-pi, pi].
double wrap_angle(double x);

// Bearing of `to` as seen from `from`, in (-pi, pi].
double bearing(Point2 from, Point2 to);

struct Pose {
  Point2 position;
  double orientation = 0.0;  // radians, wrapped to (-pi, pi]
};

// Ground-truth geometry: base station q, mobile (p, alpha), and one point of
// incidence s_j per NLOS path.
struct Scenario {
  Point2 base_station;
  Pose mobile;
  std::vector<Point2> incidence_points;

  int num_paths() const { return static_cast<int>(incidence_points.size()); }
  void validate() const;  // J >= 3, incidence points distinct from endpoints
};

// Known measurement noise, one standard deviation triplet per path.
struct NoiseSpec {
  std::vector<double> sigma_d;   // meters
  std::vector<double> sigma_tx;  // radians
  std::vector<double> sigma_rx;  // radians

  static NoiseSpec uniform(int num_paths, double sd, double stx, double srx);
  int num_paths() const { return static_cast<int>(sigma_d.size()); }
  void validate(int expected_paths) const;
};

// One path's (distance, AOD, AOA) measurement.
struct PathTriple {
  double d = 0.0;         // meters
  double theta_tx = 0.0;  // radians
  double theta_rx = 0.0;  // radians
};

struct Observations {
  std::vector<PathTriple> triplets;
  NoiseSpec noise;

  int num_paths() const { return static_cast<int>(triplets.size()); }
  void validate() const;
};

// Full unknown state: mobile pose plus all points of incidence.
struct StateVector {
  Pose mobile;
  std::vector<Point2> incidence_points;
};

// Noiseless (distance, AOD, AOA) for path j of a scenario.
PathTriple true_path_parameters(const Scenario& scenario, int j);

// True parameters plus independent zero-mean Gaussian noise per component;
// angles re-wrapped after the noise is added. Deterministic under `seed`.
Observations sample_observations(const Scenario& scenario, const NoiseSpec& noise,
                                 std::uint64_t seed);

// Unnormalized Gaussian log-likelihoods of the three per-path factors.
// Angle residuals are wrapped to (-pi, pi] before squaring.
double log_factor_distance(double d_hat, Point2 p, Point2 q, Point2 s, double sigma);
double log_factor_aod(double theta_hat, Point2 q, Point2 s, double sigma);
double log_factor_aoa(double theta_hat, Point2 p, Point2 s, double alpha, double sigma);

// TOA <-> distance conversion for synchronized links.
inline double distance_from_toa(double tau_s) { return kSpeedOfLightMps * tau_s; }
inline double toa_from_distance(double d_m) { return d_m / kSpeedOfLightMps; }

}  // namespace nbploc
