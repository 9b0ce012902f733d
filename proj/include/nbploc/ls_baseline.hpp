#pragma once

#include <vector>

#include "nbploc/geometry.hpp"

namespace nbploc {

// Trial orientations covering (-pi, pi] with fixed spacing; one linear LS
// problem is solved per value.
struct TrialGrid {
  double delta_alpha = 0.01;
  std::vector<double> values;

  static TrialGrid with_spacing(double delta_alpha);
};

struct LsSolution {
  Point2 p_hat;
  std::vector<double> r_hat;  // |q - s_j| per path, meters
  double alpha_trial = 0.0;
  double residual_norm = 0.0;
  bool valid = false;  // all r_hat[j] within [0, d_hat_j]
};

// For a fixed trial orientation the geometry is linear in (p, r_0..r_{J-1}):
//   p - r_j * (u(theta_TX_j) + u(theta_RX_j + alpha)) = q - d_j * u(theta_RX_j + alpha)
// with u(phi) = (cos phi, sin phi). Solves the 2J x (J+2) system in the
// least-squares sense. Throws SingularGeometryError on rank deficiency.
LsSolution solve_trial(const Observations& obs, Point2 q_star, double alpha);

// Evaluates every trial of the grid and keeps the lowest-residual valid
// solution (any solution if none is valid; smallest alpha wins ties).
// Scatterers are reconstructed on the AOD rays: s_j = q + r_j * u(theta_TX_j).
// Throws EstimationFailedError when every trial is singular.
StateVector grid_search(const Observations& obs, Point2 q_star, const TrialGrid& grid);

}  // namespace nbploc
