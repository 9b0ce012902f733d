#include "nbploc/ls_baseline.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace nbploc {

TrialGrid TrialGrid::with_spacing(double delta_alpha) {
  if (!(delta_alpha > 0.0) || !(delta_alpha < 2.0 * kPi)) {
    throw std::invalid_argument("trial spacing must lie in (0, 2*pi)");
  }
  TrialGrid grid;
  grid.delta_alpha = delta_alpha;
  const int count = static_cast<int>(std::ceil(2.0 * kPi / delta_alpha));
  grid.values.reserve(static_cast<std::size_t>(count));
  // Cell-centered values; the last cell may reach past +pi when delta does
  // not divide 2*pi, which only duplicates a sliver of the circle.
  for (int i = 0; i < count; ++i) {
    grid.values.push_back(-kPi + (static_cast<double>(i) + 0.5) * delta_alpha);
  }
  return grid;
}

LsSolution solve_trial(const Observations& obs, Point2 q_star, double alpha) {
  obs.validate();
  const int J = obs.num_paths();
  const int rows = 2 * J;
  const int cols = J + 2;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::VectorXd b(rows);
  for (int j = 0; j < J; ++j) {
    const PathTriple& t = obs.triplets[static_cast<std::size_t>(j)];
    const double tx = t.theta_tx;
    const double rx = t.theta_rx + alpha;  // global bearing from the mobile
    const Eigen::Vector2d u_tx(std::cos(tx), std::sin(tx));
    const Eigen::Vector2d u_rx(std::cos(rx), std::sin(rx));
    A(2 * j, 0) = 1.0;
    A(2 * j + 1, 1) = 1.0;
    A.block<2, 1>(2 * j, 2 + j) = -(u_tx + u_rx);
    b.segment<2>(2 * j) = Eigen::Vector2d(q_star.x, q_star.y) - t.d * u_rx;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < cols) {
    throw SingularGeometryError("rank-deficient trial system (collinear geometry)");
  }
  const Eigen::VectorXd x = qr.solve(b);

  LsSolution sol;
  sol.p_hat = {x(0), x(1)};
  sol.alpha_trial = alpha;
  sol.residual_norm = (A * x - b).norm();
  sol.r_hat.reserve(static_cast<std::size_t>(J));
  sol.valid = true;
  for (int j = 0; j < J; ++j) {
    const double r = x(2 + j);
    sol.r_hat.push_back(r);
    if (r < 0.0 || r > obs.triplets[static_cast<std::size_t>(j)].d) sol.valid = false;
  }
  return sol;
}

StateVector grid_search(const Observations& obs, Point2 q_star, const TrialGrid& grid) {
  if (grid.values.empty()) throw std::invalid_argument("empty trial grid");

  bool have_any = false;
  bool best_is_valid = false;
  LsSolution best;
  for (double alpha : grid.values) {
    LsSolution sol;
    try {
      sol = solve_trial(obs, q_star, alpha);
    } catch (const SingularGeometryError&) {
      continue;
    }
    // Valid solutions outrank invalid ones; strict < keeps the smallest alpha
    // on ties (trials are evaluated in ascending order).
    const bool better = !have_any || (sol.valid && !best_is_valid) ||
                        (sol.valid == best_is_valid && sol.residual_norm < best.residual_norm);
    if (better) {
      best = sol;
      best_is_valid = sol.valid;
      have_any = true;
    }
  }
  if (!have_any) throw EstimationFailedError("all trial orientations were singular");

  StateVector sv;
  sv.mobile.position = best.p_hat;
  sv.mobile.orientation = wrap_angle(best.alpha_trial);
  sv.incidence_points.reserve(best.r_hat.size());
  for (int j = 0; j < obs.num_paths(); ++j) {
    const double tx = obs.triplets[static_cast<std::size_t>(j)].theta_tx;
    const double r = best.r_hat[static_cast<std::size_t>(j)];
    sv.incidence_points.push_back(q_star + r * Point2{std::cos(tx), std::sin(tx)});
  }
  return sv;
}

}  // namespace nbploc
