#include "support/grid_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nbploc::testing {

namespace {

// The oracle evaluates the three likelihood exponents inline so it shares no
// computation path with the library implementation.
double wrap(double x) {
  double w = std::remainder(x, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

struct ConeCell {
  double x, y;       // relative to q*
  double dist_to_q;  // |q - s|
  double log_aod;    // AOD exponent at this cell
};

}  // namespace

Point2 grid_posterior_mean_p(const Observations& obs, Point2 q_star,
                             const GridOracleConfig& cfg) {
  obs.validate();
  const int J = obs.num_paths();
  const double cell = cfg.cell_size;
  const double cut = cfg.log_cut;

  double r_max = 0.0;
  double sd_max = 0.0;
  for (int j = 0; j < J; ++j) {
    r_max = std::max(r_max, obs.triplets[j].d);
    sd_max = std::max(sd_max, obs.noise.sigma_d[j]);
  }
  r_max += 6.0 * sd_max;

  // Per-path s grids restricted to the AOD cone, with the AOD exponent
  // precomputed per cell.
  const int half_cells = static_cast<int>(std::ceil(r_max / cell));
  std::vector<std::vector<ConeCell>> cones(J);
  for (int j = 0; j < J; ++j) {
    const double sigma_tx = obs.noise.sigma_tx[j];
    const double halfwidth = std::min(kPi, sigma_tx * std::sqrt(2.0 * cut));
    const double reach = obs.triplets[j].d + 6.0 * obs.noise.sigma_d[j];
    for (int ix = -half_cells; ix <= half_cells; ++ix) {
      for (int iy = -half_cells; iy <= half_cells; ++iy) {
        const double sx = (ix + 0.5) * cell;
        const double sy = (iy + 0.5) * cell;
        const double r = std::hypot(sx, sy);
        if (r == 0.0 || r > reach) continue;
        const double res = wrap(obs.triplets[j].theta_tx - std::atan2(sy, sx));
        if (std::abs(res) > halfwidth) continue;
        const double log_aod = -res * res / (2.0 * sigma_tx * sigma_tx);
        cones[j].push_back({sx, sy, r, log_aod});
      }
    }
    if (cones[j].empty()) throw std::runtime_error("empty AOD cone in the grid oracle");
  }

  const int n_alpha =
      static_cast<int>(std::ceil(360.0 / cfg.alpha_step_deg));
  const double alpha_step = 2.0 * kPi / n_alpha;
  auto alpha_at = [&](int i) { return -kPi + (i + 0.5) * alpha_step; };

  std::vector<std::vector<double>> accum(J, std::vector<double>(n_alpha, 0.0));

  double mass = 0.0;
  double mean_x = 0.0, mean_y = 0.0;
  for (int ix = -half_cells; ix <= half_cells; ++ix) {
    for (int iy = -half_cells; iy <= half_cells; ++iy) {
      const double px = (ix + 0.5) * cell;
      const double py = (iy + 0.5) * cell;
      if (std::hypot(px, py) > r_max) continue;

      // Sum out s_j and bin the AOA exponent over alpha, independently per
      // path; then sum the product over alpha.
      for (int j = 0; j < J; ++j) {
        std::fill(accum[j].begin(), accum[j].end(), 0.0);
        const double sigma_d = obs.noise.sigma_d[j];
        const double sigma_rx = obs.noise.sigma_rx[j];
        const double alpha_reach = sigma_rx * std::sqrt(2.0 * cut);
        const int alpha_span = static_cast<int>(std::ceil(alpha_reach / alpha_step));
        for (const ConeCell& s : cones[j]) {
          const double dx = s.x - px;
          const double dy = s.y - py;
          const double res_d = obs.triplets[j].d - s.dist_to_q - std::sqrt(dx * dx + dy * dy);
          const double log_d = -res_d * res_d / (2.0 * sigma_d * sigma_d);
          if (log_d < -cut) continue;
          const double g = log_d + s.log_aod;
          // AOA factor peaks at alpha0 = bearing(p -> s) - theta_rx_hat.
          const double alpha0 = wrap(std::atan2(dy, dx) - obs.triplets[j].theta_rx);
          const int center = static_cast<int>(std::floor((alpha0 + kPi) / alpha_step));
          for (int k = center - alpha_span; k <= center + alpha_span; ++k) {
            const int idx = ((k % n_alpha) + n_alpha) % n_alpha;
            const double res_a = wrap(alpha_at(idx) - alpha0);
            const double log_a = -res_a * res_a / (2.0 * sigma_rx * sigma_rx);
            if (log_a < -cut) continue;
            accum[j][idx] += std::exp(g + log_a);
          }
        }
      }

      double posterior_p = 0.0;
      for (int a = 0; a < n_alpha; ++a) {
        double prod = 1.0;
        for (int j = 0; j < J; ++j) prod *= accum[j][a];
        posterior_p += prod;
      }
      mass += posterior_p;
      mean_x += px * posterior_p;
      mean_y += py * posterior_p;
    }
  }
  if (!(mass > 0.0)) throw std::runtime_error("grid oracle found no posterior mass");
  return {q_star.x + mean_x / mass, q_star.y + mean_y / mass};
}

}  // namespace nbploc::testing
