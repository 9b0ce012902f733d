#pragma once

#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

#include "nbploc/errors.hpp"
#include "nbploc/geometry.hpp"

namespace nbploc {

// Weighted samples approximating one message or belief. dim == 2 for
// positions (meters), dim == 1 for the orientation (radians). Samples are
// stored interleaved: [x0, y0, x1, y1, ...] or [t0, t1, ...].
struct ParticleSet {
  int dim = 2;
  std::vector<double> samples;
  std::vector<double> weights;

  ParticleSet() = default;
  explicit ParticleSet(int d) : dim(d) {}

  std::size_t size() const { return weights.size(); }
  const double* at(std::size_t k) const {
    return samples.data() + static_cast<std::size_t>(dim) * k;
  }
  Point2 point(std::size_t k) const { return {samples[2 * k], samples[2 * k + 1]}; }
  double scalar(std::size_t k) const { return samples[k]; }

  void reserve(std::size_t n) {
    samples.reserve(static_cast<std::size_t>(dim) * n);
    weights.reserve(n);
  }
  void append(Point2 p, double w) {
    samples.push_back(p.x);
    samples.push_back(p.y);
    weights.push_back(w);
  }
  void append(double theta, double w) {
    samples.push_back(theta);
    weights.push_back(w);
  }

  static ParticleSet dirac(Point2 p);
  static ParticleSet dirac_angle(double theta);
};

// Normalize raw weights to sum 1. Throws DegenerateWeightsError when the
// input has no positive mass or contains negative/non-finite entries.
std::vector<double> normalize(const std::vector<double>& weights_raw);
void normalize_in_place(ParticleSet& ps);

// Same contract, but the input is log-domain weights (max-subtracted before
// exponentiation). -inf entries are allowed; all -inf is degenerate.
std::vector<double> normalize_log_weights(const std::vector<double>& log_weights);

// Systematic (low-variance) resampling to `m` particles with uniform output
// weights. Expected multiplicity of input k is m * w_k.
ParticleSet resample_to(const ParticleSet& ps, std::size_t m, std::uint64_t seed);
ParticleSet resample(const ParticleSet& ps, std::uint64_t seed);

// Gaussian kernel density estimate: every particle coated with an isotropic
// kernel of width `bandwidth`. Construction merges duplicate atoms (common
// after resampling) so evaluation scales with the number of distinct points.
struct Kde {
  ParticleSet particles;
  double bandwidth = 1.0;
};

Kde make_kde(const ParticleSet& ps, double bandwidth);

// Mixture density at x. For dim 1 the kernel argument is the wrapped angular
// difference.
double kde_density(const Kde& kde, const double* x);
double kde_density(const Kde& kde, Point2 x);
double kde_density_angle(const Kde& kde, double theta);

// Weighted centroid; circular mean for orientation sets. Throws
// DegenerateOrientationError when the circular resultant is ~0.
std::vector<double> mmse_estimate(const ParticleSet& ps);
Point2 mmse_point(const ParticleSet& ps);
double mmse_angle(const ParticleSet& ps);

// Proposal regions: uniform-by-area disk or uniform interval.
struct DiskRegion {
  Point2 center;
  double radius = 1.0;
};
struct IntervalRegion {
  double lo = -kPi;
  double hi = kPi;
};
using ProposalRegion = std::variant<DiskRegion, IntervalRegion>;

int region_dim(const ProposalRegion& region);
double region_log_density(const ProposalRegion& region);
ParticleSet sample_proposal(const ProposalRegion& region, std::size_t n, std::uint64_t seed);

// 1 / sum(w^2) for a normalized set; in [1, N].
double effective_sample_size(const ParticleSet& ps);

// CSV export, columns "x,y,weight" or "theta,weight".
void write_particles_csv(const ParticleSet& ps, std::ostream& out);

}  // namespace nbploc
