#include "nbploc/particles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "nbploc/rng.hpp"

namespace nbploc {

namespace {

// Kernel evaluations are skipped once the exponent is below the double
// underflow threshold; this changes nothing observable and avoids exp().
constexpr double kExpUnderflow = -708.0;

void check_dim(const ParticleSet& ps) {
  if (ps.dim != 1 && ps.dim != 2) throw std::invalid_argument("particle dim must be 1 or 2");
  if (ps.samples.size() != static_cast<std::size_t>(ps.dim) * ps.weights.size()) {
    throw std::invalid_argument("particle samples/weights size mismatch");
  }
  if (ps.weights.empty()) throw std::invalid_argument("empty particle set");
}

double kahan_sum(const std::vector<double>& v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    double y = x - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

}  // namespace

ParticleSet ParticleSet::dirac(Point2 p) {
  ParticleSet ps(2);
  ps.append(p, 1.0);
  return ps;
}

ParticleSet ParticleSet::dirac_angle(double theta) {
  ParticleSet ps(1);
  ps.append(theta, 1.0);
  return ps;
}

std::vector<double> normalize(const std::vector<double>& weights_raw) {
  if (weights_raw.empty()) throw DegenerateWeightsError("empty weight vector");
  for (double w : weights_raw) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw DegenerateWeightsError("negative or non-finite weight");
    }
  }
  const double sum = kahan_sum(weights_raw);
  if (!(sum > 0.0)) throw DegenerateWeightsError("all weights are zero");
  std::vector<double> out(weights_raw.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = weights_raw[k] / sum;
  return out;
}

void normalize_in_place(ParticleSet& ps) { ps.weights = normalize(ps.weights); }

std::vector<double> normalize_log_weights(const std::vector<double>& log_weights) {
  if (log_weights.empty()) throw DegenerateWeightsError("empty weight vector");
  double max_log = -std::numeric_limits<double>::infinity();
  for (double l : log_weights) {
    if (std::isnan(l)) throw DegenerateWeightsError("NaN log weight");
    max_log = std::max(max_log, l);
  }
  if (!std::isfinite(max_log)) throw DegenerateWeightsError("all log weights are -inf");
  std::vector<double> out(log_weights.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double d = log_weights[k] - max_log;
    out[k] = d < kExpUnderflow ? 0.0 : std::exp(d);
  }
  return normalize(out);
}

ParticleSet resample_to(const ParticleSet& ps, std::size_t m, std::uint64_t seed) {
  check_dim(ps);
  if (m == 0) throw std::invalid_argument("cannot resample to zero particles");

  RngEngine rng = make_rng(seed);
  const double offset = uniform01(rng) / static_cast<double>(m);

  ParticleSet out(ps.dim);
  out.reserve(m);
  std::size_t i = 0;
  double cumulative = ps.weights[0];
  const double total = kahan_sum(ps.weights);
  const double uniform_w = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double u = (offset + static_cast<double>(k) / static_cast<double>(m)) * total;
    while (u > cumulative && i + 1 < ps.size()) {
      ++i;
      cumulative += ps.weights[i];
    }
    const double* s = ps.at(i);
    for (int d = 0; d < ps.dim; ++d) out.samples.push_back(s[d]);
    out.weights.push_back(uniform_w);
  }
  return out;
}

ParticleSet resample(const ParticleSet& ps, std::uint64_t seed) {
  return resample_to(ps, ps.size(), seed);
}

Kde make_kde(const ParticleSet& ps, double bandwidth) {
  check_dim(ps);
  if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");

  // Merge bit-identical atoms; resampled sets are mostly duplicates.
  struct Key {
    double a, b;
    bool operator==(const Key& o) const { return a == o.a && b == o.b; }
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t ha, hb;
      static_assert(sizeof(double) == sizeof(std::uint64_t));
      std::memcpy(&ha, &k.a, 8);
      std::memcpy(&hb, &k.b, 8);
      return static_cast<std::size_t>(splitmix64(ha ^ splitmix64(hb)));
    }
  };

  Kde kde;
  kde.bandwidth = bandwidth;
  kde.particles.dim = ps.dim;
  std::unordered_map<Key, std::size_t, KeyHash> index;
  index.reserve(ps.size());
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const double* s = ps.at(k);
    Key key{s[0], ps.dim == 2 ? s[1] : 0.0};
    auto [it, inserted] = index.try_emplace(key, kde.particles.size());
    if (inserted) {
      for (int d = 0; d < ps.dim; ++d) kde.particles.samples.push_back(s[d]);
      kde.particles.weights.push_back(ps.weights[k]);
    } else {
      kde.particles.weights[it->second] += ps.weights[k];
    }
  }
  return kde;
}

double kde_density(const Kde& kde, const double* x) {
  const ParticleSet& ps = kde.particles;
  const double h2 = kde.bandwidth * kde.bandwidth;
  const double cutoff = -2.0 * kExpUnderflow * h2;  // squared distance beyond which exp underflows
  double acc = 0.0;
  if (ps.dim == 2) {
    const double px = x[0], py = x[1];
    const std::size_t n = ps.size();
    const double* s = ps.samples.data();
    for (std::size_t k = 0; k < n; ++k) {
      const double dx = px - s[2 * k];
      const double dy = py - s[2 * k + 1];
      const double r2 = dx * dx + dy * dy;
      if (r2 < cutoff) acc += ps.weights[k] * std::exp(-r2 / (2.0 * h2));
    }
    return acc / (2.0 * kPi * h2);
  }
  const double theta = x[0];
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const double d = wrap_angle(theta - ps.samples[k]);
    const double r2 = d * d;
    if (r2 < cutoff) acc += ps.weights[k] * std::exp(-r2 / (2.0 * h2));
  }
  return acc / (std::sqrt(2.0 * kPi) * kde.bandwidth);
}

double kde_density(const Kde& kde, Point2 x) {
  const double buf[2] = {x.x, x.y};
  return kde_density(kde, buf);
}

double kde_density_angle(const Kde& kde, double theta) { return kde_density(kde, &theta); }

std::vector<double> mmse_estimate(const ParticleSet& ps) {
  check_dim(ps);
  if (ps.dim == 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      mx += ps.weights[k] * ps.samples[2 * k];
      my += ps.weights[k] * ps.samples[2 * k + 1];
    }
    return {mx, my};
  }
  double c = 0.0, s = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    c += ps.weights[k] * std::cos(ps.samples[k]);
    s += ps.weights[k] * std::sin(ps.samples[k]);
  }
  if (std::hypot(c, s) < 1e-9) {
    throw DegenerateOrientationError("circular mean undefined: near-zero resultant");
  }
  return {std::atan2(s, c)};
}

Point2 mmse_point(const ParticleSet& ps) {
  auto v = mmse_estimate(ps);
  if (v.size() != 2) throw std::invalid_argument("expected a 2-D particle set");
  return {v[0], v[1]};
}

double mmse_angle(const ParticleSet& ps) {
  auto v = mmse_estimate(ps);
  if (v.size() != 1) throw std::invalid_argument("expected a 1-D particle set");
  return v[0];
}

int region_dim(const ProposalRegion& region) {
  return std::holds_alternative<DiskRegion>(region) ? 2 : 1;
}

double region_log_density(const ProposalRegion& region) {
  if (const auto* disk = std::get_if<DiskRegion>(&region)) {
    if (!(disk->radius > 0.0)) throw std::invalid_argument("disk radius must be positive");
    return -std::log(kPi * disk->radius * disk->radius);
  }
  const auto& iv = std::get<IntervalRegion>(region);
  if (!(iv.lo < iv.hi)) throw std::invalid_argument("interval must satisfy lo < hi");
  return -std::log(iv.hi - iv.lo);
}

ParticleSet sample_proposal(const ProposalRegion& region, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("need at least one sample");
  RngEngine rng = make_rng(seed);
  const double w = 1.0 / static_cast<double>(n);

  if (const auto* disk = std::get_if<DiskRegion>(&region)) {
    if (!(disk->radius > 0.0)) throw std::invalid_argument("disk radius must be positive");
    ParticleSet ps(2);
    ps.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      // r*sqrt(u) makes the draw uniform by area.
      const double r = disk->radius * std::sqrt(uniform01(rng));
      const double phi = -kPi + 2.0 * kPi * uniform01(rng);
      ps.append(Point2{disk->center.x + r * std::cos(phi), disk->center.y + r * std::sin(phi)}, w);
    }
    return ps;
  }

  const auto& iv = std::get<IntervalRegion>(region);
  if (!(iv.lo < iv.hi)) throw std::invalid_argument("interval must satisfy lo < hi");
  ParticleSet ps(1);
  ps.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    // hi - span*u covers (lo, hi] for u in [0, 1).
    ps.append(iv.hi - (iv.hi - iv.lo) * uniform01(rng), w);
  }
  return ps;
}

double effective_sample_size(const ParticleSet& ps) {
  check_dim(ps);
  double sq = 0.0;
  for (double w : ps.weights) sq += w * w;
  if (!(sq > 0.0)) throw DegenerateWeightsError("unnormalized particle set");
  return 1.0 / sq;
}

void write_particles_csv(const ParticleSet& ps, std::ostream& out) {
  char line[128];
  if (ps.dim == 2) {
    out << "x,y,weight\n";
    for (std::size_t k = 0; k < ps.size(); ++k) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g\n", ps.samples[2 * k],
                    ps.samples[2 * k + 1], ps.weights[k]);
      out << line;
    }
  } else {
    out << "theta,weight\n";
    for (std::size_t k = 0; k < ps.size(); ++k) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g\n", ps.samples[k], ps.weights[k]);
      out << line;
    }
  }
}

}  // namespace nbploc
