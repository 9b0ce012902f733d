#include "nbploc/fg_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include "nbploc/rng.hpp"

namespace nbploc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Engine-internal wrap for arguments already within (-3.5*pi, 3.5*pi).
inline double wrap_fast(double x) {
  if (x > kPi) {
    x -= 2.0 * kPi;
    if (x > kPi) x -= 2.0 * kPi;
  } else if (x <= -kPi) {
    x += 2.0 * kPi;
    if (x <= -kPi) x += 2.0 * kPi;
  }
  return x;
}

}  // namespace

std::string node_name(const NodeRef& node) {
  switch (node.kind) {
    case NodeKind::VarMobile: return "p";
    case NodeKind::VarOrientation: return "alpha";
    case NodeKind::VarBase: return "q";
    case NodeKind::VarScatterer: return "s" + std::to_string(node.j);
    case NodeKind::FacDistance: return "d" + std::to_string(node.j);
    case NodeKind::FacAod: return "aod" + std::to_string(node.j);
    case NodeKind::FacAoa: return "aoa" + std::to_string(node.j);
  }
  return "?";
}

FactorGraph build_graph(int num_paths) {
  if (num_paths < 3) {
    throw InsufficientPathsError("factor graph needs at least 3 NLOS paths, got " +
                                 std::to_string(num_paths));
  }
  FactorGraph g;
  g.num_paths = num_paths;
  g.variable_nodes.push_back({NodeKind::VarMobile, -1});
  g.variable_nodes.push_back({NodeKind::VarOrientation, -1});
  for (int j = 0; j < num_paths; ++j) g.variable_nodes.push_back({NodeKind::VarScatterer, j});
  g.variable_nodes.push_back({NodeKind::VarBase, -1});

  for (int j = 0; j < num_paths; ++j) {
    const NodeRef d{NodeKind::FacDistance, j};
    const NodeRef aod{NodeKind::FacAod, j};
    const NodeRef aoa{NodeKind::FacAoa, j};
    const NodeRef s{NodeKind::VarScatterer, j};
    g.factor_nodes.push_back(d);
    g.factor_nodes.push_back(aod);
    g.factor_nodes.push_back(aoa);
    g.edges.emplace_back(d, NodeRef{NodeKind::VarMobile, -1});
    g.edges.emplace_back(d, NodeRef{NodeKind::VarBase, -1});
    g.edges.emplace_back(d, s);
    g.edges.emplace_back(aod, NodeRef{NodeKind::VarBase, -1});
    g.edges.emplace_back(aod, s);
    g.edges.emplace_back(aoa, NodeRef{NodeKind::VarMobile, -1});
    g.edges.emplace_back(aoa, NodeRef{NodeKind::VarOrientation, -1});
    g.edges.emplace_back(aoa, s);
  }
  return g;
}

std::vector<NodeRef> FactorGraph::neighbors(const NodeRef& node) const {
  std::vector<NodeRef> out;
  for (const auto& [f, v] : edges) {
    if (f == node) out.push_back(v);
    if (v == node) out.push_back(f);
  }
  return out;
}

bool FactorGraph::has_edge(const NodeRef& factor, const NodeRef& variable) const {
  return std::find(edges.begin(), edges.end(), std::make_pair(factor, variable)) != edges.end();
}

void EngineConfig::validate() const {
  if (n_particles < 1) throw ConfigError("n_particles must be >= 1");
  if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
  if (incoming_subsample < 1) throw ConfigError("incoming_subsample must be >= 1");
  if (bandwidth_position && !(*bandwidth_position > 0.0)) {
    throw ConfigError("bandwidth_position must be positive");
  }
  if (bandwidth_orientation && !(*bandwidth_orientation > 0.0)) {
    throw ConfigError("bandwidth_orientation must be positive");
  }
  if (max_degenerate_retries < 0) throw ConfigError("max_degenerate_retries must be >= 0");
}

ResolvedBandwidths resolve_bandwidths(const EngineConfig& cfg, const NoiseSpec& noise) {
  ResolvedBandwidths bw;
  const double max_sd = *std::max_element(noise.sigma_d.begin(), noise.sigma_d.end());
  const double max_srx = *std::max_element(noise.sigma_rx.begin(), noise.sigma_rx.end());
  bw.position = cfg.bandwidth_position.value_or(std::max(0.5, 2.0 * max_sd));
  bw.orientation = cfg.bandwidth_orientation.value_or(std::max(0.5 * kPi / 180.0, max_srx));
  return bw;
}

// --- filter (factor-to-variable) ---------------------------------------------

namespace {

// Joint draws from the (at most two) non-target incoming messages, paired
// index-wise and merged by exact value. The Monte Carlo sum over incoming
// tuples then only visits distinct tuples, which matters once messages have
// collapsed onto few atoms.
struct TupleList {
  int dim_a = 0;
  int dim_b = 0;
  std::vector<double> a;           // dim_a * count
  std::vector<double> b;           // dim_b * count
  std::vector<double> log_weight;  // log(multiplicity / M)
  std::size_t count = 0;
};

TupleList make_tuples(const ParticleSet* in_a, const ParticleSet* in_b, std::size_t m,
                      std::uint64_t seed) {
  const ParticleSet sub_a = (in_a && in_a->size() > m) ? resample_to(*in_a, m, mix_seed(seed, 1))
                                                       : (in_a ? *in_a : ParticleSet{});
  const ParticleSet sub_b = (in_b && in_b->size() > m) ? resample_to(*in_b, m, mix_seed(seed, 2))
                                                       : (in_b ? *in_b : ParticleSet{});
  const std::size_t na = in_a ? sub_a.size() : 0;
  const std::size_t nb = in_b ? sub_b.size() : 0;
  const std::size_t total = std::max<std::size_t>(1, std::max(na, nb));

  TupleList tl;
  tl.dim_a = in_a ? sub_a.dim : 0;
  tl.dim_b = in_b ? sub_b.dim : 0;

  struct Key {
    double v[4];
    bool operator==(const Key& o) const { return std::memcmp(v, o.v, sizeof(v)) == 0; }
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::uint64_t h = 0x51ed270b7a1f389bULL;
      for (double d : k.v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        h = splitmix64(h ^ bits);
      }
      return static_cast<std::size_t>(h);
    }
  };
  std::unordered_map<Key, std::size_t, KeyHash> index;
  index.reserve(total);
  std::vector<double> counts;

  for (std::size_t t = 0; t < total; ++t) {
    Key key{{0.0, 0.0, 0.0, 0.0}};
    int slot = 0;
    if (in_a) {
      const double* v = sub_a.at(na == 1 ? 0 : t % na);
      for (int d = 0; d < tl.dim_a; ++d) key.v[slot++] = v[d];
    }
    if (in_b) {
      const double* v = sub_b.at(nb == 1 ? 0 : t % nb);
      for (int d = 0; d < tl.dim_b; ++d) key.v[slot++] = v[d];
    }
    auto [it, inserted] = index.try_emplace(key, tl.count);
    if (inserted) {
      ++tl.count;
      int at = 0;
      for (int d = 0; d < tl.dim_a; ++d) tl.a.push_back(key.v[at++]);
      for (int d = 0; d < tl.dim_b; ++d) tl.b.push_back(key.v[at++]);
      counts.push_back(1.0);
    } else {
      counts[it->second] += 1.0;
    }
  }
  tl.log_weight.resize(tl.count);
  const double log_total = std::log(static_cast<double>(total));
  for (std::size_t t = 0; t < tl.count; ++t) tl.log_weight[t] = std::log(counts[t]) - log_total;
  return tl;
}

const IncomingMessage* find_role(const std::vector<IncomingMessage>& incoming, NodeKind kind) {
  for (const auto& msg : incoming) {
    if (msg.from.kind == kind) return &msg;
  }
  return nullptr;
}

// Log-sum-exp over the per-tuple factor evaluations for one proposal sample.
inline double logsumexp(const std::vector<double>& scratch, std::size_t n, double best) {
  if (!std::isfinite(best)) return kNegInf;
  double acc = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d = scratch[t] - best;
    if (d > -40.0) acc += std::exp(d);
  }
  return best + std::log(acc);
}

// Fraction of refined draws taken from the uniform area of interest; the rest
// come from the current particle atoms so that concentrated targets stay
// representable.
constexpr double kUniformMixture = 0.25;

bool inside_region(const ProposalRegion& region, const double* x) {
  if (const auto* disk = std::get_if<DiskRegion>(&region)) {
    const double dx = x[0] - disk->center.x;
    const double dy = x[1] - disk->center.y;
    return dx * dx + dy * dy <= disk->radius * disk->radius;
  }
  const auto& iv = std::get<IntervalRegion>(region);
  return x[0] > iv.lo && x[0] <= iv.hi;
}

}  // namespace

FilterResult filter_message(const FactorGraph& graph, const FactorContext& factor,
                            const NodeRef& target, const std::vector<IncomingMessage>& incoming,
                            const ProposalRegion& proposal, const EngineConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  if (!factor.factor.is_factor() || target.is_factor()) {
    throw std::invalid_argument("filter_message goes from a factor node to a variable node");
  }
  if (target.kind == NodeKind::VarBase) {
    throw std::invalid_argument("the base station never receives messages");
  }
  if (!graph.has_edge(factor.factor, target)) {
    throw std::invalid_argument("no edge between " + node_name(factor.factor) + " and " +
                                node_name(target));
  }
  if (!(factor.sigma > 0.0)) throw std::invalid_argument("factor sigma must be positive");

  // Incoming must cover exactly the factor's other edges.
  {
    std::vector<NodeRef> required = graph.neighbors(factor.factor);
    std::erase(required, target);
    if (incoming.size() != required.size()) {
      throw std::invalid_argument("expected " + std::to_string(required.size()) +
                                  " incoming messages at " + node_name(factor.factor));
    }
    for (const auto& msg : incoming) {
      if (msg.content == nullptr || msg.content->size() == 0) {
        throw std::invalid_argument("missing incoming message content");
      }
      if (std::find(required.begin(), required.end(), msg.from) == required.end()) {
        throw std::invalid_argument("unexpected incoming message from " + node_name(msg.from));
      }
      if (msg.from.kind == NodeKind::VarBase && msg.content->size() != 1) {
        throw std::invalid_argument("base-station message must be a single particle");
      }
    }
  }

  const std::size_t n = cfg.n_particles;
  const std::size_t m = std::min(cfg.incoming_subsample, n);
  const double inv_two_sigma2 = 1.0 / (2.0 * factor.sigma * factor.sigma);
  const double theta_or_d = factor.observed;

  const NodeKind fkind = factor.factor.kind;
  const NodeKind tkind = target.kind;

  // Build the deduplicated incoming-tuple list once; both sampling stages
  // evaluate the same Monte Carlo sum.
  TupleList tl;
  Point2 q_point{0.0, 0.0};
  if (fkind == NodeKind::FacAod) {
    const IncomingMessage* q_msg = find_role(incoming, NodeKind::VarBase);
    if (tkind != NodeKind::VarScatterer || q_msg == nullptr) {
      throw std::invalid_argument("AOD factor sends only to its scatterer");
    }
    q_point = q_msg->content->point(0);
  } else if (fkind == NodeKind::FacDistance) {
    const IncomingMessage* q_msg = find_role(incoming, NodeKind::VarBase);
    if (q_msg == nullptr) throw std::invalid_argument("distance factor needs the base message");
    q_point = q_msg->content->point(0);
    const IncomingMessage* other = tkind == NodeKind::VarScatterer
                                       ? find_role(incoming, NodeKind::VarMobile)
                                       : find_role(incoming, NodeKind::VarScatterer);
    if (tkind != NodeKind::VarScatterer && tkind != NodeKind::VarMobile) {
      throw std::invalid_argument("distance factor cannot target " + node_name(target));
    }
    if (other == nullptr) throw std::invalid_argument("distance factor is missing a message");
    tl = make_tuples(other->content, nullptr, m, mix_seed(seed, 21));
  } else {  // FacAoa
    const IncomingMessage* first = nullptr;
    const IncomingMessage* second = nullptr;
    if (tkind == NodeKind::VarOrientation) {
      first = find_role(incoming, NodeKind::VarMobile);
      second = find_role(incoming, NodeKind::VarScatterer);
    } else if (tkind == NodeKind::VarMobile) {
      first = find_role(incoming, NodeKind::VarOrientation);
      second = find_role(incoming, NodeKind::VarScatterer);
    } else if (tkind == NodeKind::VarScatterer) {
      first = find_role(incoming, NodeKind::VarMobile);
      second = find_role(incoming, NodeKind::VarOrientation);
    } else {
      throw std::invalid_argument("AOA factor cannot target " + node_name(target));
    }
    if (!first || !second) throw std::invalid_argument("AOA factor is missing a message");
    tl = make_tuples(first->content, second->content, m, mix_seed(seed, 21));
  }

  // Per-tuple hoisted terms.
  std::vector<double> hoisted(tl.count);
  if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarMobile) {
    // Remainder of the path length: d_hat - |q - s_t|.
    for (std::size_t t = 0; t < tl.count; ++t) {
      hoisted[t] = theta_or_d - distance(q_point, Point2{tl.a[2 * t], tl.a[2 * t + 1]});
    }
  } else if (fkind == NodeKind::FacAoa && tkind == NodeKind::VarOrientation) {
    // residual = theta_hat - atan2(s - p) + alpha; everything but alpha is per tuple.
    for (std::size_t t = 0; t < tl.count; ++t) {
      hoisted[t] = wrap_angle(theta_or_d - std::atan2(tl.b[2 * t + 1] - tl.a[2 * t + 1],
                                                      tl.b[2 * t] - tl.a[2 * t]));
    }
  } else if (fkind == NodeKind::FacAoa && tkind == NodeKind::VarMobile) {
    for (std::size_t t = 0; t < tl.count; ++t) hoisted[t] = wrap_angle(theta_or_d + tl.a[t]);
  } else if (fkind == NodeKind::FacAoa && tkind == NodeKind::VarScatterer) {
    for (std::size_t t = 0; t < tl.count; ++t) hoisted[t] = wrap_angle(theta_or_d + tl.b[t]);
  }

  // Log of the Monte Carlo sum over incoming tuples, for every draw.
  std::vector<double> scratch(tl.count);
  auto eval_log_f = [&](const ParticleSet& draws, std::vector<double>& log_f) {
    log_f.assign(draws.size(), kNegInf);
    if (fkind == NodeKind::FacAod) {
      for (std::size_t k = 0; k < draws.size(); ++k) {
        const Point2 s = draws.point(k);
        const double res = wrap_fast(theta_or_d - std::atan2(s.y - q_point.y, s.x - q_point.x));
        log_f[k] = -(res * res) * inv_two_sigma2;
      }
      return;
    }
    for (std::size_t k = 0; k < draws.size(); ++k) {
      double best = kNegInf;
      if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarScatterer) {
        const Point2 s = draws.point(k);
        const double base = theta_or_d - distance(q_point, s);
        for (std::size_t t = 0; t < tl.count; ++t) {
          const double dx = s.x - tl.a[2 * t];
          const double dy = s.y - tl.a[2 * t + 1];
          const double res = base - std::sqrt(dx * dx + dy * dy);
          const double lw = tl.log_weight[t] - res * res * inv_two_sigma2;
          scratch[t] = lw;
          if (lw > best) best = lw;
        }
      } else if (fkind == NodeKind::FacDistance) {  // target VarMobile
        const Point2 p = draws.point(k);
        for (std::size_t t = 0; t < tl.count; ++t) {
          const double dx = p.x - tl.a[2 * t];
          const double dy = p.y - tl.a[2 * t + 1];
          const double res = hoisted[t] - std::sqrt(dx * dx + dy * dy);
          const double lw = tl.log_weight[t] - res * res * inv_two_sigma2;
          scratch[t] = lw;
          if (lw > best) best = lw;
        }
      } else if (tkind == NodeKind::VarOrientation) {
        const double alpha = draws.scalar(k);
        for (std::size_t t = 0; t < tl.count; ++t) {
          const double res = wrap_fast(hoisted[t] + alpha);
          const double lw = tl.log_weight[t] - res * res * inv_two_sigma2;
          scratch[t] = lw;
          if (lw > best) best = lw;
        }
      } else if (tkind == NodeKind::VarMobile) {  // AOA -> p
        const Point2 p = draws.point(k);
        for (std::size_t t = 0; t < tl.count; ++t) {
          const double res =
              wrap_fast(hoisted[t] - std::atan2(tl.b[2 * t + 1] - p.y, tl.b[2 * t] - p.x));
          const double lw = tl.log_weight[t] - res * res * inv_two_sigma2;
          scratch[t] = lw;
          if (lw > best) best = lw;
        }
      } else {  // AOA -> s
        const Point2 s = draws.point(k);
        for (std::size_t t = 0; t < tl.count; ++t) {
          const double res =
              wrap_fast(hoisted[t] - std::atan2(s.y - tl.a[2 * t + 1], s.x - tl.a[2 * t]));
          const double lw = tl.log_weight[t] - res * res * inv_two_sigma2;
          scratch[t] = lw;
          if (lw > best) best = lw;
        }
      }
      log_f[k] = logsumexp(scratch, tl.count, best);
    }
  };

  // Ancestral proposal: pick an incoming tuple, then draw the target variable
  // from a distribution matched to the factor's conditional support (cone,
  // ellipse, circle, or ray), plus a uniform share over the area of interest.
  // The mixture density is exactly evaluable, so Eq.-style importance weights
  // stay unbiased while every draw lands on the thin likelihood manifolds
  // that a plain uniform proposal would resolve only to its sample spacing.
  const double log_region = region_log_density(proposal);
  const double sigma_jitter =
      fkind == NodeKind::FacDistance ? 3.0 * factor.sigma : 1.5 * factor.sigma;
  const double norm_jitter = 1.0 / (std::sqrt(2.0 * kPi) * sigma_jitter);
  const double jitter_cut = 9.0 * sigma_jitter;

  // Per-tuple conditional parameters.
  const std::size_t n_tuples = std::max<std::size_t>(tl.count, 1);
  std::vector<double> tuple_cdf(n_tuples, 1.0);
  std::vector<double> circle_radius;     // D->P
  std::vector<Point2> ray_origin;        // AOA->P / AOA->S
  std::vector<double> ray_psi;           // bearing of the conditional ray
  std::vector<double> ray_reach;
  std::vector<char> tuple_valid(n_tuples, 1);
  {
    double acc = 0.0;
    for (std::size_t t = 0; t < tl.count; ++t) {
      acc += std::exp(tl.log_weight[t]);
      tuple_cdf[t] = acc;
    }
  }
  const DiskRegion* disk = std::get_if<DiskRegion>(&proposal);

  if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarMobile) {
    circle_radius.resize(tl.count);
    for (std::size_t t = 0; t < tl.count; ++t) {
      circle_radius[t] = hoisted[t];  // d_hat - |q - s_t|
      if (!(circle_radius[t] > 0.0)) tuple_valid[t] = 0;
    }
  } else if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarScatterer) {
    // The ellipse with foci (q, p_t) exists only when d_hat exceeds the focal
    // distance.
    for (std::size_t t = 0; t < tl.count; ++t) {
      if (!(theta_or_d > distance(q_point, Point2{tl.a[2 * t], tl.a[2 * t + 1]}))) {
        tuple_valid[t] = 0;
      }
    }
  } else if (fkind == NodeKind::FacAoa) {
    ray_origin.resize(tl.count);
    ray_psi.resize(tl.count);
    ray_reach.resize(tl.count);
    for (std::size_t t = 0; t < tl.count; ++t) {
      if (tkind == NodeKind::VarScatterer) {
        // Ray from the mobile atom towards the scatterer.
        ray_origin[t] = {tl.a[2 * t], tl.a[2 * t + 1]};
        ray_psi[t] = hoisted[t];  // theta_hat + alpha_t
      } else if (tkind == NodeKind::VarMobile) {
        // Ray from the scatterer atom back towards the mobile.
        ray_origin[t] = {tl.b[2 * t], tl.b[2 * t + 1]};
        ray_psi[t] = wrap_angle(hoisted[t] + kPi);
      } else {
        continue;  // AOA->alpha uses the 1-D form below
      }
      ray_reach[t] = disk ? disk->radius + distance(ray_origin[t], disk->center) : 0.0;
    }
  }

  RngEngine rng = make_rng(mix_seed(seed, 41));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto pick_tuple = [&]() -> std::size_t {
    const double u = uniform01(rng) * tuple_cdf.back();
    const std::size_t t = static_cast<std::size_t>(
        std::lower_bound(tuple_cdf.begin(), tuple_cdf.end(), u) - tuple_cdf.begin());
    return std::min(t, n_tuples - 1);
  };
  auto draw_uniform = [&]() {
    if (disk != nullptr) {
      const double r = disk->radius * std::sqrt(uniform01(rng));
      const double phi = -kPi + 2.0 * kPi * uniform01(rng);
      return Point2{disk->center.x + r * std::cos(phi), disk->center.y + r * std::sin(phi)};
    }
    throw std::logic_error("uniform draw outside a disk region");
  };

  const int dim = region_dim(proposal);
  ParticleSet draws(dim);
  draws.reserve(n);

  // Ellipse around foci (q, p_t) in polar form about q: r(phi) solves
  // |q + r u - p_t| = d_hat - r.
  auto ellipse_radius = [&](std::size_t t, double phi) -> double {
    const double wx = tl.a[2 * t] - q_point.x;
    const double wy = tl.a[2 * t + 1] - q_point.y;
    const double proj = wx * std::cos(phi) + wy * std::sin(phi);
    const double denom = 2.0 * (theta_or_d - proj);
    if (!(denom > 1e-9)) return -1.0;
    return (theta_or_d * theta_or_d - (wx * wx + wy * wy)) / denom;
  };

  for (std::size_t k = 0; k < n; ++k) {
    if (dim == 1) {  // AOA -> alpha
      if (uniform01(rng) < kUniformMixture) {
        const auto& iv = std::get<IntervalRegion>(proposal);
        draws.append(iv.hi - (iv.hi - iv.lo) * uniform01(rng), 1.0);
      } else {
        const std::size_t t = pick_tuple();
        draws.append(wrap_angle(-hoisted[t] + sigma_jitter * gauss(rng)), 1.0);
      }
      continue;
    }
    if (uniform01(rng) < kUniformMixture) {
      draws.append(draw_uniform(), 1.0);
      continue;
    }
    const std::size_t t = pick_tuple();
    if (!tuple_valid[t]) {
      draws.append(draw_uniform(), 1.0);
      continue;
    }
    Point2 x{};
    if (fkind == NodeKind::FacAod) {
      const double psi = theta_or_d + sigma_jitter * gauss(rng);
      const double reach = disk->radius + distance(q_point, disk->center);
      const double r = reach * std::sqrt(uniform01(rng));
      x = {q_point.x + r * std::cos(psi), q_point.y + r * std::sin(psi)};
    } else if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarScatterer) {
      const double phi = -kPi + 2.0 * kPi * uniform01(rng);
      const double re = ellipse_radius(t, phi);
      if (!(re > 0.0)) {
        draws.append(draw_uniform(), 1.0);
        continue;
      }
      const double r = re + sigma_jitter * gauss(rng);
      x = {q_point.x + r * std::cos(phi), q_point.y + r * std::sin(phi)};
    } else if (fkind == NodeKind::FacDistance) {  // -> mobile: circle around s_t
      const double phi = -kPi + 2.0 * kPi * uniform01(rng);
      const double r = circle_radius[t] + sigma_jitter * gauss(rng);
      x = {tl.a[2 * t] + r * std::cos(phi), tl.a[2 * t + 1] + r * std::sin(phi)};
    } else {  // AOA -> p or AOA -> s: ray from the conditioning atom
      const double psi = ray_psi[t] + sigma_jitter * gauss(rng);
      const double r = ray_reach[t] * std::sqrt(uniform01(rng));
      x = {ray_origin[t].x + r * std::cos(psi), ray_origin[t].y + r * std::sin(psi)};
    }
    draws.append(x, 1.0);
  }

  // Weight of the tuples whose conditional is undefined; those picks fall
  // back to the uniform draw, so they add to the uniform density share.
  double invalid_mass = 0.0;
  for (std::size_t t = 0; t < tl.count; ++t) {
    if (!tuple_valid[t]) invalid_mass += std::exp(tl.log_weight[t]);
  }

  // Exact mixture density of the proposal at x.
  auto proposal_log_density = [&](const double* xv) -> double {
    const double share = 1.0 - kUniformMixture;
    const double uniform_part =
        (kUniformMixture + share * invalid_mass) * std::exp(log_region);
    if (dim == 1) {
      double acc = 0.0;
      for (std::size_t t = 0; t < tl.count; ++t) {
        const double d = wrap_angle(xv[0] + hoisted[t]);
        if (std::abs(d) < jitter_cut) {
          acc += std::exp(tl.log_weight[t]) *
                 std::exp(-d * d / (2.0 * sigma_jitter * sigma_jitter));
        }
      }
      return std::log(uniform_part + share * norm_jitter * acc);
    }
    const Point2 x{xv[0], xv[1]};
    double acc = 0.0;
    if (fkind == NodeKind::FacAod) {
      const double reach = disk->radius + distance(q_point, disk->center);
      const double rx = distance(x, q_point);
      if (rx <= reach) {
        const double d = wrap_angle(bearing(q_point, x) - theta_or_d);
        if (std::abs(d) < jitter_cut) {
          acc = std::exp(-d * d / (2.0 * sigma_jitter * sigma_jitter)) * norm_jitter * 2.0 /
                (reach * reach);
        }
      }
    } else if (fkind == NodeKind::FacDistance && tkind == NodeKind::VarScatterer) {
      const double rx = std::max(1e-9, distance(x, q_point));
      const double phi = bearing(q_point, x);
      for (std::size_t t = 0; t < tl.count; ++t) {
        if (!tuple_valid[t]) continue;
        const double re = ellipse_radius(t, phi);
        if (!(re > 0.0)) continue;
        const double d = rx - re;
        if (std::abs(d) < jitter_cut) {
          acc += std::exp(tl.log_weight[t]) *
                 std::exp(-d * d / (2.0 * sigma_jitter * sigma_jitter));
        }
      }
      acc *= norm_jitter / (2.0 * kPi * rx);
    } else if (fkind == NodeKind::FacDistance) {
      for (std::size_t t = 0; t < tl.count; ++t) {
        if (!tuple_valid[t]) continue;
        const double rx =
            std::max(1e-9, distance(x, Point2{tl.a[2 * t], tl.a[2 * t + 1]}));
        const double d = rx - circle_radius[t];
        if (std::abs(d) < jitter_cut) {
          acc += std::exp(tl.log_weight[t]) *
                 std::exp(-d * d / (2.0 * sigma_jitter * sigma_jitter)) / rx;
        }
      }
      acc *= norm_jitter / (2.0 * kPi);
    } else {  // AOA rays
      for (std::size_t t = 0; t < tl.count; ++t) {
        const double rx = distance(x, ray_origin[t]);
        if (rx > ray_reach[t]) continue;
        const double d = wrap_angle(bearing(ray_origin[t], x) - ray_psi[t]);
        if (std::abs(d) < jitter_cut) {
          acc += std::exp(tl.log_weight[t]) *
                 std::exp(-d * d / (2.0 * sigma_jitter * sigma_jitter)) * 2.0 /
                 (ray_reach[t] * ray_reach[t]);
        }
      }
      acc *= norm_jitter;
    }
    return std::log(uniform_part + share * acc);
  };

  std::vector<double> log_w;
  eval_log_f(draws, log_w);
  for (std::size_t k = 0; k < n; ++k) {
    const double* x = draws.at(k);
    if (!inside_region(proposal, x)) {
      log_w[k] = kNegInf;
      continue;
    }
    log_w[k] -= proposal_log_density(x);
  }
  draws.weights = normalize_log_weights(log_w);  // throws on degeneracy

  FilterResult result;
  result.ess = effective_sample_size(draws);
  result.particles = resample(draws, mix_seed(seed, 61));
  return result;
}

// --- multiply (variable-to-factor) -------------------------------------------

ParticleSet multiply_messages(const Kde* prev_belief, const std::vector<const Kde*>& incoming,
                              const ProposalRegion& proposal, const EngineConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  if (incoming.empty() && prev_belief == nullptr) {
    throw std::invalid_argument("nothing to multiply");
  }
  const int dim = region_dim(proposal);
  std::vector<const Kde*> kdes;
  if (prev_belief != nullptr) kdes.push_back(prev_belief);
  for (const Kde* kde : incoming) {
    if (kde == nullptr) throw std::invalid_argument("null incoming KDE");
    kdes.push_back(kde);
  }
  for (const Kde* kde : kdes) {
    if (kde->particles.dim != dim) throw std::invalid_argument("KDE dim mismatch with proposal");
    if (!(kde->bandwidth > 0.0)) throw std::invalid_argument("KDE bandwidth must be positive");
  }

  // Defensive mixture proposal: a uniform share over the area of interest
  // plus equal shares of every input KDE. A plain uniform draw degenerates
  // once the product is much narrower than the region.
  const std::size_t n = cfg.n_particles;
  const std::size_t n_kdes = kdes.size();
  RngEngine rng = make_rng(mix_seed(seed, 11));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> atom_cdf(n_kdes);
  for (std::size_t i = 0; i < n_kdes; ++i) {
    const ParticleSet& atoms = kdes[i]->particles;
    atom_cdf[i].resize(atoms.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      acc += atoms.weights[k];
      atom_cdf[i][k] = acc;
    }
  }

  ParticleSet draws(dim);
  draws.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double pick = uniform01(rng);
    if (pick < kUniformMixture) {
      if (const auto* disk = std::get_if<DiskRegion>(&proposal)) {
        const double r = disk->radius * std::sqrt(uniform01(rng));
        const double phi = -kPi + 2.0 * kPi * uniform01(rng);
        draws.append(Point2{disk->center.x + r * std::cos(phi), disk->center.y + r * std::sin(phi)},
                     1.0);
      } else {
        const auto& iv = std::get<IntervalRegion>(proposal);
        draws.append(iv.hi - (iv.hi - iv.lo) * uniform01(rng), 1.0);
      }
    } else {
      const std::size_t i = std::min(
          n_kdes - 1, static_cast<std::size_t>((pick - kUniformMixture) /
                                               (1.0 - kUniformMixture) * static_cast<double>(n_kdes)));
      const auto& cdf = atom_cdf[i];
      const double u = uniform01(rng) * cdf.back();
      const std::size_t a = static_cast<std::size_t>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      const double* atom = kdes[i]->particles.at(std::min(a, cdf.size() - 1));
      const double h = kdes[i]->bandwidth;
      if (dim == 2) {
        draws.append(Point2{atom[0] + h * gauss(rng), atom[1] + h * gauss(rng)}, 1.0);
      } else {
        draws.append(wrap_angle(atom[0] + h * gauss(rng)), 1.0);
      }
    }
  }

  // Target: product of the input KDEs restricted to the area of interest.
  // Each kde_density(x) below serves both the target and the mixture density.
  const double log_region = region_log_density(proposal);
  std::vector<double> log_w(n, kNegInf);
  for (std::size_t k = 0; k < n; ++k) {
    const double* x = draws.at(k);
    if (!inside_region(proposal, x)) continue;
    double log_target = 0.0;
    double mixture = kUniformMixture * std::exp(log_region);
    for (const Kde* kde : kdes) {
      const double dens = kde_density(*kde, x);
      mixture += (1.0 - kUniformMixture) / static_cast<double>(n_kdes) * dens;
      if (dens <= 0.0) {
        log_target = kNegInf;
        break;
      }
      log_target += std::log(dens);
    }
    if (std::isfinite(log_target)) log_w[k] = log_target - std::log(mixture);
  }

  draws.weights = normalize_log_weights(log_w);  // throws on degeneracy
  return resample(draws, mix_seed(seed, 31));
}

ParticleSet update_belief(const Kde* prev_belief, const std::vector<const Kde*>& incoming,
                          const ProposalRegion& proposal, const EngineConfig& cfg,
                          std::uint64_t seed) {
  // Same computation as a variable-to-factor message, taken over every edge.
  return multiply_messages(prev_belief, incoming, proposal, cfg, seed);
}

// --- full engine --------------------------------------------------------------

namespace {

// Stable slot ids so each message update owns a seed stream independent of
// execution order.
enum Slot : int {
  kAodToS = 0,
  kDToP,
  kDToS,
  kAoaToP,
  kAoaToAlpha,
  kAoaToS,
  kPToD,
  kPToAoa,
  kAlphaToAoa,
  kSToD,
  kSToAoa,
  kBeliefP,
  kBeliefAlpha,
  kBeliefS,
  kSlotCount,
};

class Engine {
 public:
  Engine(const Observations& obs, Point2 q_star, const EngineConfig& cfg, const MessageSink* sink)
      : obs_(obs), q_star_(q_star), cfg_(cfg), sink_(sink) {
    cfg_.validate();
    obs_.validate();
    J_ = obs_.num_paths();
    graph_ = build_graph(J_);
    bw_ = resolve_bandwidths(cfg_, obs_.noise);
    cfg_.incoming_subsample = std::min(cfg_.incoming_subsample, cfg_.n_particles);

    // All internal coordinates are base-station centered, which makes the
    // whole run exactly translation-equivariant; q_star is re-added on output.
    q_dirac_ = ParticleSet::dirac(Point2{0.0, 0.0});

    double r_max = 0.0;
    prop_s_.reserve(J_);
    for (int j = 0; j < J_; ++j) {
      const double dj = obs_.triplets[static_cast<std::size_t>(j)].d;
      r_max = std::max(r_max, dj);
      prop_s_.push_back(DiskRegion{{0.0, 0.0}, dj});
    }
    prop_p_ = DiskRegion{{0.0, 0.0}, r_max};
    prop_alpha_ = IntervalRegion{-kPi, kPi};

    d_to_p_.resize(J_);
    d_to_s_.resize(J_);
    aod_to_s_.resize(J_);
    aoa_to_p_.resize(J_);
    aoa_to_alpha_.resize(J_);
    aoa_to_s_.resize(J_);
    p_to_d_.resize(J_);
    p_to_aoa_.resize(J_);
    alpha_to_aoa_.resize(J_);
    s_to_d_.resize(J_);
    s_to_aoa_.resize(J_);
    belief_s_.resize(J_);
  }

  RunResult run() {
    initialization_pass();
    record_estimates(1);
    for (int l = 2; l <= cfg_.n_iterations; ++l) {
      flooding_round(l);
      record_estimates(l);
    }

    RunResult result;
    result.trace = std::move(trace_);
    result.beliefs.mobile = shifted(belief_p_);
    result.beliefs.orientation = belief_alpha_;
    for (int j = 0; j < J_; ++j) result.beliefs.scatterers.push_back(shifted(belief_s_[j]));
    result.beliefs.base = ParticleSet::dirac(q_star_);
    result.beliefs.iteration = cfg_.n_iterations;
    result.degenerate_retries = retries_;
    result.degenerate_fallbacks = fallbacks_;
    return result;
  }

 private:
  std::uint64_t update_seed(int iteration, int slot, int j, int retry) const {
    return mix_seed(mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration)),
                    static_cast<std::uint64_t>(slot * 1024 + (j + 1)),
                    static_cast<std::uint64_t>(retry));
  }

  ParticleSet shifted(const ParticleSet& ps) const {
    if (ps.dim != 2) return ps;
    ParticleSet out = ps;
    for (std::size_t k = 0; k < out.size(); ++k) {
      out.samples[2 * k] = q_star_.x + ps.samples[2 * k];
      out.samples[2 * k + 1] = q_star_.y + ps.samples[2 * k + 1];
    }
    return out;
  }

  void emit(NodeRef from, NodeRef to, const ParticleSet& content, int iteration) const {
    if (sink_ == nullptr) return;
    if (from == to) return;  // belief updates are not edge messages
    Message msg{from, to, shifted(content)};
    (*sink_)(msg, iteration);
  }

  const PathTriple& triplet(int j) const { return obs_.triplets[static_cast<std::size_t>(j)]; }

  // Factor-to-variable update with the degenerate-weight recovery policy:
  // re-draw up to max_degenerate_retries times, then fall back to the uniform
  // proposal and count the event.
  ParticleSet run_filter(int iteration, Slot slot, int j, const FactorContext& factor,
                         NodeRef target, const std::vector<IncomingMessage>& incoming,
                         const ProposalRegion& proposal) {
    for (int retry = 0; retry <= cfg_.max_degenerate_retries; ++retry) {
      try {
        FilterResult r = filter_message(graph_, factor, target, incoming, proposal, cfg_,
                                        update_seed(iteration, slot, j, retry));
        emit(factor.factor, target, r.particles, iteration);
        return std::move(r.particles);
      } catch (const DegenerateWeightsError&) {
        ++retries_;
      }
    }
    --retries_;  // the last failed attempt is counted as the fallback instead
    ++fallbacks_;
    ParticleSet out =
        sample_proposal(proposal, cfg_.n_particles, update_seed(iteration, slot, j, 1000));
    emit(factor.factor, target, out, iteration);
    return out;
  }

  // Annealed KDE bandwidth: start at an eighth of the region extent, halve
  // every iteration, floor at the configured width. Early message products
  // computed at the final width lock onto spurious intersections of the still
  // sparse incoming messages; annealing keeps the beliefs diffuse until the
  // filtered messages have aligned.
  double scheduled_bandwidth(int iteration, const ProposalRegion& proposal, double base) const {
    double extent = 0.0;
    if (const auto* disk = std::get_if<DiskRegion>(&proposal)) {
      extent = disk->radius;
    } else {
      const auto& iv = std::get<IntervalRegion>(proposal);
      extent = iv.hi - iv.lo;
    }
    const double initial = extent / std::sqrt(static_cast<double>(cfg_.n_particles));
    const double decayed = initial * std::pow(0.5, static_cast<double>(iteration - 1));
    return std::max(base, decayed);
  }

  // Variable-to-factor / belief update with the same recovery policy; KDE
  // bandwidths double on every retry.
  ParticleSet run_multiply(int iteration, Slot slot, int j, NodeRef from, NodeRef to,
                           const ParticleSet* prev_belief,
                           const std::vector<const ParticleSet*>& incoming,
                           const ProposalRegion& proposal, double base_bandwidth) {
    const double bandwidth = scheduled_bandwidth(iteration, proposal, base_bandwidth);
    const std::size_t m = cfg_.incoming_subsample;
    for (int retry = 0; retry <= cfg_.max_degenerate_retries; ++retry) {
      const std::uint64_t seed = update_seed(iteration, slot, j, retry);
      const double h = bandwidth * static_cast<double>(1 << retry);
      std::vector<Kde> kdes;
      kdes.reserve(incoming.size() + 1);
      if (prev_belief != nullptr) {
        kdes.push_back(make_kde(prev_belief->size() > m
                                    ? resample_to(*prev_belief, m, mix_seed(seed, 41))
                                    : *prev_belief,
                                h));
      }
      for (std::size_t i = 0; i < incoming.size(); ++i) {
        const ParticleSet& in = *incoming[i];
        kdes.push_back(
            make_kde(in.size() > m ? resample_to(in, m, mix_seed(seed, 42 + i)) : in, h));
      }
      std::vector<const Kde*> kde_ptrs;
      const Kde* prev_ptr = nullptr;
      std::size_t start = 0;
      if (prev_belief != nullptr) {
        prev_ptr = &kdes[0];
        start = 1;
      }
      for (std::size_t i = start; i < kdes.size(); ++i) kde_ptrs.push_back(&kdes[i]);
      try {
        ParticleSet out = multiply_messages(prev_ptr, kde_ptrs, proposal, cfg_, seed);
        emit(from, to, out, iteration);
        return out;
      } catch (const DegenerateWeightsError&) {
        ++retries_;
      }
    }
    --retries_;
    ++fallbacks_;
    ParticleSet out =
        sample_proposal(proposal, cfg_.n_particles, update_seed(iteration, slot, j, 1000));
    emit(from, to, out, iteration);
    return out;
  }

  FactorContext distance_ctx(int j) const {
    return {{NodeKind::FacDistance, j}, triplet(j).d, obs_.noise.sigma_d[static_cast<std::size_t>(j)]};
  }
  FactorContext aod_ctx(int j) const {
    return {{NodeKind::FacAod, j}, triplet(j).theta_tx,
            obs_.noise.sigma_tx[static_cast<std::size_t>(j)]};
  }
  FactorContext aoa_ctx(int j) const {
    return {{NodeKind::FacAoa, j}, triplet(j).theta_rx,
            obs_.noise.sigma_rx[static_cast<std::size_t>(j)]};
  }

  NodeRef p_node() const { return {NodeKind::VarMobile, -1}; }
  NodeRef alpha_node() const { return {NodeKind::VarOrientation, -1}; }
  NodeRef q_node() const { return {NodeKind::VarBase, -1}; }
  NodeRef s_node(int j) const { return {NodeKind::VarScatterer, j}; }

  IncomingMessage from_q() const { return {q_node(), &q_dirac_}; }

  // The published 9-step initialization order; produces the iteration-1
  // messages and beliefs.
  void initialization_pass() {
    const int l = 1;
    // 1) AOD_j -> s_j
    for (int j = 0; j < J_; ++j) {
      aod_to_s_[j] = run_filter(l, kAodToS, j, aod_ctx(j), s_node(j), {from_q()}, prop_s_[j]);
    }
    // 2) s_j -> d_j is a straight copy of the AOD message
    for (int j = 0; j < J_; ++j) {
      s_to_d_[j] = aod_to_s_[j];
      emit(s_node(j), {NodeKind::FacDistance, j}, s_to_d_[j], l);
    }
    // 3) d_j -> p
    for (int j = 0; j < J_; ++j) {
      d_to_p_[j] = run_filter(l, kDToP, j, distance_ctx(j), p_node(),
                              {from_q(), {s_node(j), &s_to_d_[j]}}, prop_p_);
    }
    // 4) p -> d_j and p -> aoa_j (no previous belief yet)
    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> other;
      for (int i = 0; i < J_; ++i) {
        if (i != j) other.push_back(&d_to_p_[i]);
      }
      p_to_d_[j] = run_multiply(l, kPToD, j, p_node(), {NodeKind::FacDistance, j}, nullptr, other,
                                prop_p_, bw_.position);
    }
    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> all;
      for (int i = 0; i < J_; ++i) all.push_back(&d_to_p_[i]);
      p_to_aoa_[j] = run_multiply(l, kPToAoa, j, p_node(), {NodeKind::FacAoa, j}, nullptr, all,
                                  prop_p_, bw_.position);
    }
    // 5) d_j -> s_j
    for (int j = 0; j < J_; ++j) {
      d_to_s_[j] = run_filter(l, kDToS, j, distance_ctx(j), s_node(j),
                              {from_q(), {p_node(), &p_to_d_[j]}}, prop_s_[j]);
    }
    // 6) s_j -> aoa_j
    for (int j = 0; j < J_; ++j) {
      s_to_aoa_[j] = run_multiply(l, kSToAoa, j, s_node(j), {NodeKind::FacAoa, j}, nullptr,
                                  {&aod_to_s_[j], &d_to_s_[j]}, prop_s_[j], bw_.position);
    }
    // 7) aoa_j -> alpha
    for (int j = 0; j < J_; ++j) {
      aoa_to_alpha_[j] =
          run_filter(l, kAoaToAlpha, j, aoa_ctx(j), alpha_node(),
                     {{p_node(), &p_to_aoa_[j]}, {s_node(j), &s_to_aoa_[j]}}, prop_alpha_);
    }
    // 8) alpha -> aoa_j
    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> other;
      for (int i = 0; i < J_; ++i) {
        if (i != j) other.push_back(&aoa_to_alpha_[i]);
      }
      alpha_to_aoa_[j] = run_multiply(l, kAlphaToAoa, j, alpha_node(), {NodeKind::FacAoa, j},
                                      nullptr, other, prop_alpha_, bw_.orientation);
    }
    // 9) aoa_j -> p and aoa_j -> s_j
    for (int j = 0; j < J_; ++j) {
      aoa_to_p_[j] =
          run_filter(l, kAoaToP, j, aoa_ctx(j), p_node(),
                     {{alpha_node(), &alpha_to_aoa_[j]}, {s_node(j), &s_to_aoa_[j]}}, prop_p_);
    }
    for (int j = 0; j < J_; ++j) {
      aoa_to_s_[j] =
          run_filter(l, kAoaToS, j, aoa_ctx(j), s_node(j),
                     {{p_node(), &p_to_aoa_[j]}, {alpha_node(), &alpha_to_aoa_[j]}}, prop_s_[j]);
    }
    update_beliefs(l, /*use_prev=*/false);
  }

  // One flooding round: every factor-to-variable message from the previous
  // round's variable-to-factor messages, then every variable-to-factor
  // message and belief from the fresh factor messages and the previous
  // beliefs.
  void flooding_round(int l) {
    std::vector<ParticleSet> new_aod(J_), new_d_to_p(J_), new_d_to_s(J_), new_aoa_to_p(J_),
        new_aoa_to_alpha(J_), new_aoa_to_s(J_);
    for (int j = 0; j < J_; ++j) {
      new_aod[j] = run_filter(l, kAodToS, j, aod_ctx(j), s_node(j), {from_q()}, prop_s_[j]);
      new_d_to_p[j] = run_filter(l, kDToP, j, distance_ctx(j), p_node(),
                                 {from_q(), {s_node(j), &s_to_d_[j]}}, prop_p_);
      new_d_to_s[j] = run_filter(l, kDToS, j, distance_ctx(j), s_node(j),
                                 {from_q(), {p_node(), &p_to_d_[j]}}, prop_s_[j]);
      new_aoa_to_p[j] =
          run_filter(l, kAoaToP, j, aoa_ctx(j), p_node(),
                     {{alpha_node(), &alpha_to_aoa_[j]}, {s_node(j), &s_to_aoa_[j]}}, prop_p_);
      new_aoa_to_alpha[j] =
          run_filter(l, kAoaToAlpha, j, aoa_ctx(j), alpha_node(),
                     {{p_node(), &p_to_aoa_[j]}, {s_node(j), &s_to_aoa_[j]}}, prop_alpha_);
      new_aoa_to_s[j] =
          run_filter(l, kAoaToS, j, aoa_ctx(j), s_node(j),
                     {{p_node(), &p_to_aoa_[j]}, {alpha_node(), &alpha_to_aoa_[j]}}, prop_s_[j]);
    }
    aod_to_s_ = std::move(new_aod);
    d_to_p_ = std::move(new_d_to_p);
    d_to_s_ = std::move(new_d_to_s);
    aoa_to_p_ = std::move(new_aoa_to_p);
    aoa_to_alpha_ = std::move(new_aoa_to_alpha);
    aoa_to_s_ = std::move(new_aoa_to_s);

    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> in;
      for (int i = 0; i < J_; ++i) {
        if (i != j) in.push_back(&d_to_p_[i]);
      }
      for (int i = 0; i < J_; ++i) in.push_back(&aoa_to_p_[i]);
      p_to_d_[j] = run_multiply(l, kPToD, j, p_node(), {NodeKind::FacDistance, j}, &belief_p_, in,
                                prop_p_, bw_.position);
    }
    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> in;
      for (int i = 0; i < J_; ++i) in.push_back(&d_to_p_[i]);
      for (int i = 0; i < J_; ++i) {
        if (i != j) in.push_back(&aoa_to_p_[i]);
      }
      p_to_aoa_[j] = run_multiply(l, kPToAoa, j, p_node(), {NodeKind::FacAoa, j}, &belief_p_, in,
                                  prop_p_, bw_.position);
    }
    for (int j = 0; j < J_; ++j) {
      std::vector<const ParticleSet*> in;
      for (int i = 0; i < J_; ++i) {
        if (i != j) in.push_back(&aoa_to_alpha_[i]);
      }
      alpha_to_aoa_[j] = run_multiply(l, kAlphaToAoa, j, alpha_node(), {NodeKind::FacAoa, j},
                                      &belief_alpha_, in, prop_alpha_, bw_.orientation);
    }
    for (int j = 0; j < J_; ++j) {
      s_to_d_[j] = run_multiply(l, kSToD, j, s_node(j), {NodeKind::FacDistance, j}, &belief_s_[j],
                                {&aod_to_s_[j], &aoa_to_s_[j]}, prop_s_[j], bw_.position);
      s_to_aoa_[j] = run_multiply(l, kSToAoa, j, s_node(j), {NodeKind::FacAoa, j}, &belief_s_[j],
                                  {&aod_to_s_[j], &d_to_s_[j]}, prop_s_[j], bw_.position);
    }
    update_beliefs(l, /*use_prev=*/true);
  }

  void update_beliefs(int l, bool use_prev) {
    {
      std::vector<const ParticleSet*> in;
      for (int i = 0; i < J_; ++i) in.push_back(&d_to_p_[i]);
      for (int i = 0; i < J_; ++i) in.push_back(&aoa_to_p_[i]);
      belief_p_ = run_multiply(l, kBeliefP, -1, p_node(), p_node(),
                               use_prev ? &belief_p_ : nullptr, in, prop_p_, bw_.position);
    }
    {
      std::vector<const ParticleSet*> in;
      for (int i = 0; i < J_; ++i) in.push_back(&aoa_to_alpha_[i]);
      belief_alpha_ =
          run_multiply(l, kBeliefAlpha, -1, alpha_node(), alpha_node(),
                       use_prev ? &belief_alpha_ : nullptr, in, prop_alpha_, bw_.orientation);
    }
    for (int j = 0; j < J_; ++j) {
      belief_s_[j] = run_multiply(l, kBeliefS, j, s_node(j), s_node(j),
                                  use_prev ? &belief_s_[j] : nullptr,
                                  {&aod_to_s_[j], &d_to_s_[j], &aoa_to_s_[j]}, prop_s_[j],
                                  bw_.position);
    }
  }

  void record_estimates(int l) {
    StateVector sv;
    sv.mobile.position = q_star_ + mmse_point(belief_p_);
    sv.mobile.orientation = mmse_angle(belief_alpha_);
    sv.incidence_points.reserve(static_cast<std::size_t>(J_));
    for (int j = 0; j < J_; ++j) {
      sv.incidence_points.push_back(q_star_ + mmse_point(belief_s_[j]));
    }
    trace_.push_back(std::move(sv));
    if (static_cast<int>(trace_.size()) != l) {
      throw std::logic_error("estimate trace out of step with the iteration count");
    }
  }

  Observations obs_;
  Point2 q_star_;
  EngineConfig cfg_;
  const MessageSink* sink_ = nullptr;
  int J_ = 0;
  FactorGraph graph_;
  ResolvedBandwidths bw_;
  ParticleSet q_dirac_;
  ProposalRegion prop_p_ = DiskRegion{};
  ProposalRegion prop_alpha_ = IntervalRegion{};
  std::vector<ProposalRegion> prop_s_;

  std::vector<ParticleSet> d_to_p_, d_to_s_, aod_to_s_, aoa_to_p_, aoa_to_alpha_, aoa_to_s_;
  std::vector<ParticleSet> p_to_d_, p_to_aoa_, alpha_to_aoa_, s_to_d_, s_to_aoa_;
  ParticleSet belief_p_, belief_alpha_;
  std::vector<ParticleSet> belief_s_;
  EstimateTrace trace_;
  int retries_ = 0;
  int fallbacks_ = 0;
};

}  // namespace

RunResult run_nbp(const Observations& obs, Point2 q_star, const EngineConfig& cfg,
                  const MessageSink* sink) {
  Engine engine(obs, q_star, cfg, sink);
  return engine.run();
}

}  // namespace nbploc
