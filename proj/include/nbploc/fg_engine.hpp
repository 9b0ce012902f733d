#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbploc/geometry.hpp"
#include "nbploc/particles.hpp"

namespace nbploc {

// Nodes of the posterior factor graph. Per-path nodes carry the path index j,
// the mobile/orientation/base nodes use j = -1.
enum class NodeKind {
  VarMobile,       // p
  VarOrientation,  // alpha
  VarScatterer,    // s_j
  VarBase,         // q (Dirac, never a message target)
  FacDistance,     // d_j
  FacAod,          // theta_TX,j
  FacAoa,          // theta_RX,j
};

struct NodeRef {
  NodeKind kind = NodeKind::VarMobile;
  int j = -1;

  bool is_factor() const {
    return kind == NodeKind::FacDistance || kind == NodeKind::FacAod || kind == NodeKind::FacAoa;
  }
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

std::string node_name(const NodeRef& node);  // "p", "alpha", "q", "s0", "d0", "aod0", "aoa0", ...

// Bipartite graph with the fixed topology: d_j -- {p, q, s_j},
// aod_j -- {q, s_j}, aoa_j -- {p, alpha, s_j}.
struct FactorGraph {
  int num_paths = 0;
  std::vector<NodeRef> variable_nodes;
  std::vector<NodeRef> factor_nodes;
  std::vector<std::pair<NodeRef, NodeRef>> edges;  // (factor, variable)

  std::vector<NodeRef> neighbors(const NodeRef& node) const;
  bool has_edge(const NodeRef& factor, const NodeRef& variable) const;
};

FactorGraph build_graph(int num_paths);  // throws InsufficientPathsError for J < 3

struct Message {
  NodeRef from;
  NodeRef to;
  ParticleSet content;
};

struct BeliefState {
  ParticleSet mobile;                   // dim 2
  ParticleSet orientation;              // dim 1
  std::vector<ParticleSet> scatterers;  // dim 2, one per path
  ParticleSet base;                     // single particle at q*
  int iteration = 0;
};

struct EngineConfig {
  std::size_t n_particles = 2000;                  // N_s
  int n_iterations = 6;                            // N_iter, init pass counted as iteration 1
  std::optional<double> bandwidth_position;        // meters; default max(0.5, 2*sigma_d)
  std::optional<double> bandwidth_orientation;     // radians; default max(0.5 deg, sigma_rx)
  std::size_t incoming_subsample = 512;            // M, capped at n_particles
  std::uint64_t seed = 1;
  int max_degenerate_retries = 3;

  void validate() const;
};

struct ResolvedBandwidths {
  double position = 0.0;
  double orientation = 0.0;
};

ResolvedBandwidths resolve_bandwidths(const EngineConfig& cfg, const NoiseSpec& noise);

// MMSE estimates extracted after every iteration, trace[l-1] = iteration l.
using EstimateTrace = std::vector<StateVector>;

struct RunResult {
  EstimateTrace trace;
  BeliefState beliefs;
  int degenerate_retries = 0;   // recoveries by re-drawing the proposal
  int degenerate_fallbacks = 0; // updates that fell back to the uniform proposal
};

using MessageSink = std::function<void(const Message& message, int iteration)>;

// --- single-update building blocks ------------------------------------------

// The observed value and noise sigma driving one factor node.
struct FactorContext {
  NodeRef factor;
  double observed = 0.0;  // d_hat, theta_TX_hat, or theta_RX_hat
  double sigma = 1.0;
};

// An incoming message, tagged with the variable node it came from.
struct IncomingMessage {
  NodeRef from;
  const ParticleSet* content = nullptr;
};

struct FilterResult {
  ParticleSet particles;
  double ess = 0.0;  // effective sample size of the importance weights
};

// Factor-to-variable update: draw from the proposal, weight every draw by the
// Monte Carlo sum of the factor likelihood over incoming-particle tuples
// (each incoming message subsampled to M by resampling), divide by the
// proposal density, normalize, resample. Throws DegenerateWeightsError when
// no draw receives positive weight.
FilterResult filter_message(const FactorGraph& graph, const FactorContext& factor,
                            const NodeRef& target, const std::vector<IncomingMessage>& incoming,
                            const ProposalRegion& proposal, const EngineConfig& cfg,
                            std::uint64_t seed);

// Variable-to-factor update: draw from the proposal, weight by the product of
// the previous-belief KDE (nullptr = uniform, used during initialization) and
// all incoming KDEs, divide by the proposal density, normalize, resample.
ParticleSet multiply_messages(const Kde* prev_belief, const std::vector<const Kde*>& incoming,
                              const ProposalRegion& proposal, const EngineConfig& cfg,
                              std::uint64_t seed);

// Belief update: multiply_messages over every incoming edge.
ParticleSet update_belief(const Kde* prev_belief, const std::vector<const Kde*>& incoming,
                          const ProposalRegion& proposal, const EngineConfig& cfg,
                          std::uint64_t seed);

// --- full estimator ----------------------------------------------------------

// Initialization schedule (iteration 1) followed by n_iterations - 1 flooding
// rounds. Deterministic under cfg.seed; every message update derives its own
// stream from (seed, iteration, edge). The optional sink observes every
// computed message (resampled to uniform weights).
RunResult run_nbp(const Observations& obs, Point2 q_star, const EngineConfig& cfg,
                  const MessageSink* sink = nullptr);

}  // namespace nbploc
