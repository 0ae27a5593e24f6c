#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "nllm/cells.hpp"
#include "nllm/lattice.hpp"

namespace nllm {

/// How a node's recurrent state is formed from its incoming edges' local states.
enum class ApproxMode {
  Direct,      // unweighted sum
  MonteCarlo,  // one edge sampled from the predecessor distribution
  Marginal,    // expectation under the predecessor distribution
  Gumbel,      // Gumbel-softmax relaxation of the sample
};

ApproxMode parse_approx_mode(std::string_view s);
std::string_view to_string(ApproxMode m);

/// Temperature schedule: tau(batch) = max(tau_min, tau0 * decay^batch).
struct GumbelConfig {
  double tau0 = 5.0;
  double tau_min = 0.5;
  double decay = 0.9995;
  double temperature(long batch) const;
};

/// What the lattice recursion needs from a network. Implementations may keep
/// per-pass scratch state and are not required to be thread-safe.
class LatticeNetwork {
 public:
  virtual ~LatticeNetwork() = default;
  /// State at the empty prefix.
  virtual StackState initial_state(ad::Graph& g) const = 0;
  /// Local state after consuming one edge from the given source state.
  virtual StackState advance(ad::Graph& g, const StackState& source, const Lattice& lattice, const Edge& edge) const = 0;
  /// log p(chunk of each edge | source state), for edges leaving `node`.
  virtual std::vector<ad::Var> edge_logprobs(ad::Graph& g, const StackState& state, const Lattice& lattice, int node,
                                             std::span<const int> edge_ids) const = 0;
};

struct NodeState {
  StackState layers;
  ad::Var alpha;  // log p(prefix)
  bool computed() const { return alpha.valid(); }
};

/// Posterior over a node's incoming edges given that the node is reached.
struct PredecessorDist {
  std::vector<int> edges;
  ad::Var log_weights;  // log M, one entry per edge
  ad::Var log_normalizer;  // alpha of the node
  std::vector<double> weights;
  std::vector<StackState> local;
};

StackState local_update(ad::Graph& g, const LatticeNetwork& net, const NodeState& source, const Lattice& lattice,
                        const Edge& edge);

/// `joint` holds alpha(source) + log p(chunk | source) per incoming edge.
PredecessorDist predecessor_dist(ad::Graph& g, std::span<const int> edges, std::span<const ad::Var> joint,
                                 std::vector<StackState> local);

/// Floor applied to log M before Gumbel noise is added.
inline constexpr double kLogWeightFloor = -30.0;

struct CombineResult {
  StackState state;
  int selected = -1;            // position in dist.edges chosen by monte-carlo mode
  std::vector<double> mixing;   // weights applied to the local states
};

/// Forms a node state from its predecessors; one weight vector is shared by
/// every layer's h and c.
CombineResult combine_states(ad::Graph& g, ApproxMode mode, const PredecessorDist& dist, double tau,
                             std::mt19937_64& rng);

struct ForwardOptions {
  ApproxMode mode = ApproxMode::Marginal;
  double tau = 1.0;
  std::uint64_t seed = 0;  // monte-carlo and Gumbel draws
};

struct ForwardResult {
  ad::Var log_prob;
  std::vector<NodeState> nodes;
  std::vector<ad::Var> edge_logprob;
  std::vector<double> alpha;
  std::vector<double> edge_lp;
  std::vector<int> selected_edge;  // per node, monte-carlo choice or -1
  long local_updates = 0;
};

/// Prefix recursion alpha(j) = logsumexp_{e into j} alpha(src e) + log p(e | src e),
/// visiting nodes in index order.
ForwardResult forward_marginalize(ad::Graph& g, const Lattice& lattice, const LatticeNetwork& net,
                                  const ForwardOptions& options);

/// Exact marginal by enumerating every path and running the network along
/// each one separately.
double brute_force_logprob(const Lattice& lattice, const LatticeNetwork& net, std::size_t cap = kDefaultPathCap);

/// p(path uses edge) from the forward log-probabilities and a backward sweep
/// over the same edge scores.
std::vector<double> edge_posteriors(const Lattice& lattice, const ForwardResult& forward);
std::vector<double> edge_posteriors(const Lattice& lattice, std::span<const double> alpha,
                                    std::span<const double> edge_lp);

struct GreedySegmentation {
  SegPath path;
  std::vector<double> posteriors;
};

/// From node 0 follow the most probable outgoing edge; ties go to the shorter
/// chunk, then to the lower sense index.
GreedySegmentation greedy_segmentation(const Lattice& lattice, std::span<const double> posteriors);

/// Per token position, the posteriors of its parallel sense edges.
std::vector<std::vector<double>> sense_posteriors(const Lattice& lattice, std::span<const double> posteriors);

/// Per token position, the summed posterior of all edges covering it.
std::vector<double> coverage(const Lattice& lattice, std::span<const double> posteriors);

}  // namespace nllm
