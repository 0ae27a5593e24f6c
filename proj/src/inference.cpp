#include "nllm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

StackState mix(ad::Graph& g, ad::Var weights, const std::vector<StackState>& local) {
  const std::size_t layers = local.front().size();
  StackState out(layers);
  std::vector<ad::Var> hs(local.size()), cs(local.size());
  for (std::size_t k = 0; k < layers; ++k) {
    for (std::size_t e = 0; e < local.size(); ++e) {
      hs[e] = local[e][k].h;
      cs[e] = local[e][k].c;
    }
    out[k] = {g.weighted_sum(weights, hs), g.weighted_sum(weights, cs)};
  }
  return out;
}

}  // namespace

ApproxMode parse_approx_mode(std::string_view s) {
  if (s == "direct") return ApproxMode::Direct;
  if (s == "mc") return ApproxMode::MonteCarlo;
  if (s == "marginal") return ApproxMode::Marginal;
  if (s == "gumbel") return ApproxMode::Gumbel;
  throw ConfigError("unknown approximation '" + std::string(s) + "' (expected direct, mc, marginal or gumbel)");
}

std::string_view to_string(ApproxMode m) {
  switch (m) {
    case ApproxMode::Direct: return "direct";
    case ApproxMode::MonteCarlo: return "mc";
    case ApproxMode::Marginal: return "marginal";
    case ApproxMode::Gumbel: return "gumbel";
  }
  return "?";
}

double GumbelConfig::temperature(long batch) const {
  if (!(tau0 > 0.0) || !(tau_min > 0.0) || !(decay > 0.0)) throw ConfigError("temperature schedule must be positive");
  return std::max(tau_min, tau0 * std::pow(decay, static_cast<double>(batch)));
}

StackState local_update(ad::Graph& g, const LatticeNetwork& net, const NodeState& source, const Lattice& lattice,
                        const Edge& edge) {
  if (!source.computed() || source.layers.empty()) {
    throw NumericError("local update from uncomputed node " + std::to_string(edge.source));
  }
  return net.advance(g, source.layers, lattice, edge);
}

PredecessorDist predecessor_dist(ad::Graph& g, std::span<const int> edges, std::span<const ad::Var> joint,
                                 std::vector<StackState> local) {
  if (edges.empty()) throw ConfigError("node has no incoming edges");
  if (joint.size() != edges.size() || local.size() != edges.size()) {
    throw ShapeError("predecessor scores do not match the incoming edges");
  }
  PredecessorDist d;
  d.edges.assign(edges.begin(), edges.end());
  d.local = std::move(local);
  ad::Var scores = g.concat(joint);
  d.log_normalizer = g.logsumexp(scores);
  d.log_weights = g.log_softmax(scores);
  const auto lw = d.log_weights.value();
  d.weights.resize(lw.size());
  for (std::size_t k = 0; k < lw.size(); ++k) d.weights[k] = std::exp(lw[k]);
  return d;
}

CombineResult combine_states(ad::Graph& g, ApproxMode mode, const PredecessorDist& dist, double tau,
                             std::mt19937_64& rng) {
  if (mode == ApproxMode::Gumbel && !(tau > 0.0)) throw ConfigError("Gumbel temperature must be positive");
  const std::size_t n = dist.edges.size();
  CombineResult r;
  if (n == 1) {
    r.state = dist.local.front();
    r.selected = 0;
    r.mixing = {1.0};
    return r;
  }
  switch (mode) {
    case ApproxMode::Direct: {
      r.mixing.assign(n, 1.0);
      r.state = mix(g, g.constant(Shape::vector(static_cast<int>(n)), r.mixing), dist.local);
      break;
    }
    case ApproxMode::MonteCarlo: {
      std::discrete_distribution<int> pick(dist.weights.begin(), dist.weights.end());
      r.selected = pick(rng);
      r.mixing.assign(n, 0.0);
      r.mixing[static_cast<std::size_t>(r.selected)] = 1.0;
      r.state = dist.local[static_cast<std::size_t>(r.selected)];
      break;
    }
    case ApproxMode::Marginal: {
      r.mixing = dist.weights;
      r.state = mix(g, g.exp(dist.log_weights), dist.local);
      break;
    }
    case ApproxMode::Gumbel: {
      std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
      std::vector<double> noise(n);
      for (double& x : noise) x = -std::log(-std::log(unif(rng)));
      ad::Var perturbed = g.add(g.clamp_min(dist.log_weights, kLogWeightFloor),
                                g.constant(Shape::vector(static_cast<int>(n)), noise));
      ad::Var w = g.exp(g.log_softmax(g.affine(perturbed, 1.0 / tau)));
      const auto wv = w.value();
      r.mixing.assign(wv.begin(), wv.end());
      r.state = mix(g, w, dist.local);
      break;
    }
  }
  return r;
}

ForwardResult forward_marginalize(ad::Graph& g, const Lattice& lattice, const LatticeNetwork& net,
                                  const ForwardOptions& options) {
  if (options.mode == ApproxMode::Gumbel && !(options.tau > 0.0)) {
    throw ConfigError("Gumbel temperature must be positive");
  }
  const int n = lattice.node_count();
  ForwardResult r;
  r.nodes.resize(static_cast<std::size_t>(n));
  r.edge_logprob.resize(static_cast<std::size_t>(lattice.edge_count()));
  r.alpha.assign(static_cast<std::size_t>(n), kNegInf);
  r.edge_lp.assign(static_cast<std::size_t>(lattice.edge_count()), kNegInf);
  r.selected_edge.assign(static_cast<std::size_t>(n), -1);
  std::mt19937_64 rng(options.seed);

  r.nodes[0] = {net.initial_state(g), g.scalar(0.0)};
  r.alpha[0] = 0.0;

  std::vector<ad::Var> joint;
  std::vector<StackState> local;
  for (int j = 0; j < n; ++j) {
    if (j > 0) {
      const auto in = lattice.incoming(j);
      joint.clear();
      local.clear();
      for (int id : in) {
        const Edge& e = lattice.edge(id);
        const NodeState& src = r.nodes[static_cast<std::size_t>(e.source)];
        joint.push_back(g.add(src.alpha, r.edge_logprob[static_cast<std::size_t>(id)]));
        local.push_back(local_update(g, net, src, lattice, e));
        ++r.local_updates;
      }
      PredecessorDist dist = predecessor_dist(g, in, joint, std::move(local));
      local = {};
      CombineResult c = combine_states(g, options.mode, dist, options.tau, rng);
      if (options.mode == ApproxMode::MonteCarlo && in.size() > 1) {
        r.selected_edge[static_cast<std::size_t>(j)] = in[static_cast<std::size_t>(c.selected)];
      }
      r.nodes[static_cast<std::size_t>(j)] = {std::move(c.state), dist.log_normalizer};
      r.alpha[static_cast<std::size_t>(j)] = dist.log_normalizer.item();
      if (!std::isfinite(r.alpha[static_cast<std::size_t>(j)])) {
        throw NumericError("non-finite prefix log-probability at node " + std::to_string(j));
      }
    }
    const auto out = lattice.outgoing(j);
    if (out.empty()) continue;
    std::vector<ad::Var> lps = net.edge_logprobs(g, r.nodes[static_cast<std::size_t>(j)].layers, lattice, j, out);
    if (lps.size() != out.size()) throw ShapeError("network returned the wrong number of edge scores");
    for (std::size_t k = 0; k < out.size(); ++k) {
      r.edge_logprob[static_cast<std::size_t>(out[k])] = lps[k];
      r.edge_lp[static_cast<std::size_t>(out[k])] = lps[k].item();
    }
  }
  r.log_prob = r.nodes.back().alpha;
  return r;
}

double brute_force_logprob(const Lattice& lattice, const LatticeNetwork& net, std::size_t cap) {
  const std::vector<SegPath> paths = enumerate_paths(lattice, cap);
  double total = kNegInf;
  ad::Graph g;
  for (const SegPath& path : paths) {
    g.clear();
    StackState state = net.initial_state(g);
    double lp = 0.0;
    for (int id : path.edges) {
      const Edge& e = lattice.edge(id);
      const int one[1] = {id};
      lp += net.edge_logprobs(g, state, lattice, e.source, one).front().item();
      state = net.advance(g, state, lattice, e);
    }
    total = log_add(total, lp);
  }
  return total;
}

std::vector<double> edge_posteriors(const Lattice& lattice, const ForwardResult& forward) {
  return edge_posteriors(lattice, forward.alpha, forward.edge_lp);
}

std::vector<double> edge_posteriors(const Lattice& lattice, std::span<const double> alpha,
                                    std::span<const double> edge_lp) {
  const int n = lattice.node_count();
  if (static_cast<int>(alpha.size()) != n || static_cast<int>(edge_lp.size()) != lattice.edge_count()) {
    throw ShapeError("forward results do not match the lattice");
  }
  std::vector<double> beta(static_cast<std::size_t>(n), kNegInf);
  beta.back() = 0.0;
  for (int i = n - 2; i >= 0; --i) {
    for (int id : lattice.outgoing(i)) {
      const Edge& e = lattice.edge(id);
      beta[static_cast<std::size_t>(i)] =
          log_add(beta[static_cast<std::size_t>(i)], edge_lp[static_cast<std::size_t>(id)] + beta[static_cast<std::size_t>(e.target)]);
    }
  }
  const double total = alpha.back();
  if (!std::isfinite(total)) throw NumericError("supremum is unreachable");
  std::vector<double> post(static_cast<std::size_t>(lattice.edge_count()), 0.0);
  for (int id = 0; id < lattice.edge_count(); ++id) {
    const Edge& e = lattice.edge(id);
    const double a = alpha[static_cast<std::size_t>(e.source)];
    if (!std::isfinite(a)) throw NumericError("node " + std::to_string(e.source) + " is unreachable");
    post[static_cast<std::size_t>(id)] =
        std::exp(a + edge_lp[static_cast<std::size_t>(id)] + beta[static_cast<std::size_t>(e.target)] - total);
  }
  return post;
}

GreedySegmentation greedy_segmentation(const Lattice& lattice, std::span<const double> posteriors) {
  if (static_cast<int>(posteriors.size()) != lattice.edge_count()) throw ShapeError("posteriors do not match the lattice");
  GreedySegmentation out;
  out.path.boundaries.push_back(0);
  int node = 0;
  while (node != lattice.supremum()) {
    int best = -1;
    for (int id : lattice.outgoing(node)) {
      if (best < 0) {
        best = id;
        continue;
      }
      const Edge& e = lattice.edge(id);
      const Edge& b = lattice.edge(best);
      const double pe = posteriors[static_cast<std::size_t>(id)];
      const double pb = posteriors[static_cast<std::size_t>(best)];
      if (pe > pb || (pe == pb && (e.length() < b.length() || (e.length() == b.length() && e.sense < b.sense)))) {
        best = id;
      }
    }
    out.path.edges.push_back(best);
    out.posteriors.push_back(posteriors[static_cast<std::size_t>(best)]);
    node = lattice.edge(best).target;
    out.path.boundaries.push_back(node);
  }
  return out;
}

std::vector<std::vector<double>> sense_posteriors(const Lattice& lattice, std::span<const double> posteriors) {
  if (lattice.kind() != LatticeKind::Multi) throw ConfigError("sense posteriors need a multilattice");
  if (static_cast<int>(posteriors.size()) != lattice.edge_count()) throw ShapeError("posteriors do not match the lattice");
  std::vector<std::vector<double>> out(static_cast<std::size_t>(lattice.token_count()));
  for (int id = 0; id < lattice.edge_count(); ++id) {
    const Edge& e = lattice.edge(id);
    auto& slot = out[static_cast<std::size_t>(e.source)];
    if (static_cast<int>(slot.size()) <= e.sense) slot.resize(static_cast<std::size_t>(e.sense) + 1, 0.0);
    slot[static_cast<std::size_t>(e.sense)] = posteriors[static_cast<std::size_t>(id)];
  }
  return out;
}

std::vector<double> coverage(const Lattice& lattice, std::span<const double> posteriors) {
  std::vector<double> out(static_cast<std::size_t>(lattice.token_count()), 0.0);
  for (int id = 0; id < lattice.edge_count(); ++id) {
    const Edge& e = lattice.edge(id);
    for (int t = e.source; t < e.target; ++t) out[static_cast<std::size_t>(t)] += posteriors[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace nllm
