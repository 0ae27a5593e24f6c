#include "nllm/lattice.hpp"

#include <algorithm>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

Lattice::Lattice(std::vector<int> tokens, LatticeKind kind, std::vector<Edge> edges)
    : tokens_(std::move(tokens)), kind_(kind), edges_(std::move(edges)) {
  if (tokens_.empty()) throw ConfigError("lattice over an empty token sequence");
  const int n = node_count();
  std::vector<int> in_deg(static_cast<std::size_t>(n), 0), out_deg(static_cast<std::size_t>(n), 0);
  for (const Edge& e : edges_) {
    if (e.source < 0 || e.target > token_count() || e.source >= e.target) {
      throw ConfigError("lattice edge must go from a lower to a strictly higher node");
    }
    if (e.sense < 0) throw ConfigError("negative sense index");
    ++in_deg[static_cast<std::size_t>(e.target)];
    ++out_deg[static_cast<std::size_t>(e.source)];
  }
  for (int j = 1; j < n; ++j) {
    if (in_deg[static_cast<std::size_t>(j)] == 0) throw ConfigError("lattice node " + std::to_string(j) + " is unreachable");
  }
  for (int j = 0; j + 1 < n; ++j) {
    if (out_deg[static_cast<std::size_t>(j)] == 0) throw ConfigError("lattice node " + std::to_string(j) + " is a dead end");
  }

  auto build = [&](const std::vector<int>& deg, std::vector<int>& offsets, std::vector<int>& list, bool by_target) {
    offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    for (int j = 0; j < n; ++j) offsets[static_cast<std::size_t>(j) + 1] = offsets[static_cast<std::size_t>(j)] + deg[static_cast<std::size_t>(j)];
    list.assign(edges_.size(), 0);
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (int id = 0; id < edge_count(); ++id) {
      const Edge& e = edges_[static_cast<std::size_t>(id)];
      const int key = by_target ? e.target : e.source;
      list[static_cast<std::size_t>(fill[static_cast<std::size_t>(key)]++)] = id;
    }
  };
  build(in_deg, in_offsets_, in_edges_, true);
  build(out_deg, out_offsets_, out_edges_, false);
  max_in_degree_ = *std::max_element(in_deg.begin(), in_deg.end());
}

std::span<const int> Lattice::incoming(int node) const {
  const auto b = static_cast<std::size_t>(in_offsets_.at(static_cast<std::size_t>(node)));
  const auto e = static_cast<std::size_t>(in_offsets_.at(static_cast<std::size_t>(node) + 1));
  return std::span<const int>(in_edges_).subspan(b, e - b);
}

std::span<const int> Lattice::outgoing(int node) const {
  const auto b = static_cast<std::size_t>(out_offsets_.at(static_cast<std::size_t>(node)));
  const auto e = static_cast<std::size_t>(out_offsets_.at(static_cast<std::size_t>(node) + 1));
  return std::span<const int>(out_edges_).subspan(b, e - b);
}

int Lattice::max_edge_length() const {
  int m = 0;
  for (const Edge& e : edges_) m = std::max(m, e.length());
  return m;
}

Lattice build_single_path(std::span<const int> tokens) {
  if (tokens.empty()) throw ConfigError("lattice over an empty token sequence");
  std::vector<Edge> edges;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    edges.push_back({i, i + 1, tokens[static_cast<std::size_t>(i)], 0});
  }
  return Lattice({tokens.begin(), tokens.end()}, LatticeKind::SinglePath, std::move(edges));
}

Lattice build_dense(std::span<const int> tokens, int max_len, const ChunkVocab* vocab, std::optional<int> eos) {
  if (tokens.empty()) throw ConfigError("lattice over an empty token sequence");
  if (max_len < 1) throw ConfigError("lattice size must be at least 1");
  const int n = static_cast<int>(tokens.size());
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int len = 1; len <= max_len && i + len <= n; ++len) {
      auto span = tokens.subspan(static_cast<std::size_t>(i), static_cast<std::size_t>(len));
      if (len > 1 && eos && std::find(span.begin(), span.end(), *eos) != span.end()) break;
      int chunk = -1;
      if (vocab != nullptr) {
        chunk = vocab->find(span).value_or(-1);
        if (len == 1 && chunk < 0) throw ConfigError("unit token missing from chunk vocabulary");
      } else if (len == 1) {
        chunk = span[0];
      }
      edges.push_back({i, i + len, chunk, 0});
    }
  }
  return Lattice({tokens.begin(), tokens.end()}, LatticeKind::Dense, std::move(edges));
}

Lattice build_multilattice(std::span<const int> tokens, int senses, std::optional<int> eos) {
  if (tokens.empty()) throw ConfigError("lattice over an empty token sequence");
  if (senses < 1) throw ConfigError("embeddings per token must be at least 1");
  std::vector<Edge> edges;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const int t = tokens[static_cast<std::size_t>(i)];
    const int count = eos && t == *eos ? 1 : senses;
    for (int k = 0; k < count; ++k) edges.push_back({i, i + 1, t, k});
  }
  return Lattice({tokens.begin(), tokens.end()}, LatticeKind::Multi, std::move(edges));
}

double count_paths(const Lattice& lattice) {
  std::vector<double> paths(static_cast<std::size_t>(lattice.node_count()), 0.0);
  paths[0] = 1.0;
  for (int j = 1; j < lattice.node_count(); ++j) {
    for (int id : lattice.incoming(j)) paths[static_cast<std::size_t>(j)] += paths[static_cast<std::size_t>(lattice.edge(id).source)];
  }
  return paths.back();
}

std::vector<SegPath> enumerate_paths(const Lattice& lattice, std::size_t cap) {
  if (count_paths(lattice) > static_cast<double>(cap)) throw ConfigError("path count exceeds enumeration cap");
  std::vector<SegPath> out;
  SegPath cur;
  cur.boundaries.push_back(0);
  // Depth-first over outgoing edges.
  auto visit = [&](auto&& self, int node) -> void {
    if (node == lattice.supremum()) {
      out.push_back(cur);
      return;
    }
    for (int id : lattice.outgoing(node)) {
      const Edge& e = lattice.edge(id);
      cur.edges.push_back(id);
      cur.boundaries.push_back(e.target);
      self(self, e.target);
      cur.edges.pop_back();
      cur.boundaries.pop_back();
    }
  };
  visit(visit, 0);
  return out;
}

}  // namespace nllm
