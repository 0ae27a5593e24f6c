#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nllm/chunk_vocab.hpp"

namespace nllm {

enum class LatticeKind { SinglePath, Dense, Multi };

/// Edge from prefix node `source` to prefix node `target`, covering tokens
/// [source, target). `chunk` is the chunk-vocabulary id, or -1 when the span
/// has no dedicated chunk entry.
struct Edge {
  int source = 0;
  int target = 0;
  int chunk = -1;
  int sense = 0;
  int length() const { return target - source; }
};

/// DAG over the token prefixes of a sentence: node j stands for the first j
/// tokens, node 0 is the empty prefix and node |X| the full sentence.
class Lattice {
 public:
  Lattice(std::vector<int> tokens, LatticeKind kind, std::vector<Edge> edges);

  LatticeKind kind() const { return kind_; }
  int token_count() const { return static_cast<int>(tokens_.size()); }
  int node_count() const { return token_count() + 1; }
  int supremum() const { return token_count(); }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  std::span<const int> tokens() const { return tokens_; }
  std::span<const int> chunk_tokens(const Edge& e) const {
    return std::span<const int>(tokens_).subspan(static_cast<std::size_t>(e.source),
                                                 static_cast<std::size_t>(e.length()));
  }
  const Edge& edge(int id) const { return edges_.at(static_cast<std::size_t>(id)); }
  std::span<const Edge> edges() const { return edges_; }
  std::span<const int> incoming(int node) const;
  std::span<const int> outgoing(int node) const;
  /// D: the largest in-degree.
  int max_in_degree() const { return max_in_degree_; }
  int max_edge_length() const;

 private:
  std::vector<int> tokens_;
  LatticeKind kind_;
  std::vector<Edge> edges_;
  std::vector<int> in_offsets_, in_edges_, out_offsets_, out_edges_;
  int max_in_degree_ = 0;
};

/// A source-to-supremum path: its edges and the node sequence 0 = s0 < s1 < ... = |X|.
struct SegPath {
  std::vector<int> edges;
  std::vector<int> boundaries;
};

Lattice build_single_path(std::span<const int> tokens);

/// Every span of length 1..max_len, except that spans longer than one token
/// never cover an `eos` token. Chunk ids come from `vocab` when given.
Lattice build_dense(std::span<const int> tokens, int max_len, const ChunkVocab* vocab = nullptr,
                    std::optional<int> eos = std::nullopt);

/// `senses` parallel unit edges per position; an `eos` position gets one edge.
Lattice build_multilattice(std::span<const int> tokens, int senses, std::optional<int> eos = std::nullopt);

/// Number of source-to-supremum paths by the prefix recursion N(j) = sum N(i).
double count_paths(const Lattice& lattice);

inline constexpr std::size_t kDefaultPathCap = 1'000'000;
/// Every path exactly once; throws ConfigError when the count exceeds `cap`.
std::vector<SegPath> enumerate_paths(const Lattice& lattice, std::size_t cap = kDefaultPathCap);

}  // namespace nllm
