#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "nllm/cells.hpp"
#include "nllm/vocab.hpp"

namespace nllm {

struct TokenSeqHash {
  std::size_t operator()(const std::vector<int>& v) const noexcept;
};

/// Unit tokens (chunk id == token id) followed by multi-token chunks of
/// length 2..max_len.
class ChunkVocab {
 public:
  ChunkVocab() = default;
  ChunkVocab(int token_count, int max_len);

  int size() const { return static_cast<int>(chunks_.size()); }
  int token_count() const { return token_count_; }
  int max_len() const { return max_len_; }
  std::span<const int> chunk(int id) const { return chunks_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::span<const int> tokens) const;

  int add(std::vector<int> tokens);

  /// Token ids joined by spaces, one chunk per line, ordered by chunk id.
  void save(std::ostream& out) const;
  static ChunkVocab load(std::istream& in, int token_count, int max_len);

  bool operator==(const ChunkVocab& o) const {
    return token_count_ == o.token_count_ && max_len_ == o.max_len_ && chunks_ == o.chunks_;
  }

 private:
  int token_count_ = 0;
  int max_len_ = 1;
  std::vector<std::vector<int>> chunks_;
  std::unordered_map<std::vector<int>, int, TokenSeqHash> ids_;
};

/// Adds the `budget` most frequent n-grams (2 <= n <= max_len) to the unit
/// vocabulary. Counting stays within sentences and never includes `eos`;
/// ties go to the n-gram seen first.
ChunkVocab build_chunk_vocab(const Corpus& corpus, int token_count, int budget, int max_len,
                             int eos = TokenVocab::kEos);

/// Embedding tables feeding chunk representations.
struct ChunkTables {
  const Parameter* tokens = nullptr;  // token_count x d
  const Parameter* chunks = nullptr;  // rows: chunk ids, sentinel, unknown chunk; d columns
  int unknown_row = 0;
};

struct ChunkEmbedding {
  ad::Var compositional;
  ad::Var noncompositional;
  ad::Var carrier;
};

/// [composer(token rows) ; chunk row or the shared unknown-chunk row].
ChunkEmbedding chunk_embedding(ad::Graph& g, std::span<const int> tokens, std::optional<int> chunk_id,
                               const ChunkTables& tables, const BiLstmComposer& composer);

}  // namespace nllm
