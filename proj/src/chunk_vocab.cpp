#include "nllm/chunk_vocab.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

std::size_t TokenSeqHash::operator()(const std::vector<int>& v) const noexcept {
  std::size_t h = 1469598103934665603ull;
  for (int x : v) {
    h ^= static_cast<std::size_t>(static_cast<unsigned>(x)) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return h;
}

ChunkVocab::ChunkVocab(int token_count, int max_len) : token_count_(token_count), max_len_(max_len) {
  if (token_count <= 0) throw ConfigError("token vocabulary is empty");
  if (max_len < 1) throw ConfigError("maximum chunk length must be at least 1");
  for (int t = 0; t < token_count; ++t) add({t});
}

std::optional<int> ChunkVocab::find(std::span<const int> tokens) const {
  auto it = ids_.find(std::vector<int>(tokens.begin(), tokens.end()));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int ChunkVocab::add(std::vector<int> tokens) {
  if (tokens.empty() || static_cast<int>(tokens.size()) > max_len_) throw ConfigError("chunk length out of range");
  for (int t : tokens) {
    if (t < 0 || t >= token_count_) throw ConfigError("chunk token id out of range");
  }
  if (ids_.count(tokens) != 0) throw ConfigError("duplicate chunk");
  const int id = size();
  ids_.emplace(tokens, id);
  chunks_.push_back(std::move(tokens));
  return id;
}

void ChunkVocab::save(std::ostream& out) const {
  for (const auto& c : chunks_) {
    for (std::size_t i = 0; i < c.size(); ++i) out << (i ? " " : "") << c[i];
    out << '\n';
  }
}

ChunkVocab ChunkVocab::load(std::istream& in, int token_count, int max_len) {
  ChunkVocab v(token_count, max_len);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<int> ids;
    int x = 0;
    while (ss >> x) ids.push_back(x);
    if (!ss.eof()) throw FormatError("bad chunk line: " + line);
    if (row < token_count) {
      if (ids.size() != 1 || ids[0] != row) throw FormatError("chunk file must start with the unit tokens in id order");
    } else {
      v.add(std::move(ids));
    }
    ++row;
  }
  if (row < token_count) throw FormatError("chunk file is missing unit tokens");
  return v;
}

ChunkVocab build_chunk_vocab(const Corpus& corpus, int token_count, int budget, int max_len, int eos) {
  if (budget < 0) throw ConfigError("chunk budget must be non-negative");
  ChunkVocab vocab(token_count, max_len);
  if (max_len < 2 || budget == 0) return vocab;

  struct Stat {
    long count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::vector<int>, Stat, TokenSeqHash> stats;
  std::vector<std::vector<int>> order;
  for (const auto& sent : corpus) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      std::vector<int> gram{sent[i]};
      if (sent[i] == eos) continue;
      for (int n = 2; n <= max_len && i + static_cast<std::size_t>(n) <= sent.size(); ++n) {
        const int next = sent[i + static_cast<std::size_t>(n) - 1];
        if (next == eos) break;
        gram.push_back(next);
        auto [it, inserted] = stats.try_emplace(gram, Stat{0, order.size()});
        if (inserted) order.push_back(gram);
        ++it->second.count;
      }
    }
  }
  std::vector<std::size_t> idx(order.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return stats[order[a]].count > stats[order[b]].count;
  });
  const std::size_t take = std::min(idx.size(), static_cast<std::size_t>(budget));
  for (std::size_t k = 0; k < take; ++k) vocab.add(order[idx[k]]);
  return vocab;
}

ChunkEmbedding chunk_embedding(ad::Graph& g, std::span<const int> tokens, std::optional<int> chunk_id,
                               const ChunkTables& tables, const BiLstmComposer& composer) {
  if (tokens.empty()) throw ShapeError("empty chunk");
  ad::Var token_table = g.param(*tables.tokens);
  const int vocab_rows = tables.tokens->shape().rows();
  std::vector<ad::Var> rows;
  rows.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= vocab_rows) throw ShapeError("token id out of range: " + std::to_string(t));
    rows.push_back(g.row(token_table, t));
  }
  ChunkEmbedding e;
  e.compositional = composer.compose(g, rows);
  const int row = chunk_id.value_or(tables.unknown_row);
  if (row < 0 || row >= tables.chunks->shape().rows()) throw ShapeError("chunk id out of range");
  e.noncompositional = g.row(g.param(*tables.chunks), row);
  const ad::Var parts[2] = {e.compositional, e.noncompositional};
  e.carrier = g.concat(parts);
  return e;
}

}  // namespace nllm
