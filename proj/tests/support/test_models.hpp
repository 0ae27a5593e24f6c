#pragma once

// Shared fixtures for unit and acceptance tests: a history-independent lattice
// network, small neural models and random generators.

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "nllm/model.hpp"

namespace nllm::testing {

/// Edge scores depend only on the edge's token span and sense, never on the
/// state. States are dummy one-element vectors.
class TableNetwork : public LatticeNetwork {
 public:
  explicit TableNetwork(std::uint64_t seed) : rng_(seed) {}

  void set(std::vector<int> chunk, int sense, double log_prob) { table_[{std::move(chunk), sense}] = log_prob; }

  StackState initial_state(ad::Graph& g) const override { return {LayerState{g.scalar(0.0), g.scalar(0.0)}}; }

  StackState advance(ad::Graph& g, const StackState& source, const Lattice&, const Edge& e) const override {
    ++steps_;
    // Something edge-specific so combine modes have distinct inputs.
    return {LayerState{g.add(source[0].h, g.scalar(e.length() + 0.1 * e.sense)), source[0].c}};
  }

  std::vector<ad::Var> edge_logprobs(ad::Graph& g, const StackState&, const Lattice& lattice, int,
                                     std::span<const int> ids) const override {
    std::vector<ad::Var> out;
    for (int id : ids) {
      const Edge& e = lattice.edge(id);
      auto span = lattice.chunk_tokens(e);
      out.push_back(g.scalar(lookup({span.begin(), span.end()}, e.sense)));
    }
    return out;
  }

  mutable long steps_ = 0;

 private:
  double lookup(const std::vector<int>& chunk, int sense) const {
    auto key = std::make_pair(chunk, sense);
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    std::uniform_real_distribution<double> d(-4.0, -0.05);
    const double v = d(rng_);
    table_.emplace(key, v);
    return v;
  }

  mutable std::mt19937_64 rng_;
  mutable std::map<std::pair<std::vector<int>, int>, double> table_;
};

/// Reserved tokens plus `extra` plain words w0, w1, ...
inline TokenVocab word_vocab(int extra) {
  TokenVocab v;
  for (int i = 0; i < extra; ++i) v.add("w" + std::to_string(i), 10 + extra - i);
  return v;
}

/// Random sentence of `len` non-eos tokens followed by eos.
inline Sentence random_sentence(std::mt19937_64& rng, int vocab_size, int len) {
  std::uniform_int_distribution<int> tok(TokenVocab::kReserved, vocab_size - 1);
  Sentence s(static_cast<std::size_t>(len));
  for (int& t : s) t = tok(rng);
  s.push_back(TokenVocab::kEos);
  return s;
}

/// Random tokens without an eos.
inline std::vector<int> random_tokens(std::mt19937_64& rng, int vocab_size, int len) {
  std::uniform_int_distribution<int> tok(0, vocab_size - 1);
  std::vector<int> s(static_cast<std::size_t>(len));
  for (int& t : s) t = tok(rng);
  return s;
}

struct TinySpec {
  ModelKind kind = ModelKind::Chunk;
  int lattice_size = 1;
  int senses = 1;
  int words = 5;
  int embed_dim = 6;
  int hidden_dim = 5;
  int layers = 2;
  int random_chunks = 4;  // multi-token chunks added at random
};

/// Small randomly initialized model. Bias vectors are randomized too so that
/// zero-initialized parameters do not hide bugs.
inline std::unique_ptr<Model> tiny_model(const TinySpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TokenVocab vocab = word_vocab(spec.words);
  ModelConfig cfg;
  cfg.kind = spec.kind;
  cfg.max_chunk_len = spec.kind == ModelKind::Chunk ? spec.lattice_size : 1;
  cfg.senses = spec.kind == ModelKind::Sense ? spec.senses : 1;
  cfg.embed_dim = spec.embed_dim;
  cfg.hidden_dim = spec.hidden_dim;
  cfg.layers = spec.layers;
  ChunkVocab chunks(vocab.size(), cfg.max_chunk_len);
  if (cfg.max_chunk_len > 1) {
    std::uniform_int_distribution<int> len(2, cfg.max_chunk_len);
    for (int k = 0; k < spec.random_chunks; ++k) {
      auto c = random_tokens(rng, vocab.size(), len(rng));
      for (int& t : c) {
        if (t == TokenVocab::kEos) t = vocab.size() > TokenVocab::kReserved ? TokenVocab::kReserved : TokenVocab::kUnk;
      }
      if (!chunks.find(c)) chunks.add(c);
    }
  }
  auto model = std::make_unique<Model>(cfg, std::move(vocab), std::move(chunks));
  model->initialize(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < model->params().size(); ++i) {
    Parameter& p = model->params()[i];
    if (p.init() == Init::Zero) {
      for (double& x : p.value().values) x = u(rng);
    }
  }
  return model;
}

}  // namespace nllm::testing
