#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nllm/chunk_vocab.hpp"
#include "nllm/head.hpp"
#include "nllm/inference.hpp"
#include "nllm/vocab.hpp"

namespace nllm {

enum class ModelKind { Chunk, Sense };

struct ModelConfig {
  ModelKind kind = ModelKind::Chunk;
  int max_chunk_len = 1;  // L, chunk models
  int senses = 1;         // E, sense models
  int embed_dim = 256;
  int hidden_dim = 200;
  int layers = 2;
  SplitMode split = SplitMode::Word;
  ApproxMode approx = ApproxMode::Marginal;
  int max_sentence_len = 50;

  /// Input width of the main LSTM.
  int carrier_dim() const;
  /// Width of one sense row, floor(d / E).
  int sense_dim() const;
  void validate() const;
};

/// Dropout masks drawn once per sentence.
struct SequenceMasks {
  StackMasks main;
  std::vector<double> output;     // top hidden state before the head
  std::vector<double> sub_input;  // token embeddings fed to the sub-LSTM
};

class Model {
 public:
  Model(ModelConfig config, TokenVocab vocab, ChunkVocab chunks);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const TokenVocab& vocab() const { return vocab_; }
  const ChunkVocab& chunks() const { return chunks_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int token_count() const { return vocab_.size(); }

  void initialize(std::uint64_t seed);

  /// Dense lattice over the chunk vocabulary, or a multilattice.
  Lattice lattice_for(std::span<const int> tokens) const;

  SequenceMasks make_masks(double rate, std::uint64_t seed) const;

  const LstmStack& main_lstm() const { return main_; }
  const BiLstmComposer& composer() const { return composer_; }
  const ChunkTables& chunk_tables() const { return tables_; }
  const SentinelHead& sentinel_head() const { return head_; }
  const SenseHead& sense_head() const { return sense_head_; }
  const Parameter& bos() const { return *bos_; }

  /// Embedding fed to the main LSTM when an edge is consumed.
  ad::Var edge_input(ad::Graph& g, const Lattice& lattice, const Edge& edge) const;

 private:
  ModelConfig config_;
  TokenVocab vocab_;
  ChunkVocab chunks_;
  ParamSet params_;
  LstmStack main_;
  BiLstmComposer composer_;
  ChunkTables tables_;
  SentinelHead head_;
  SenseHead sense_head_;
  const Parameter* bos_ = nullptr;
};

/// The model as a lattice network. One instance per sentence pass.
class NeuralPass : public LatticeNetwork {
 public:
  explicit NeuralPass(const Model& model, const SequenceMasks* masks = nullptr) : model_(model), masks_(masks) {}

  StackState initial_state(ad::Graph& g) const override;
  StackState advance(ad::Graph& g, const StackState& source, const Lattice& lattice, const Edge& edge) const override;
  std::vector<ad::Var> edge_logprobs(ad::Graph& g, const StackState& state, const Lattice& lattice, int node,
                                     std::span<const int> edge_ids) const override;

  /// lstm_step calls made while consuming edges, counted per layer.
  long edge_steps() const { return edge_steps_; }
  /// lstm_step calls made for the begin-of-sentence input, counted per layer.
  long init_steps() const { return init_steps_; }
  long head_evaluations() const { return head_evals_; }

 private:
  ad::Var top_hidden(ad::Graph& g, const StackState& state) const;

  const Model& model_;
  const SequenceMasks* masks_;
  mutable long edge_steps_ = 0;
  mutable long init_steps_ = 0;
  mutable long head_evals_ = 0;
};

/// log p(X) from a plain left-to-right loop over tokens, without a lattice.
/// Needs L = 1 or E = 1.
double baseline_logprob(const Model& model, std::span<const int> tokens);

}  // namespace nllm
