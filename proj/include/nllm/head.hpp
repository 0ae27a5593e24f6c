#pragma once

#include <optional>
#include <span>
#include <vector>

#include "nllm/cells.hpp"

namespace nllm {

/// Sentinel mixture over chunks:
///   p(C | h) = p_main(C | h) + p_main(<s> | h) * p_sub(C | h)
/// p_main is a tied softmax over the chunk vocabulary plus the sentinel; p_sub
/// is a token-level LSTM that spells out the chunk and then emits an end
/// symbol, with termination forced at max_len.
struct SentinelHead {
  const Parameter* output_table = nullptr;  // rows: chunks, sentinel, unknown chunk
  const Parameter* output_bias = nullptr;   // chunks + sentinel
  const Parameter* projection = nullptr;    // embed_dim x hidden_dim
  const Parameter* token_table = nullptr;   // token_count x embed_dim, sub-LSTM inputs
  const Parameter* sub_init_weight = nullptr;  // sub_hidden x hidden_dim
  const Parameter* sub_init_bias = nullptr;
  const Parameter* sub_out_weight = nullptr;  // (token_count + 1) x sub_hidden
  const Parameter* sub_out_bias = nullptr;
  LstmStack sub_lstm;
  int chunk_count = 0;
  int token_count = 0;
  int max_len = 1;

  int sentinel() const { return chunk_count; }
  int end_symbol() const { return token_count; }
};

/// Log-probabilities over chunk ids and, last, the sentinel.
ad::Var main_chunk_dist(ad::Graph& g, const SentinelHead& head, ad::Var hidden);

/// Incremental p_sub along one token continuation. Chunks that share a prefix
/// share the sub-LSTM steps that spell it.
class SubChunkScorer {
 public:
  SubChunkScorer(ad::Graph& g, const SentinelHead& head, ad::Var hidden, std::span<const int> continuation,
                 const std::vector<double>* input_mask = nullptr);

  /// log p_sub of the first `length` tokens of the continuation.
  ad::Var log_prob(int length);
  /// Number of sub-LSTM steps taken so far.
  int steps() const { return static_cast<int>(dists_.size()) - 1; }

 private:
  ad::Var dist(int t);

  ad::Graph& g_;
  const SentinelHead& head_;
  std::span<const int> tokens_;
  const std::vector<double>* mask_;
  StackState state_;
  std::vector<ad::Var> dists_;
  std::vector<ad::Var> prefix_;
};

ad::Var sub_chunk_logprob(ad::Graph& g, const SentinelHead& head, ad::Var hidden, std::span<const int> chunk);

/// Mixture in log space. An absent chunk id means p_main(C) = 0.
ad::Var chunk_logprob(ad::Graph& g, ad::Var main_dist, int sentinel, std::optional<int> chunk_id, ad::Var sub_logprob);

/// Tied softmax over (token, sense) rows. Every token has `senses` rows except
/// `eos`, which has one.
struct SenseHead {
  const Parameter* table = nullptr;       // rows x sense_dim
  const Parameter* bias = nullptr;        // rows
  const Parameter* projection = nullptr;  // sense_dim x hidden_dim
  std::vector<int> row_offset;            // per token, plus total at the end
  int senses = 1;
  int eos = -1;

  static std::vector<int> layout(int token_count, int senses, int eos);
  int rows() const { return row_offset.back(); }
  int senses_of(int token) const {
    return row_offset[static_cast<std::size_t>(token) + 1] - row_offset[static_cast<std::size_t>(token)];
  }
  int row(int token, int sense) const;
};

/// Log-probabilities over all sense rows.
ad::Var sense_dist(ad::Graph& g, const SenseHead& head, ad::Var hidden);

/// log p(token) = logsumexp over its sense rows.
double token_logprob(std::span<const double> sense_log_probs, const SenseHead& head, int token);

}  // namespace nllm
