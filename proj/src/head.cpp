#include "nllm/head.hpp"

#include <cmath>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

ad::Var main_chunk_dist(ad::Graph& g, const SentinelHead& head, ad::Var hidden) {
  ad::Var logits = tied_output_logits(g, hidden, g.param(*head.output_table), g.param(*head.output_bias),
                                      g.param(*head.projection));
  return g.log_softmax(logits);
}

SubChunkScorer::SubChunkScorer(ad::Graph& g, const SentinelHead& head, ad::Var hidden,
                               std::span<const int> continuation, const std::vector<double>* input_mask)
    : g_(g), head_(head), tokens_(continuation), mask_(input_mask) {
  if (continuation.empty()) throw ShapeError("sub-LSTM continuation is empty");
  ad::Var h0 = g.add(g.matvec(g.param(*head.sub_init_weight), hidden), g.param(*head.sub_init_bias));
  const std::vector<double> zeros(static_cast<std::size_t>(head.sub_lstm.hidden_dim()), 0.0);
  state_ = {LayerState{h0, g.constant(Shape::vector(head.sub_lstm.hidden_dim()), zeros)}};
  // The first symbol may not be the end symbol: chunks are non-empty.
  ad::Var w = g.param(*head.sub_out_weight);
  ad::Var logits = g.add(g.matvec(w, h0, head.token_count), g.slice(g.param(*head.sub_out_bias), 0, head.token_count));
  dists_.push_back(g.log_softmax(logits));
}

ad::Var SubChunkScorer::dist(int t) {
  while (static_cast<int>(dists_.size()) <= t) {
    const int prev = static_cast<int>(dists_.size()) - 1;
    ad::Var x = g_.row(g_.param(*head_.token_table), tokens_[static_cast<std::size_t>(prev)]);
    if (mask_ != nullptr && !mask_->empty()) x = g_.mul(x, g_.constant(Shape::vector(x.size()), *mask_));
    state_ = head_.sub_lstm.step(g_, state_, x);
    ad::Var logits = g_.add(g_.matvec(g_.param(*head_.sub_out_weight), state_.back().h), g_.param(*head_.sub_out_bias));
    dists_.push_back(g_.log_softmax(logits));
  }
  return dists_[static_cast<std::size_t>(t)];
}

ad::Var SubChunkScorer::log_prob(int length) {
  if (length < 1 || length > head_.max_len) {
    throw ShapeError("chunk length " + std::to_string(length) + " outside 1.." + std::to_string(head_.max_len));
  }
  if (length > static_cast<int>(tokens_.size())) throw ShapeError("chunk extends past the continuation");
  while (static_cast<int>(prefix_.size()) < length) {
    const int t = static_cast<int>(prefix_.size());
    const int tok = tokens_[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= head_.token_count) throw ShapeError("token id out of range");
    ad::Var p = g_.pick(dist(t), tok);
    prefix_.push_back(t == 0 ? p : g_.add(prefix_.back(), p));
  }
  ad::Var spelled = prefix_[static_cast<std::size_t>(length) - 1];
  if (length == head_.max_len) return spelled;
  return g_.add(spelled, g_.pick(dist(length), head_.end_symbol()));
}

ad::Var sub_chunk_logprob(ad::Graph& g, const SentinelHead& head, ad::Var hidden, std::span<const int> chunk) {
  if (static_cast<int>(chunk.size()) > head.max_len) throw ShapeError("chunk longer than the maximum chunk length");
  SubChunkScorer scorer(g, head, hidden, chunk);
  return scorer.log_prob(static_cast<int>(chunk.size()));
}

ad::Var chunk_logprob(ad::Graph& g, ad::Var main_dist, int sentinel, std::optional<int> chunk_id, ad::Var sub_logprob) {
  ad::Var via_sentinel = g.add(g.pick(main_dist, sentinel), sub_logprob);
  if (!chunk_id) return via_sentinel;
  const ad::Var both[2] = {g.pick(main_dist, *chunk_id), via_sentinel};
  return g.logsumexp(g.concat(both));
}

std::vector<int> SenseHead::layout(int token_count, int senses, int eos) {
  if (senses < 1) throw ConfigError("senses must be at least 1");
  std::vector<int> offsets(static_cast<std::size_t>(token_count) + 1, 0);
  for (int t = 0; t < token_count; ++t) {
    offsets[static_cast<std::size_t>(t) + 1] = offsets[static_cast<std::size_t>(t)] + (t == eos ? 1 : senses);
  }
  return offsets;
}

int SenseHead::row(int token, int sense) const {
  if (token < 0 || token + 1 >= static_cast<int>(row_offset.size())) throw ShapeError("token id out of range");
  if (sense < 0 || sense >= senses_of(token)) throw ShapeError("sense index out of range");
  return row_offset[static_cast<std::size_t>(token)] + sense;
}

ad::Var sense_dist(ad::Graph& g, const SenseHead& head, ad::Var hidden) {
  ad::Var logits = tied_output_logits(g, hidden, g.param(*head.table), g.param(*head.bias), g.param(*head.projection));
  return g.log_softmax(logits);
}

double token_logprob(std::span<const double> sense_log_probs, const SenseHead& head, int token) {
  const int begin = head.row(token, 0);
  const int n = head.senses_of(token);
  double m = sense_log_probs[static_cast<std::size_t>(begin)];
  for (int k = 1; k < n; ++k) m = std::max(m, sense_log_probs[static_cast<std::size_t>(begin + k)]);
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += std::exp(sense_log_probs[static_cast<std::size_t>(begin + k)] - m);
  return m + std::log(s);
}

}  // namespace nllm
