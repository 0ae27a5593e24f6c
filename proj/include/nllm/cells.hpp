#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nllm/graph.hpp"
#include "nllm/params.hpp"

namespace nllm {

struct LayerState {
  ad::Var h;
  ad::Var c;
};
using StackState = std::vector<LayerState>;

/// One LSTM layer with linked input/forget gates. `weight` is
/// [3H x (in + H)] acting on [x; h]; its row blocks are the input gate, the
/// output gate and the candidate, in that order. The forget gate is 1 - input.
struct LstmLayer {
  const Parameter* weight = nullptr;
  const Parameter* bias = nullptr;
  int input_dim = 0;
  int hidden_dim = 0;
};

struct GateValues {
  ad::Var input, forget, candidate, output;
};

LayerState lstm_cell(ad::Graph& g, const LstmLayer& layer, const LayerState& prev, ad::Var x,
                     GateValues* gates = nullptr);

/// Per-sequence dropout masks for a stack: one mask per layer input. Empty
/// means no dropout.
struct StackMasks {
  std::vector<std::vector<double>> layer_inputs;
  bool empty() const { return layer_inputs.empty(); }
};

class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(ParamSet& params, const std::string& prefix, int input_dim, int hidden_dim, int layers);

  int layers() const { return static_cast<int>(layers_.size()); }
  int input_dim() const { return layers_.empty() ? 0 : layers_.front().input_dim; }
  int hidden_dim() const { return layers_.empty() ? 0 : layers_.front().hidden_dim; }
  const LstmLayer& layer(int k) const { return layers_[static_cast<std::size_t>(k)]; }

  StackState zero_state(ad::Graph& g) const;
  /// One timestep through every layer; layer k consumes layer k-1's new h.
  StackState step(ad::Graph& g, const StackState& prev, ad::Var input, const StackMasks* masks = nullptr) const;

 private:
  std::vector<LstmLayer> layers_;
};

/// Two single-layer LSTMs read a token sequence in opposite directions; the
/// result is [forward final h; backward final h].
class BiLstmComposer {
 public:
  BiLstmComposer() = default;
  BiLstmComposer(ParamSet& params, const std::string& prefix, int input_dim, int output_dim);

  int output_dim() const { return 2 * forward_.hidden_dim(); }
  const LstmStack& forward_lstm() const { return forward_; }
  const LstmStack& backward_lstm() const { return backward_; }

  ad::Var compose(ad::Graph& g, std::span<const ad::Var> inputs) const;

 private:
  LstmStack forward_;
  LstmStack backward_;
};

/// logits[v] = table[v] . (projection * hidden) + bias[v] for the first
/// bias.size() rows of the table.
ad::Var tied_output_logits(ad::Graph& g, ad::Var hidden, ad::Var table, ad::Var bias, ad::Var projection);

struct AdamState {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  GradBuffer first;
  GradBuffer second;
};

AdamState make_adam(const ParamSet& params, double learning_rate);
void adam_update(ParamSet& params, const GradBuffer& grads, AdamState& state);

/// Bernoulli keep-mask scaled by 1 / (1 - rate).
std::vector<double> variational_dropout_mask(int dim, double rate, std::uint64_t seed);

}  // namespace nllm
