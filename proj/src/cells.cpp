#include "nllm/cells.hpp"

#include <cmath>
#include <random>

#include "nllm/error.hpp"

namespace nllm {

LayerState lstm_cell(ad::Graph& g, const LstmLayer& layer, const LayerState& prev, ad::Var x, GateValues* gates) {
  const int hd = layer.hidden_dim;
  if (x.size() != layer.input_dim) {
    throw ShapeError("lstm input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(layer.input_dim));
  }
  if (prev.h.size() != hd || prev.c.size() != hd) throw ShapeError("lstm state dimension mismatch");

  const ad::Var xh[2] = {x, prev.h};
  ad::Var pre = g.add(g.matvec(g.param(*layer.weight), g.concat(xh)), g.param(*layer.bias));
  ad::Var i = g.sigmoid(g.slice(pre, 0, hd));
  ad::Var o = g.sigmoid(g.slice(pre, hd, hd));
  ad::Var cand = g.tanh(g.slice(pre, 2 * hd, hd));
  ad::Var f = g.affine(i, -1.0, 1.0);
  ad::Var c = g.add(g.mul(f, prev.c), g.mul(i, cand));
  ad::Var h = g.mul(o, g.tanh(c));
  if (gates != nullptr) *gates = GateValues{i, f, cand, o};
  return {h, c};
}

LstmStack::LstmStack(ParamSet& params, const std::string& prefix, int input_dim, int hidden_dim, int layers) {
  if (input_dim <= 0 || hidden_dim <= 0 || layers <= 0) throw ConfigError("lstm dimensions must be positive");
  for (int k = 0; k < layers; ++k) {
    const int in = k == 0 ? input_dim : hidden_dim;
    const std::string name = prefix + ".l" + std::to_string(k);
    LstmLayer layer;
    layer.weight = &params.add(name + ".weight", Shape::matrix(3 * hidden_dim, in + hidden_dim));
    layer.bias = &params.add(name + ".bias", Shape::vector(3 * hidden_dim), Init::Zero);
    layer.input_dim = in;
    layer.hidden_dim = hidden_dim;
    layers_.push_back(layer);
  }
}

StackState LstmStack::zero_state(ad::Graph& g) const {
  StackState s;
  const std::vector<double> zeros(static_cast<std::size_t>(hidden_dim()), 0.0);
  for (int k = 0; k < layers(); ++k) {
    s.push_back({g.constant(Shape::vector(hidden_dim()), zeros), g.constant(Shape::vector(hidden_dim()), zeros)});
  }
  return s;
}

StackState LstmStack::step(ad::Graph& g, const StackState& prev, ad::Var input, const StackMasks* masks) const {
  if (static_cast<int>(prev.size()) != layers()) throw ShapeError("lstm stack state has wrong layer count");
  const bool dropout = masks != nullptr && !masks->empty();
  if (dropout && static_cast<int>(masks->layer_inputs.size()) != layers()) {
    throw ShapeError("dropout mask count does not match layer count");
  }
  StackState next;
  next.reserve(prev.size());
  ad::Var x = input;
  for (int k = 0; k < layers(); ++k) {
    if (dropout) {
      const auto& m = masks->layer_inputs[static_cast<std::size_t>(k)];
      x = g.mul(x, g.constant(Shape::vector(static_cast<int>(m.size())), m));
    }
    next.push_back(lstm_cell(g, layers_[static_cast<std::size_t>(k)], prev[static_cast<std::size_t>(k)], x));
    x = next.back().h;
  }
  return next;
}

BiLstmComposer::BiLstmComposer(ParamSet& params, const std::string& prefix, int input_dim, int output_dim) {
  if (output_dim <= 0 || output_dim % 2 != 0) throw ConfigError("composer output dimension must be even");
  forward_ = LstmStack(params, prefix + ".fwd", input_dim, output_dim / 2, 1);
  backward_ = LstmStack(params, prefix + ".bwd", input_dim, output_dim / 2, 1);
}

ad::Var BiLstmComposer::compose(ad::Graph& g, std::span<const ad::Var> inputs) const {
  if (inputs.empty()) throw ShapeError("composer needs at least one input");
  StackState fwd = forward_.zero_state(g);
  for (ad::Var x : inputs) fwd = forward_.step(g, fwd, x);
  StackState bwd = backward_.zero_state(g);
  for (auto it = inputs.rbegin(); it != inputs.rend(); ++it) bwd = backward_.step(g, bwd, *it);
  const ad::Var halves[2] = {fwd.back().h, bwd.back().h};
  return g.concat(halves);
}

ad::Var tied_output_logits(ad::Graph& g, ad::Var hidden, ad::Var table, ad::Var bias, ad::Var projection) {
  const Shape tp = table.shape();
  const Shape pp = projection.shape();
  if (pp.rank() != 2 || pp.cols() != hidden.size()) throw ShapeError("projection does not accept hidden dimension");
  if (tp.rank() != 2 || tp.cols() != pp.rows()) throw ShapeError("projection does not map onto embedding dimension");
  ad::Var projected = g.matvec(projection, hidden);
  return g.add(g.matvec(table, projected, bias.size()), bias);
}

AdamState make_adam(const ParamSet& params, double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  AdamState s;
  s.learning_rate = learning_rate;
  s.first = params.zero_grads();
  s.second = params.zero_grads();
  return s;
}

void adam_update(ParamSet& params, const GradBuffer& grads, AdamState& state) {
  if (static_cast<int>(grads.size()) != params.size() || static_cast<int>(state.first.size()) != params.size()) {
    throw ShapeError("adam: parameter/gradient count mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (int p = 0; p < params.size(); ++p) {
    auto& w = params[p].value().values;
    const auto& gr = grads[static_cast<std::size_t>(p)];
    auto& m = state.first[static_cast<std::size_t>(p)];
    auto& v = state.second[static_cast<std::size_t>(p)];
    if (gr.size() != w.size() || m.size() != w.size()) throw ShapeError("adam: shape mismatch for " + params[p].name());
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gr[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gr[i] * gr[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

std::vector<double> variational_dropout_mask(int dim, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (dim <= 0) throw ConfigError("dropout mask dimension must be positive");
  std::vector<double> mask(static_cast<std::size_t>(dim), 1.0);
  if (rate == 0.0) return mask;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = keep(rng) ? scale : 0.0;
  return mask;
}

}  // namespace nllm
