#include "nllm/model.hpp"

#include <algorithm>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

int ModelConfig::carrier_dim() const { return kind == ModelKind::Chunk ? 2 * embed_dim : sense_dim(); }

int ModelConfig::sense_dim() const { return kind == ModelKind::Sense ? embed_dim / std::max(senses, 1) : embed_dim; }

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || layers < 1) throw ConfigError("dimensions and layer count must be positive");
  if (max_sentence_len < 1) throw ConfigError("maximum sentence length must be positive");
  if (kind == ModelKind::Chunk) {
    if (max_chunk_len < 1) throw ConfigError("lattice size must be at least 1");
    if (senses != 1) throw ConfigError("chunk lattices use one embedding per token");
    if (embed_dim % 2 != 0) throw ConfigError("embedding dimension must be even for the chunk composer");
  } else {
    if (senses < 1) throw ConfigError("embeddings per token must be at least 1");
    if (max_chunk_len != 1) throw ConfigError("multi-embedding lattices cannot also use multi-token chunks");
    if (embed_dim / senses < 1) throw ConfigError("embedding dimension too small for the number of senses");
  }
}

Model::Model(ModelConfig config, TokenVocab vocab, ChunkVocab chunks)
    : config_(config), vocab_(std::move(vocab)), chunks_(std::move(chunks)) {
  config_.validate();
  const int V = vocab_.size();
  const int d = config_.embed_dim;
  const int H = config_.hidden_dim;
  main_ = LstmStack(params_, "main", config_.carrier_dim(), H, config_.layers);
  if (config_.kind == ModelKind::Chunk) {
    if (chunks_.token_count() != V) throw ConfigError("chunk vocabulary does not match the token vocabulary");
    if (chunks_.max_len() != config_.max_chunk_len) throw ConfigError("chunk vocabulary was built for another lattice size");
    const int C = chunks_.size();
    const Parameter& tokens = params_.add("token_embedding", Shape::matrix(V, d));
    const Parameter& table = params_.add("chunk_embedding", Shape::matrix(C + 2, d));
    composer_ = BiLstmComposer(params_, "composer", d, d);
    tables_ = {&tokens, &table, C + 1};
    head_.output_table = &table;
    head_.output_bias = &params_.add("output_bias", Shape::vector(C + 1), Init::Zero);
    head_.projection = &params_.add("output_projection", Shape::matrix(d, H));
    head_.token_table = &tokens;
    head_.sub_lstm = LstmStack(params_, "sub", d, H, 1);
    head_.sub_init_weight = &params_.add("sub_init.weight", Shape::matrix(H, H));
    head_.sub_init_bias = &params_.add("sub_init.bias", Shape::vector(H), Init::Zero);
    head_.sub_out_weight = &params_.add("sub_out.weight", Shape::matrix(V + 1, H));
    head_.sub_out_bias = &params_.add("sub_out.bias", Shape::vector(V + 1), Init::Zero);
    head_.chunk_count = C;
    head_.token_count = V;
    head_.max_len = config_.max_chunk_len;
    bos_ = &params_.add("bos", Shape::matrix(1, config_.carrier_dim()));
  } else {
    const int ds = config_.sense_dim();
    sense_head_.senses = config_.senses;
    sense_head_.eos = TokenVocab::kEos;
    sense_head_.row_offset = SenseHead::layout(V, config_.senses, TokenVocab::kEos);
    sense_head_.table = &params_.add("sense_embedding", Shape::matrix(sense_head_.rows(), ds));
    sense_head_.bias = &params_.add("output_bias", Shape::vector(sense_head_.rows()), Init::Zero);
    sense_head_.projection = &params_.add("output_projection", Shape::matrix(ds, H));
    bos_ = &params_.add("bos", Shape::matrix(1, ds));
  }
}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_.initialize(rng);
}

Lattice Model::lattice_for(std::span<const int> tokens) const {
  if (config_.kind == ModelKind::Chunk) return build_dense(tokens, config_.max_chunk_len, &chunks_, TokenVocab::kEos);
  return build_multilattice(tokens, config_.senses, TokenVocab::kEos);
}

SequenceMasks Model::make_masks(double rate, std::uint64_t seed) const {
  SequenceMasks m;
  if (rate == 0.0) return m;
  std::uint64_t s = seed;
  for (int k = 0; k < main_.layers(); ++k) {
    m.main.layer_inputs.push_back(variational_dropout_mask(main_.layer(k).input_dim, rate, s++));
  }
  m.output = variational_dropout_mask(config_.hidden_dim, rate, s++);
  if (config_.kind == ModelKind::Chunk) m.sub_input = variational_dropout_mask(config_.embed_dim, rate, s++);
  return m;
}

ad::Var Model::edge_input(ad::Graph& g, const Lattice& lattice, const Edge& edge) const {
  if (config_.kind == ModelKind::Chunk) {
    std::optional<int> id;
    if (edge.chunk >= 0) id = edge.chunk;
    return chunk_embedding(g, lattice.chunk_tokens(edge), id, tables_, composer_).carrier;
  }
  const int token = lattice.tokens()[static_cast<std::size_t>(edge.source)];
  return g.row(g.param(*sense_head_.table), sense_head_.row(token, edge.sense));
}

StackState NeuralPass::initial_state(ad::Graph& g) const {
  const StackMasks* m = masks_ != nullptr ? &masks_->main : nullptr;
  init_steps_ += model_.main_lstm().layers();
  return model_.main_lstm().step(g, model_.main_lstm().zero_state(g), g.row(g.param(model_.bos()), 0), m);
}

StackState NeuralPass::advance(ad::Graph& g, const StackState& source, const Lattice& lattice, const Edge& edge) const {
  const StackMasks* m = masks_ != nullptr ? &masks_->main : nullptr;
  edge_steps_ += model_.main_lstm().layers();
  return model_.main_lstm().step(g, source, model_.edge_input(g, lattice, edge), m);
}

ad::Var NeuralPass::top_hidden(ad::Graph& g, const StackState& state) const {
  ad::Var h = state.back().h;
  if (masks_ != nullptr && !masks_->output.empty()) {
    h = g.mul(h, g.constant(Shape::vector(h.size()), masks_->output));
  }
  return h;
}

std::vector<ad::Var> NeuralPass::edge_logprobs(ad::Graph& g, const StackState& state, const Lattice& lattice, int node,
                                               std::span<const int> edge_ids) const {
  ++head_evals_;
  ad::Var h = top_hidden(g, state);
  std::vector<ad::Var> out;
  out.reserve(edge_ids.size());
  if (model_.config().kind == ModelKind::Sense) {
    const SenseHead& head = model_.sense_head();
    ad::Var dist = sense_dist(g, head, h);
    for (int id : edge_ids) {
      const Edge& e = lattice.edge(id);
      out.push_back(g.pick(dist, head.row(lattice.tokens()[static_cast<std::size_t>(e.source)], e.sense)));
    }
    return out;
  }
  const SentinelHead& head = model_.sentinel_head();
  ad::Var main = main_chunk_dist(g, head, h);
  int longest = 0;
  for (int id : edge_ids) longest = std::max(longest, lattice.edge(id).length());
  auto continuation = lattice.tokens().subspan(static_cast<std::size_t>(node), static_cast<std::size_t>(longest));
  const std::vector<double>* sub_mask = masks_ != nullptr ? &masks_->sub_input : nullptr;
  SubChunkScorer scorer(g, head, h, continuation, sub_mask);
  for (int id : edge_ids) {
    const Edge& e = lattice.edge(id);
    if (e.source != node) throw ShapeError("edge does not leave node " + std::to_string(node));
    std::optional<int> chunk;
    if (e.chunk >= 0) chunk = e.chunk;
    out.push_back(chunk_logprob(g, main, head.sentinel(), chunk, scorer.log_prob(e.length())));
  }
  return out;
}

double baseline_logprob(const Model& model, std::span<const int> tokens) {
  const ModelConfig& cfg = model.config();
  if ((cfg.kind == ModelKind::Chunk && cfg.max_chunk_len != 1) || (cfg.kind == ModelKind::Sense && cfg.senses != 1)) {
    throw ConfigError("the sequential baseline needs L = 1 or E = 1");
  }
  if (tokens.empty()) throw ConfigError("empty sentence");
  ad::Graph g;
  const LstmStack& lstm = model.main_lstm();
  StackState state = lstm.step(g, lstm.zero_state(g), g.row(g.param(model.bos()), 0));
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int tok = tokens[t];
    ad::Var h = state.back().h;
    ad::Var input;
    if (cfg.kind == ModelKind::Sense) {
      const SenseHead& head = model.sense_head();
      total += g.pick(sense_dist(g, head, h), head.row(tok, 0)).item();
      input = g.row(g.param(*head.table), head.row(tok, 0));
    } else {
      const SentinelHead& head = model.sentinel_head();
      const int one[1] = {tok};
      ad::Var sub = sub_chunk_logprob(g, head, h, one);
      total += chunk_logprob(g, main_chunk_dist(g, head, h), head.sentinel(), tok, sub).item();
      input = chunk_embedding(g, one, tok, model.chunk_tables(), model.composer()).carrier;
    }
    state = lstm.step(g, state, input);
  }
  return total;
}

}  // namespace nllm
