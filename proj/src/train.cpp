#include "nllm/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <random>
#include <string>

#include "nllm/error.hpp"

namespace nllm {

namespace {

struct PassOutput {
  double log_prob = 0.0;
  long edge_steps = 0;
  long init_steps = 0;
  LengthHistogram lengths;
};

// Forward (and optionally backward) on a caller-owned graph.
PassOutput run_pass(ad::Graph& g, const Model& model, std::span<const int> tokens, const ForwardOptions& options,
                    const SequenceMasks* masks, bool backward, bool want_lengths) {
  if (tokens.empty()) throw ConfigError("empty sentence");
  g.clear();
  const Lattice lattice = model.lattice_for(tokens);
  NeuralPass net(model, masks);
  ForwardResult fwd = forward_marginalize(g, lattice, net, options);
  PassOutput out;
  out.log_prob = fwd.log_prob.item();
  out.edge_steps = net.edge_steps();
  out.init_steps = net.init_steps();
  if (want_lengths) {
    const std::vector<double> post = edge_posteriors(lattice, fwd);
    for (int id = 0; id < lattice.edge_count(); ++id) {
      out.lengths[lattice.edge(id).length()] += post[static_cast<std::size_t>(id)];
    }
  }
  if (backward) g.backward(g.affine(fwd.log_prob, -1.0));
  return out;
}

void merge(LengthHistogram& into, const LengthHistogram& from) {
  for (const auto& [len, mass] : from) into[len] += mass;
}

int worker_count(ExecPolicy policy) { return policy == ExecPolicy::Serial ? 1 : std::max(1, omp_get_max_threads()); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epoch count must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(clip > 0.0)) throw ConfigError("clip threshold must be positive");
  if (!(tau.tau0 > 0.0) || !(tau.tau_min > 0.0) || !(tau.decay > 0.0) || tau.decay > 1.0) {
    throw ConfigError("temperature schedule needs tau0 > 0, tau_min > 0 and 0 < decay <= 1");
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SentencePass sentence_pass(const Model& model, std::span<const int> tokens, const ForwardOptions& options,
                           const SequenceMasks* masks, GradBuffer* grads, double grad_scale, LengthHistogram* lengths) {
  ad::Graph g;
  PassOutput p = run_pass(g, model, tokens, options, masks, grads != nullptr, lengths != nullptr);
  if (grads != nullptr) g.accumulate_param_grads(*grads, grad_scale);
  if (lengths != nullptr) merge(*lengths, p.lengths);
  return {p.log_prob, p.edge_steps, p.init_steps};
}

double sentence_loss(const Model& model, std::span<const int> tokens, ApproxMode mode, double tau, std::uint64_t seed) {
  return -sentence_pass(model, tokens, {mode, tau, seed}).log_prob;
}

BatchResult batch_gradient(const Model& model, std::span<const Sentence* const> batch, ApproxMode mode, double tau,
                           double dropout, std::uint64_t seed, ExecPolicy policy) {
  if (batch.empty()) throw ConfigError("empty batch");
  const int n = static_cast<int>(batch.size());
  const int wave = std::min(n, worker_count(policy));
  const double scale = 1.0 / static_cast<double>(n);

  BatchResult r;
  r.grads = model.params().zero_grads();
  std::vector<std::unique_ptr<ad::Graph>> graphs;
  for (int k = 0; k < wave; ++k) graphs.push_back(std::make_unique<ad::Graph>());
  std::vector<PassOutput> outs(static_cast<std::size_t>(wave));

  for (int begin = 0; begin < n; begin += wave) {
    const int count = std::min(wave, n - begin);
    auto work = [&](int k) {
      const int i = begin + k;
      const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
      const SequenceMasks masks = model.make_masks(dropout, mix_seed(s, 1));
      outs[static_cast<std::size_t>(k)] = run_pass(*graphs[static_cast<std::size_t>(k)], model,
                                                   *batch[static_cast<std::size_t>(i)], {mode, tau, s}, &masks, true, true);
    };
    if (policy == ExecPolicy::Serial) {
      for (int k = 0; k < count; ++k) work(k);
    } else {
      // Exceptions must not escape the parallel region.
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic, 1)
      for (int k = 0; k < count; ++k) {
        try {
          work(k);
        } catch (...) {
          errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
      }
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    // Accumulate in sentence order so the result does not depend on threads.
    for (int k = 0; k < count; ++k) {
      const PassOutput& o = outs[static_cast<std::size_t>(k)];
      graphs[static_cast<std::size_t>(k)]->accumulate_param_grads(r.grads, scale);
      r.total_loss += -o.log_prob;
      r.tokens += static_cast<long>(batch[static_cast<std::size_t>(begin + k)]->size());
      merge(r.lengths, o.lengths);
    }
  }
  r.mean_loss = r.total_loss * scale;
  return r;
}

ApproxMode eval_mode(ApproxMode training_mode) {
  return training_mode == ApproxMode::Direct ? ApproxMode::Direct : ApproxMode::Marginal;
}

EvalReport evaluate_perplexity(const Model& model, const Corpus& corpus, ApproxMode mode, ExecPolicy policy) {
  if (corpus.empty()) throw ConfigError("evaluation corpus is empty");
  const ApproxMode m = eval_mode(mode);
  const int n = static_cast<int>(corpus.size());
  EvalReport r;
  r.sentences.resize(corpus.size());
  auto score = [&](ad::Graph& g, int i) {
    const Sentence& s = corpus[static_cast<std::size_t>(i)];
    r.sentences[static_cast<std::size_t>(i)] = {run_pass(g, model, s, {m, 1.0, 0}, nullptr, false, false).log_prob,
                                                static_cast<long>(s.size())};
  };
  if (policy == ExecPolicy::Serial) {
    ad::Graph g;
    for (int i = 0; i < n; ++i) score(g, i);
  } else {
    std::vector<std::exception_ptr> errors(corpus.size());
#pragma omp parallel
    {
      ad::Graph g;
#pragma omp for schedule(dynamic, 4)
      for (int i = 0; i < n; ++i) {
        try {
          score(g, i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (const SentenceRecord& s : r.sentences) {
    r.total_log_prob += s.log_prob;
    r.token_count += s.tokens;
  }
  r.perplexity = std::exp(-r.total_log_prob / static_cast<double>(r.token_count));
  return r;
}

std::vector<std::vector<int>> make_batches(const Corpus& corpus, int batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::map<std::size_t, std::vector<int>> buckets;
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i) buckets[corpus[static_cast<std::size_t>(i)].size()].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> batches;
  for (auto& [len, ids] : buckets) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t b = 0; b < ids.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t e = std::min(ids.size(), b + static_cast<std::size_t>(batch_size));
      batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(b), ids.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

TrainResult train(Model& model, const Corpus& train_corpus, const Corpus& valid_corpus, const TrainConfig& config,
                  std::ostream* metrics, std::ostream* diagnostics) {
  config.validate();
  if (train_corpus.empty()) throw ConfigError("training corpus is empty");
  AdamState adam = make_adam(model.params(), config.learning_rate);
  TrainResult result;
  std::vector<Tensor> best;
  std::vector<const Sentence*> batch;
  if (metrics != nullptr) *metrics << "epoch\ttrain_loss\tvalid_ppl\ttau\n";

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0.0;
    long tokens = 0;
    const auto batches = make_batches(train_corpus, config.batch_size, mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (const auto& ids : batches) {
      const double tau = config.tau.temperature(result.batches);
      batch.clear();
      for (int i : ids) batch.push_back(&train_corpus[static_cast<std::size_t>(i)]);
      BatchResult br = batch_gradient(model, batch, config.approx, tau, config.dropout,
                                      mix_seed(config.seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(result.batches)),
                                      config.policy);
      if (!std::isfinite(br.total_loss)) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) + " at batch " +
                           std::to_string(result.batches) + ": loss " + std::to_string(br.total_loss));
      }
      clip_global_norm(br.grads, config.clip);
      adam_update(model.params(), br.grads, adam);
      loss_sum += br.total_loss;
      tokens += br.tokens;
      merge(em.lengths, br.lengths);
      ++result.batches;
    }
    em.train_loss = tokens > 0 ? loss_sum / static_cast<double>(tokens) : 0.0;
    em.tau = config.tau.temperature(result.batches);
    if (!valid_corpus.empty()) {
      em.valid_perplexity = evaluate_perplexity(model, valid_corpus, config.approx, config.policy).perplexity;
      if (std::isnan(result.best_valid_perplexity) || em.valid_perplexity < result.best_valid_perplexity) {
        result.best_valid_perplexity = em.valid_perplexity;
        result.best_epoch = epoch;
        best = model.params().snapshot();
      }
    }
    if (metrics != nullptr) {
      *metrics << em.epoch << '\t' << em.train_loss << '\t' << em.valid_perplexity << '\t' << em.tau << '\n';
      metrics->flush();
    }
    if (diagnostics != nullptr) {
      double total = 0.0;
      for (const auto& [len, mass] : em.lengths) total += mass;
      *diagnostics << "epoch " << epoch << " chunk-length mass:";
      for (const auto& [len, mass] : em.lengths) *diagnostics << ' ' << len << '=' << (total > 0 ? mass / total : 0.0);
      *diagnostics << '\n';
    }
    result.epochs.push_back(std::move(em));
  }
  if (!best.empty()) model.params().restore(best);
  return result;
}

}  // namespace nllm
