#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "nllm/model.hpp"

namespace nllm {

/// Serial runs the reference loop; Parallel spreads sentences over OpenMP
/// threads. Both produce bit-identical results.
enum class ExecPolicy { Serial, Parallel };

struct TrainConfig {
  ApproxMode approx = ApproxMode::Marginal;
  double learning_rate = 0.01;
  int batch_size = 32;
  int epochs = 1;
  double dropout = 0.0;
  GumbelConfig tau;
  std::uint64_t seed = 1;
  double clip = 5.0;
  ExecPolicy policy = ExecPolicy::Parallel;

  void validate() const;
};

/// Posterior mass per chunk length, summed over sentences.
using LengthHistogram = std::map<int, double>;

struct SentencePass {
  double log_prob = 0.0;
  long edge_steps = 0;
  long init_steps = 0;
};

/// One forward pass; when `grads` is non-null also backpropagates -log p
/// scaled by `grad_scale` into it.
SentencePass sentence_pass(const Model& model, std::span<const int> tokens, const ForwardOptions& options,
                           const SequenceMasks* masks = nullptr, GradBuffer* grads = nullptr, double grad_scale = 1.0,
                           LengthHistogram* lengths = nullptr);

/// -log p(X) under the configured lattice.
double sentence_loss(const Model& model, std::span<const int> tokens, ApproxMode mode, double tau = 1.0,
                     std::uint64_t seed = 0);

struct BatchResult {
  double mean_loss = 0.0;
  double total_loss = 0.0;
  long tokens = 0;
  GradBuffer grads;  // gradient of the mean loss
  LengthHistogram lengths;
};

/// Gradient of the mean sentence loss over `batch`. Per-sentence randomness
/// is derived from `seed` and the position in the batch.
BatchResult batch_gradient(const Model& model, std::span<const Sentence* const> batch, ApproxMode mode, double tau,
                           double dropout, std::uint64_t seed, ExecPolicy policy);

struct SentenceRecord {
  double log_prob = 0.0;
  long tokens = 0;
};

struct EvalReport {
  double total_log_prob = 0.0;
  long token_count = 0;
  double perplexity = 0.0;
  std::vector<SentenceRecord> sentences;
};

/// Mode used at evaluation time: sampling modes fall back to marginal weights.
ApproxMode eval_mode(ApproxMode training_mode);

/// Dropout off. The denominator counts unit tokens including end-of-sentence.
EvalReport evaluate_perplexity(const Model& model, const Corpus& corpus, ApproxMode mode,
                               ExecPolicy policy = ExecPolicy::Parallel);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;  // mean negative log-probability per token
  double valid_perplexity = std::numeric_limits<double>::quiet_NaN();
  double tau = 0.0;
  LengthHistogram lengths;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_valid_perplexity = std::numeric_limits<double>::quiet_NaN();
  long batches = 0;
};

/// Batches of equal-length sentences; the batch list is shuffled by `seed`.
std::vector<std::vector<int>> make_batches(const Corpus& corpus, int batch_size, std::uint64_t seed);

/// Trains in place. With a validation corpus the best-validation parameters
/// are restored at the end. `metrics` gets one tab-separated line per epoch;
/// `diagnostics` gets the length histograms.
TrainResult train(Model& model, const Corpus& train_corpus, const Corpus& valid_corpus, const TrainConfig& config,
                  std::ostream* metrics = nullptr, std::ostream* diagnostics = nullptr);

/// Stateless 64-bit mixing used to derive per-sentence seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace nllm
