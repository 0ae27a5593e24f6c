#include "nllm/cli.hpp"

#include <omp.h>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "nllm/checkpoint.hpp"
#include "nllm/error.hpp"
#include "nllm/report.hpp"
#include "nllm/train.hpp"

namespace nllm {

namespace {

struct Options {
  // files
  std::string corpus, train, valid, vocab, chunks, out, metrics, model;
  // data
  std::string mode = "word";
  int vocab_size = 10000;
  int chunk_vocab_size = 10000;
  int max_len = 50;
  // lattice
  int lattice_size = 1;
  int senses = 1;
  std::string approx = "marginal";
  // model
  int hidden_dim = 200;
  int embed_dim = 256;
  int layers = 2;
  // optimization
  double dropout = 0.0;
  double lr = 0.01;
  int batch_size = 32;
  int epochs = 5;
  std::uint64_t seed = 1;
  double tau0 = 5.0;
  double tau_min = 0.5;
  double tau_decay = 0.9995;
  double clip = 5.0;
  int threads = 0;
};

void add_lattice_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--lattice-size", o.lattice_size, "Maximum chunk length L")->check(CLI::PositiveNumber);
  cmd->add_option("--embeddings-per-token", o.senses, "Embeddings per token E")->check(CLI::PositiveNumber);
}

void add_data_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--mode", o.mode, "Token split: word or char")->check(CLI::IsMember({"word", "char"}));
  cmd->add_option("--vocab-size", o.vocab_size, "Unit vocabulary size, reserved tokens included");
  cmd->add_option("--chunk-vocab-size", o.chunk_vocab_size, "Multi-token chunk budget");
  cmd->add_option("--max-len", o.max_len, "Drop sentences longer than this many tokens");
}

void add_approx_flag(CLI::App* cmd, Options& o) {
  cmd->add_option("--approx", o.approx, "Hidden-state approximation")
      ->check(CLI::IsMember({"direct", "mc", "marginal", "gumbel"}));
}

void add_thread_flag(CLI::App* cmd, Options& o) {
  cmd->add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
}

// The lattice shape a set of flags asks for.
ModelConfig lattice_config(const Options& o) {
  if (o.lattice_size > 1 && o.senses > 1) {
    throw ConfigError("--embeddings-per-token and --lattice-size > 1 cannot be combined");
  }
  ModelConfig c;
  if (o.senses > 1) {
    c.kind = ModelKind::Sense;
    c.senses = o.senses;
  } else {
    c.kind = ModelKind::Chunk;
    c.max_chunk_len = o.lattice_size;
  }
  return c;
}

struct Data {
  TokenVocab vocab;
  ChunkVocab chunks;
  Corpus corpus;
};

Data prepare(const Options& o, const std::string& path, const ModelConfig& shape) {
  const SplitMode mode = parse_split_mode(o.mode);
  const auto lines = read_lines(path);
  Data d;
  if (o.vocab.empty()) {
    PreprocessResult pr = preprocess(lines, o.vocab_size, o.max_len, mode);
    d.vocab = std::move(pr.vocab);
    d.corpus = std::move(pr.corpus);
  } else {
    std::ifstream in(o.vocab);
    if (!in) throw IoError("cannot open " + o.vocab);
    d.vocab = TokenVocab::load(in);
    d.corpus = encode(lines, d.vocab, o.max_len, mode);
  }
  const int L = shape.kind == ModelKind::Chunk ? shape.max_chunk_len : 1;
  if (!o.chunks.empty()) {
    std::ifstream in(o.chunks);
    if (!in) throw IoError("cannot open " + o.chunks);
    d.chunks = ChunkVocab::load(in, d.vocab.size(), L);
  } else {
    d.chunks = build_chunk_vocab(d.corpus, d.vocab.size(), o.chunk_vocab_size, L);
  }
  return d;
}

Corpus load_corpus(const Model& model, const std::string& path) {
  const auto lines = read_lines(path);
  Corpus c = encode(lines, model.vocab(), model.config().max_sentence_len, model.config().split);
  if (c.empty()) throw ConfigError("no usable sentences in " + path);
  return c;
}

// Rejects lattice flags that contradict a loaded checkpoint.
void check_lattice_flags(const CLI::App* cmd, const Options& o, const ModelConfig& c) {
  const bool l_set = cmd->count("--lattice-size") > 0;
  const bool e_set = cmd->count("--embeddings-per-token") > 0;
  if (!l_set && !e_set) return;
  const ModelConfig want = lattice_config(o);
  const bool l_ok = !l_set || (c.kind == ModelKind::Chunk ? want.max_chunk_len == c.max_chunk_len && want.kind == c.kind
                                                          : o.lattice_size == 1);
  const bool e_ok = !e_set || (c.kind == ModelKind::Sense ? o.senses == c.senses : o.senses == 1);
  if (!l_ok || !e_ok) {
    const std::string have = c.kind == ModelKind::Chunk ? "a dense lattice with L=" + std::to_string(c.max_chunk_len)
                                                        : "a multilattice with E=" + std::to_string(c.senses);
    throw ConfigError("checkpoint was trained with " + have + "; lattice flags disagree");
  }
}

ApproxMode chosen_approx(const CLI::App* cmd, const Options& o, const Model& model) {
  return cmd->count("--approx") > 0 ? parse_approx_mode(o.approx) : model.config().approx;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("failed to write " + path);
}

int cmd_build_vocab(const Options& o, std::ostream& out) {
  const ModelConfig shape = lattice_config(o);
  Options opts = o;
  opts.vocab.clear();
  opts.chunks.clear();
  const Data d = prepare(opts, o.corpus, shape);
  std::ostringstream vs, cs;
  d.vocab.save(vs);
  d.chunks.save(cs);
  write_text(o.vocab, vs.str());
  if (!o.chunks.empty()) write_text(o.chunks, cs.str());
  out << "tokens " << d.vocab.size() << "\nchunks " << d.chunks.size() << "\nsentences " << d.corpus.size() << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ModelConfig config = lattice_config(o);
  config.embed_dim = o.embed_dim;
  config.hidden_dim = o.hidden_dim;
  config.layers = o.layers;
  config.split = parse_split_mode(o.mode);
  config.approx = parse_approx_mode(o.approx);
  config.max_sentence_len = o.max_len;
  config.validate();

  Data d = prepare(o, o.train, config);
  Model model(config, std::move(d.vocab), std::move(d.chunks));
  model.initialize(o.seed);
  Corpus valid;
  if (!o.valid.empty()) valid = load_corpus(model, o.valid);

  TrainConfig tc;
  tc.approx = config.approx;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch_size;
  tc.epochs = o.epochs;
  tc.dropout = o.dropout;
  tc.tau = {o.tau0, o.tau_min, o.tau_decay};
  tc.seed = o.seed;
  tc.clip = o.clip;

  std::ofstream metrics_file;
  std::ostream* metrics = &out;
  if (!o.metrics.empty()) {
    metrics_file.open(o.metrics);
    if (!metrics_file) throw IoError("cannot open for writing: " + o.metrics);
    metrics = &metrics_file;
  }
  const TrainResult r = train(model, d.corpus, valid, tc, metrics, &err);
  save_checkpoint(model, o.out);
  if (r.best_epoch > 0) err << "best validation perplexity " << r.best_valid_perplexity << " at epoch " << r.best_epoch << '\n';
  return 0;
}

int cmd_eval(const CLI::App* cmd, const Options& o, std::ostream& out) {
  auto model = load_checkpoint(o.model);
  check_lattice_flags(cmd, o, model->config());
  const Corpus corpus = load_corpus(*model, o.corpus);
  const EvalReport r = evaluate_perplexity(*model, corpus, chosen_approx(cmd, o, *model));
  out << "sentences\t" << corpus.size() << '\n'
      << "tokens\t" << r.token_count << '\n'
      << std::setprecision(17) << "log_prob\t" << r.total_log_prob << '\n'
      << "perplexity\t" << r.perplexity << '\n';
  return 0;
}

int cmd_segment(const CLI::App* cmd, const Options& o, std::ostream& out) {
  auto model = load_checkpoint(o.model);
  check_lattice_flags(cmd, o, model->config());
  write_segment_report(out, *model, load_corpus(*model, o.corpus), chosen_approx(cmd, o, *model));
  return 0;
}

int cmd_senses(const CLI::App* cmd, const Options& o, std::ostream& out) {
  auto model = load_checkpoint(o.model);
  check_lattice_flags(cmd, o, model->config());
  write_sense_report(out, *model, load_corpus(*model, o.corpus), chosen_approx(cmd, o, *model));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Neural lattice language models"};
  app.require_subcommand(1);

  auto* build = app.add_subcommand("build-vocab", "Write token and chunk vocabularies from a corpus");
  build->add_option("--corpus", o.corpus, "Training corpus, one sentence per line")->required();
  build->add_option("--vocab", o.vocab, "Output token vocabulary")->required();
  build->add_option("--chunks", o.chunks, "Output chunk vocabulary");
  add_data_flags(build, o);
  add_lattice_flags(build, o);

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--train", o.train, "Training corpus")->required();
  tr->add_option("--valid", o.valid, "Validation corpus");
  tr->add_option("--out", o.out, "Checkpoint path")->required();
  tr->add_option("--metrics", o.metrics, "Per-epoch metrics file (default: stdout)");
  tr->add_option("--vocab", o.vocab, "Token vocabulary from build-vocab");
  tr->add_option("--chunks", o.chunks, "Chunk vocabulary from build-vocab");
  add_data_flags(tr, o);
  add_lattice_flags(tr, o);
  add_approx_flag(tr, o);
  tr->add_option("--hidden-dim", o.hidden_dim, "LSTM hidden size")->check(CLI::PositiveNumber);
  tr->add_option("--embed-dim", o.embed_dim, "Embedding size d")->check(CLI::PositiveNumber);
  tr->add_option("--layers", o.layers, "Stacked LSTM layers")->check(CLI::PositiveNumber);
  tr->add_option("--dropout", o.dropout, "Variational dropout rate")->check(CLI::Range(0.0, 0.999999));
  tr->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", o.batch_size, "Sentences per batch")->check(CLI::PositiveNumber);
  tr->add_option("--epochs", o.epochs, "Passes over the training corpus")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", o.seed, "Seed for initialization, shuffling and sampling");
  tr->add_option("--tau0", o.tau0, "Initial Gumbel temperature")->check(CLI::PositiveNumber);
  tr->add_option("--tau-min", o.tau_min, "Temperature floor")->check(CLI::PositiveNumber);
  tr->add_option("--tau-decay", o.tau_decay, "Per-batch temperature decay")->check(CLI::Range(1e-12, 1.0));
  tr->add_option("--clip", o.clip, "Global gradient norm limit")->check(CLI::PositiveNumber);
  add_thread_flag(tr, o);

  auto* ev = app.add_subcommand("eval", "Report perplexity of a checkpoint on a corpus");
  auto* seg = app.add_subcommand("segment", "Greedy segmentation and chunk-length posteriors");
  auto* sen = app.add_subcommand("senses", "Per-occurrence sense preferences");
  for (CLI::App* cmd : {ev, seg, sen}) {
    cmd->add_option("--model", o.model, "Checkpoint")->required();
    cmd->add_option("--corpus", o.corpus, "Corpus, one sentence per line")->required();
    add_lattice_flags(cmd, o);
    add_approx_flag(cmd, o);
    add_thread_flag(cmd, o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) err << app.help();
    return code == 0 ? 0 : 2;
  }

  try {
    if (o.threads > 0) omp_set_num_threads(o.threads);
    if (*build) return cmd_build_vocab(o, out);
    if (*tr) return cmd_train(o, out, err);
    if (*ev) return cmd_eval(ev, o, out);
    if (*seg) return cmd_segment(seg, o, out);
    if (*sen) return cmd_senses(sen, o, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace nllm
