#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nllm/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "nllm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = nllm::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("nllm_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::ofstream train(dir / "train.txt");
    const char* lines[] = {"the cat sat down", "the dog sat down", "a cat ran", "the cat ran away", "a dog sat"};
    for (int i = 0; i < 8; ++i) {
      for (const char* l : lines) train << l << '\n';
    }
    std::ofstream valid(dir / "valid.txt");
    valid << "the cat sat\na dog ran away\n";
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator()(const char* name) const { return (dir / name).string(); }
};

std::vector<std::string> small_train(const Workspace& w, const char* out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a = {"train", "--train", w("train.txt"), "--valid", w("valid.txt"), "--out", w(out),
                                "--metrics", w("metrics.tsv"), "--epochs", "2", "--batch-size", "4",
                                "--hidden-dim", "6", "--embed-dim", "6", "--layers", "1"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

}  // namespace

TEST_CASE("training twice with one seed writes identical checkpoints") {
  Workspace w;
  const Run a = run(small_train(w, "a.ckpt", {"--lattice-size", "2", "--approx", "gumbel", "--dropout", "0.2"}));
  REQUIRE(a.code == 0);
  const Run b = run(small_train(w, "b.ckpt", {"--lattice-size", "2", "--approx", "gumbel", "--dropout", "0.2"}));
  REQUIRE(b.code == 0);
  CHECK(slurp(w("a.ckpt")) == slurp(w("b.ckpt")));
  CHECK(slurp(w("metrics.tsv")).rfind("epoch\ttrain_loss\tvalid_ppl\ttau\n", 0) == 0);

  const Run ev = run({"eval", "--model", w("a.ckpt"), "--corpus", w("valid.txt")});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("perplexity\t") != std::string::npos);
  CHECK(ev.out.find("tokens\t9\n") != std::string::npos);

  const Run conflict = run({"eval", "--model", w("a.ckpt"), "--corpus", w("valid.txt"), "--embeddings-per-token", "2"});
  CHECK(conflict.code == 2);
  CHECK(conflict.err.find("L=2") != std::string::npos);
}

TEST_CASE("vocabulary files feed training") {
  Workspace w;
  const Run bv = run({"build-vocab", "--corpus", w("train.txt"), "--vocab", w("v.txt"), "--chunks", w("c.txt"),
                      "--lattice-size", "3", "--chunk-vocab-size", "5"});
  REQUIRE(bv.code == 0);
  CHECK(slurp(w("v.txt")).rfind("<unk>\t", 0) == 0);
  const Run tr = run(small_train(w, "m.ckpt", {"--lattice-size", "3", "--vocab", w("v.txt"), "--chunks", w("c.txt")}));
  CHECK(tr.code == 0);
}

TEST_CASE("an L = 1 model puts every boundary at length one") {
  Workspace w;
  REQUIRE(run(small_train(w, "one.ckpt")).code == 0);
  const Run seg = run({"segment", "--model", w("one.ckpt"), "--corpus", w("valid.txt")});
  REQUIRE(seg.code == 0);
  CHECK(seg.out.find("# sentence 1") != std::string::npos);
  CHECK(seg.out.find("[the] [cat] [sat]") != std::string::npos);
  std::istringstream lines(seg.out);
  std::string line;
  int boundaries = 0;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    ++boundaries;
    CHECK(line.find("1:100.0%") != std::string::npos);
  }
  CHECK(boundaries == 9);
}

TEST_CASE("sense report for a multi-embedding model") {
  Workspace w;
  REQUIRE(run(small_train(w, "e2.ckpt", {"--embeddings-per-token", "2"})).code == 0);
  const Run s = run({"senses", "--model", w("e2.ckpt"), "--corpus", w("valid.txt")});
  REQUIRE(s.code == 0);
  CHECK(s.out.find("-> ") != std::string::npos);
  CHECK(s.out.find("# preferred sense counts") != std::string::npos);
  CHECK(run({"segment", "--model", w("e2.ckpt"), "--corpus", w("valid.txt")}).code == 2);
  CHECK(run({"senses", "--model", w("e2.ckpt"), "--corpus", w("valid.txt"), "--lattice-size", "2"}).code == 2);
}

TEST_CASE("usage and file errors") {
  Workspace w;
  CHECK(run({}).code == 2);
  CHECK(run({"train", "--bogus"}).code == 2);
  CHECK(run({"eval", "--model", "x", "--corpus", "y", "--approx", "best"}).code == 2);
  const Run missing = run({"eval", "--model", w("nope.ckpt"), "--corpus", w("valid.txt")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find(w("nope.ckpt")) != std::string::npos);
  const Run no_corpus = run({"train", "--train", w("absent.txt"), "--out", w("x.ckpt")});
  CHECK(no_corpus.code == 1);
  CHECK(no_corpus.err.find("absent.txt") != std::string::npos);
  CHECK(run(small_train(w, "y.ckpt", {"--lattice-size", "2", "--embeddings-per-token", "2"})).code == 2);
}

TEST_CASE("installed binary") {
  const std::string cmd = std::string(NLLM_CLI_PATH) + " --help > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  const std::string bad = std::string(NLLM_CLI_PATH) + " eval --model /nonexistent --corpus /nonexistent > /dev/null 2>&1";
  CHECK(std::system(bad.c_str()) != 0);
}
