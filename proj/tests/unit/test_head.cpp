#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "nllm/error.hpp"
#include "nllm/grad_check.hpp"
#include "nllm/head.hpp"

using namespace nllm;
using ad::Graph;
using ad::Var;

namespace {

// A sentinel head over `tokens` unit tokens plus `extra` multi-token chunks.
struct HeadFixture {
  ParamSet ps;
  SentinelHead head;

  HeadFixture(int tokens, int chunks, int L, int d, int H, std::uint64_t seed, bool zero = false) {
    head.output_table = &ps.add("table", Shape::matrix(chunks + 2, d));
    head.output_bias = &ps.add("bias", Shape::vector(chunks + 1));
    head.projection = &ps.add("proj", Shape::matrix(d, H));
    head.token_table = &ps.add("tokens", Shape::matrix(tokens, d));
    head.sub_lstm = LstmStack(ps, "sub", d, H, 1);
    head.sub_init_weight = &ps.add("init.w", Shape::matrix(H, H));
    head.sub_init_bias = &ps.add("init.b", Shape::vector(H));
    head.sub_out_weight = &ps.add("out.w", Shape::matrix(tokens + 1, H));
    head.sub_out_bias = &ps.add("out.b", Shape::vector(tokens + 1));
    head.chunk_count = chunks;
    head.token_count = tokens;
    head.max_len = L;
    if (!zero) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int i = 0; i < ps.size(); ++i) {
        for (double& x : ps[i].value().values) x = u(rng);
      }
    }
  }
};

Var random_hidden(Graph& g, std::mt19937_64& rng, int H) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(H));
  for (double& x : v) x = u(rng);
  return g.constant(Tensor::vector(v));
}

// Every token sequence of length 1..L over `V` tokens.
std::vector<std::vector<int>> all_chunks(int V, int L) {
  std::vector<std::vector<int>> out, frontier = {{}};
  for (int len = 1; len <= L; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& p : frontier) {
      for (int t = 0; t < V; ++t) {
        auto c = p;
        c.push_back(t);
        next.push_back(c);
        out.push_back(c);
      }
    }
    frontier = std::move(next);
  }
  return out;
}

double logsumexp(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

TEST_CASE("main chunk distribution") {
  HeadFixture f(3, 5, 2, 4, 3, 1);
  Graph g;
  std::mt19937_64 rng(2);
  Var dist = main_chunk_dist(g, f.head, random_hidden(g, rng, 3));
  CHECK(dist.size() == 6);
  double s = 0.0;
  for (double x : dist.value()) s += std::exp(x);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  HeadFixture z(3, 5, 2, 4, 3, 1, true);
  Graph g2;
  Var uniform = main_chunk_dist(g2, z.head, g2.constant(Tensor::vector({0, 0, 0})));
  for (double x : uniform.value()) CHECK(x == doctest::Approx(std::log(1.0 / 6.0)));
}

TEST_CASE("sub-LSTM normalizes over chunks up to the maximum length") {
  for (int L = 1; L <= 3; ++L) {
    for (int V = 2; V <= 3; ++V) {
      HeadFixture f(V, V, L, 4, 3, 10 + static_cast<std::uint64_t>(L * V));
      std::mt19937_64 rng(5);
      Graph g;
      Var h = random_hidden(g, rng, 3);
      std::vector<double> lps;
      for (const auto& c : all_chunks(V, L)) lps.push_back(sub_chunk_logprob(g, f.head, h, c).item());
      CHECK(std::exp(logsumexp(lps)) == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("zero-parameter sub-LSTM is uniform") {
  HeadFixture z(2, 2, 1, 4, 3, 0, true);
  Graph g;
  Var h = g.constant(Tensor::vector({0.3, 0.1, -0.2}));
  CHECK(std::exp(sub_chunk_logprob(g, z.head, h, std::vector<int>{0}).item()) == doctest::Approx(0.5));
  CHECK(std::exp(sub_chunk_logprob(g, z.head, h, std::vector<int>{1}).item()) == doctest::Approx(0.5));
  CHECK_THROWS_AS(sub_chunk_logprob(g, z.head, h, std::vector<int>{0, 1}), ShapeError);
}

TEST_CASE("prefix sharing gives the same values as separate scoring") {
  HeadFixture f(4, 4, 3, 4, 3, 8);
  std::mt19937_64 rng(9);
  Graph g;
  Var h = random_hidden(g, rng, 3);
  const std::vector<int> cont = {2, 0, 3};
  SubChunkScorer scorer(g, f.head, h, cont);
  for (int len = 1; len <= 3; ++len) {
    const double shared = scorer.log_prob(len).item();
    const double alone = sub_chunk_logprob(g, f.head, h, std::span<const int>(cont).first(static_cast<std::size_t>(len))).item();
    CHECK(shared == doctest::Approx(alone).epsilon(1e-14));
  }
  CHECK(scorer.steps() == 2);
}

TEST_CASE("mixture arithmetic") {
  Graph g;
  Var main = g.constant(Tensor::vector({std::log(0.1), std::log(0.5), std::log(0.4)}));
  Var sub = g.scalar(std::log(0.05));
  CHECK(std::exp(chunk_logprob(g, main, 2, 0, sub).item()) == doctest::Approx(0.12).epsilon(1e-14));
  CHECK(std::exp(chunk_logprob(g, main, 2, std::nullopt, sub).item()) == doctest::Approx(0.02).epsilon(1e-14));
}

TEST_CASE("mixture sums to one over every chunk") {
  // V = 3 tokens, L = 3: 3 + 9 + 27 = 39 chunks; a few of them in the vocabulary.
  HeadFixture f(3, 7, 3, 4, 5, 21);
  const auto chunks = all_chunks(3, 3);
  REQUIRE(chunks.size() == 39);
  std::map<std::vector<int>, int> ids;
  for (int t = 0; t < 3; ++t) ids[{t}] = t;
  ids[{0, 1}] = 3;
  ids[{2, 2}] = 4;
  ids[{1, 0, 2}] = 5;
  ids[{2, 1, 1}] = 6;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    Var h = random_hidden(g, rng, 5);
    Var main = main_chunk_dist(g, f.head, h);
    std::vector<double> lps;
    for (const auto& c : chunks) {
      std::optional<int> id;
      if (auto it = ids.find(c); it != ids.end()) id = it->second;
      lps.push_back(chunk_logprob(g, main, f.head.sentinel(), id, sub_chunk_logprob(g, f.head, h, c)).item());
    }
    CHECK(std::exp(logsumexp(lps)) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("chunk log-probability passes grad_check") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    HeadFixture f(3, 5, 2, 4, 3, 40 + static_cast<std::uint64_t>(trial));
    const std::vector<double> hv = {0.2, -0.4, 0.7};
    auto loss = [&](Graph& g) {
      Var h = g.constant(Tensor::vector(hv));
      Var main = main_chunk_dist(g, f.head, h);
      const std::vector<int> c = {1, 2};
      const Var parts[2] = {chunk_logprob(g, main, f.head.sentinel(), 3, sub_chunk_logprob(g, f.head, h, c)),
                            chunk_logprob(g, main, f.head.sentinel(), std::nullopt,
                                          sub_chunk_logprob(g, f.head, h, std::vector<int>{0}))};
      return g.add(parts[0], parts[1]);
    };
    CHECK(grad_check_params(f.ps, loss, 1e-5).max_rel_error < 1e-6);
  }
}

TEST_CASE("sense head layout and distribution") {
  const auto offsets = SenseHead::layout(5, 3, 2);
  CHECK(offsets.back() == 4 * 3 + 1);
  ParamSet ps;
  SenseHead head;
  head.senses = 3;
  head.eos = 2;
  head.row_offset = offsets;
  head.table = &ps.add("t", Shape::matrix(head.rows(), 2));
  head.bias = &ps.add("b", Shape::vector(head.rows()));
  head.projection = &ps.add("p", Shape::matrix(2, 3));
  std::mt19937_64 rng(6);
  ps.initialize(rng);
  CHECK(head.senses_of(2) == 1);
  CHECK(head.senses_of(4) == 3);
  CHECK_THROWS_AS(head.row(2, 1), ShapeError);
  CHECK_THROWS_AS(head.row(5, 0), ShapeError);

  Graph g;
  Var dist = sense_dist(g, head, g.constant(Tensor::vector({0.5, -1.0, 0.2})));
  double s = 0.0;
  for (double x : dist.value()) s += std::exp(x);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  // Identical rows for every sense of token 4: each gets a third of p(token).
  Parameter& t = *ps.find("t");
  Parameter& b = *ps.find("b");
  for (int k = 1; k < 3; ++k) {
    for (int c = 0; c < 2; ++c) t.value().at(head.row(4, k), c) = t.value().at(head.row(4, 0), c);
    b.value().values[static_cast<std::size_t>(head.row(4, k))] = b.value().values[static_cast<std::size_t>(head.row(4, 0))];
  }
  Graph g2;
  Var d2 = sense_dist(g2, head, g2.constant(Tensor::vector({0.5, -1.0, 0.2})));
  std::vector<double> lp(d2.value().begin(), d2.value().end());
  const double token = token_logprob(lp, head, 4);
  for (int k = 0; k < 3; ++k) {
    CHECK(std::exp(lp[static_cast<std::size_t>(head.row(4, k))]) == doctest::Approx(std::exp(token) / 3.0).epsilon(1e-13));
  }
}

TEST_CASE("one sense per token is a plain softmax") {
  ParamSet ps;
  SenseHead head;
  head.row_offset = SenseHead::layout(4, 1, 2);
  head.table = &ps.add("t", Shape::matrix(head.rows(), 3));
  head.bias = &ps.add("b", Shape::vector(head.rows()));
  head.projection = &ps.add("p", Shape::matrix(3, 2));
  std::mt19937_64 rng(8);
  ps.initialize(rng);
  Graph g;
  Var h = g.constant(Tensor::vector({0.3, 0.9}));
  Var a = sense_dist(g, head, h);
  Var b = g.log_softmax(tied_output_logits(g, h, g.param(*head.table), g.param(*head.bias), g.param(*head.projection)));
  for (int k = 0; k < 4; ++k) CHECK(a.value()[static_cast<std::size_t>(k)] == b.value()[static_cast<std::size_t>(k)]);
  CHECK_THROWS_AS(SenseHead::layout(4, 0, 2), ConfigError);
}
