#include <cmath>
#include <random>

#include "doctest.h"
#include "nllm/error.hpp"
#include "nllm/grad_check.hpp"
#include "support/test_models.hpp"

using namespace nllm;
using nllm::testing::TableNetwork;
using nllm::testing::TinySpec;
using ad::Graph;
using ad::Var;

namespace {

constexpr ApproxMode kModes[] = {ApproxMode::Direct, ApproxMode::MonteCarlo, ApproxMode::Marginal, ApproxMode::Gumbel};

double forward_lp(const Lattice& lat, const LatticeNetwork& net, ApproxMode mode, double tau = 0.7,
                  std::uint64_t seed = 3) {
  Graph g;
  return forward_marginalize(g, lat, net, {mode, tau, seed}).log_prob.item();
}

PredecessorDist dist_from(Graph& g, const std::vector<double>& masses, const std::vector<std::vector<double>>& hs) {
  std::vector<int> edges;
  std::vector<Var> joint;
  std::vector<StackState> local;
  for (std::size_t k = 0; k < masses.size(); ++k) {
    edges.push_back(static_cast<int>(k));
    joint.push_back(g.scalar(std::log(masses[k])));
    Var h = g.constant(Tensor::vector(hs[k]));
    local.push_back({LayerState{h, h}});
  }
  return predecessor_dist(g, edges, joint, std::move(local));
}

std::vector<double> values(Var v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

TEST_CASE("predecessor distribution") {
  Graph g;
  PredecessorDist d = dist_from(g, {0.02, 0.06}, {{1, 0}, {0, 1}});
  CHECK(d.weights[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(d.weights[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(d.log_normalizer.item() == doctest::Approx(std::log(0.08)).epsilon(1e-14));
  PredecessorDist one = dist_from(g, {0.3}, {{1}});
  CHECK(one.weights[0] == 1.0);
  CHECK_THROWS_AS(predecessor_dist(g, std::vector<int>{}, std::vector<Var>{}, {}), ConfigError);
}

TEST_CASE("combine modes") {
  Graph g;
  std::mt19937_64 rng(1);
  PredecessorDist d = dist_from(g, {0.02, 0.06}, {{1, 0}, {0, 1}});
  auto marginal = combine_states(g, ApproxMode::Marginal, d, 1.0, rng);
  CHECK(values(marginal.state[0].h)[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(values(marginal.state[0].c)[1] == doctest::Approx(0.75).epsilon(1e-14));

  PredecessorDist same = dist_from(g, {0.1, 0.4}, {{0.5, -2}, {0.5, -2}});
  auto direct = combine_states(g, ApproxMode::Direct, same, 1.0, rng);
  CHECK(values(direct.state[0].h) == std::vector<double>{1.0, -4.0});

  auto hot = combine_states(g, ApproxMode::Gumbel, d, 1e6, rng);
  for (double w : hot.mixing) CHECK(std::abs(w - 0.5) < 1e-3);
  CHECK_THROWS_AS(combine_states(g, ApproxMode::Gumbel, d, 0.0, rng), ConfigError);

  PredecessorDist single = dist_from(g, {0.2}, {{0.3, 0.4}});
  for (ApproxMode m : kModes) {
    auto r = combine_states(g, m, single, 0.5, rng);
    CHECK(r.state[0].h.id() == single.local[0][0].h.id());
  }
}

TEST_CASE("monte-carlo and low-temperature Gumbel follow M") {
  Graph g;
  PredecessorDist d = dist_from(g, {0.2, 0.3, 0.5}, {{1}, {2}, {3}});
  std::mt19937_64 rng(99);
  const int n = 10000;
  std::vector<int> mc(3, 0), gumbel(3, 0);
  for (int i = 0; i < n; ++i) {
    ++mc[static_cast<std::size_t>(combine_states(g, ApproxMode::MonteCarlo, d, 1.0, rng).selected)];
    auto r = combine_states(g, ApproxMode::Gumbel, d, 0.01, rng);
    ++gumbel[static_cast<std::size_t>(std::max_element(r.mixing.begin(), r.mixing.end()) - r.mixing.begin())];
    if (i % 512 == 0) {
      g.clear();
      d = dist_from(g, {0.2, 0.3, 0.5}, {{1}, {2}, {3}});
    }
  }
  const double M[3] = {0.2, 0.3, 0.5};
  for (int k = 0; k < 3; ++k) {
    const double sd = std::sqrt(n * M[k] * (1 - M[k]));
    CHECK(std::abs(mc[static_cast<std::size_t>(k)] - n * M[k]) < 3 * sd);
    CHECK(std::abs(gumbel[static_cast<std::size_t>(k)] - n * M[k]) < 3 * sd);
  }
}

TEST_CASE("two segmentations of a b") {
  TableNetwork net(1);
  net.set({3}, 0, std::log(0.5));
  net.set({4}, 0, std::log(0.3));
  net.set({3, 4}, 0, std::log(0.2));
  const std::vector<int> x = {3, 4};
  const Lattice lat = build_dense(x, 2);
  Graph g;
  const ForwardResult fwd = forward_marginalize(g, lat, net, {});
  CHECK(std::exp(fwd.log_prob.item()) == doctest::Approx(0.35).epsilon(1e-14));
  CHECK(std::exp(brute_force_logprob(lat, net)) == doctest::Approx(0.35).epsilon(1e-14));
  const auto post = edge_posteriors(lat, fwd);
  for (int id = 0; id < lat.edge_count(); ++id) {
    const double expect = lat.edge(id).length() == 2 ? 0.2 / 0.35 : 0.15 / 0.35;
    CHECK(post[static_cast<std::size_t>(id)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("history-independent scores match enumeration in every mode") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    TableNetwork net(static_cast<std::uint64_t>(trial));
    const int n = 1 + static_cast<int>(rng() % 7);
    const auto x = nllm::testing::random_tokens(rng, 4, n);
    const int k = 1 + static_cast<int>(rng() % 3);
    for (const Lattice& lat : {build_dense(x, k), build_multilattice(x, k)}) {
      const double exact = brute_force_logprob(lat, net);
      for (ApproxMode m : kModes) CHECK(std::abs(forward_lp(lat, net, m) - exact) < 1e-9);
    }
  }
}

TEST_CASE("neural forward on a single path equals enumeration") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinySpec spec;
    auto model = nllm::testing::tiny_model(spec, seed);
    std::mt19937_64 rng(seed);
    const auto x = nllm::testing::random_sentence(rng, model->token_count(), 4);
    const Lattice lat = model->lattice_for(x);
    NeuralPass net(*model);
    CHECK(forward_lp(lat, net, ApproxMode::Marginal) == brute_force_logprob(lat, net));
  }
}

TEST_CASE("history-dependent marginal mode is an approximation") {
  TinySpec spec;
  spec.lattice_size = 2;
  auto model = nllm::testing::tiny_model(spec, 12);
  std::mt19937_64 rng(12);
  const auto x = nllm::testing::random_sentence(rng, model->token_count(), 4);
  const Lattice lat = model->lattice_for(x);
  NeuralPass net(*model);
  const double approx = forward_lp(lat, net, ApproxMode::Marginal);
  const double exact = brute_force_logprob(lat, net);
  MESSAGE("marginal " << approx << " vs exact " << exact);
  CHECK(std::isfinite(approx - exact));
  CHECK(approx <= 0.0);
}

TEST_CASE("L = 1 and E = 1 reduce to the sequential baseline") {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (ModelKind kind : {ModelKind::Chunk, ModelKind::Sense}) {
      TinySpec spec;
      spec.kind = kind;
      auto model = nllm::testing::tiny_model(spec, seed);
      const auto x = nllm::testing::random_sentence(rng, model->token_count(), 1 + static_cast<int>(seed));
      NeuralPass net(*model);
      const Lattice lat = model->lattice_for(x);
      const double base = baseline_logprob(*model, x);
      for (ApproxMode m : kModes) CHECK(std::abs(forward_lp(lat, net, m) - base) < 1e-9);
    }
  }
  TinySpec dense;
  dense.lattice_size = 2;
  auto model = nllm::testing::tiny_model(dense, 1);
  CHECK_THROWS_AS(baseline_logprob(*model, std::vector<int>{3, 2}), ConfigError);
}

TEST_CASE("alpha is mode-independent where states have not diverged") {
  TinySpec spec;
  spec.lattice_size = 2;
  auto model = nllm::testing::tiny_model(spec, 4);
  std::mt19937_64 rng(4);
  const auto x = nllm::testing::random_sentence(rng, model->token_count(), 5);
  const Lattice lat = model->lattice_for(x);
  std::vector<std::vector<double>> alphas;
  for (ApproxMode m : kModes) {
    Graph g;
    NeuralPass net(*model);
    alphas.push_back(forward_marginalize(g, lat, net, {m, 0.5, 7}).alpha);
  }
  for (const auto& a : alphas) {
    for (int j = 0; j <= 2; ++j) CHECK(a[static_cast<std::size_t>(j)] == alphas[0][static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("local updates") {
  TinySpec spec;
  spec.kind = ModelKind::Sense;
  spec.senses = 2;
  auto model = nllm::testing::tiny_model(spec, 6);
  const std::vector<int> x = {4, 5, TokenVocab::kEos};
  const Lattice lat = model->lattice_for(x);
  NeuralPass net(*model);
  Graph g;
  NodeState root{net.initial_state(g), g.scalar(0.0)};
  const auto out = lat.outgoing(0);
  REQUIRE(out.size() == 2);
  auto a = values(local_update(g, net, root, lat, lat.edge(out[0])).back().h);
  auto b = values(local_update(g, net, root, lat, lat.edge(out[1])).back().h);
  CHECK(a != b);
  CHECK_THROWS_AS(local_update(g, net, NodeState{}, lat, lat.edge(out[0])), NumericError);

  for (int i = 0; i < model->params().size(); ++i) {
    for (double& v : model->params()[i].value().values) v = 0.0;
  }
  const int H = model->config().hidden_dim;
  Var zero = g.constant(Tensor::vector(std::vector<double>(static_cast<std::size_t>(H), 0.0)));
  NodeState blank{StackState(static_cast<std::size_t>(model->config().layers), LayerState{zero, zero}), g.scalar(0.0)};
  for (double v : values(local_update(g, net, blank, lat, lat.edge(out[0])).back().h)) CHECK(v == 0.0);
}

TEST_CASE("work bound and probability bound") {
  std::mt19937_64 rng(21);
  for (int L = 1; L <= 3; ++L) {
    TinySpec spec;
    spec.lattice_size = L;
    spec.layers = 1 + L % 2;
    auto model = nllm::testing::tiny_model(spec, static_cast<std::uint64_t>(L));
    const auto x = nllm::testing::random_sentence(rng, model->token_count(), 6);
    const Lattice lat = model->lattice_for(x);
    NeuralPass net(*model);
    Graph g;
    const ForwardResult fwd = forward_marginalize(g, lat, net, {});
    CHECK(net.edge_steps() == lat.edge_count() * spec.layers);
    CHECK(net.edge_steps() <= lat.max_in_degree() * lat.token_count() * spec.layers);
    CHECK(net.init_steps() == spec.layers);
    CHECK(fwd.local_updates == lat.edge_count());
    CHECK(net.head_evaluations() == lat.token_count());
    CHECK(fwd.log_prob.item() <= 0.0);
  }
}

TEST_CASE("edge posteriors cover every position once") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    TinySpec spec;
    spec.kind = trial % 2 ? ModelKind::Sense : ModelKind::Chunk;
    spec.lattice_size = spec.kind == ModelKind::Chunk ? 1 + trial % 3 : 1;
    spec.senses = spec.kind == ModelKind::Sense ? 1 + trial % 3 : 1;
    auto model = nllm::testing::tiny_model(spec, static_cast<std::uint64_t>(trial));
    const auto x = nllm::testing::random_sentence(rng, model->token_count(), 2 + trial % 6);
    const Lattice lat = model->lattice_for(x);
    NeuralPass net(*model);
    Graph g;
    const auto post = edge_posteriors(lat, forward_marginalize(g, lat, net, {}));
    for (double c : coverage(lat, post)) CHECK(c == doctest::Approx(1.0).epsilon(1e-8));
    if (lat.kind() == LatticeKind::Multi) {
      for (const auto& s : sense_posteriors(lat, post)) {
        double sum = 0.0;
        for (double p : s) sum += p;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-8));
      }
    } else {
      CHECK_THROWS_AS(sense_posteriors(lat, post), ConfigError);
    }
  }
}

TEST_CASE("single-path posteriors and greedy segmentation") {
  TinySpec spec;
  auto model = nllm::testing::tiny_model(spec, 3);
  const std::vector<int> x = {3, 5, 4, TokenVocab::kEos};
  const Lattice lat = model->lattice_for(x);
  NeuralPass net(*model);
  Graph g;
  const auto post = edge_posteriors(lat, forward_marginalize(g, lat, net, {}));
  for (double p : post) CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
  const auto seg = greedy_segmentation(lat, post);
  CHECK(seg.path.boundaries == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("greedy choice and ties") {
  const std::vector<int> x = {3, 4};
  const Lattice lat = build_dense(x, 2);
  std::vector<double> post(static_cast<std::size_t>(lat.edge_count()));
  for (int id = 0; id < lat.edge_count(); ++id) post[static_cast<std::size_t>(id)] = lat.edge(id).length() == 2 ? 0.9 : 0.1;
  CHECK(greedy_segmentation(lat, post).path.edges.size() == 1);
  for (double& p : post) p = 0.5;
  CHECK(greedy_segmentation(lat, post).path.boundaries == std::vector<int>{0, 1, 2});

  const Lattice multi = build_multilattice(x, 3);
  std::vector<double> flat(static_cast<std::size_t>(multi.edge_count()), 1.0 / 3.0);
  const auto seg = greedy_segmentation(multi, flat);
  for (int id : seg.path.edges) CHECK(multi.edge(id).sense == 0);
}

TEST_CASE("sense posteriors") {
  TinySpec one;
  one.kind = ModelKind::Sense;
  auto m1 = nllm::testing::tiny_model(one, 2);
  const std::vector<int> x = {3, 6, 4, TokenVocab::kEos};
  {
    const Lattice lat = m1->lattice_for(x);
    NeuralPass net(*m1);
    Graph g;
    for (const auto& s : sense_posteriors(lat, edge_posteriors(lat, forward_marginalize(g, lat, net, {})))) {
      REQUIRE(s.size() == 1);
      CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  TinySpec two;
  two.kind = ModelKind::Sense;
  two.senses = 2;
  auto m2 = nllm::testing::tiny_model(two, 2);
  const SenseHead& head = m2->sense_head();
  Parameter& table = *m2->params().find("sense_embedding");
  Parameter& bias = *m2->params().find("output_bias");
  for (int t = 0; t < m2->token_count(); ++t) {
    if (head.senses_of(t) < 2) continue;
    for (int c = 0; c < table.shape().cols(); ++c) table.value().at(head.row(t, 1), c) = table.value().at(head.row(t, 0), c);
    bias.value().values[static_cast<std::size_t>(head.row(t, 1))] = bias.value().values[static_cast<std::size_t>(head.row(t, 0))];
  }
  const Lattice lat = m2->lattice_for(x);
  NeuralPass net(*m2);
  Graph g;
  const auto senses = sense_posteriors(lat, edge_posteriors(lat, forward_marginalize(g, lat, net, {})));
  for (std::size_t t = 0; t + 1 < senses.size(); ++t) {
    CHECK(senses[t][0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(senses[t][1] == doctest::Approx(0.5).epsilon(1e-12));
  }
  CHECK(senses.back().size() == 1);
}

TEST_CASE("full sentence gradient in marginal and Gumbel modes") {
  TinySpec spec;
  spec.lattice_size = 2;
  spec.embed_dim = 4;
  spec.hidden_dim = 3;
  spec.words = 3;
  auto model = nllm::testing::tiny_model(spec, 17);
  const std::vector<int> x = {3, 4, 5};
  const Lattice lat = build_dense(x, 2, &model->chunks());
  std::vector<double> losses;
  for (ApproxMode m : {ApproxMode::Marginal, ApproxMode::Gumbel}) {
    {
      Graph g;
      NeuralPass net(*model);
      losses.push_back(forward_marginalize(g, lat, net, {m, 0.8, 5}).log_prob.item());
    }
    auto loss = [&](Graph& g) {
      NeuralPass net(*model);
      return g.affine(forward_marginalize(g, lat, net, {m, 0.8, 5}).log_prob, -1.0);
    };
    const auto r = grad_check_params(model->params(), loss, 1e-5);
    MESSAGE(to_string(m) << " max relative error " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-6);
  }
  CHECK(losses[0] != losses[1]);
}

TEST_CASE("approximation names and temperature schedule") {
  for (ApproxMode m : kModes) CHECK(parse_approx_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_approx_mode("sample"), ConfigError);
  GumbelConfig cfg;
  double prev = cfg.temperature(0);
  CHECK(prev == 5.0);
  for (long b = 1; b < 20000; b += 97) {
    const double t = cfg.temperature(b);
    CHECK(t <= prev);
    CHECK(t >= cfg.tau_min);
    prev = t;
  }
  CHECK(cfg.temperature(1000000) == 0.5);
}
