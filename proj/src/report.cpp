#include "nllm/report.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

#include "nllm/error.hpp"
#include "nllm/train.hpp"

namespace nllm {

namespace {

std::vector<double> posteriors_for(const Model& model, const Lattice& lattice, ApproxMode mode) {
  ad::Graph g;
  NeuralPass net(model);
  const ForwardResult fwd = forward_marginalize(g, lattice, net, {eval_mode(mode), 1.0, 0});
  return edge_posteriors(lattice, fwd);
}

std::string chunk_text(const Model& model, std::span<const int> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && model.config().split == SplitMode::Word) s += ' ';
    s += model.vocab().surface(tokens[i]);
  }
  return s;
}

}  // namespace

SegmentAnalysis analyze_segments(const Model& model, std::span<const int> tokens, ApproxMode mode) {
  if (model.config().kind != ModelKind::Chunk) throw ConfigError("segmentation reports need a multi-token lattice model");
  const Lattice lattice = model.lattice_for(tokens);
  const std::vector<double> post = posteriors_for(model, lattice, mode);
  SegmentAnalysis a;
  a.tokens.assign(tokens.begin(), tokens.end());
  a.greedy = greedy_segmentation(lattice, post);
  for (int j = 1; j < lattice.node_count(); ++j) {
    BoundaryStats b;
    b.node = j;
    for (int id : lattice.incoming(j)) b.posterior += post[static_cast<std::size_t>(id)];
    for (int id : lattice.incoming(j)) {
      b.length_percent[lattice.edge(id).length()] += 100.0 * post[static_cast<std::size_t>(id)] / b.posterior;
    }
    a.boundaries.push_back(std::move(b));
  }
  return a;
}

SenseAnalysis analyze_senses(const Model& model, std::span<const int> tokens, ApproxMode mode) {
  if (model.config().kind != ModelKind::Sense) throw ConfigError("sense reports need a multi-embedding model");
  const Lattice lattice = model.lattice_for(tokens);
  SenseAnalysis a;
  a.tokens.assign(tokens.begin(), tokens.end());
  a.senses = sense_posteriors(lattice, posteriors_for(model, lattice, mode));
  return a;
}

void write_segment_report(std::ostream& out, const Model& model, const Corpus& corpus, ApproxMode mode) {
  out << std::fixed;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const SegmentAnalysis a = analyze_segments(model, corpus[s], mode);
    out << "# sentence " << s + 1 << '\n';
    const auto& b = a.greedy.path.boundaries;
    for (std::size_t k = 0; k + 1 < b.size(); ++k) {
      auto span = std::span<const int>(a.tokens).subspan(static_cast<std::size_t>(b[k]), static_cast<std::size_t>(b[k + 1] - b[k]));
      out << (k ? " " : "") << '[' << chunk_text(model, span) << ']';
    }
    out << '\n';
    for (const BoundaryStats& bs : a.boundaries) {
      out << bs.node << '\t' << model.vocab().surface(a.tokens[static_cast<std::size_t>(bs.node) - 1]) << '\t'
          << std::setprecision(4) << bs.posterior << '\t';
      bool first = true;
      for (const auto& [len, pct] : bs.length_percent) {
        out << (first ? "" : " ") << len << ':' << std::setprecision(1) << pct << '%';
        first = false;
      }
      out << '\n';
    }
    out << '\n';
  }
}

void write_sense_report(std::ostream& out, const Model& model, const Corpus& corpus, ApproxMode mode) {
  const int E = model.config().senses;
  std::map<int, std::vector<long>> preferred;
  out << std::fixed << std::setprecision(4);
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const SenseAnalysis a = analyze_senses(model, corpus[s], mode);
    out << "# sentence " << s + 1 << '\n';
    for (std::size_t t = 0; t < a.tokens.size(); ++t) {
      const auto& p = a.senses[t];
      const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      out << model.vocab().surface(a.tokens[t]);
      for (double x : p) out << '\t' << x;
      out << "\t-> " << best << '\n';
      if (p.size() > 1) {
        auto& counts = preferred[a.tokens[t]];
        counts.resize(static_cast<std::size_t>(E), 0);
        ++counts[static_cast<std::size_t>(best)];
      }
    }
    out << '\n';
  }
  out << "# preferred sense counts\n";
  for (const auto& [token, counts] : preferred) {
    out << model.vocab().surface(token);
    for (long c : counts) out << '\t' << c;
    out << '\n';
  }
}

}  // namespace nllm
