#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nllm/model.hpp"

namespace nllm {

struct BoundaryStats {
  int node = 0;
  double posterior = 0.0;               // p(a chunk ends at this node)
  std::map<int, double> length_percent;  // chunk length -> share of that mass, in percent
};

struct SegmentAnalysis {
  std::vector<int> tokens;
  GreedySegmentation greedy;
  std::vector<BoundaryStats> boundaries;  // nodes 1..|X|
};

SegmentAnalysis analyze_segments(const Model& model, std::span<const int> tokens, ApproxMode mode);

struct SenseAnalysis {
  std::vector<int> tokens;
  std::vector<std::vector<double>> senses;  // per position
};

SenseAnalysis analyze_senses(const Model& model, std::span<const int> tokens, ApproxMode mode);

/// Greedy segmentation in brackets, then one line per boundary with its
/// posterior and the chunk-length percentages.
void write_segment_report(std::ostream& out, const Model& model, const Corpus& corpus, ApproxMode mode);

/// Per-occurrence sense posteriors, then per-type counts of preferred senses.
void write_sense_report(std::ostream& out, const Model& model, const Corpus& corpus, ApproxMode mode);

}  // namespace nllm
