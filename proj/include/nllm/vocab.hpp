#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nllm {

enum class SplitMode { Word, Character };

SplitMode parse_split_mode(std::string_view s);
std::string_view to_string(SplitMode m);

using Sentence = std::vector<int>;
using Corpus = std::vector<Sentence>;

/// Unit-token vocabulary. Ids 0..2 are reserved for the unknown token, the
/// number token and end-of-sentence; the remaining ids follow frequency order.
class TokenVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kNumber = 1;
  static constexpr int kEos = 2;
  static constexpr int kReserved = 3;
  static constexpr std::string_view kUnkSurface = "<unk>";
  static constexpr std::string_view kNumberSurface = "<N>";
  static constexpr std::string_view kEosSurface = "<eos>";
  /// Printed name of the sentinel output; it is not a token id.
  static constexpr std::string_view kSentinelSurface = "<s>";

  TokenVocab();

  int size() const { return static_cast<int>(surfaces_.size()); }
  const std::string& surface(int id) const { return surfaces_.at(static_cast<std::size_t>(id)); }
  std::int64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view surface) const;
  /// Unknown id for out-of-vocabulary surfaces.
  int id(std::string_view surface) const;

  int add(std::string surface, std::int64_t count);
  void set_count(int id, std::int64_t count) { counts_.at(static_cast<std::size_t>(id)) = count; }

  /// "surface<TAB>count" per line, ordered by id.
  void save(std::ostream& out) const;
  static TokenVocab load(std::istream& in);

  bool operator==(const TokenVocab& o) const { return surfaces_ == o.surfaces_ && counts_ == o.counts_; }

 private:
  std::vector<std::string> surfaces_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

/// Splits valid UTF-8 into code points; throws FormatError on malformed input.
std::vector<std::string> utf8_code_points(std::string_view text);

/// Lowercases ASCII letters and rewrites maximal ASCII digit runs. Word mode
/// yields whitespace-separated tokens (a token that is a single digit run
/// becomes "<N>"); character mode yields one token per code point, skipping
/// whitespace, with every digit run collapsed into one "<N>".
std::vector<std::string> tokenize(std::string_view line, SplitMode mode);

struct PreprocessResult {
  TokenVocab vocab;
  Corpus corpus;
};

/// Tokenizes, drops sentences longer than max_len tokens, keeps the
/// vocab_size most frequent surfaces (reserved ids included) and appends
/// end-of-sentence to every kept sentence.
PreprocessResult preprocess(std::span<const std::string> lines, int vocab_size, int max_len, SplitMode mode);

/// Same filtering against an existing vocabulary.
Corpus encode(std::span<const std::string> lines, const TokenVocab& vocab, int max_len, SplitMode mode);

std::vector<std::string> read_lines(const std::string& path);

}  // namespace nllm
