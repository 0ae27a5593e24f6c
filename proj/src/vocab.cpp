#include "nllm/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "nllm/error.hpp"

namespace nllm {

SplitMode parse_split_mode(std::string_view s) {
  if (s == "word") return SplitMode::Word;
  if (s == "char") return SplitMode::Character;
  throw ConfigError("unknown split mode: " + std::string(s));
}

std::string_view to_string(SplitMode m) { return m == SplitMode::Word ? "word" : "char"; }

TokenVocab::TokenVocab() {
  add(std::string(kUnkSurface), 0);
  add(std::string(kNumberSurface), 0);
  add(std::string(kEosSurface), 0);
}

std::optional<int> TokenVocab::find(std::string_view surface) const {
  auto it = ids_.find(std::string(surface));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int TokenVocab::id(std::string_view surface) const { return find(surface).value_or(kUnk); }

int TokenVocab::add(std::string surface, std::int64_t count) {
  if (surface.empty() || surface.find_first_of("\t\n\r") != std::string::npos) {
    throw FormatError("invalid vocabulary surface");
  }
  if (ids_.count(surface) != 0) throw FormatError("duplicate vocabulary surface: " + surface);
  const int id = size();
  ids_.emplace(surface, id);
  surfaces_.push_back(std::move(surface));
  counts_.push_back(count);
  return id;
}

void TokenVocab::save(std::ostream& out) const {
  for (int i = 0; i < size(); ++i) out << surfaces_[static_cast<std::size_t>(i)] << '\t' << counts_[static_cast<std::size_t>(i)] << '\n';
}

TokenVocab TokenVocab::load(std::istream& in) {
  std::vector<std::pair<std::string, std::int64_t>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("vocabulary line lacks a tab: " + line);
    std::int64_t count = 0;
    try {
      count = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError("bad vocabulary count: " + line);
    }
    rows.emplace_back(line.substr(0, tab), count);
  }
  if (rows.size() < static_cast<std::size_t>(kReserved) || rows[0].first != kUnkSurface ||
      rows[1].first != kNumberSurface || rows[2].first != kEosSurface) {
    throw FormatError("vocabulary does not start with the reserved tokens");
  }
  TokenVocab v;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i < static_cast<std::size_t>(kReserved)) {
      v.set_count(static_cast<int>(i), rows[i].second);
    } else {
      v.add(rows[i].first, rows[i].second);
    }
  }
  return v;
}

std::vector<std::string> utf8_code_points(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    } else {
      throw FormatError("invalid UTF-8 lead byte");
    }
    if (i + len > text.size()) throw FormatError("truncated UTF-8 sequence");
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) throw FormatError("invalid UTF-8 continuation byte");
      cp = (cp << 6) | (b & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw FormatError("invalid UTF-8 code point");
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_space(std::string_view cp) {
  return cp == " " || cp == "\t" || cp == "\n" || cp == "\r" || cp == "\v" || cp == "\f" ||
         cp == "　" || cp == " ";
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string replace_digit_runs(std::string_view word) {
  std::string out;
  std::size_t i = 0;
  while (i < word.size()) {
    if (is_digit(word[i])) {
      while (i < word.size() && is_digit(word[i])) ++i;
      out += TokenVocab::kNumberSurface;
    } else {
      out += word[i++];
    }
  }
  return out;
}

std::vector<std::vector<std::string>> tokenize_all(std::span<const std::string> lines, int max_len, SplitMode mode) {
  if (max_len <= 0) throw ConfigError("max length must be positive");
  std::vector<std::vector<std::string>> out;
  for (const auto& line : lines) {
    auto toks = tokenize(line, mode);
    if (toks.empty() || static_cast<int>(toks.size()) > max_len) continue;
    out.push_back(std::move(toks));
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view line, SplitMode mode) {
  auto cps = utf8_code_points(line);
  std::vector<std::string> out;
  if (mode == SplitMode::Word) {
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) out.push_back(replace_digit_runs(lower_ascii(cur)));
      cur.clear();
    };
    for (const auto& cp : cps) {
      if (is_space(cp)) {
        flush();
      } else {
        cur += cp;
      }
    }
    flush();
    return out;
  }
  bool in_number = false;
  for (const auto& cp : cps) {
    if (is_space(cp)) {
      in_number = false;
      continue;
    }
    if (cp.size() == 1 && is_digit(cp[0])) {
      if (!in_number) out.emplace_back(TokenVocab::kNumberSurface);
      in_number = true;
      continue;
    }
    in_number = false;
    out.push_back(lower_ascii(cp));
  }
  return out;
}

PreprocessResult preprocess(std::span<const std::string> lines, int vocab_size, int max_len, SplitMode mode) {
  if (vocab_size < TokenVocab::kReserved) throw ConfigError("vocabulary size must cover the reserved tokens");
  auto sentences = tokenize_all(lines, max_len, mode);
  if (sentences.empty()) throw ConfigError("corpus is empty after filtering");

  struct Stat {
    std::int64_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  std::vector<std::string> order;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      auto [it, inserted] = stats.try_emplace(t, Stat{0, order.size()});
      if (inserted) order.push_back(t);
      ++it->second.count;
    }
  }

  PreprocessResult r;
  std::vector<std::string> candidates;
  for (const auto& t : order) {
    if (t == TokenVocab::kUnkSurface || t == TokenVocab::kNumberSurface || t == TokenVocab::kEosSurface) continue;
    candidates.push_back(t);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const std::string& a, const std::string& b) {
    return stats[a].count > stats[b].count;
  });
  const std::size_t keep = static_cast<std::size_t>(vocab_size - TokenVocab::kReserved);
  if (candidates.size() > keep) candidates.resize(keep);
  for (const auto& t : candidates) r.vocab.add(t, stats[t].count);

  std::vector<std::int64_t> reserved(TokenVocab::kReserved, 0);
  for (const auto& s : sentences) {
    Sentence ids;
    ids.reserve(s.size() + 1);
    for (const auto& t : s) {
      const int id = r.vocab.id(t);
      if (id < TokenVocab::kReserved) ++reserved[static_cast<std::size_t>(id)];
      ids.push_back(id);
    }
    ids.push_back(TokenVocab::kEos);
    ++reserved[TokenVocab::kEos];
    r.corpus.push_back(std::move(ids));
  }
  for (int i = 0; i < TokenVocab::kReserved; ++i) r.vocab.set_count(i, reserved[static_cast<std::size_t>(i)]);
  return r;
}

Corpus encode(std::span<const std::string> lines, const TokenVocab& vocab, int max_len, SplitMode mode) {
  Corpus out;
  for (const auto& s : tokenize_all(lines, max_len, mode)) {
    Sentence ids;
    ids.reserve(s.size() + 1);
    for (const auto& t : s) ids.push_back(vocab.id(t));
    ids.push_back(TokenVocab::kEos);
    out.push_back(std::move(ids));
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace nllm
