#pragma once

// Deterministic text metrics shared by the filters, quantization and the
// run reports. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "distill/error.hpp"

namespace distill {

/// A lowercased token sequence together with the text it came from.
struct TokenSeq {
  std::vector<std::string> tokens;
  std::string source_text;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }

  friend bool operator==(const TokenSeq& a, const TokenSeq& b) {
    return a.tokens == b.tokens;
  }
};

/// Joins tokens with single spaces.
inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

/// Builds a TokenSeq from already-normalized tokens; the source text is the
/// space-joined form, which re-tokenizes to the same tokens.
inline TokenSeq make_token_seq(std::vector<std::string> tokens) {
  TokenSeq seq;
  seq.source_text = join_tokens(tokens);
  seq.tokens = std::move(tokens);
  return seq;
}

inline bool is_sentence_terminator(std::string_view token) noexcept {
  return token == "." || token == "!" || token == "?";
}

namespace detail {

inline bool is_punct(char c) noexcept {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

// Letter-dot groups such as "u.s." or "e.g.": at least two groups, each a
// single alphanumeric character followed by a dot.
inline bool is_dotted_abbreviation(std::string_view w) noexcept {
  if (w.size() < 4 || w.size() % 2 != 0) return false;
  for (std::size_t i = 0; i < w.size(); i += 2) {
    if (!std::isalnum(static_cast<unsigned char>(w[i])) || w[i + 1] != '.') return false;
  }
  return true;
}

inline void split_chunk(std::string chunk, std::vector<std::string>& out) {
  if (std::all_of(chunk.begin(), chunk.end(), is_punct)) {
    out.push_back(std::move(chunk));
    return;
  }
  std::size_t begin = 0;
  while (is_punct(chunk[begin])) {
    out.emplace_back(1, chunk[begin]);
    ++begin;
  }
  std::size_t end = chunk.size();
  std::vector<std::string> trailing;
  while (end > begin && is_punct(chunk[end - 1])) {
    if (is_dotted_abbreviation(std::string_view(chunk).substr(begin, end - begin))) break;
    trailing.emplace_back(1, chunk[end - 1]);
    --end;
  }
  out.push_back(chunk.substr(begin, end - begin));
  out.insert(out.end(), trailing.rbegin(), trailing.rend());
}

}  // namespace detail

/// Lowercases, splits on whitespace, and detaches leading and trailing
/// punctuation into single-character tokens. Dotted abbreviations ("u.s.")
/// keep their final dot; a chunk made only of punctuation stays whole.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  seq.source_text = std::string(text);
  std::string chunk;
  auto flush = [&] {
    if (!chunk.empty()) {
      detail::split_chunk(std::move(chunk), seq.tokens);
      chunk.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      chunk.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return seq;
}

/// Length of the longest common subsequence.
inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// ROUGE-L F1 between a reference x and a candidate y.
inline double rouge_l(const TokenSeq& x, const TokenSeq& y) {
  if (x.empty() || y.empty()) throw InputError("rouge_l: degenerate pair (empty side)");
  const std::size_t lcs = lcs_length(x.tokens, y.tokens);
  if (lcs == 0) return 0.0;
  // 2PR/(P+R) with P = lcs/|y|, R = lcs/|x| simplifies to 2·lcs/(|x|+|y|).
  return 2.0 * static_cast<double>(lcs) / static_cast<double>(x.size() + y.size());
}

struct Fragment {
  std::size_t start_in_y = 0;
  std::size_t length = 0;

  friend bool operator==(const Fragment&, const Fragment&) = default;
};

struct FragmentDecomposition {
  std::vector<Fragment> fragments;
  std::size_t y_len = 0;
};

/// Greedy left-to-right decomposition of y into the longest runs shared
/// with x (extractive fragments). At each position of y the longest common
/// run starting there is taken; positions with no match are skipped.
inline FragmentDecomposition extractive_fragments(const TokenSeq& x, const TokenSeq& y) {
  const auto& a = x.tokens;
  const auto& s = y.tokens;
  FragmentDecomposition out;
  out.y_len = s.size();
  if (a.empty() || s.empty()) return out;
  // run[i][j]: length of the common run starting at y[i], x[j].
  const std::size_t w = a.size() + 1;
  std::vector<std::size_t> run((s.size() + 1) * w, 0);
  for (std::size_t i = s.size(); i-- > 0;) {
    for (std::size_t j = a.size(); j-- > 0;) {
      if (s[i] == a[j]) run[i * w + j] = run[(i + 1) * w + j + 1] + 1;
    }
  }
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < a.size(); ++j) best = std::max(best, run[i * w + j]);
    if (best > 0) out.fragments.push_back({i, best});
    i += std::max<std::size_t>(best, 1);
  }
  return out;
}

/// Raw extractive density: (1/|y|) · Σ|f|². Bounded by |y|.
inline double density(const TokenSeq& x, const TokenSeq& y) {
  if (y.empty()) throw InputError("density: empty summary side");
  const auto dec = extractive_fragments(x, y);
  double sum = 0.0;
  for (const auto& f : dec.fragments) sum += static_cast<double>(f.length * f.length);
  return sum / static_cast<double>(y.size());
}

/// Density divided by |y|, i.e. Σ|f|² / |y|², on [0,1].
inline double normalized_density(const TokenSeq& x, const TokenSeq& y) {
  if (y.empty()) throw InputError("normalized_density: empty summary side");
  const auto dec = extractive_fragments(x, y);
  std::size_t sum = 0;
  for (const auto& f : dec.fragments) sum += f.length * f.length;
  return static_cast<double>(sum) / static_cast<double>(y.size() * y.size());
}

/// |y| / |x|.
inline double compression_ratio(const TokenSeq& x, const TokenSeq& y) {
  if (x.empty()) throw InputError("compression_ratio: empty source side");
  return static_cast<double>(y.size()) / static_cast<double>(x.size());
}

/// Shannon entropy (bits) of the n-gram distribution pooled over a corpus.
/// N-grams never cross sequence boundaries.
inline double ngram_entropy(std::span<const TokenSeq> corpus, std::size_t n) {
  if (n == 0) throw InputError("ngram_entropy: n must be positive");
  std::map<std::vector<std::string_view>, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& seq : corpus) {
    if (seq.size() < n) continue;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      std::vector<std::string_view> key(seq.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                        seq.tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++counts[std::move(key)];
      ++total;
    }
  }
  if (total == 0) throw InputError("ngram_entropy: corpus has no " + std::to_string(n) + "-grams");
  double h = 0.0;
  const double t = static_cast<double>(total);
  for (const auto& [gram, c] : counts) {
    const double p = static_cast<double>(c) / t;
    h -= p * std::log2(p);
  }
  return h;
}

inline constexpr std::size_t kDefaultMsttrSegment = 100;

/// Mean segmented type/token ratio over consecutive full segments of the
/// pooled corpus; the trailing partial segment is dropped.
inline double msttr(std::span<const TokenSeq> corpus, std::size_t segment_len = kDefaultMsttrSegment) {
  if (segment_len == 0) throw InputError("msttr: segment length must be positive");
  std::vector<std::string_view> pooled;
  for (const auto& seq : corpus) pooled.insert(pooled.end(), seq.tokens.begin(), seq.tokens.end());
  if (pooled.size() < segment_len) {
    throw InputError("msttr: pooled corpus has " + std::to_string(pooled.size()) +
                     " tokens, fewer than one segment of " + std::to_string(segment_len));
  }
  const std::size_t segments = pooled.size() / segment_len;
  double acc = 0.0;
  std::unordered_set<std::string_view> types;
  for (std::size_t s = 0; s < segments; ++s) {
    types.clear();
    for (std::size_t i = s * segment_len; i < (s + 1) * segment_len; ++i) types.insert(pooled[i]);
    acc += static_cast<double>(types.size()) / static_cast<double>(segment_len);
  }
  return acc / static_cast<double>(segments);
}

}  // namespace distill
