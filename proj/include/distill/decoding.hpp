#pragma once

// Decoding over the LanguageModel contract: nucleus truncation and sampling,
// keyword extraction, and grouped-beam lexically constrained search.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "distill/error.hpp"
#include "distill/lmcore.hpp"
#include "distill/rng.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

struct SentenceRange {
  std::size_t min = 1;
  std::size_t max = 5;

  friend bool operator==(const SentenceRange&, const SentenceRange&) = default;
};

struct GenerationConfig {
  std::size_t k1 = 10;           // constrained candidates per sequential x
  std::size_t k2 = 100;          // parallel pool size
  double top_p = 0.7;            // nucleus threshold
  std::size_t beam_width = 16;   // per satisfied-count bucket
  std::size_t max_keywords = 5;
  SentenceRange context_sentences{};
  std::size_t max_tokens = 32;   // per sentence
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InputError("top_p must be in (0, 1]");
    if (k1 < 1) throw InputError("k1 must be at least 1");
    if (k2 < 1) throw InputError("k2 must be at least 1");
    if (beam_width < 1) throw InputError("beam_width must be at least 1");
    if (max_keywords < 1) throw InputError("max_keywords must be at least 1");
    if (max_tokens < 1) throw InputError("max_tokens must be at least 1");
    if (context_sentences.min < 1 || context_sentences.min > context_sentences.max) {
      throw InputError("context_sentences must be a non-empty range starting at 1 or more");
    }
  }

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

/// Smallest head of the sorted distribution whose mass reaches top_p,
/// renormalized.
inline TokenDistribution nucleus_truncate(const TokenDistribution& dist, double top_p) {
  const auto& e = dist.entries();
  if (e.empty()) return dist;
  double cum = 0.0;
  std::size_t keep = e.size();
  for (std::size_t i = 0; i < e.size(); ++i) {
    cum += e[i].second;
    // Absorbs rounding in the running sum so top_p = 1 keeps the full support.
    if (cum + 1e-12 >= top_p) {
      keep = i + 1;
      break;
    }
  }
  return TokenDistribution::from_weights({e.begin(), e.begin() + static_cast<std::ptrdiff_t>(keep)});
}

/// Inverse-CDF draw from a distribution.
inline const std::string& sample_token(const TokenDistribution& dist, RandomStream& rng) {
  const auto& e = dist.entries();
  if (e.empty()) throw InputError("sample_token: empty distribution");
  const double u = rng.uniform();
  double cum = 0.0;
  for (const auto& [tok, p] : e) {
    cum += p;
    if (u < cum) return tok;
  }
  return e.back().first;
}

/// Samples `count` sentences continuing `prefix`. Sentence j uses the
/// stream derived from (config.seed, hash(prefix), j).
inline std::vector<TokenSeq> sample_sentences(const LanguageModel& model,
                                              std::span<const std::string> prefix,
                                              std::size_t count, const GenerationConfig& config) {
  if (count < 1) throw InputError("sample_sentences: count must be at least 1");
  const std::uint64_t ctx_hash = hash_tokens(prefix);
  std::vector<TokenSeq> out;
  out.reserve(count);
  std::vector<std::string> ctx(prefix.begin(), prefix.end());
  for (std::size_t j = 0; j < count; ++j) {
    RandomStream rng(derive_stream_seed(config.seed, ctx_hash, j));
    std::vector<std::string> sentence;
    while (sentence.size() < config.max_tokens) {
      if (ctx.size() >= model.context_limit()) throw InputError("sample_sentences: context overflow");
      const auto nucleus = nucleus_truncate(model.next_token_distribution(ctx), config.top_p);
      const std::string& tok = sample_token(nucleus, rng);
      sentence.push_back(tok);
      ctx.push_back(tok);
      if (is_sentence_terminator(tok)) break;
    }
    ctx.resize(prefix.size());
    out.push_back(make_token_seq(std::move(sentence)));
  }
  return out;
}

inline std::vector<TokenSeq> sample_sentences(const LanguageModel& model, const TokenSeq& prefix,
                                              std::size_t count, const GenerationConfig& config) {
  return sample_sentences(model, std::span<const std::string>(prefix.tokens), count, config);
}

// ---------------------------------------------------------------------------
// Keywords

inline const std::unordered_set<std::string_view>& english_stopwords() {
  static const std::unordered_set<std::string_view> words = {
      "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and",
      "any", "are", "aren't", "as", "at", "be", "because", "been", "before", "being", "below",
      "between", "both", "but", "by", "can", "cannot", "could", "couldn't", "did", "didn't",
      "do", "does", "doesn't", "doing", "don't", "down", "during", "each", "few", "for", "from",
      "further", "had", "hadn't", "has", "hasn't", "have", "haven't", "having", "he", "he'd",
      "he'll", "he's", "her", "here", "here's", "hers", "herself", "him", "himself", "his",
      "how", "how's", "i", "i'd", "i'll", "i'm", "i've", "if", "in", "into", "is", "isn't",
      "it", "it's", "its", "itself", "just", "let's", "may", "me", "might", "more", "most",
      "must", "mustn't", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
      "only", "or", "other", "ought", "our", "ours", "ourselves", "out", "over", "own", "same",
      "shall", "shan't", "she", "she'd", "she'll", "she's", "should", "shouldn't", "so", "some",
      "such", "than", "that", "that's", "the", "their", "theirs", "them", "themselves", "then",
      "there", "there's", "these", "they", "they'd", "they'll", "they're", "they've", "this",
      "those", "through", "to", "too", "under", "until", "up", "upon", "us", "very", "was",
      "wasn't", "we", "we'd", "we'll", "we're", "we've", "were", "weren't", "what", "what's",
      "when", "when's", "where", "where's", "which", "while", "who", "who's", "whom", "why",
      "why's", "will", "with", "won't", "would", "wouldn't", "you", "you'd", "you'll",
      "you're", "you've", "your", "yours", "yourself", "yourselves", "'s"};
  return words;
}

inline bool is_content_token(std::string_view tok) {
  if (tok.empty()) return false;
  if (std::all_of(tok.begin(), tok.end(), [](char c) { return detail::is_punct(c); })) return false;
  return english_stopwords().count(tok) == 0;
}

class KeywordExtractor {
 public:
  virtual ~KeywordExtractor() = default;
  /// Up to max_keywords keywords, best first. Empty when x has no content tokens.
  virtual std::vector<std::string> extract(const TokenSeq& x, std::size_t max_keywords) const = 0;
};

/// Term frequency weighted by smoothed inverse document frequency over an
/// optional background corpus. Without a corpus every content token weighs
/// the same and ties fall back to first position in x.
class BuiltinKeywordExtractor final : public KeywordExtractor {
 public:
  BuiltinKeywordExtractor() = default;

  explicit BuiltinKeywordExtractor(std::span<const TokenSeq> background) : documents_(background.size()) {
    for (const auto& doc : background) {
      std::unordered_set<std::string> seen(doc.tokens.begin(), doc.tokens.end());
      for (const auto& t : seen) ++doc_freq_[t];
    }
  }

  double weight(const std::string& token) const {
    if (documents_ == 0) return 1.0;
    auto it = doc_freq_.find(token);
    const double df = it == doc_freq_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(documents_)) / (1.0 + df)) + 1.0;
  }

  std::vector<std::string> extract(const TokenSeq& x, std::size_t max_keywords) const override {
    if (x.empty()) throw InputError("extract_keywords: empty sentence");
    struct Candidate {
      std::string token;
      std::size_t first = 0;
      std::size_t tf = 0;
      double score = 0.0;
    };
    std::vector<Candidate> cands;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < x.tokens.size(); ++i) {
      const auto& t = x.tokens[i];
      if (!is_content_token(t)) continue;
      auto [it, inserted] = index.emplace(t, cands.size());
      if (inserted) cands.push_back({t, i, 0, 0.0});
      ++cands[it->second].tf;
    }
    for (auto& c : cands) c.score = static_cast<double>(c.tf) * weight(c.token);
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.first < b.first;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < cands.size() && i < max_keywords; ++i) out.push_back(cands[i].token);
    return out;
  }

 private:
  std::size_t documents_ = 0;
  std::unordered_map<std::string, std::size_t> doc_freq_;
};

inline std::vector<std::string> extract_keywords(const TokenSeq& x, std::size_t max_keywords) {
  return BuiltinKeywordExtractor{}.extract(x, max_keywords);
}

// ---------------------------------------------------------------------------
// Constrained beam search

/// Which keywords a hypothesis has emitted as contiguous token runs.
struct ConstraintState {
  std::vector<std::vector<std::string>> required;
  std::vector<bool> satisfied;

  static ConstraintState scan(std::vector<std::vector<std::string>> keywords,
                              std::span<const std::string> hypothesis) {
    ConstraintState st{std::move(keywords), {}};
    st.satisfied.resize(st.required.size());
    for (std::size_t k = 0; k < st.required.size(); ++k) {
      const auto& kw = st.required[k];
      st.satisfied[k] = !kw.empty() && std::search(hypothesis.begin(), hypothesis.end(),
                                                   kw.begin(), kw.end()) != hypothesis.end();
    }
    return st;
  }

  std::size_t count() const { return static_cast<std::size_t>(std::count(satisfied.begin(), satisfied.end(), true)); }
  bool all() const { return count() == required.size(); }
};

struct ScoredSequence {
  TokenSeq sequence;
  double score = 0.0;  // sum of token log-probs / token count
};

namespace detail {

struct Hypothesis {
  std::vector<std::string> tokens;
  double logprob = 0.0;
  std::uint64_t satisfied = 0;  // bitmask over keywords
};

inline bool ends_with(std::span<const std::string> parent, const std::string& last,
                      const std::vector<std::string>& kw) {
  const std::size_t n = parent.size() + 1;
  if (kw.empty() || kw.size() > n) return false;
  if (kw.back() != last) return false;
  for (std::size_t i = 0; i + 1 < kw.size(); ++i) {
    if (parent[n - kw.size() + i] != kw[i]) return false;
  }
  return true;
}

// Lexicographic comparison of parent_a+[tok_a] vs parent_b+[tok_b].
inline bool extended_less(const std::vector<std::string>& pa, const std::string& ta,
                          const std::vector<std::string>& pb, const std::string& tb) {
  const std::size_t n = pa.size();  // both parents have equal length within a step
  for (std::size_t i = 0; i < n; ++i) {
    if (pa[i] != pb[i]) return pa[i] < pb[i];
  }
  return ta < tb;
}

}  // namespace detail

/// Beam search where hypotheses are bucketed by how many keywords they have
/// satisfied, each bucket keeping its best `beam_width` by length-normalized
/// log-probability. Only hypotheses that end with a terminator and satisfy
/// every keyword are emitted; at most k1 are returned, best first (ties in
/// lexicographic token order). An empty keyword list degenerates to plain
/// beam search.
inline std::vector<ScoredSequence> constrained_beam_search(
    const LanguageModel& model, std::span<const std::string> prefix,
    const std::vector<std::vector<std::string>>& keywords, const GenerationConfig& config) {
  if (keywords.size() > 64) throw InputError("constrained_beam_search: at most 64 keywords");
  for (const auto& kw : keywords) {
    if (kw.empty()) throw InputError("constrained_beam_search: empty keyword");
  }
  const std::uint64_t full = keywords.empty() ? 0 : (keywords.size() == 64 ? ~0ULL : (1ULL << keywords.size()) - 1);

  using detail::Hypothesis;
  std::vector<Hypothesis> live(1);
  std::vector<ScoredSequence> finished;
  std::vector<std::string> ctx(prefix.begin(), prefix.end());

  struct Candidate {
    std::size_t parent;
    const std::string* token;
    double logprob;
    double score;
    std::uint64_t satisfied;
  };

  for (std::size_t step = 1; step <= config.max_tokens && !live.empty(); ++step) {
    std::map<int, std::vector<Candidate>, std::greater<>> buckets;
    std::vector<TokenDistribution> dists;
    dists.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& hyp = live[h];
      ctx.resize(prefix.size());
      ctx.insert(ctx.end(), hyp.tokens.begin(), hyp.tokens.end());
      if (ctx.size() >= model.context_limit()) continue;
      dists.push_back(model.next_token_distribution(ctx));
      for (const auto& [tok, p] : dists.back().entries()) {
        if (p <= 0.0) continue;
        const double lp = hyp.logprob + std::log(p);
        const double score = lp / static_cast<double>(step);
        std::uint64_t sat = hyp.satisfied;
        for (std::size_t k = 0; k < keywords.size(); ++k) {
          if (!(sat >> k & 1ULL) && detail::ends_with(hyp.tokens, tok, keywords[k])) sat |= 1ULL << k;
        }
        if (is_sentence_terminator(tok)) {
          if (sat == full) {
            auto tokens = hyp.tokens;
            tokens.push_back(tok);
            finished.push_back({make_token_seq(std::move(tokens)), score});
          }
          continue;
        }
        buckets[std::popcount(sat)].push_back({h, &tok, lp, score, sat});
      }
    }

    std::vector<Hypothesis> next;
    for (auto& [nsat, cands] : buckets) {
      auto better = [&](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return detail::extended_less(live[a.parent].tokens, *a.token, live[b.parent].tokens, *b.token);
      };
      const std::size_t keep = std::min(config.beam_width, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
      for (std::size_t i = 0; i < keep; ++i) {
        const auto& c = cands[i];
        Hypothesis h;
        h.tokens.reserve(step);
        h.tokens = live[c.parent].tokens;
        h.tokens.push_back(*c.token);
        h.logprob = c.logprob;
        h.satisfied = c.satisfied;
        next.push_back(std::move(h));
      }
    }
    // Candidates point into `dists`, so they are consumed before it goes away.
    live = std::move(next);
  }

  std::sort(finished.begin(), finished.end(), [](const ScoredSequence& a, const ScoredSequence& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.sequence.tokens < b.sequence.tokens;
  });
  if (finished.size() > config.k1) finished.resize(config.k1);
  return finished;
}

/// Convenience overload taking single-token or multi-token keyword strings,
/// tokenized with the shared tokenizer.
inline std::vector<ScoredSequence> constrained_beam_search(const LanguageModel& model,
                                                           const TokenSeq& prefix,
                                                           std::span<const std::string> keywords,
                                                           const GenerationConfig& config) {
  std::vector<std::vector<std::string>> kws;
  for (const auto& k : keywords) {
    auto t = tokenize(k).tokens;
    if (!t.empty()) kws.push_back(std::move(t));
  }
  return constrained_beam_search(model, std::span<const std::string>(prefix.tokens), kws, config);
}

}  // namespace distill
