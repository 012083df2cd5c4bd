#pragma once

// Contracts for the generator LM and the entailment scorer, plus the
// in-process doubles (an n-gram ToyLM and a token-overlap scorer) that let
// the whole pipeline run without a model server.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "distill/error.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

/// Next-token distribution, sorted by descending probability with ties
/// broken lexicographically by token.
class TokenDistribution {
 public:
  using Entry = std::pair<std::string, double>;

  TokenDistribution() = default;

  /// Normalizes non-negative weights to sum 1 and sorts them. Zero-weight
  /// entries are dropped; duplicate tokens are merged.
  static TokenDistribution from_weights(std::vector<Entry> weights) {
    std::map<std::string, double> merged;
    for (auto& [tok, w] : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw InputError("TokenDistribution: invalid weight for token '" + tok + "'");
      }
      if (w > 0.0) merged[tok] += w;
    }
    double total = 0.0;
    for (const auto& [tok, w] : merged) total += w;
    if (merged.empty() || total <= 0.0) throw InputError("TokenDistribution: no positive mass");
    TokenDistribution d;
    d.entries_.reserve(merged.size());
    for (auto& [tok, w] : merged) d.entries_.emplace_back(tok, w / total);
    d.sort();
    return d;
  }

  /// Uniform distribution over the given tokens.
  static TokenDistribution uniform(std::span<const std::string> tokens) {
    std::vector<Entry> w;
    w.reserve(tokens.size());
    for (const auto& t : tokens) w.emplace_back(t, 1.0);
    return from_weights(std::move(w));
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  double prob(std::string_view token) const noexcept {
    for (const auto& [t, p] : entries_) {
      if (t == token) return p;
    }
    return 0.0;
  }

  double total_mass() const noexcept {
    double s = 0.0;
    for (const auto& e : entries_) s += e.second;
    return s;
  }

  /// Checks the ordering and normalization invariants.
  bool valid(double tolerance = 1e-6) const noexcept {
    if (entries_.empty()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const double p = entries_[i].second;
      if (!(p >= 0.0 && p <= 1.0)) return false;
      if (i > 0 && !precedes(entries_[i - 1], entries_[i])) return false;
    }
    return std::abs(total_mass() - 1.0) <= tolerance;
  }

  friend bool operator==(const TokenDistribution&, const TokenDistribution&) = default;

 private:
  static bool precedes(const Entry& a, const Entry& b) noexcept {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  }
  void sort() { std::sort(entries_.begin(), entries_.end(), precedes); }

  std::vector<Entry> entries_;
};

/// Generator contract. Decoding algorithms only ever ask for the next-token
/// distribution, so sampling and constrained beam search share a backend.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  /// Deterministic for a fixed model and prefix.
  virtual TokenDistribution next_token_distribution(std::span<const std::string> prefix) const = 0;

  virtual std::size_t context_limit() const noexcept { return std::numeric_limits<std::size_t>::max(); }
};

/// Entailment probability P(premise ⇒ hypothesis), always on [0,1].
class EntailmentScore {
 public:
  constexpr EntailmentScore() = default;
  explicit EntailmentScore(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ProtocolError("entailment score outside [0,1]: " + std::to_string(value));
    }
  }
  constexpr double value() const noexcept { return value_; }

 private:
  double value_ = 0.0;
};

class EntailmentScorer {
 public:
  virtual ~EntailmentScorer() = default;
  virtual EntailmentScore score(const TokenSeq& premise, const TokenSeq& hypothesis) const = 0;
};

/// Maximum-likelihood n-gram model with backoff to shorter contexts, then to
/// the sentence-start distribution (empty prefix or prefix ending in a
/// terminator) or a uniform distribution over the vocabulary plus end token.
class ToyLM final : public LanguageModel {
 public:
  static ToyLM build(std::span<const TokenSeq> corpus, std::size_t order = 3,
                     std::string end_token = ".") {
    if (corpus.empty()) throw InputError("build_toy_lm: empty corpus");
    if (order < 2) throw InputError("build_toy_lm: order must be at least 2");

    ToyLM lm;
    lm.order_ = order;
    lm.end_token_ = std::move(end_token);

    std::map<std::string, std::map<std::string, double>> counts;
    std::map<std::string, double> start_counts;
    std::set<std::string> vocab;
    for (const auto& seq : corpus) {
      const auto& t = seq.tokens;
      if (t.empty()) continue;
      start_counts[t.front()] += 1.0;
      vocab.insert(t.begin(), t.end());
      for (std::size_t i = 1; i < t.size(); ++i) {
        const std::size_t max_ctx = std::min(order - 1, i);
        for (std::size_t len = 1; len <= max_ctx; ++len) {
          std::span<const std::string> ctx(t.data() + (i - len), len);
          counts[join_tokens(ctx)][t[i]] += 1.0;
        }
      }
    }
    if (vocab.empty()) throw InputError("build_toy_lm: corpus has no tokens");
    vocab.insert(lm.end_token_);

    for (auto& [ctx, next] : counts) {
      lm.table_.emplace(ctx, TokenDistribution::from_weights({next.begin(), next.end()}));
    }
    lm.start_ = TokenDistribution::from_weights({start_counts.begin(), start_counts.end()});
    lm.vocabulary_.assign(vocab.begin(), vocab.end());
    lm.uniform_ = TokenDistribution::uniform(lm.vocabulary_);
    return lm;
  }

  TokenDistribution next_token_distribution(std::span<const std::string> prefix) const override {
    return lookup(prefix);
  }

  /// Same as next_token_distribution but without copying the result.
  const TokenDistribution& lookup(std::span<const std::string> prefix) const {
    const std::size_t max_ctx = std::min(order_ - 1, prefix.size());
    for (std::size_t len = max_ctx; len >= 1; --len) {
      auto it = table_.find(join_tokens(prefix.subspan(prefix.size() - len)));
      if (it != table_.end()) return it->second;
    }
    if (prefix.empty() || is_sentence_terminator(prefix.back())) return start_;
    return uniform_;
  }

  std::size_t order() const noexcept { return order_; }
  const std::string& end_token() const noexcept { return end_token_; }
  const std::map<std::string, TokenDistribution>& table() const noexcept { return table_; }
  const TokenDistribution& start() const noexcept { return start_; }
  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }

 private:
  ToyLM() = default;

  std::size_t order_ = 3;
  std::string end_token_;
  std::map<std::string, TokenDistribution> table_;
  TokenDistribution start_;
  TokenDistribution uniform_;
  std::vector<std::string> vocabulary_;
};

inline ToyLM build_toy_lm(std::span<const TokenSeq> corpus, std::size_t order = 3) {
  return ToyLM::build(corpus, order);
}

/// Fraction of the hypothesis' unique tokens that also occur in the premise.
inline EntailmentScore overlap_entailment_score(const TokenSeq& premise, const TokenSeq& hypothesis) {
  if (hypothesis.empty()) throw InputError("overlap_entailment_score: empty hypothesis");
  const std::unordered_set<std::string_view> prem(premise.tokens.begin(), premise.tokens.end());
  const std::unordered_set<std::string_view> hyp(hypothesis.tokens.begin(), hypothesis.tokens.end());
  std::size_t hit = 0;
  for (auto t : hyp) hit += prem.count(t);
  return EntailmentScore(static_cast<double>(hit) / static_cast<double>(hyp.size()));
}

/// Scorer double backed by overlap_entailment_score.
class OverlapEntailmentScorer final : public EntailmentScorer {
 public:
  EntailmentScore score(const TokenSeq& premise, const TokenSeq& hypothesis) const override {
    return overlap_entailment_score(premise, hypothesis);
  }
};

}  // namespace distill
