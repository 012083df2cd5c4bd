#pragma once

// Post-generation filters: entailment, length, abstractiveness, and the
// connected-component diversity filter, composed per task mode.
//
// Boundary conventions:
//   entailment       P ≥ τ_entail              (inclusive)
//   length (summ.)   |y| < |x|·τ_comp_ratio    (strict)
//   length (para.)   |x|·τ_lo ≤ |y| < |x|·τ_hi
//   abstractiveness  max(density, rouge) ≤ τ_abstract
//   diversity edge   P > τ_entail              (strict)

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "distill/error.hpp"
#include "distill/lmcore.hpp"
#include "distill/pairgen.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

enum class TaskMode { summarization, paraphrase };

inline std::string_view to_string(TaskMode m) {
  return m == TaskMode::summarization ? "summarization" : "paraphrase";
}

inline TaskMode parse_task_mode(std::string_view s) {
  if (s == "summarization") return TaskMode::summarization;
  if (s == "paraphrase") return TaskMode::paraphrase;
  throw InputError("unknown task mode '" + std::string(s) + "'");
}

struct FilterConfig {
  TaskMode mode = TaskMode::summarization;
  double tau_entail = 0.9;
  double tau_comp_ratio = 0.8;
  double tau_comp_lo = 0.8;
  double tau_comp_hi = 1.5;
  double tau_abstract = 0.6;
  bool diversity = true;

  static FilterConfig summarization() { return {}; }
  static FilterConfig paraphrase() {
    FilterConfig c;
    c.mode = TaskMode::paraphrase;
    return c;
  }

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(tau_entail)) throw InputError("tau_entail must be in [0,1]");
    if (!unit(tau_abstract)) throw InputError("tau_abstract must be in [0,1]");
    if (!(tau_comp_ratio > 0.0)) throw InputError("tau_comp_ratio must be positive");
    if (!(tau_comp_lo >= 0.0 && tau_comp_lo < tau_comp_hi)) {
      throw InputError("tau_comp_lo must be non-negative and below tau_comp_hi");
    }
  }

  friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

/// Memoizes a scorer by (premise, hypothesis) token strings. Safe for
/// concurrent use; concurrent misses on the same key both compute and the
/// last write wins (scores are deterministic).
class MemoizedScorer final : public EntailmentScorer {
 public:
  explicit MemoizedScorer(const EntailmentScorer& inner) : inner_(inner) {}

  EntailmentScore score(const TokenSeq& premise, const TokenSeq& hypothesis) const override {
    std::string key = join_tokens(premise.tokens);
    key.push_back('\x1f');
    key += join_tokens(hypothesis.tokens);
    {
      std::shared_lock lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    const EntailmentScore s = inner_.score(premise, hypothesis);
    std::unique_lock lock(mu_);
    memo_.insert_or_assign(std::move(key), s);
    ++computed_;
    return s;
  }

  std::size_t computed() const {
    std::shared_lock lock(mu_);
    return computed_;
  }

 private:
  const EntailmentScorer& inner_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, EntailmentScore> memo_;
  mutable std::size_t computed_ = 0;
};

enum class Verdict { pass, fail, undecided };

/// Entailment check; raw scores are cached on the pair. Scorer failures
/// yield `undecided` so the caller can quarantine the pair; transport
/// failures (backend down) propagate.
inline Verdict entailment_filter(CandidatePair& pair, const EntailmentScorer& scorer, const FilterConfig& cfg,
                                 std::string* error = nullptr) {
  try {
    if (!pair.scores.entail_xy) pair.scores.entail_xy = scorer.score(*pair.x, *pair.y).value();
    double s = *pair.scores.entail_xy;
    if (cfg.mode == TaskMode::paraphrase) {
      if (!pair.scores.entail_yx) pair.scores.entail_yx = scorer.score(*pair.y, *pair.x).value();
      s = std::min(s, *pair.scores.entail_yx);
    }
    return s >= cfg.tau_entail ? Verdict::pass : Verdict::fail;
  } catch (const TransportError&) {
    throw;
  } catch (const Error& e) {
    if (error) *error = e.what();
    return Verdict::undecided;
  }
}

inline bool length_filter(std::size_t x_len, std::size_t y_len, const FilterConfig& cfg) {
  if (x_len == 0) throw InputError("length_filter: empty x");
  const double x = static_cast<double>(x_len);
  const double y = static_cast<double>(y_len);
  if (cfg.mode == TaskMode::summarization) return y < x * cfg.tau_comp_ratio;
  return x * cfg.tau_comp_lo <= y && y < x * cfg.tau_comp_hi;
}

inline bool length_filter(CandidatePair& pair, const FilterConfig& cfg) {
  const bool ok = length_filter(pair.x->size(), pair.y->size(), cfg);
  pair.scores.comp = compression_ratio(*pair.x, *pair.y);
  return ok;
}

inline bool abstractiveness_filter(double density_norm, double rouge, const FilterConfig& cfg) {
  if (cfg.mode != TaskMode::paraphrase) throw InputError("abstractiveness_filter applies to paraphrase mode only");
  return std::max(density_norm, rouge) <= cfg.tau_abstract;
}

inline bool abstractiveness_filter(CandidatePair& pair, const FilterConfig& cfg) {
  if (!pair.scores.rouge_l) pair.scores.rouge_l = rouge_l(*pair.x, *pair.y);
  if (!pair.scores.density_norm) pair.scores.density_norm = normalized_density(*pair.x, *pair.y);
  return abstractiveness_filter(*pair.scores.density_norm, *pair.scores.rouge_l, cfg);
}

struct DiversityStats {
  std::size_t components = 0;
  std::size_t probes = 0;
  std::size_t probe_failures = 0;
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

// Connects pairs whose `side` sentences entail one another above tau.
// Probes run over distinct sentences: if s_u ⇒ s_v then every pair holding
// s_u is adjacent to every pair holding s_v.
template <typename SideFn>
void connect_side(std::span<const CandidatePair> pairs, SideFn side, const EntailmentScorer& scorer, double tau,
                  DisjointSets& sets, DiversityStats& stats) {
  std::vector<const TokenSeq*> values;
  std::vector<std::vector<std::size_t>> members;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TokenSeq& s = side(pairs[i]);
    auto [it, inserted] = index.emplace(join_tokens(s.tokens), values.size());
    if (inserted) {
      values.push_back(&s);
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }
  auto probe = [&](std::size_t u, std::size_t v) {
    ++stats.probes;
    try {
      return scorer.score(*values[u], *values[v]).value() > tau;
    } catch (const TransportError&) {
      throw;
    } catch (const Error&) {
      ++stats.probe_failures;
      return false;
    }
  };
  for (std::size_t u = 0; u < values.size(); ++u) {
    for (std::size_t v = 0; v < values.size(); ++v) {
      if (u == v && members[u].size() < 2) continue;
      if (!probe(u, v)) continue;
      const std::size_t anchor = members[u].front();
      for (auto i : members[u]) sets.unite(anchor, i);
      for (auto j : members[v]) sets.unite(anchor, j);
    }
  }
}

}  // namespace detail

/// Keeps, in every connected component of the duplicate graph, the pair
/// with the largest P(x ⇒ y) (first in input order on ties). Two pairs are
/// adjacent when P(x_i ⇒ x_j) > τ or P(y_i ⇒ y_j) > τ for either ordering.
/// Survivors keep their input order. Callers pass the pairs of one context.
inline std::vector<CandidatePair> diversity_filter(std::vector<CandidatePair> pairs, const EntailmentScorer& scorer,
                                                   const FilterConfig& cfg, DiversityStats* stats_out = nullptr) {
  DiversityStats stats;
  if (pairs.size() <= 1) {
    stats.components = pairs.size();
    if (stats_out) *stats_out = stats;
    return pairs;
  }
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].context_id != pairs[0].context_id) {
      throw InputError("diversity_filter: pairs from more than one context");
    }
  }
  detail::DisjointSets sets(pairs.size());
  detail::connect_side(pairs, [](const CandidatePair& p) -> const TokenSeq& { return *p.x; }, scorer,
                       cfg.tau_entail, sets, stats);
  detail::connect_side(pairs, [](const CandidatePair& p) -> const TokenSeq& { return *p.y; }, scorer,
                       cfg.tau_entail, sets, stats);

  std::vector<double> quality(pairs.size(), -1.0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& p = pairs[i];
    if (!p.scores.entail_xy) {
      try {
        p.scores.entail_xy = scorer.score(*p.x, *p.y).value();
      } catch (const TransportError&) {
        throw;
      } catch (const Error&) {
        ++stats.probe_failures;
        continue;
      }
    }
    quality[i] = *p.scores.entail_xy;
  }

  std::map<std::size_t, std::size_t> best;  // root -> index of best pair
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t root = sets.find(i);
    auto [it, inserted] = best.emplace(root, i);
    if (!inserted && quality[i] > quality[it->second]) it->second = i;
  }
  stats.components = best.size();
  std::vector<bool> keep(pairs.size(), false);
  for (const auto& [root, idx] : best) keep[idx] = true;

  std::vector<CandidatePair> out;
  out.reserve(best.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (keep[i]) out.push_back(std::move(pairs[i]));
  }
  if (stats_out) *stats_out = stats;
  return out;
}

struct FilterCounts {
  std::size_t input = 0;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::size_t quarantined = 0;

  FilterCounts& operator+=(const FilterCounts& o) {
    input += o.input;
    passed += o.passed;
    failed += o.failed;
    quarantined += o.quarantined;
    return *this;
  }
  friend bool operator==(const FilterCounts&, const FilterCounts&) = default;
};

inline constexpr std::array<std::string_view, 4> kFilterNames = {"length", "abstractiveness", "entailment",
                                                                 "diversity"};

/// Pass/fail accounting for one task mode. `total` obeys
/// input = passed + failed + quarantined.
struct FilterCensus {
  TaskMode mode = TaskMode::summarization;
  FilterCounts total;
  std::map<std::string, FilterCounts> per_filter;
  std::map<std::string, FilterCounts> per_provenance;

  FilterCensus& operator+=(const FilterCensus& o) {
    total += o.total;
    for (const auto& [k, v] : o.per_filter) per_filter[k] += v;
    for (const auto& [k, v] : o.per_provenance) per_provenance[k] += v;
    return *this;
  }

  bool conserved() const {
    if (total.input != total.passed + total.failed + total.quarantined) return false;
    for (const auto& [k, v] : per_filter) {
      if (v.input != v.passed + v.failed + v.quarantined) return false;
    }
    for (const auto& [k, v] : per_provenance) {
      if (v.input != v.passed + v.failed + v.quarantined) return false;
    }
    return true;
  }
};

struct QuarantinedPair {
  CandidatePair pair;
  std::string reason;
};

struct FilterResult {
  std::vector<CandidatePair> survivors;
  std::vector<QuarantinedPair> quarantined;
  FilterCensus census;
};

/// Runs length → abstractiveness (paraphrase only) → entailment → diversity
/// over a pool grouped by context. Diversity sees only the pairs that passed
/// the earlier filters, one context at a time.
inline FilterResult apply_filters(std::vector<CandidatePair> pool, const EntailmentScorer& scorer,
                                  const FilterConfig& cfg) {
  cfg.validate();
  FilterResult res;
  res.census.mode = cfg.mode;
  for (auto name : kFilterNames) {
    if (name == "abstractiveness" && cfg.mode != TaskMode::paraphrase) continue;
    if (name == "diversity" && !cfg.diversity) continue;
    res.census.per_filter[std::string(name)];
  }
  auto prov_counts = [&](const CandidatePair& p) -> FilterCounts& {
    return res.census.per_provenance[std::string(to_string(p.provenance))];
  };

  res.census.total.input = pool.size();
  std::vector<CandidatePair> stage;
  stage.reserve(pool.size());
  for (auto& pair : pool) {
    ++prov_counts(pair).input;
    auto fail_at = [&](std::string_view filter) {
      ++res.census.per_filter[std::string(filter)].failed;
      ++res.census.total.failed;
      ++prov_counts(pair).failed;
    };

    auto& length = res.census.per_filter["length"];
    ++length.input;
    if (!length_filter(pair, cfg)) {
      fail_at("length");
      continue;
    }
    ++length.passed;

    if (cfg.mode == TaskMode::paraphrase) {
      auto& abs = res.census.per_filter["abstractiveness"];
      ++abs.input;
      if (!abstractiveness_filter(pair, cfg)) {
        fail_at("abstractiveness");
        continue;
      }
      ++abs.passed;
    }

    auto& ent = res.census.per_filter["entailment"];
    ++ent.input;
    std::string why;
    const Verdict v = entailment_filter(pair, scorer, cfg, &why);
    if (v == Verdict::fail) {
      fail_at("entailment");
      continue;
    }
    if (v == Verdict::undecided) {
      ++ent.quarantined;
      ++res.census.total.quarantined;
      ++prov_counts(pair).quarantined;
      res.quarantined.push_back({pair, why});
      continue;
    }
    ++ent.passed;
    stage.push_back(std::move(pair));
  }

  if (!cfg.diversity) {
    for (auto& p : stage) ++prov_counts(p).passed;
    res.survivors = std::move(stage);
    res.census.total.passed = res.survivors.size();
    return res;
  }

  // Group by context in order of first appearance.
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t i = 0; i < stage.size(); ++i) {
    auto [it, inserted] = group_of.emplace(stage[i].context_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  auto& div = res.census.per_filter["diversity"];
  for (const auto& idx : groups) {
    std::vector<CandidatePair> group;
    group.reserve(idx.size());
    for (auto i : idx) group.push_back(stage[i]);
    auto kept = diversity_filter(std::move(group), scorer, cfg);
    div.input += idx.size();
    div.passed += kept.size();
    div.failed += idx.size() - kept.size();
    res.census.total.failed += idx.size() - kept.size();
    std::size_t k = 0;
    for (auto i : idx) {
      auto& pc = prov_counts(stage[i]);
      if (k < kept.size() && kept[k].pair_id == stage[i].pair_id) {
        ++pc.passed;
        ++k;
      } else {
        ++pc.failed;
      }
    }
    for (auto& p : kept) res.survivors.push_back(std::move(p));
  }
  res.census.total.passed = res.survivors.size();
  return res;
}

}  // namespace distill
