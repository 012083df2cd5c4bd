#pragma once

// Candidate pair production: domain-prefixed context sampling, sequential
// (keyword-constrained) generation, parallel (nucleus pool) generation, and
// the per-context union that feeds the filters.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distill/decoding.hpp"
#include "distill/error.hpp"
#include "distill/lmcore.hpp"
#include "distill/rng.hpp"
#include "distill/textmetrics.hpp"

namespace distill {

enum class Domain { news, reddit, biomedical, custom };

inline std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::news: return "news";
    case Domain::reddit: return "reddit";
    case Domain::biomedical: return "biomedical";
    case Domain::custom: return "custom";
  }
  return "custom";
}

inline Domain parse_domain(std::string_view s) {
  if (s == "news") return Domain::news;
  if (s == "reddit") return Domain::reddit;
  if (s == "biomedical") return Domain::biomedical;
  if (s == "custom") return Domain::custom;
  throw InputError("unknown domain '" + std::string(s) + "'");
}

enum class Provenance { sequential, parallel, self_distill };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::sequential: return "sequential";
    case Provenance::parallel: return "parallel";
    case Provenance::self_distill: return "self_distill";
  }
  return "sequential";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "sequential") return Provenance::sequential;
  if (s == "parallel") return Provenance::parallel;
  if (s == "self_distill") return Provenance::self_distill;
  throw InputError("unknown provenance '" + std::string(s) + "'");
}

/// How contexts of a domain are prefixed. Placeholders {city}, {media} and
/// {subreddit} are filled from fixed lists with the context's own stream.
struct DomainSpec {
  Domain domain = Domain::custom;
  std::string prefix_template;

  static DomainSpec news() { return {Domain::news, "{city}, ({media}) --"}; }
  static DomainSpec reddit() { return {Domain::reddit, "(r/{subreddit})"}; }
  static DomainSpec biomedical() { return {Domain::biomedical, ""}; }
  static DomainSpec custom(std::string tmpl) { return {Domain::custom, std::move(tmpl)}; }

  static DomainSpec for_domain(Domain d) {
    switch (d) {
      case Domain::news: return news();
      case Domain::reddit: return reddit();
      case Domain::biomedical: return biomedical();
      case Domain::custom: return custom("");
    }
    return custom("");
  }
};

namespace detail {

inline constexpr std::array<std::string_view, 8> kCities = {"London", "New York", "Paris", "Washington",
                                                            "Tokyo", "Berlin", "Sydney", "Toronto"};
inline constexpr std::array<std::string_view, 5> kMedia = {"CNN", "AP", "Reuters", "BBC", "AFP"};
inline constexpr std::array<std::string_view, 6> kSubreddits = {"Gaming", "science", "explainlikeimfive",
                                                                "AskReddit", "worldnews", "technology"};

template <std::size_t N>
void fill_placeholder(std::string& s, std::string_view key, const std::array<std::string_view, N>& options,
                      RandomStream& rng) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos)) {
    const auto pick = options[rng.uniform_int(0, N - 1)];
    s.replace(pos, key.size(), pick);
    pos += pick.size();
  }
}

}  // namespace detail

/// A sampled left context. `text` holds the filled prefix followed by the
/// generated sentences; it is the conditioning prefix for pair generation.
struct DomainContext {
  Domain domain = Domain::custom;
  std::string prefix_template;  // filled prefix, e.g. "London, (CNN) --"
  TokenSeq text;
  std::string id;
  std::size_t index = 0;
  std::size_t sentence_count = 0;
};

inline std::string context_id(Domain d, std::size_t index) {
  std::string n = std::to_string(index);
  return std::string(to_string(d)) + "-" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

/// Samples context number `index` (stable id) for a domain.
inline DomainContext sample_context(const LanguageModel& model, const DomainSpec& spec, std::size_t index,
                                    const GenerationConfig& config) {
  RandomStream rng(derive_stream_seed(config.seed, fnv1a("context/" + std::string(to_string(spec.domain))), index));
  DomainContext ctx;
  ctx.domain = spec.domain;
  ctx.index = index;
  ctx.id = context_id(spec.domain, index);
  ctx.prefix_template = spec.prefix_template;
  detail::fill_placeholder(ctx.prefix_template, "{city}", detail::kCities, rng);
  detail::fill_placeholder(ctx.prefix_template, "{media}", detail::kMedia, rng);
  detail::fill_placeholder(ctx.prefix_template, "{subreddit}", detail::kSubreddits, rng);

  ctx.sentence_count = rng.uniform_int(config.context_sentences.min, config.context_sentences.max);
  std::vector<std::string> tokens = tokenize(ctx.prefix_template).tokens;
  GenerationConfig sentence_cfg = config;
  sentence_cfg.seed = mix_seed(config.seed, index);
  for (std::size_t s = 0; s < ctx.sentence_count; ++s) {
    auto sentence = sample_sentences(model, std::span<const std::string>(tokens), 1, sentence_cfg).front();
    tokens.insert(tokens.end(), sentence.tokens.begin(), sentence.tokens.end());
    // A sentence cut by max_tokens is closed so the sentence count holds.
    if (tokens.empty() || !is_sentence_terminator(tokens.back())) tokens.emplace_back(".");
  }
  ctx.text.tokens = std::move(tokens);
  ctx.text.source_text = join_tokens(ctx.text.tokens);
  return ctx;
}

inline std::vector<DomainContext> sample_contexts(const LanguageModel& model, const DomainSpec& spec,
                                                  std::size_t n, const GenerationConfig& config) {
  if (n < 1) throw InputError("sample_contexts: n must be at least 1");
  config.validate();
  std::vector<DomainContext> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_context(model, spec, i, config));
  return out;
}

/// Metric scores cached on a pair by the filters.
struct PairScores {
  std::optional<double> entail_xy;
  std::optional<double> entail_yx;
  std::optional<double> rouge_l;
  std::optional<double> density;
  std::optional<double> density_norm;
  std::optional<double> comp;
};

using SentencePtr = std::shared_ptr<const TokenSeq>;

/// A generated (x, y) pair. Sentences are shared between the pairs built
/// from them, so the k2·(k2−1) parallel pairs cost two pointers each.
struct CandidatePair {
  std::string pair_id;
  std::string context_id;
  SentencePtr x;
  SentencePtr y;
  Provenance provenance = Provenance::sequential;
  Domain domain = Domain::custom;
  PairScores scores;
};

/// One x from the context, its keywords, and up to k1 keyword-constrained ys.
inline std::vector<CandidatePair> generate_sequential(const LanguageModel& model, const DomainContext& context,
                                                      const GenerationConfig& config,
                                                      const KeywordExtractor& extractor,
                                                      std::vector<std::string>* keywords_out = nullptr) {
  GenerationConfig x_cfg = config;
  x_cfg.seed = mix_seed(config.seed, fnv1a("sequential"));
  auto x = std::make_shared<const TokenSeq>(sample_sentences(model, context.text, 1, x_cfg).front());
  auto keywords = extractor.extract(*x, config.max_keywords);
  if (keywords_out) *keywords_out = keywords;
  if (keywords.empty()) return {};

  std::vector<std::vector<std::string>> constraints;
  for (const auto& k : keywords) {
    auto run = tokenize(k).tokens;
    if (!run.empty()) constraints.push_back(std::move(run));
  }
  if (constraints.empty()) return {};
  auto ys = constrained_beam_search(model, std::span<const std::string>(context.text.tokens), constraints, config);

  std::vector<CandidatePair> out;
  out.reserve(ys.size());
  for (std::size_t k = 0; k < ys.size(); ++k) {
    CandidatePair p;
    p.pair_id = context.id + "/seq/" + std::to_string(k);
    p.context_id = context.id;
    p.x = x;
    p.y = std::make_shared<const TokenSeq>(std::move(ys[k].sequence));
    p.provenance = Provenance::sequential;
    p.domain = context.domain;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<CandidatePair> generate_sequential(const LanguageModel& model, const DomainContext& context,
                                                      const GenerationConfig& config) {
  return generate_sequential(model, context, config, BuiltinKeywordExtractor{});
}

/// k2 nucleus samples from the context; every ordered pair (s_m, s_n), m ≠ n.
/// Duplicate samples are kept; the diversity filter collapses them.
inline std::vector<CandidatePair> generate_parallel(const LanguageModel& model, const DomainContext& context,
                                                    const GenerationConfig& config) {
  GenerationConfig p_cfg = config;
  p_cfg.seed = mix_seed(config.seed, fnv1a("parallel"));
  auto pool = sample_sentences(model, context.text, config.k2, p_cfg);
  std::vector<SentencePtr> sentences;
  sentences.reserve(pool.size());
  for (auto& s : pool) sentences.push_back(std::make_shared<const TokenSeq>(std::move(s)));

  std::vector<CandidatePair> out;
  out.reserve(sentences.size() * (sentences.size() - 1));
  for (std::size_t m = 0; m < sentences.size(); ++m) {
    for (std::size_t n = 0; n < sentences.size(); ++n) {
      if (m == n) continue;
      CandidatePair p;
      p.pair_id = context.id + "/para/" + std::to_string(m) + "-" + std::to_string(n);
      p.context_id = context.id;
      p.x = sentences[m];
      p.y = sentences[n];
      p.provenance = Provenance::parallel;
      p.domain = context.domain;
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct GenerationModes {
  bool sequential = true;
  bool parallel = true;
};

/// The candidate pairs of one context, sequential first.
struct ContextPool {
  const DomainContext* context = nullptr;
  std::vector<CandidatePair> pairs;
  std::size_t sequential = 0;
  std::size_t parallel = 0;
};

inline ContextPool build_context_pool(const LanguageModel& model, const DomainContext& context,
                                      const GenerationConfig& config, GenerationModes modes,
                                      const KeywordExtractor& extractor) {
  ContextPool pool;
  pool.context = &context;
  if (modes.sequential) {
    pool.pairs = generate_sequential(model, context, config, extractor);
    pool.sequential = pool.pairs.size();
  }
  if (modes.parallel) {
    auto para = generate_parallel(model, context, config);
    pool.parallel = para.size();
    pool.pairs.insert(pool.pairs.end(), std::make_move_iterator(para.begin()), std::make_move_iterator(para.end()));
  }
  return pool;
}

struct ContextFailure {
  std::string context_id;
  std::string message;
};

/// Lazily yields C_0 one context at a time, so pairs stay grouped by
/// context. Input and protocol errors are recorded per context and the
/// stream moves on; transport errors (backend outage) propagate.
class CandidatePool {
 public:
  CandidatePool(std::span<const DomainContext> contexts, const LanguageModel& model, GenerationConfig config,
                GenerationModes modes, const KeywordExtractor& extractor)
      : contexts_(contexts), model_(model), config_(std::move(config)), modes_(modes), extractor_(extractor) {
    if (contexts_.empty()) throw InputError("build_candidate_pool: no contexts");
    config_.validate();
  }

  std::optional<ContextPool> next() {
    while (pos_ < contexts_.size()) {
      const auto& ctx = contexts_[pos_++];
      try {
        auto pool = build_context_pool(model_, ctx, config_, modes_, extractor_);
        sequential_ += pool.sequential;
        parallel_ += pool.parallel;
        return pool;
      } catch (const TransportError&) {
        throw;
      } catch (const Error& e) {
        failures_.push_back({ctx.id, e.what()});
      }
    }
    return std::nullopt;
  }

  std::size_t sequential_count() const noexcept { return sequential_; }
  std::size_t parallel_count() const noexcept { return parallel_; }
  const std::vector<ContextFailure>& failures() const noexcept { return failures_; }

 private:
  std::span<const DomainContext> contexts_;
  const LanguageModel& model_;
  GenerationConfig config_;
  GenerationModes modes_;
  const KeywordExtractor& extractor_;
  std::size_t pos_ = 0;
  std::size_t sequential_ = 0;
  std::size_t parallel_ = 0;
  std::vector<ContextFailure> failures_;
};

}  // namespace distill
