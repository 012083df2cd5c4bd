#pragma once

// Stage-0 distillation (contexts -> candidate pairs -> filters -> groups),
// self-distillation through a task model, and the run reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "distill/config.hpp"
#include "distill/dataset_io.hpp"
#include "distill/decoding.hpp"
#include "distill/error.hpp"
#include "distill/filters.hpp"
#include "distill/lmcore.hpp"
#include "distill/pairgen.hpp"
#include "distill/quantize.hpp"
#include "distill/task_model.hpp"
#include "distill/textmetrics.hpp"
#include "distill/toy_corpus.hpp"
#include "json.hpp"

namespace distill {

struct Backends {
  const LanguageModel* generator = nullptr;
  const EntailmentScorer* nli = nullptr;
  const KeywordExtractor* keywords = nullptr;
};

/// Toy doubles: the built-in n-gram generator, token-overlap entailment and
/// tf-idf keywords over the same corpus.
struct ToyBackends {
  OverlapEntailmentScorer nli;
  BuiltinKeywordExtractor keywords{toy_corpus_all()};
  Backends view() const { return {&default_toy_lm(), &nli, &keywords}; }
};

// ---------------------------------------------------------------------------
// Counters and reports

inline FilterCensus empty_census(TaskMode m) {
  FilterCensus c;
  c.mode = m;
  return c;
}

struct RunCounters {
  std::size_t contexts = 0;
  std::size_t contexts_failed = 0;
  std::size_t sequential_candidates = 0;
  std::size_t parallel_candidates = 0;
  std::size_t self_distill_candidates = 0;
  std::size_t unquantized = 0;
  FilterCensus summarization = empty_census(TaskMode::summarization);
  FilterCensus paraphrase = empty_census(TaskMode::paraphrase);
  std::map<std::string, std::size_t> groups;

  RunCounters& operator+=(const RunCounters& o) {
    contexts += o.contexts;
    contexts_failed += o.contexts_failed;
    sequential_candidates += o.sequential_candidates;
    parallel_candidates += o.parallel_candidates;
    self_distill_candidates += o.self_distill_candidates;
    unquantized += o.unquantized;
    summarization += o.summarization;
    paraphrase += o.paraphrase;
    for (const auto& [k, v] : o.groups) groups[k] += v;
    return *this;
  }

  const FilterCensus& census(TaskMode m) const { return m == TaskMode::summarization ? summarization : paraphrase; }
};

inline ojson counts_to_json(const FilterCounts& c) {
  ojson j;
  j["input"] = c.input;
  j["passed"] = c.passed;
  j["failed"] = c.failed;
  j["quarantined"] = c.quarantined;
  return j;
}

inline FilterCounts counts_from_json(const ojson& j) {
  return {j.at("input").get<std::size_t>(), j.at("passed").get<std::size_t>(), j.at("failed").get<std::size_t>(),
          j.at("quarantined").get<std::size_t>()};
}

inline ojson census_to_json(const FilterCensus& c) {
  ojson j;
  j["mode"] = to_string(c.mode);
  j["total"] = counts_to_json(c.total);
  ojson pf = ojson::object();
  for (auto name : kFilterNames) {
    if (auto it = c.per_filter.find(std::string(name)); it != c.per_filter.end()) {
      pf[std::string(name)] = counts_to_json(it->second);
    }
  }
  j["per_filter"] = std::move(pf);
  ojson pp = ojson::object();
  for (const auto& [k, v] : c.per_provenance) pp[k] = counts_to_json(v);
  j["per_provenance"] = std::move(pp);
  return j;
}

inline FilterCensus census_from_json(const ojson& j) {
  FilterCensus c;
  c.mode = parse_task_mode(j.at("mode").get<std::string>());
  c.total = counts_from_json(j.at("total"));
  for (const auto& [k, v] : j.at("per_filter").items()) c.per_filter[k] = counts_from_json(v);
  for (const auto& [k, v] : j.at("per_provenance").items()) c.per_provenance[k] = counts_from_json(v);
  return c;
}

inline ojson counters_to_json(const RunCounters& c) {
  ojson j;
  j["contexts"] = c.contexts;
  j["contexts_failed"] = c.contexts_failed;
  ojson cand;
  cand["sequential"] = c.sequential_candidates;
  cand["parallel"] = c.parallel_candidates;
  cand["self_distill"] = c.self_distill_candidates;
  j["candidates"] = std::move(cand);
  j["unquantized"] = c.unquantized;
  ojson groups = ojson::object();
  for (auto g : kAllGroups) {
    auto it = c.groups.find(std::string(to_string(g)));
    groups[std::string(to_string(g))] = it == c.groups.end() ? 0 : it->second;
  }
  j["groups"] = std::move(groups);
  ojson census;
  census["summarization"] = census_to_json(c.summarization);
  census["paraphrase"] = census_to_json(c.paraphrase);
  j["census"] = std::move(census);
  return j;
}

inline RunCounters counters_from_json(const ojson& j) {
  RunCounters c;
  c.contexts = j.at("contexts").get<std::size_t>();
  c.contexts_failed = j.at("contexts_failed").get<std::size_t>();
  c.sequential_candidates = j.at("candidates").at("sequential").get<std::size_t>();
  c.parallel_candidates = j.at("candidates").at("parallel").get<std::size_t>();
  c.self_distill_candidates = j.at("candidates").at("self_distill").get<std::size_t>();
  c.unquantized = j.at("unquantized").get<std::size_t>();
  for (const auto& [k, v] : j.at("groups").items()) {
    if (v.get<std::size_t>() > 0) c.groups[k] = v.get<std::size_t>();
  }
  c.summarization = census_from_json(j.at("census").at("summarization"));
  c.paraphrase = census_from_json(j.at("census").at("paraphrase"));
  return c;
}

/// Filtered pairs per context.
inline double sample_efficiency(std::size_t survivors, std::size_t contexts) {
  if (contexts == 0) throw InputError("sample_efficiency: zero contexts");
  return static_cast<double>(survivors) / static_cast<double>(contexts);
}

/// Per provenance, plus "total", for one task mode.
inline std::map<std::string, double> sample_efficiency(const RunCounters& c, TaskMode mode) {
  std::map<std::string, double> out;
  std::size_t total = 0;
  for (const auto& [prov, counts] : c.census(mode).per_provenance) {
    out[prov] = sample_efficiency(counts.passed, c.contexts);
    total += counts.passed;
  }
  out["total"] = sample_efficiency(total, c.contexts);
  return out;
}

/// Two-decimal rendering used in reports.
inline std::string format_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct StrategyHistogram {
  std::vector<double> rouge_edges;
  std::vector<double> comp_edges;
  std::vector<std::vector<std::size_t>> counts;  // [comp bin][rouge bin]
  std::size_t clamped = 0;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }
};

namespace detail {

inline std::vector<double> bin_edges(double lo, double hi, std::size_t n) {
  std::vector<double> e(n + 1);
  for (std::size_t i = 0; i <= n; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n);
  e[n] = hi;
  return e;
}

// Half-open [e_i, e_{i+1}), last bin closed; values outside are clamped.
inline std::size_t bin_of(const std::vector<double>& edges, double v, bool& clamped) {
  const std::size_t n = edges.size() - 1;
  if (v < edges.front()) {
    clamped = true;
    return 0;
  }
  if (v >= edges.back()) {
    if (v > edges.back()) clamped = true;
    return n - 1;
  }
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

}  // namespace detail

inline constexpr std::size_t kRougeBins = 10;
inline constexpr std::size_t kCompBins = 15;

/// Records binned by (ROUGE-L, compression ratio) over [0,1] x [0,1.5].
inline StrategyHistogram strategy_histogram(std::span<const DatasetRecord> records, std::size_t rouge_bins = kRougeBins,
                                            std::size_t comp_bins = kCompBins) {
  if (records.empty()) throw InputError("strategy_histogram: empty dataset");
  if (rouge_bins == 0 || comp_bins == 0) throw InputError("strategy_histogram: bin counts must be positive");
  StrategyHistogram h;
  h.rouge_edges = detail::bin_edges(0.0, 1.0, rouge_bins);
  h.comp_edges = detail::bin_edges(0.0, 1.5, comp_bins);
  h.counts.assign(comp_bins, std::vector<std::size_t>(rouge_bins, 0));
  for (const auto& r : records) {
    bool clamped = false;
    const auto ri = detail::bin_of(h.rouge_edges, r.scores.rouge_l, clamped);
    const auto ci = detail::bin_of(h.comp_edges, r.comp, clamped);
    ++h.counts[ci][ri];
    h.clamped += clamped;
  }
  return h;
}

inline ojson histogram_to_json(const StrategyHistogram& h) {
  ojson j;
  j["rouge_edges"] = h.rouge_edges;
  j["comp_edges"] = h.comp_edges;
  j["counts"] = h.counts;
  j["clamped"] = h.clamped;
  return j;
}

/// Rows are compression bins, columns ROUGE-L bins.
inline std::string histogram_csv(const StrategyHistogram& h) {
  auto num = [](double v) { return detail::format_double(v); };
  std::string out = "comp_lo,comp_hi";
  for (std::size_t r = 0; r + 1 < h.rouge_edges.size(); ++r) {
    out += ",rouge_" + num(h.rouge_edges[r]) + "_" + num(h.rouge_edges[r + 1]);
  }
  out += "\n";
  for (std::size_t c = 0; c < h.counts.size(); ++c) {
    out += num(h.comp_edges[c]) + "," + num(h.comp_edges[c + 1]);
    for (auto v : h.counts[c]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

struct LexicalDiversity {
  double h1 = 0.0;
  double h2 = 0.0;
  double h3 = 0.0;
  std::optional<double> msttr;  // absent when the corpus is shorter than one segment
  std::size_t tokens = 0;
  std::size_t sentences = 0;
};

inline LexicalDiversity lexical_diversity(std::span<const TokenSeq> corpus,
                                          std::size_t segment = kDefaultMsttrSegment) {
  if (corpus.empty()) throw InputError("lexical_diversity: empty corpus");
  LexicalDiversity d;
  d.sentences = corpus.size();
  for (const auto& s : corpus) d.tokens += s.size();
  // A corpus too short for any n-gram of an order reports zero entropy.
  auto h = [&](std::size_t n) {
    for (const auto& s : corpus) {
      if (s.size() >= n) return ngram_entropy(corpus, n);
    }
    return 0.0;
  };
  d.h1 = h(1);
  d.h2 = h(2);
  d.h3 = h(3);
  if (d.tokens >= segment) d.msttr = msttr(corpus, segment);
  return d;
}

struct LexicalDiversityReport {
  LexicalDiversity pooled;  // x and y of every record, in record order
  LexicalDiversity x;
  LexicalDiversity y;
};

inline LexicalDiversityReport lexical_diversity_report(std::span<const DatasetRecord> records,
                                                       std::size_t segment = kDefaultMsttrSegment) {
  if (records.empty()) throw InputError("lexical_diversity_report: empty dataset");
  std::vector<TokenSeq> pooled, xs, ys;
  for (const auto& r : records) {
    xs.push_back(tokenize(r.x));
    ys.push_back(tokenize(r.y));
    pooled.push_back(xs.back());
    pooled.push_back(ys.back());
  }
  return {lexical_diversity(pooled, segment), lexical_diversity(xs, segment), lexical_diversity(ys, segment)};
}

inline ojson diversity_to_json(const LexicalDiversity& d) {
  ojson j;
  j["h1"] = d.h1;
  j["h2"] = d.h2;
  j["h3"] = d.h3;
  j["msttr"] = d.msttr ? ojson(*d.msttr) : ojson(nullptr);
  j["msttr_omitted"] = !d.msttr.has_value();
  j["tokens"] = d.tokens;
  j["sentences"] = d.sentences;
  return j;
}

inline ojson diversity_report_to_json(const LexicalDiversityReport& r) {
  ojson j;
  j["pooled"] = diversity_to_json(r.pooled);
  j["x"] = diversity_to_json(r.x);
  j["y"] = diversity_to_json(r.y);
  return j;
}

inline ojson efficiency_to_json(const RunCounters& c) {
  ojson j;
  for (auto mode : {TaskMode::summarization, TaskMode::paraphrase}) {
    ojson m;
    for (const auto& [k, v] : sample_efficiency(c, mode)) {
      ojson e;
      e["value"] = v;
      e["display"] = format_ratio(v);
      m[k] = std::move(e);
    }
    j[std::string(to_string(mode))] = std::move(m);
  }
  return j;
}

/// Histogram, diversity and efficiency for a finished dataset. Summary
/// groups feed the histogram; every record feeds the diversity figures.
inline ojson dataset_stats(std::span<const DatasetRecord> records, const RunCounters* counters) {
  ojson j;
  std::vector<DatasetRecord> summaries;
  for (const auto& r : records) {
    if (r.group && task_mode(*r.group) == TaskMode::summarization) summaries.push_back(r);
  }
  j["records"] = records.size();
  j["histogram"] = summaries.empty() ? ojson(nullptr) : histogram_to_json(strategy_histogram(summaries));
  j["diversity"] = records.empty() ? ojson(nullptr) : diversity_report_to_json(lexical_diversity_report(records));
  if (counters && counters->contexts > 0) j["sample_efficiency"] = efficiency_to_json(*counters);
  return j;
}

// ---------------------------------------------------------------------------
// Workers

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception in index order is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run(i);
      });
    }
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 0

/// Context g of a run uses domain g mod |domains| and keeps g as its index,
/// so ids are unique and independent of batching.
inline DomainContext run_context(const LanguageModel& model, const RunConfig& cfg, std::size_t g) {
  const Domain d = cfg.domains[g % cfg.domains.size()];
  return sample_context(model, DomainSpec::for_domain(d), g, cfg.generation);
}

struct ContextOutcome {
  RunCounters counters;
  std::vector<DatasetRecord> records;
  std::optional<ContextFailure> failure;
};

inline ContextOutcome process_context(const Backends& b, const RunConfig& cfg, std::size_t g) {
  ContextOutcome out;
  out.counters.contexts = 1;
  DomainContext ctx;
  try {
    ctx = run_context(*b.generator, cfg, g);
    auto pool = build_context_pool(*b.generator, ctx, cfg.generation, {cfg.sequential, cfg.parallel}, *b.keywords);
    out.counters.sequential_candidates = pool.sequential;
    out.counters.parallel_candidates = pool.parallel;
    for (const FilterConfig* fc : {&cfg.summarization, &cfg.paraphrase}) {
      auto res = apply_filters(pool.pairs, *b.nli, *fc);
      for (const auto& p : res.survivors) {
        auto rec = quantize_pair(p, ctx.text.source_text, Stage::d0);
        if (!rec) {
          ++out.counters.unquantized;
          continue;
        }
        ++out.counters.groups[std::string(to_string(*rec->group))];
        out.records.push_back(std::move(*rec));
      }
      (fc->mode == TaskMode::summarization ? out.counters.summarization : out.counters.paraphrase) =
          std::move(res.census);
    }
  } catch (const TransportError&) {
    throw;
  } catch (const Error& e) {
    ContextOutcome failed;
    failed.counters.contexts = 1;
    failed.counters.contexts_failed = 1;
    failed.failure = ContextFailure{ctx.id.empty() ? "context-" + std::to_string(g) : ctx.id, e.what()};
    return failed;
  }
  return out;
}

struct Stage0Options {
  std::filesystem::path output;         // D_0 JSONL
  std::filesystem::path checkpoint;     // defaults to <output>.ckpt
  bool resume = false;
  std::optional<std::size_t> max_batches;  // stop early (simulated interruption)
};

struct Stage0Result {
  RunCounters counters;
  std::vector<ContextFailure> failures;
  std::size_t batches_done = 0;
  std::size_t batches_total = 0;
  bool complete = false;
};

namespace detail {

inline std::filesystem::path checkpoint_path(const Stage0Options& o) {
  return o.checkpoint.empty() ? std::filesystem::path(o.output.string() + ".ckpt") : o.checkpoint;
}

// Configuration identity for checkpoints: every key except the worker
// count, hashed so credentials never reach the disk.
inline std::string config_fingerprint(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.workers = 1;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(serialize_config(c))));
  return buf;
}

inline ojson failures_to_json(const std::vector<ContextFailure>& f) {
  ojson a = ojson::array();
  for (const auto& x : f) {
    ojson j;
    j["context"] = x.context_id;
    j["error"] = x.message;
    a.push_back(std::move(j));
  }
  return a;
}

inline std::vector<ContextFailure> failures_from_json(const ojson& a) {
  std::vector<ContextFailure> out;
  for (const auto& j : a) out.push_back({j.at("context").get<std::string>(), j.at("error").get<std::string>()});
  return out;
}

}  // namespace detail

/// Stage 0. Contexts are processed in batches of cfg.batch_size; after each
/// batch the records are appended to the output and a checkpoint records the
/// batch count, the output length and the counters. Resuming truncates the
/// output to the checkpointed length and continues with the next batch, so
/// an interrupted-and-resumed run writes the same bytes as a straight one.
inline Stage0Result run_stage0(const Backends& b, const RunConfig& cfg, const Stage0Options& opts) {
  cfg.validate();
  if (opts.output.empty()) throw InputError("run_stage0: no output path");
  const auto ckpt = detail::checkpoint_path(opts);
  const std::string fingerprint = detail::config_fingerprint(cfg);

  Stage0Result res;
  res.batches_total = (cfg.contexts + cfg.batch_size - 1) / cfg.batch_size;
  std::uintmax_t output_bytes = 0;

  if (opts.resume && std::filesystem::exists(ckpt)) {
    ojson state;
    try {
      state = ojson::parse(read_file(ckpt));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("unreadable checkpoint " + ckpt.string() + ": " + e.what());
    }
    if (state.at("config").get<std::string>() != fingerprint) {
      throw InputError("checkpoint " + ckpt.string() + " was written with a different configuration");
    }
    res.batches_done = state.at("batches_done").get<std::size_t>();
    output_bytes = state.at("output_bytes").get<std::uintmax_t>();
    res.counters = counters_from_json(state.at("counters"));
    res.failures = detail::failures_from_json(state.at("failures"));
    if (!std::filesystem::exists(opts.output) || std::filesystem::file_size(opts.output) < output_bytes) {
      throw InputError("output " + opts.output.string() + " is shorter than its checkpoint");
    }
    std::filesystem::resize_file(opts.output, output_bytes);
  } else {
    write_file(opts.output, "");
  }

  std::ofstream out(opts.output, std::ios::binary | std::ios::app);
  if (!out) throw InputError("cannot write " + opts.output.string());

  std::size_t ran = 0;
  while (res.batches_done < res.batches_total) {
    if (opts.max_batches && ran >= *opts.max_batches) return res;
    const std::size_t first = res.batches_done * cfg.batch_size;
    const std::size_t last = std::min(cfg.contexts, first + cfg.batch_size);
    std::vector<ContextOutcome> outcomes(last - first);
    // A transport failure leaves the checkpoint at the previous batch.
    detail::parallel_for(outcomes.size(), cfg.workers,
                         [&](std::size_t i) { outcomes[i] = process_context(b, cfg, first + i); });
    std::string chunk;
    for (auto& o : outcomes) {
      res.counters += o.counters;
      if (o.failure) res.failures.push_back(*o.failure);
      for (const auto& r : o.records) chunk += record_to_line(r);
    }
    out << chunk;
    out.flush();
    if (!out) throw InputError("write failed: " + opts.output.string());
    output_bytes += chunk.size();
    ++res.batches_done;
    ++ran;

    ojson state;
    state["config"] = fingerprint;
    state["batches_done"] = res.batches_done;
    state["output_bytes"] = output_bytes;
    state["counters"] = counters_to_json(res.counters);
    state["failures"] = detail::failures_to_json(res.failures);
    write_file(ckpt, state.dump() + "\n");
  }
  res.complete = true;
  std::error_code ec;
  std::filesystem::remove(ckpt, ec);
  return res;
}

/// Run report: configuration, counters, census, efficiency, histogram and
/// diversity. Deterministic unless `timestamp` is given.
inline ojson run_report(std::string_view stage, const RunConfig& cfg, const RunCounters& counters,
                        const std::vector<ContextFailure>& failures, std::span<const DatasetRecord> records,
                        std::optional<std::string> timestamp = std::nullopt) {
  ojson j;
  j["stage"] = stage;
  j["seed"] = cfg.generation.seed;
  j["backend"] = to_string(cfg.backend);
  ojson domains = ojson::array();
  for (auto d : cfg.domains) domains.push_back(std::string(to_string(d)));
  j["domains"] = std::move(domains);
  ojson config = ojson::object();
  for (const auto& k : detail::config_keys()) {
    if (k.name.find("auth_token") != std::string::npos || k.name == "pipeline.workers") continue;
    config[k.name] = k.get(cfg);
  }
  j["config"] = std::move(config);
  if (timestamp) j["timestamp"] = *timestamp;
  j["counters"] = counters_to_json(counters);
  j["conserved"] = counters.summarization.conserved() && counters.paraphrase.conserved();
  j["failures"] = detail::failures_to_json(failures);
  auto stats = dataset_stats(records, &counters);
  for (auto& [k, v] : stats.items()) j[k] = v;
  j["notes"] = ojson::array({"paraphrase group admits sim <= 0.6; summary groups split abstractive at sim < 0.6"});
  return j;
}

// ---------------------------------------------------------------------------
// Self-distillation

struct SelfDistillCandidate {
  CandidatePair pair;
  GroupKind requested = GroupKind::paraphrase;
  bool length_pass = false;
};

struct SelfDistillResult {
  RunCounters counters;
  std::size_t inputs = 0;
  std::size_t inputs_failed = 0;
  std::vector<ContextFailure> failures;
  std::vector<SelfDistillCandidate> candidates;
  std::vector<DatasetRecord> records;
};

/// One input sentence x for self-distillation: a nucleus sample from the
/// filled domain prefix, without further context.
inline TokenSeq self_distill_input(const LanguageModel& model, const RunConfig& cfg, std::size_t i) {
  const Domain d = cfg.domains[i % cfg.domains.size()];
  GenerationConfig gc = cfg.generation;
  gc.seed = mix_seed(cfg.generation.seed, fnv1a("self-distill"));
  gc.context_sentences = {1, 1};
  auto ctx = sample_context(model, DomainSpec::for_domain(d), i, gc);
  const auto prefix = tokenize(ctx.prefix_template);
  std::vector<std::string> sentence(ctx.text.tokens.begin() + static_cast<std::ptrdiff_t>(prefix.size()),
                                    ctx.text.tokens.end());
  return make_token_seq(std::move(sentence));
}

/// For each of n sampled inputs, asks the task model for one y per group,
/// filters summary groups with the summarization stack and the paraphrase
/// group with the paraphrase stack (no diversity stage: the five pairs of
/// an input share x), and keeps survivors as d1 records grouped by their
/// measured (comp, sim).
inline SelfDistillResult run_self_distill(const LanguageModel& generator, const EntailmentScorer& nli,
                                          const TaskModel& task, const RunConfig& cfg, std::size_t n) {
  cfg.validate();
  if (n < 1) throw InputError("self-distill: need at least one input");
  struct Slot {
    std::vector<SelfDistillCandidate> cands;
    std::optional<ContextFailure> failure;
    bool transport = false;
  };
  std::vector<Slot> slots(n);
  detail::parallel_for(n, cfg.workers, [&](std::size_t i) {
    const std::string id = "sd-" + context_id(cfg.domains[i % cfg.domains.size()], i);
    try {
      auto x = std::make_shared<const TokenSeq>(self_distill_input(generator, cfg, i));
      for (auto g : kAllGroups) {
        auto y = tokenize(task.infer(x->source_text, control_code(g)));
        if (y.empty()) throw ProtocolError("task model returned an empty output");
        SelfDistillCandidate c;
        c.pair.pair_id = id + "/" + std::string(to_string(g));
        c.pair.context_id = id;
        c.pair.x = x;
        c.pair.y = std::make_shared<const TokenSeq>(std::move(y));
        c.pair.provenance = Provenance::self_distill;
        c.pair.domain = cfg.domains[i % cfg.domains.size()];
        c.requested = g;
        slots[i].cands.push_back(std::move(c));
      }
    } catch (const Error& e) {
      slots[i].cands.clear();
      slots[i].failure = ContextFailure{id, e.what()};
      slots[i].transport = dynamic_cast<const TransportError*>(&e) != nullptr;
    }
  });

  SelfDistillResult res;
  res.inputs = n;
  std::size_t transport_failures = 0;
  std::vector<CandidatePair> summ_pool, para_pool;
  for (auto& s : slots) {
    if (s.failure) {
      ++res.inputs_failed;
      transport_failures += s.transport;
      res.failures.push_back(*s.failure);
      continue;
    }
    for (auto& c : s.cands) {
      const auto& fc = task_mode(c.requested) == TaskMode::summarization ? cfg.summarization : cfg.paraphrase;
      c.length_pass = length_filter(c.pair.x->size(), c.pair.y->size(), fc);
      (task_mode(c.requested) == TaskMode::summarization ? summ_pool : para_pool).push_back(c.pair);
      res.candidates.push_back(std::move(c));
    }
  }
  if (transport_failures == n) throw TransportError("self-distill: task model unreachable for every input");
  res.counters.self_distill_candidates = res.candidates.size();

  auto run_mode = [&](std::vector<CandidatePair> pool, FilterConfig fc, FilterCensus& census) {
    fc.diversity = false;
    auto fr = apply_filters(std::move(pool), nli, fc);
    census = std::move(fr.census);
    return std::move(fr.survivors);
  };
  auto summ = run_mode(std::move(summ_pool), cfg.summarization, res.counters.summarization);
  auto para = run_mode(std::move(para_pool), cfg.paraphrase, res.counters.paraphrase);

  // Emit in input order, groups in canonical order.
  std::map<std::string, const CandidatePair*> survivors;
  for (const auto& p : summ) survivors[p.pair_id] = &p;
  for (const auto& p : para) survivors[p.pair_id] = &p;
  for (const auto& c : res.candidates) {
    auto it = survivors.find(c.pair.pair_id);
    if (it == survivors.end()) continue;
    auto rec = quantize_pair(*it->second, "", Stage::d1);
    if (!rec) {
      ++res.counters.unquantized;
      continue;
    }
    rec->extra["requested_group"] = to_string(c.requested);
    ++res.counters.groups[std::string(to_string(*rec->group))];
    res.records.push_back(std::move(*rec));
  }
  return res;
}

}  // namespace distill
