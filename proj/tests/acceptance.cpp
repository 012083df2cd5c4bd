// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Each check is independent of the unit suites.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "distill/distill.hpp"
#include "oracles.hpp"

using namespace distill;
namespace fs = std::filesystem;

namespace {

struct Failure {
  std::string what;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

int g_failed = 0;

void criterion(const std::string& name, double limit_s, const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string why;
  try {
    body();
  } catch (const Failure& f) {
    why = f.what;
  } catch (const std::exception& e) {
    why = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (why.empty() && limit_s > 0 && secs >= limit_s) {
    std::ostringstream s;
    s << "runtime " << secs << " s exceeds " << limit_s << " s";
    why = s.str();
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f s", secs);
  std::cout << (why.empty() ? "PASS " : "FAIL ") << name << " (" << buf;
  if (limit_s > 0) std::cout << ", limit " << limit_s << " s";
  std::cout << ")";
  if (!why.empty()) std::cout << ": " << why;
  std::cout << std::endl;
  if (!why.empty()) ++g_failed;
}

CandidatePair make_pair(std::string id, std::string_view x, std::string_view y) {
  CandidatePair p;
  p.pair_id = std::move(id);
  p.context_id = "ctx";
  p.x = std::make_shared<const TokenSeq>(tokenize(x));
  p.y = std::make_shared<const TokenSeq>(tokenize(y));
  p.provenance = Provenance::parallel;
  p.domain = Domain::news;
  return p;
}

CandidatePair make_pair(std::string id, oracle::Tokens x, oracle::Tokens y) {
  CandidatePair p;
  p.pair_id = std::move(id);
  p.context_id = "ctx";
  p.x = std::make_shared<const TokenSeq>(make_token_seq(std::move(x)));
  p.y = std::make_shared<const TokenSeq>(make_token_seq(std::move(y)));
  p.provenance = Provenance::parallel;
  return p;
}

std::vector<std::string> ids(const std::vector<CandidatePair>& v) {
  std::vector<std::string> out;
  for (const auto& p : v) out.push_back(p.pair_id);
  return out;
}

// Scores from a "premise|hypothesis" table; unlisted pairs score 1 when equal, else 0.
class TableScorer final : public EntailmentScorer {
 public:
  std::map<std::string, double> table;
  EntailmentScore score(const TokenSeq& p, const TokenSeq& h) const override {
    auto it = table.find(p.source_text + "|" + h.source_text);
    return EntailmentScore(it == table.end() ? (p == h ? 1.0 : 0.0) : it->second);
  }
};

class ConstScorer final : public EntailmentScorer {
 public:
  explicit ConstScorer(double v) : v_(v) {}
  EntailmentScore score(const TokenSeq&, const TokenSeq&) const override { return EntailmentScore(v_); }

 private:
  double v_;
};

// Adjacency over every ordered pair, Floyd closure, per-component argmax of
// P(x=>y) with the lowest index winning ties.
std::vector<std::string> diversity_oracle(const std::vector<CandidatePair>& pairs, const EntailmentScorer& s,
                                          double tau) {
  const std::size_t n = pairs.size();
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    adj[i][i] = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (s.score(*pairs[i].x, *pairs[j].x).value() > tau || s.score(*pairs[i].y, *pairs[j].y).value() > tau) {
        adj[i][j] = adj[j][i] = true;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (adj[i][k] && adj[k][j]) adj[i][j] = true;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    bool best = true;
    const double qi = s.score(*pairs[i].x, *pairs[i].y).value();
    for (std::size_t j = 0; j < n && best; ++j) {
      if (j == i || !adj[i][j]) continue;
      const double qj = s.score(*pairs[j].x, *pairs[j].y).value();
      if (qj > qi || (qj == qi && j < i)) best = false;
    }
    if (best) out.push_back(pairs[i].pair_id);
  }
  return out;
}

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + DISTILL_CLI_PATH + "' " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool near(double a, double b, double tol = 1e-9) { return std::fabs(a - b) <= tol; }

void metric_oracles() {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    auto x = oracle::random_tokens(rng, 20, 5);
    auto y = oracle::random_tokens(rng, 20, 5);
    const auto tx = make_token_seq(x), ty = make_token_seq(y);
    require(lcs_length(x, y) == oracle::lcs(x, y), "lcs mismatch at pair " + std::to_string(i));
    require(rouge_l(tx, ty) == oracle::rouge_l_f1(x, y), "rouge_l mismatch at pair " + std::to_string(i));
    require(near(normalized_density(tx, ty), oracle::normalized_density(x, y), 1e-12),
            "normalized_density mismatch at pair " + std::to_string(i));
  }
}

void boundary_suite() {
  const auto summ = FilterConfig::summarization();
  const auto para = FilterConfig::paraphrase();
  OverlapEntailmentScorer overlap;

  // 1. Entailment exactly at the threshold passes.
  auto at = make_pair("e1", "a b c d e f g h i", "a b c d e f g h i z");
  require(entailment_filter(at, overlap, summ) == Verdict::pass, "case 1: entailment 0.9 must pass");
  // 2. One ulp below fails.
  auto below = make_pair("e2", "a b c", "a b");
  require(entailment_filter(below, ConstScorer(std::nextafter(0.9, 0.0)), summ) == Verdict::fail,
          "case 2: entailment below 0.9 must fail");
  // 3-4. Summary length is strict: |y| < 0.8 |x|.
  require(!length_filter(10, 8, summ), "case 3: summary 10/8 must fail");
  require(length_filter(10, 7, summ), "case 4: summary 10/7 must pass");
  // 5-6. Paraphrase length: inclusive lower, strict upper.
  require(length_filter(10, 8, para), "case 5: paraphrase 10/8 must pass");
  require(!length_filter(10, 15, para), "case 6: paraphrase 10/15 must fail");
  // 7. Abstractiveness exactly at 0.6 passes.
  auto edge = make_pair("a1", "a b c d e", "a f c g e");
  require(rouge_l(*edge.x, *edge.y) == 0.6, "case 7: fixture rouge must be 0.6");
  require(abstractiveness_filter(edge, para), "case 7: abstractiveness 0.6 must pass");
  // 8. Abstractiveness above 0.6 fails.
  auto high = make_pair("a2", "the cat sat on the mat", "the cat on mat");
  require(!abstractiveness_filter(high, para), "case 8: rouge 0.8 must fail");
  // 9. A duplicate probe exactly at tau is not an edge: both pairs survive.
  TableScorer t;
  t.table["x0|x1"] = 0.9;
  t.table["x1|x0"] = 0.9;
  t.table["x0|y0"] = 0.95;
  t.table["x1|y1"] = 0.95;
  std::vector<CandidatePair> v{make_pair("d0", "x0", "y0"), make_pair("d1", "x1", "y1")};
  require(ids(diversity_filter(v, t, summ)) == std::vector<std::string>{"d0", "d1"},
          "case 9: probe at 0.9 must not join components");
}

void diversity_oracle_check() {
  std::mt19937_64 rng(12345);
  OverlapEntailmentScorer scorer;
  const std::vector<double> taus = {0.5, 0.6, 0.75, 0.9};
  for (int trial = 0; trial < 250; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const int vocab = 3 + static_cast<int>(rng() % 6);
    std::vector<CandidatePair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      pairs.push_back(make_pair("p" + std::to_string(i), oracle::random_tokens(rng, 5, vocab),
                                oracle::random_tokens(rng, 4, vocab)));
    }
    FilterConfig cfg;
    cfg.tau_entail = taus[rng() % taus.size()];
    require(ids(diversity_filter(pairs, scorer, cfg)) == diversity_oracle(pairs, scorer, cfg.tau_entail),
            "pool " + std::to_string(trial) + " differs from oracle");
  }
}

void constrained_decoding() {
  std::vector<TokenSeq> corpus;
  for (const char* l : {"a b c .", "a c d .", "b d e .", "a b e .", "c e .", "a b d e .", "d a f .", "f b ."}) {
    corpus.push_back(tokenize(l));
  }
  const auto lm = build_toy_lm(corpus, 2);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f"};
  GenerationConfig cfg;
  cfg.beam_width = 100000;  // wide enough that no hypothesis is ever pruned
  cfg.k1 = 3;
  cfg.max_tokens = 6;
  std::mt19937_64 rng(99);
  std::size_t nonempty = 0;
  for (int set = 0; set < 60; ++set) {
    std::vector<std::vector<std::string>> kws;
    const std::size_t count = 1 + rng() % 2;
    for (std::size_t k = 0; k < count; ++k) {
      std::vector<std::string> kw{vocab[rng() % vocab.size()]};
      if (rng() % 3 == 0) kw.push_back(vocab[rng() % vocab.size()]);
      kws.push_back(std::move(kw));
    }
    auto got = constrained_beam_search(lm, std::span<const std::string>{}, kws, cfg);
    auto want = oracle::enumerate_constrained(lm, {}, kws, cfg.max_tokens);
    if (want.size() > cfg.k1) want.resize(cfg.k1);
    require(got.size() == want.size(), "keyword set " + std::to_string(set) + ": count differs");
    for (std::size_t i = 0; i < got.size(); ++i) {
      require(got[i].sequence.tokens == want[i].tokens, "keyword set " + std::to_string(set) + ": sequence differs");
      require(near(got[i].score, want[i].score, 1e-12), "keyword set " + std::to_string(set) + ": score differs");
      for (const auto& kw : kws) {
        const auto& t = got[i].sequence.tokens;
        require(std::search(t.begin(), t.end(), kw.begin(), kw.end()) != t.end(), "keyword missing");
      }
    }
    if (!got.empty()) ++nonempty;
  }
  require(nonempty >= 20, "too few satisfiable keyword sets to be meaningful");
}

void nucleus() {
  auto d = TokenDistribution::from_weights({{"a", 0.6}, {"b", 0.3}, {"c", 0.1}});
  auto n = nucleus_truncate(d, 0.7);
  require(n.size() == 2, "analytic nucleus size");
  require(near(n.prob("a"), 2.0 / 3.0) && near(n.prob("b"), 1.0 / 3.0), "analytic nucleus probabilities");

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(0.01, 1.0), tp(0.05, 1.0);
  RandomStream stream(17);
  std::size_t draws = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenDistribution::Entry> e;
    for (int i = 0; i < 8; ++i) e.emplace_back(std::string(1, static_cast<char>('a' + i)), w(rng));
    auto dist = TokenDistribution::from_weights(e);
    const double top_p = tp(rng);
    auto nuc = nucleus_truncate(dist, top_p);
    double kept = 0.0;
    for (std::size_t i = 0; i < nuc.size(); ++i) kept += dist.entries()[i].second;
    require(kept + 1e-12 >= top_p, "nucleus mass below threshold");
    require(kept - dist.entries()[nuc.size() - 1].second < top_p, "nucleus not minimal");
    for (int k = 0; k < 10; ++k, ++draws) {
      const auto& tok = sample_token(nuc, stream);
      require(nuc.prob(tok) > 0.0, "sampled token outside nucleus");
    }
  }
  require(draws >= 10000, "fewer than 10^4 draws");

  // The same property through the full sentence sampler on the toy model.
  const auto& lm = default_toy_lm();
  GenerationConfig cfg;
  cfg.seed = 4;
  for (const auto& s : sample_sentences(lm, tokenize("the"), 200, cfg)) {
    std::vector<std::string> ctx{"the"};
    for (const auto& tok : s.tokens) {
      require(nucleus_truncate(lm.next_token_distribution(ctx), cfg.top_p).prob(tok) > 0.0,
              "sentence token outside nucleus");
      ctx.push_back(tok);
    }
  }
}

void efficiency() {
  RunCounters c;
  c.contexts = 150000;
  c.summarization.per_provenance["sequential"].passed = 48000;
  c.summarization.per_provenance["parallel"].passed = 172000;
  auto e = sample_efficiency(c, TaskMode::summarization);
  require(e["sequential"] == 0.32, "48k/150k != 0.32");
  require(format_ratio(e["sequential"]) == "0.32", "sequential ratio format");
  require(near(e["parallel"], 172.0 / 150.0, 1e-15), "172k/150k");
  require(format_ratio(e["parallel"]) == "1.15", "parallel ratio does not print as 1.15");
}

void quantization() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto s = FilterConfig::summarization();
  const auto p = FilterConfig::paraphrase();
  for (int i = 0; i < 100000; ++i) {
    const bool summary = i % 2 == 0;
    double comp, sim;
    if (summary) {
      comp = u(rng) * s.tau_comp_ratio;
      sim = u(rng);
    } else {
      comp = p.tau_comp_lo + u(rng) * (p.tau_comp_hi - p.tau_comp_lo);
      sim = u(rng) * p.tau_abstract;
    }
    auto g = assign_group(comp, sim);
    require(g.has_value(), "feasible point got no group");
    require(task_mode(*g) == (summary ? TaskMode::summarization : TaskMode::paraphrase), "wrong task mode");
    const bool is_short = *g == GroupKind::short_abstractive || *g == GroupKind::short_extractive;
    require(is_short == (summary && comp < 0.5), "short/long split");
    if (summary) {
      const bool abstractive = *g == GroupKind::short_abstractive || *g == GroupKind::long_abstractive;
      require(abstractive == (sim < 0.6), "abstractive/extractive split");
    }
  }
  require(assign_group(0.5, 0.6) == GroupKind::long_extractive, "(0.5, 0.6)");
  require(assign_group(0.49, 0.59) == GroupKind::short_abstractive, "(0.49, 0.59)");
  require(assign_group(0.8, 0.0) == GroupKind::paraphrase, "(0.8, 0.0)");
  require(assign_group(0.8, 0.6) == GroupKind::paraphrase, "(0.8, 0.6)");
  require(!assign_group(0.8, 0.61), "(0.8, 0.61)");
  require(!assign_group(1.5, 0.1), "(1.5, 0.1)");
  require(!assign_group(1.6, 0.1), "(1.6, 0.1)");
}

void end_to_end() {
  const fs::path dir = fs::temp_directory_path() / "distill_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const char* out : {"r1.jsonl", "r2.jsonl", "r3.jsonl"}) {
    auto r = cli(dir, std::string("--backend toy --contexts 50 --seed 7 --out ") + out + " distill");
    require(r.code == 0, "distill exited " + std::to_string(r.code) + ": " + r.output);
  }
  auto r = cli(dir, "--backend toy --contexts 50 --seed 7 --workers 4 --out r4.jsonl distill");
  require(r.code == 0, "distill with 4 workers exited " + std::to_string(r.code));
  const auto d0 = read_file(dir / "r1.jsonl");
  const auto report = read_file(dir / "r1.jsonl.report.json");
  require(!d0.empty(), "empty dataset");
  for (const char* out : {"r2.jsonl", "r3.jsonl", "r4.jsonl"}) {
    require(read_file(dir / out) == d0, std::string(out) + " dataset differs");
    require(read_file(dir / (std::string(out) + ".report.json")) == report, std::string(out) + " report differs");
  }
  r = cli(dir, "validate r1.jsonl");
  require(r.code == 0, "validate on clean output exited " + std::to_string(r.code) + ": " + r.output);

  auto records = read_dataset(dir / "r1.jsonl");
  std::size_t target = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (task_mode(*records[i].group) == TaskMode::summarization) {
      target = i;
      break;
    }
  }
  require(target < records.size(), "no summarization record to tamper with");
  records[target].comp = 0.9;
  write_dataset(dir / "tampered.jsonl", records);
  r = cli(dir, "validate tampered.jsonl");
  require(r.code == 3, "validate on tampered record exited " + std::to_string(r.code));
  require(r.output.find(records[target].pair_id) != std::string::npos, "validate did not name the record");
}

void self_distill_routing() {
  RunConfig cfg;
  cfg.generation.seed = 7;
  OverlapEntailmentScorer nli;
  IdentityTaskModel id;
  auto res = run_self_distill(default_toy_lm(), nli, id, cfg, 10);
  require(res.candidates.size() == 50, "identity: expected 50 candidates");
  require(res.counters.summarization.total.passed == 0, "identity: summarization survivors");
  for (const auto& r : res.records) require(task_mode(*r.group) != TaskMode::summarization, "identity: summary record");

  TruncateHalfTaskModel half;
  res = run_self_distill(default_toy_lm(), nli, half, cfg, 20);
  require(res.candidates.size() == 100, "truncate-half: expected 100 candidates");
  for (const auto& c : res.candidates) {
    const std::size_t n = c.pair.x->size();
    const std::size_t m = n / 2 == 0 ? 1 : n / 2;
    require(c.pair.y->size() == m, "truncate-half output length");
    const bool expect =
        c.requested == GroupKind::paraphrase ? (5 * m >= 4 * n && 2 * m < 3 * n) : (5 * m < 4 * n);
    require(c.length_pass == expect, "length verdict differs from hand computation at |x|=" + std::to_string(n));
  }
}

void diversity_fixtures() {
  const fs::path fx = fs::path(DISTILL_FIXTURE_DIR) / "diversity";
  auto r = lexical_diversity_report(read_dataset(fx / "two_records.jsonl"), 4);
  require(near(r.pooled.h1, 0.75 * std::log2(8.0 / 3.0) + 0.5), "short H1");
  require(near(r.pooled.h2, 1.5), "short H2");
  require(near(r.pooled.h3, 0.0), "short H3");
  require(r.pooled.msttr && near(*r.pooled.msttr, 0.5), "short MSTTR(4)");
  require(near(r.x.h1, 0.8 * std::log2(2.5) + 0.2 * std::log2(5.0)), "short x H1");
  require(near(r.y.h1, std::log2(3.0)), "short y H1");

  r = lexical_diversity_report(read_dataset(fx / "two_records_long.jsonl"), 5);
  const double h1 = 4.0 / 15 * std::log2(15.0 / 4) + 4 * (2.0 / 15) * std::log2(15.0 / 2) + 3 * (1.0 / 15) * std::log2(15.0);
  const double h2 = 3 * (2.0 / 11) * std::log2(11.0 / 2) + 5 * (1.0 / 11) * std::log2(11.0);
  const double h3 = 2.0 / 7 * std::log2(7.0 / 2) + 5 * (1.0 / 7) * std::log2(7.0);
  require(near(r.pooled.h1, h1), "long H1");
  require(near(r.pooled.h2, h2), "long H2");
  require(near(r.pooled.h3, h3), "long H3");
  require(r.pooled.msttr && near(*r.pooled.msttr, (0.8 + 1.0 + 0.6) / 3), "long MSTTR(5)");
}

}  // namespace

int main() {
  criterion("metric-oracle-equivalence", 5, metric_oracles);
  criterion("filter-boundary-suite", 0, boundary_suite);
  criterion("diversity-filter-oracle", 10, diversity_oracle_check);
  criterion("constrained-decoding-exhaustive", 30, constrained_decoding);
  criterion("nucleus-correctness", 0, nucleus);
  criterion("sample-efficiency-arithmetic", 0, efficiency);
  criterion("quantization-partition", 0, quantization);
  criterion("end-to-end-determinism", 60, end_to_end);
  criterion("self-distillation-routing", 0, self_distill_routing);
  criterion("diversity-report-fixtures", 0, diversity_fixtures);
  std::cout << (g_failed ? "FAILED " : "ALL PASSED ") << g_failed << " failing" << std::endl;
  return g_failed ? 1 : 0;
}
