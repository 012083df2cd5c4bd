#include <gtest/gtest.h>

#include <random>
#include <set>

#include "distill/decoding.hpp"
#include "oracles.hpp"

using namespace distill;

namespace {

std::vector<TokenSeq> corpus(std::initializer_list<const char*> lines) {
  std::vector<TokenSeq> out;
  for (auto l : lines) out.push_back(tokenize(l));
  return out;
}

std::vector<std::string> V(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

// Six-token vocabulary {a b c d e .}, bigram.
ToyLM six_token_lm() {
  return build_toy_lm(corpus({"a b c .", "a c d .", "b d e .", "a b e .", "c e .", "a b d e ."}), 2);
}

}  // namespace

TEST(Nucleus, FullMassIsIdentity) {
  auto d = TokenDistribution::from_weights({{"a", 0.6}, {"b", 0.3}, {"c", 0.1}});
  EXPECT_EQ(nucleus_truncate(d, 1.0).size(), 3u);
}

TEST(Nucleus, AnalyticExample) {
  auto d = TokenDistribution::from_weights({{"a", 0.6}, {"b", 0.3}, {"c", 0.1}});
  auto n = nucleus_truncate(d, 0.7);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_NEAR(n.prob("a"), 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(n.prob("b"), 1.0 / 3.0, 1e-9);
}

TEST(Nucleus, TinyThresholdKeepsArgmax) {
  auto d = TokenDistribution::from_weights({{"a", 0.2}, {"b", 0.5}, {"c", 0.3}});
  auto n = nucleus_truncate(d, 1e-12);
  ASSERT_EQ(n.size(), 1u);
  EXPECT_EQ(n.entries()[0].first, "b");
  EXPECT_EQ(n.entries()[0].second, 1.0);
}

TEST(Nucleus, SupportIsMinimal) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(0.01, 1.0), tp(0.05, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TokenDistribution::Entry> e;
    for (int i = 0; i < 8; ++i) e.emplace_back(std::string(1, static_cast<char>('a' + i)), w(rng));
    auto d = TokenDistribution::from_weights(e);
    const double top_p = tp(rng);
    auto n = nucleus_truncate(d, top_p);
    double kept = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) kept += d.entries()[i].second;
    ASSERT_GE(kept + 1e-12, top_p);
    const double without_last = kept - d.entries()[n.size() - 1].second;
    ASSERT_LT(without_last, top_p);
    ASSERT_TRUE(n.valid());
  }
}

TEST(SampleSentences, DeterministicChain) {
  auto lm = build_toy_lm(corpus({"a b ."}), 3);
  GenerationConfig cfg;
  cfg.top_p = 1.0;
  auto out = sample_sentences(lm, TokenSeq{}, 3, cfg);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& s : out) EXPECT_EQ(s.tokens, V({"a", "b", "."}));
}

TEST(SampleSentences, FixedSeedIsReproducible) {
  auto lm = six_token_lm();
  GenerationConfig cfg;
  cfg.seed = 99;
  auto a = sample_sentences(lm, tokenize("a"), 20, cfg);
  auto b = sample_sentences(lm, tokenize("a"), 20, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 100;
  auto c = sample_sentences(lm, tokenize("a"), 20, cfg);
  EXPECT_NE(a, c);
}

TEST(SampleSentences, EveryTokenInsideItsNucleus) {
  auto lm = build_toy_lm(corpus({"the cat sat on the mat .", "the dog sat on the rug .", "a cat ran to the mat .",
                                 "the cat ran .", "a dog sat .", "the bird sang on the roof ."}),
                         3);
  GenerationConfig cfg;
  cfg.top_p = 0.7;
  cfg.seed = 4;
  const auto prefix = tokenize("the");
  auto out = sample_sentences(lm, prefix, 100, cfg);
  ASSERT_EQ(out.size(), 100u);
  for (const auto& s : out) {
    std::vector<std::string> ctx = prefix.tokens;
    for (const auto& tok : s.tokens) {
      auto nucleus = nucleus_truncate(lm.next_token_distribution(ctx), cfg.top_p);
      ASSERT_GT(nucleus.prob(tok), 0.0) << tok;
      ctx.push_back(tok);
    }
    EXPECT_LE(s.size(), cfg.max_tokens);
  }
}

TEST(SampleSentences, CountMustBePositive) {
  auto lm = six_token_lm();
  EXPECT_THROW(sample_sentences(lm, TokenSeq{}, 0, GenerationConfig{}), InputError);
}

TEST(Keywords, RecoversTableFiveKeywords) {
  const auto x = tokenize(
      "\"The gas cloud is fairly small in size and prevailing winds are blowing it away from the "
      "platform and dispersing it,\" Total said.");
  auto kws = extract_keywords(x, 5);
  ASSERT_LE(kws.size(), 5u);
  const std::set<std::string> expected{"gas", "cloud", "small", "blowing", "total"};
  int hits = 0;
  for (const auto& k : kws) hits += expected.count(k);
  EXPECT_GE(hits, 3);
  EXPECT_NE(std::find(kws.begin(), kws.end(), "gas"), kws.end());
  EXPECT_NE(std::find(kws.begin(), kws.end(), "cloud"), kws.end());
}

TEST(Keywords, AllStopwordsGivesNothing) {
  EXPECT_TRUE(extract_keywords(tokenize("it is what it is ."), 5).empty());
}

TEST(Keywords, SingleContentWord) { EXPECT_EQ(extract_keywords(tokenize("the platform ."), 5), V({"platform"})); }

TEST(Keywords, BackgroundCorpusDownweightsCommonWords) {
  auto bg = corpus({"the gas leak .", "gas prices rose .", "gas was found .", "winds were strong ."});
  BuiltinKeywordExtractor ex(bg);
  auto kws = ex.extract(tokenize("gas cloud drifted"), 2);
  EXPECT_EQ(kws, V({"cloud", "drifted"}));
}

TEST(ConstrainedBeam, SatisfiableByConstruction) {
  auto lm = build_toy_lm(corpus({"x y z w ."}), 2);
  GenerationConfig cfg;
  auto out = constrained_beam_search(lm, std::span<const std::string>{}, {{"y"}, {"w"}}, cfg);
  ASSERT_FALSE(out.empty());
  for (const auto& s : out) EXPECT_EQ(s.sequence.tokens, V({"x", "y", "z", "w", "."}));
}

TEST(ConstrainedBeam, UnreachableKeywordYieldsNothing) {
  auto lm = six_token_lm();
  GenerationConfig cfg;
  cfg.max_tokens = 6;
  auto out = constrained_beam_search(lm, std::span<const std::string>{}, {{"zebra"}}, cfg);
  EXPECT_TRUE(out.empty());
  // "e a" never occurs: e is always followed by ".".
  out = constrained_beam_search(lm, std::span<const std::string>{}, {{"e", "a"}}, cfg);
  EXPECT_TRUE(out.empty());
}

TEST(ConstrainedBeam, MatchesExhaustiveEnumerationSixTokenVocab) {
  auto lm = six_token_lm();
  GenerationConfig cfg;
  cfg.beam_width = 4;
  cfg.k1 = 2;
  cfg.max_tokens = 6;
  for (const char* kw : {"a", "b", "c", "d", "e"}) {
    auto got = constrained_beam_search(lm, std::span<const std::string>{}, {{kw}}, cfg);
    auto want = oracle::enumerate_constrained(lm, {}, {{kw}}, cfg.max_tokens);
    if (want.size() > cfg.k1) want.resize(cfg.k1);
    ASSERT_EQ(got.size(), want.size()) << kw;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].sequence.tokens, want[i].tokens) << kw;
      EXPECT_DOUBLE_EQ(got[i].score, want[i].score);
    }
  }
}

TEST(ConstrainedBeam, ReturnsEveryKeywordAndSortedScores) {
  auto lm = build_toy_lm(corpus({"the cat sat on the mat .", "the dog sat on the rug .", "a cat ran to the mat .",
                                 "the cat ran .", "a dog sat .", "the bird sang on the roof ."}),
                         3);
  std::mt19937_64 rng(17);
  const auto vocab = lm.vocabulary();
  GenerationConfig cfg;
  cfg.max_tokens = 10;
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::vector<std::string>> kws;
    std::uniform_int_distribution<std::size_t> n(1, 3), pick(0, vocab.size() - 1);
    for (std::size_t i = 0, m = n(rng); i < m; ++i) {
      const auto& t = vocab[pick(rng)];
      if (!is_sentence_terminator(t)) kws.push_back({t});
    }
    if (kws.empty()) continue;
    auto out = constrained_beam_search(lm, std::span<const std::string>{}, kws, cfg);
    EXPECT_LE(out.size(), cfg.k1);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& t = out[i].sequence.tokens;
      for (const auto& kw : kws) ASSERT_NE(std::search(t.begin(), t.end(), kw.begin(), kw.end()), t.end());
      if (i) {
        ASSERT_GE(out[i - 1].score, out[i].score);
      }
    }
  }
}

TEST(ConstrainedBeam, NoConstraintsReducesToPlainBeamSearch) {
  auto lm = build_toy_lm(corpus({"the cat sat on the mat .", "the dog sat on the rug .", "a cat ran to the mat .",
                                 "the cat ran .", "a dog sat .", "the bird sang on the roof ."}),
                         2);
  for (std::size_t width : {1u, 2u, 3u, 5u, 8u}) {
    GenerationConfig cfg;
    cfg.beam_width = width;
    cfg.k1 = 5;
    cfg.max_tokens = 9;
    auto got = constrained_beam_search(lm, std::span<const std::string>{}, {}, cfg);
    auto want = oracle::plain_beam_search(lm, {}, width, cfg.max_tokens, cfg.k1);
    ASSERT_EQ(got.size(), want.size()) << width;
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].sequence.tokens, want[i].tokens);
  }
}

TEST(ConstrainedBeam, KeywordMustAppearAfterThePrefix) {
  auto lm = build_toy_lm(corpus({"a b c .", "a d ."}), 2);
  GenerationConfig cfg;
  auto out = constrained_beam_search(lm, V({"a"}), {{"a"}}, cfg);
  EXPECT_TRUE(out.empty());
}
