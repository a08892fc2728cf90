#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace nicekit;

namespace {

const LabelSpace kSentiment{{"positive", "negative"}};

QdmrGraph graph(std::vector<std::string> nodes, std::vector<std::pair<std::size_t, std::size_t>> edges = {}) {
  return {std::move(nodes), std::move(edges)};
}

const std::string kGsmSample =
    "Natalia sold 48/2 = <<48/2=24>>24 clips in May. Natalia sold 48+24 = <<48+24=72>>72 clips altogether in "
    "April and May.\n#### 72";

}  // namespace

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy_score("Positive", "positive", kSentiment).score, 1.0);
  EXPECT_EQ(accuracy_score("  positive \n", "positive", kSentiment).score, 1.0);
  auto r = accuracy_score("neutral-ish", "positive", kSentiment);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_TRUE(r.unparseable);
  EXPECT_FALSE(accuracy_score("negative", "positive", kSentiment).unparseable);
  EXPECT_THROW(accuracy_score("positive", "meh", kSentiment), Error);
}

TEST(ExactMatch, Examples) {
  const std::string lf = "[IN:GET_WEATHER [SL:LOCATION paris ] ]";
  EXPECT_EQ(exact_match_score(lf, lf).score, 1.0);
  EXPECT_EQ(exact_match_score("[IN:GET_WEATHER  [SL:LOCATION   paris ] ]", lf).score, 1.0);
  EXPECT_EQ(exact_match_score("[IN:GET_WEATHER [SL:LOCATION paris ] )", lf).score, 0.0);
  EXPECT_EQ(exact_match_score("[in:get_weather [SL:LOCATION paris ] ]", lf).score, 0.0);
}

TEST(Bleu, IdentityEmptyAndDisjoint) {
  EXPECT_DOUBLE_EQ(bleu_score("ls -la /tmp", "ls -la /tmp"), 1.0);
  EXPECT_DOUBLE_EQ(bleu_score("x", "x"), 1.0);
  EXPECT_EQ(bleu_score("", "ls"), 0.0);
  // Unigram precision is unsmoothed, so disjoint pairs sit at the floor of 0.
  EXPECT_EQ(bleu_score("alpha beta", "gamma delta"), 0.0);
}

TEST(Bleu, FrozenReferenceValues) {
  // Values from an independent implementation of the same smoothing rule.
  EXPECT_NEAR(bleu_score("the cat sat on the mat", "the cat is on the mat"), 0.48549177170732344, 1e-12);
  EXPECT_NEAR(bleu_score("ls -la /tmp", "ls -l /tmp"), 0.57735026918962573, 1e-12);
  EXPECT_NEAR(bleu_score("find . -name '*.txt' -delete", "find . -name '*.txt' -type f -delete"),
              0.53308591151792584, 1e-12);
  EXPECT_NEAR(bleu_score("a b c d e f", "a b c d e f g h"), 0.71653131057378927, 1e-12);
  EXPECT_NEAR(bleu_score("grep -r foo", "cat foo bar | grep baz"), 0.21239529438966132, 1e-12);
}

TEST(Bleu, PropertyBounded) {
  Rng gen(1);
  const std::vector<std::string> vocab = {"a", "b", "c", "d"};
  for (int t = 0; t < 500; ++t) {
    std::string h, r;
    for (std::size_t i = 0, n = gen.uniform_index(8); i < n; ++i) h += vocab[gen.uniform_index(4)] + " ";
    for (std::size_t i = 0, n = 1 + gen.uniform_index(8); i < n; ++i) r += vocab[gen.uniform_index(4)] + " ";
    const double b = bleu_score(h, r);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    EXPECT_DOUBLE_EQ(bleu_score(r, r), 1.0);
  }
}

TEST(QdmrParse, Examples) {
  auto g = qdmr_parse("return cities ;return populations of #1");
  EXPECT_EQ(g.nodes, (std::vector<std::string>{"cities", "populations of #1"}));
  EXPECT_EQ(g.edges, (std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}}));
  auto single = qdmr_parse("return flights");
  EXPECT_EQ(single.nodes.size(), 1u);
  EXPECT_TRUE(single.edges.empty());
  EXPECT_EQ(qdmr_parse(" ; return a ;; ").nodes.size(), 1u);
  try {
    qdmr_parse("return a ;return b of #3");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformedReference);
  }
  EXPECT_THROW(qdmr_parse("return #1"), Error);
}

TEST(Ged, Examples) {
  auto g = graph({"a", "b"}, {{1, 0}});
  EXPECT_EQ(graph_edit_distance(g, g), 0u);
  EXPECT_EQ(qdmr_ged_score(g, g).score, 1.0);
  EXPECT_EQ(graph_edit_distance(graph({"a"}), graph({"b"})), 1u);
  EXPECT_EQ(graph_edit_distance(graph({}), graph({"a"})), 1u);
  EXPECT_EQ(qdmr_ged_score(graph({}), graph({"a"})).score, 0.0);
  EXPECT_EQ(qdmr_ged_score(graph({}), graph({})).score, 1.0);
  // Reversing an edge costs a delete and an insert.
  EXPECT_EQ(graph_edit_distance(graph({"a", "a"}, {{1, 0}}), graph({"a", "a"}, {{0, 1}})), 0u);
  EXPECT_EQ(graph_edit_distance(graph({"a", "b"}, {{1, 0}}), graph({"a", "b"}, {{0, 1}})), 2u);
}

TEST(Ged, MatchesBruteForceOnSmallGraphs) {
  Rng gen(13);
  for (int t = 0; t < 120; ++t) {
    auto a = fixture::random_graph(gen, 5), b = fixture::random_graph(gen, 5);
    EXPECT_EQ(graph_edit_distance(a, b), oracle::brute_force_ged(a, b));
    EXPECT_EQ(graph_edit_distance(a, b), graph_edit_distance(b, a));
  }
}

TEST(Ged, NodeCap) {
  std::vector<std::string> many(13, "x");
  EXPECT_THROW(graph_edit_distance(graph(many), graph({"x"})), Error);
  TaskSpec task = fixture::generation_task(Measure::kQdmrGed);
  std::string long_pred;
  for (int i = 0; i < 13; ++i) long_pred += "return s" + std::to_string(i) + " ;";
  auto r = score_prediction(task, long_pred, "return a ;return b of #1");
  EXPECT_EQ(r.score, 0.0);
  EXPECT_TRUE(r.unparseable);
  EXPECT_THROW(score_prediction(task, "return a", long_pred), Error);
  EXPECT_TRUE(score_prediction(task, "return a ;return #5", "return a").unparseable);
}

TEST(Gsm8k, FinalAnswer) {
  EXPECT_EQ(gsm8k_fac("They sold altogether 72. #### 72", 72).score, 1.0);
  EXPECT_EQ(gsm8k_fac(kGsmSample, 72).score, 1.0);
  EXPECT_EQ(gsm8k_fac("answer is 71.5", 72).score, 0.0);
  auto none = gsm8k_fac("no digits here", 72);
  EXPECT_EQ(none.score, 0.0);
  EXPECT_TRUE(none.unparseable);
  EXPECT_EQ(gsm8k_fac("total 1,234", 1234).score, 1.0);
  EXPECT_EQ(gsm8k_fac("it dropped to -5", -5).score, 1.0);
  EXPECT_EQ(gsm8k_fac("range 3-5", 5).score, 1.0);
}

TEST(Gsm8k, ReasoningFormat) {
  EXPECT_EQ(gsm8k_rfc(kGsmSample).score, 1.0);
  EXPECT_EQ(gsm8k_rfc("48/2 = 24 and 48+24 = 72\n#### 72").score, 0.0);
  EXPECT_EQ(gsm8k_rfc("48/2 = <<48/2=24>>24 clips. So 72 in total.").score, 0.0);
  EXPECT_EQ(gsm8k_rfc("<<1+1=2>>2\n#### 2\n").score, 1.0);
}

TEST(ScorePrediction, Dispatch) {
  EXPECT_EQ(score_prediction(fixture::sentiment_task(), "POSITIVE", "positive").score, 1.0);
  EXPECT_EQ(score_prediction(fixture::generation_task(Measure::kGsm8kFac), kGsmSample, "72").score, 1.0);
  EXPECT_EQ(score_prediction(fixture::generation_task(Measure::kGsm8kRfc), kGsmSample, "72").score, 1.0);
  EXPECT_DOUBLE_EQ(score_prediction(fixture::generation_task(Measure::kBleu), "a b", "a b").score, 1.0);
}
