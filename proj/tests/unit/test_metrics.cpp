#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "xlrc/error.hpp"
#include "xlrc/metrics.hpp"

using namespace xlrc;

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("The  Cat."), (std::vector<std::string>{"cat"}));
  EXPECT_EQ(normalize("北京。"), (std::vector<std::string>{"北", "京"}));
  EXPECT_TRUE(normalize("").empty());
  EXPECT_EQ(normalize("an apple, A pear"), (std::vector<std::string>{"apple", "pear"}));
  EXPECT_EQ(normalize("住在Beijing！"), (std::vector<std::string>{"住", "在", "beijing"}));
}

TEST(F1, Examples) {
  EXPECT_DOUBLE_EQ(f1_score("北京", "北京"), 1.0);
  EXPECT_NEAR(f1_score("北京大学", "北京"), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(f1_score("上海", "北京"), 0.0);
  EXPECT_DOUBLE_EQ(f1_score("", ""), 1.0);
  EXPECT_DOUBLE_EQ(f1_score("", "北京"), 0.0);
  EXPECT_DOUBLE_EQ(f1_score("the", "北京"), 0.0);
  EXPECT_NEAR(f1_score("new york city", "New York"), 0.8, 1e-15);
}

TEST(F1, SymmetricInArguments) {
  const std::vector<std::string> words{"北京大学", "北京", "new york", "york new york", "a cat", "京京北"};
  for (const auto& a : words)
    for (const auto& b : words) EXPECT_DOUBLE_EQ(f1_score(a, b), f1_score(b, a)) << a << " / " << b;
}

TEST(ExactMatch, NormalizedSequences) {
  EXPECT_TRUE(exact_match("The cat.", "cat"));
  EXPECT_FALSE(exact_match("京北", "北京"));
  EXPECT_TRUE(exact_match("", "the"));
}

TEST(Evaluate, IdentityCorpus) {
  const std::vector<GoldEntry> golds{{"a", {"北京"}}, {"b", {"new york"}}};
  const EvalReport r = evaluate({{"a", "北京"}, {"b", "New York."}}, golds);
  EXPECT_DOUBLE_EQ(r.f1, 100.0);
  EXPECT_DOUBLE_EQ(r.em, 100.0);
  EXPECT_EQ(r.summary(), "F1 100.00\nEM 100.00\n");
}

TEST(Evaluate, ArithmeticMean) {
  const std::vector<GoldEntry> golds{{"a", {"北京"}}, {"b", {"上海"}}};
  const EvalReport r = evaluate({{"a", "北京"}, {"b", "广州"}}, golds);
  EXPECT_DOUBLE_EQ(r.f1, 50.0);
  EXPECT_DOUBLE_EQ(r.em, 50.0);
}

TEST(Evaluate, MaxOverGoldsAndOrderInvariance) {
  const std::vector<GoldEntry> g1{{"a", {"上海", "北京大学"}}};
  const std::vector<GoldEntry> g2{{"a", {"北京大学", "上海"}}};
  const std::map<std::string, std::string> preds{{"a", "北京"}};
  EXPECT_DOUBLE_EQ(evaluate(preds, g1).f1, evaluate(preds, g2).f1);
  EXPECT_DOUBLE_EQ(evaluate(preds, g1).f1, 66.67);
}

TEST(Evaluate, MissingPredictionScoresZero) {
  const std::vector<GoldEntry> golds{{"a", {"北京"}}, {"b", {"上海"}}};
  const EvalReport r = evaluate({{"a", "北京"}}, golds);
  EXPECT_EQ(r.missing_predictions, 1u);
  EXPECT_DOUBLE_EQ(r.f1, 50.0);
  EXPECT_TRUE(r.questions[1].missing);
}

TEST(Evaluate, DuplicateGoldIdIsRejected) {
  const std::vector<GoldEntry> golds{{"a", {"x"}}, {"a", {"y"}}};
  EXPECT_THROW(evaluate({}, golds), ValidationError);
}

TEST(Evaluate, ReportJson) {
  const std::vector<GoldEntry> golds{{"a", {"北京"}}};
  const nlohmann::json j = evaluate({{"a", "北京大学"}}, golds).to_json();
  EXPECT_DOUBLE_EQ(j.at("f1").get<double>(), 66.67);
  EXPECT_DOUBLE_EQ(j.at("em").get<double>(), 0.0);
  EXPECT_EQ(j.at("questions").at(0).at("prediction"), "北京大学");
}

TEST(Golds, FromExamples) {
  RawExample answerable;
  answerable.id = "a";
  answerable.answers = {{"王", 2}, {"王", 2}};
  RawExample impossible;
  impossible.id = "b";
  impossible.is_impossible = true;
  const std::vector<RawExample> examples{answerable, impossible};
  const auto golds = golds_from_examples(examples);
  ASSERT_EQ(golds.size(), 2u);
  EXPECT_EQ(golds[0].answers.size(), 2u);
  EXPECT_EQ(golds[1].answers, (std::vector<std::string>{""}));
}

TEST(F1, EmNeverExceedsF1OnRandomPairs) {
  std::mt19937_64 rng(1);
  const std::vector<std::string> pool{"北", "京", "a", "the", "cat", "York", "。", " ", ",", "王"};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1), len(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    std::string a, b;
    for (std::size_t i = len(rng); i > 0; --i) a += pool[pick(rng)] + (pick(rng) % 2 ? " " : "");
    for (std::size_t i = len(rng); i > 0; --i) b += pool[pick(rng)] + (pick(rng) % 2 ? " " : "");
    const double f1 = f1_score(a, b);
    EXPECT_GE(f1, 0.0);
    EXPECT_LE(f1, 1.0);
    if (exact_match(a, b)) EXPECT_DOUBLE_EQ(f1, 1.0);
  }
}
