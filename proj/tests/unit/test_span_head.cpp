#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "test_util.hpp"
#include "xlrc/error.hpp"
#include "xlrc/span_head.hpp"

using namespace xlrc;
using xlrc::testing::random_matrix;

namespace {

TokenSequence layout(std::vector<std::string> question, std::vector<std::string> passage) {
  TokenSequence seq;
  seq.tokens.push_back("[CLS]");
  for (auto& t : question) seq.tokens.push_back(t);
  seq.tokens.push_back("[SEP]");
  seq.passage_range.begin = seq.tokens.size();
  for (auto& t : passage) seq.tokens.push_back(t);
  seq.passage_range.end = seq.tokens.size();
  seq.tokens.push_back("[SEP]");
  seq.token_ids.assign(seq.tokens.size(), 4);
  return seq;
}

SpanDistributions from_probs(std::vector<double> start, std::vector<double> end) {
  const std::size_t n = start.size();
  return {Tensor::from({n}, std::move(start)), Tensor::from({n}, std::move(end))};
}

// Every valid pair, scanned in (i, j) order; strict improvement keeps the first maximum.
DecodedSpan brute_force_decode(const std::vector<double>& s, const std::vector<double>& e, TokenRange r,
                               std::size_t max_len) {
  DecodedSpan best{0, 0, -1.0};
  for (std::size_t i = r.begin; i < r.end; ++i)
    for (std::size_t j = r.begin; j < r.end; ++j) {
      if (j < i || j - i + 1 > max_len) continue;
      if (s[i] * e[j] > best.score) best = {i, j, s[i] * e[j]};
    }
  return best;
}

std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  double total = 0.0;
  for (double& x : v) total += (x = dist(rng));
  for (double& x : v) x /= total;
  return v;
}

}  // namespace

TEST(AnswerMask, ClsAndPassageOnly) {
  const TokenSequence seq = layout({"q"}, {"a", "b"});
  EXPECT_EQ(answer_mask(seq), (std::vector<bool>{true, false, false, true, true, false}));
}

TEST(Distributions, ZeroWeightsGiveUniformOverAllowed) {
  SpanHeadParams params;
  params.w_start = Tensor::zeros({4, 1}, true);
  params.w_end = Tensor::zeros({4, 1}, true);
  params.b_start = Tensor::zeros({1}, true);
  params.b_end = Tensor::zeros({1}, true);
  std::mt19937_64 rng(1);
  const Tensor g = random_matrix(6, 4, rng);
  const std::vector<bool> mask{true, false, false, true, true, false};
  const SpanDistributions d = predict_distributions(g, params, mask);
  EXPECT_EQ(d.start.shape(), (Shape{6}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(d.start.values()[i], mask[i] ? 1.0 / 3.0 : 0.0, 1e-15);
    EXPECT_NEAR(d.end.values()[i], mask[i] ? 1.0 / 3.0 : 0.0, 1e-15);
  }
}

TEST(Distributions, DominantLogitSaturates) {
  SpanHeadParams params;
  params.w_start = Tensor::from({1, 1}, {1.0});
  params.w_end = Tensor::from({1, 1}, {1.0});
  params.b_start = Tensor::zeros({1});
  params.b_end = Tensor::zeros({1});
  const Tensor g = Tensor::from({4, 1}, {0.0, 1e6, 0.5, -2.0});
  const SpanDistributions d = predict_distributions(g, params, std::vector<bool>(4, true));
  EXPECT_NEAR(d.start.values()[1], 1.0, 1e-9);
  EXPECT_NEAR(d.end.values()[1], 1.0, 1e-9);
}

TEST(Distributions, MatchesPrimitiveChain) {
  std::mt19937_64 rng(2);
  const SpanHeadParams params = SpanHeadParams::init(6, rng);
  const Tensor g = random_matrix(5, 6, rng, 2.0);
  const std::vector<bool> mask{true, false, true, true, false};
  const SpanDistributions d = predict_distributions(g, params, mask);
  auto expected = [&](const Tensor& w, const Tensor& b) {
    std::vector<double> logits(5);
    double mx = -1e300;
    for (std::size_t i = 0; i < 5; ++i) {
      logits[i] = b.values()[0];
      for (std::size_t j = 0; j < 6; ++j) logits[i] += g.at(i, j) * w.values()[j];
      if (mask[i]) mx = std::max(mx, logits[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < 5; ++i) z += mask[i] ? std::exp(logits[i] - mx) : 0.0;
    std::vector<double> p(5);
    for (std::size_t i = 0; i < 5; ++i) p[i] = mask[i] ? std::exp(logits[i] - mx) / z : 0.0;
    return p;
  };
  const auto ps = expected(params.w_start, params.b_start), pe = expected(params.w_end, params.b_end);
  double total = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(d.start.values()[i], ps[i], 1e-12);
    EXPECT_NEAR(d.end.values()[i], pe[i], 1e-12);
    total += d.start.values()[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(Distributions, Errors) {
  std::mt19937_64 rng(3);
  const SpanHeadParams params = SpanHeadParams::init(4, rng);
  const Tensor g = random_matrix(3, 4, rng);
  EXPECT_THROW(predict_distributions(g, params, {false, false, false}), ContractError);
  EXPECT_THROW(predict_distributions(g, params, {true, true}), ShapeError);
}

TEST(SpanLoss, UniformOverFour) {
  const auto d = from_probs({0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25});
  const SpanLabel label{1, 2};
  const Tensor loss = span_loss(std::span(&d, 1), std::span(&label, 1));
  EXPECT_NEAR(loss.item(), 2.0 * std::log(4.0), 1e-12);
  EXPECT_NEAR(loss.item(), 2.772589, 1e-6);
}

TEST(SpanLoss, PerfectPredictionIsZero) {
  const auto d = from_probs({0, 1, 0}, {0, 0, 1});
  const SpanLabel label{1, 2};
  EXPECT_EQ(span_loss(std::span(&d, 1), std::span(&label, 1)).item(), 0.0);
}

TEST(SpanLoss, BatchIsMeanOfScalarOracle) {
  std::mt19937_64 rng(4);
  std::vector<SpanDistributions> preds;
  std::vector<std::vector<double>> s, e;
  for (int k = 0; k < 2; ++k) {
    s.push_back(random_distribution(5, rng));
    e.push_back(random_distribution(5, rng));
    preds.push_back(from_probs(s.back(), e.back()));
  }
  const std::vector<SpanLabel> labels{{1, 3}, {0, 4}};
  const double oracle =
      -((std::log(s[0][1]) + std::log(e[0][3])) + (std::log(s[1][0]) + std::log(e[1][4]))) / 2.0;
  EXPECT_NEAR(span_loss(preds, labels).item(), oracle, 1e-10);
}

TEST(SpanLoss, ZeroProbabilityIsClamped) {
  const auto d = from_probs({1, 0}, {1, 0});
  const SpanLabel label{1, 1};
  EXPECT_NEAR(span_loss(std::span(&d, 1), std::span(&label, 1)).item(), -2.0 * std::log(1e-12), 1e-9);
}

TEST(SpanLoss, Errors) {
  const auto d = from_probs({0.5, 0.5}, {0.5, 0.5});
  const SpanLabel outside{0, 2};
  EXPECT_THROW(span_loss(std::span(&d, 1), std::span(&outside, 1)), ContractError);
  EXPECT_THROW(span_loss({}, {}), ContractError);
}

TEST(SpanLoss, NonNegativeOnRandomDistributions) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = from_probs(random_distribution(6, rng), random_distribution(6, rng));
    const SpanLabel label{static_cast<std::size_t>(trial % 6), 5};
    EXPECT_GT(span_loss(std::span(&d, 1), std::span(&label, 1)).item(), 0.0);
  }
}

TEST(SpanLoss, GradientWithRespectToLogits) {
  std::mt19937_64 rng(6);
  const Tensor start_logits = random_matrix(1, 6, rng, 2.0, true);
  const Tensor end_logits = random_matrix(1, 6, rng, 2.0, true);
  const std::vector<bool> mask{true, false, true, true, true, false};
  const SpanLabel label{2, 4};
  xlrc::testing::expect_gradients_match(
      [&] {
        const SpanDistributions d{reshape(softmax_rows(start_logits, mask), {6}),
                                  reshape(softmax_rows(end_logits, mask), {6})};
        return span_loss(std::span(&d, 1), std::span(&label, 1));
      },
      {start_logits, end_logits});
}

TEST(SpanHeadGradients, ParametersAndInputs) {
  std::mt19937_64 rng(7);
  const SpanHeadParams params = SpanHeadParams::init(6, rng);
  const Tensor g = random_matrix(5, 6, rng, 1.0, true);
  const std::vector<bool> mask{true, false, true, true, true};
  const std::vector<SpanLabel> labels{{2, 3}};
  xlrc::testing::expect_gradients_match(
      [&] {
        const std::vector<SpanDistributions> d{predict_distributions(g, params, mask)};
        return span_loss(d, labels);
      },
      {g, params.w_start, params.b_start, params.w_end, params.b_end});
}

TEST(Decode, ReferenceExample) {
  const std::vector<double> s{0.1, 0.6, 0.2, 0.1}, e{0.1, 0.1, 0.7, 0.1};
  const DecodedSpan d = decode_span(s, e, {0, 4}, 4);
  EXPECT_EQ(d.start, 1u);
  EXPECT_EQ(d.end, 2u);
  EXPECT_NEAR(d.score, 0.42, 1e-15);
  const DecodedSpan oracle = brute_force_decode(s, e, {0, 4}, 4);
  EXPECT_EQ(oracle.start, d.start);
  EXPECT_EQ(oracle.end, d.end);
}

TEST(Decode, PointMassAndLengthOne) {
  const std::vector<double> point{0, 0, 1, 0};
  const DecodedSpan p = decode_span(point, point, {0, 4}, 4);
  EXPECT_EQ(p.start, 2u);
  EXPECT_EQ(p.end, 2u);
  const std::vector<double> s{0.1, 0.6, 0.2, 0.1}, e{0.1, 0.1, 0.7, 0.1};
  const DecodedSpan one = decode_span(s, e, {0, 4}, 1);
  EXPECT_EQ(one.start, one.end);
  EXPECT_EQ(one.start, 2u);  // 0.2·0.7 beats 0.6·0.1
}

TEST(Decode, TiesPreferSmallerStartThenEnd) {
  const std::vector<double> flat(5, 0.2);
  const DecodedSpan d = decode_span(flat, flat, {1, 5}, 3);
  EXPECT_EQ(d.start, 1u);
  EXPECT_EQ(d.end, 1u);
}

TEST(Decode, Errors) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(decode_span(p, p, {1, 1}, 3), ContractError);
  EXPECT_THROW(decode_span(p, p, {0, 3}, 3), ShapeError);
}

TEST(Decode, MatchesBruteForceAndConstraints) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> len(1, 12), max_len(1, 6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = len(rng);
    const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const std::size_t end = std::uniform_int_distribution<std::size_t>(begin + 1, n)(rng);
    const std::size_t m = max_len(rng);
    const auto s = random_distribution(n, rng), e = random_distribution(n, rng);
    const DecodedSpan d = decode_span(s, e, {begin, end}, m);
    const DecodedSpan oracle = brute_force_decode(s, e, {begin, end}, m);
    EXPECT_EQ(d.start, oracle.start);
    EXPECT_EQ(d.end, oracle.end);
    EXPECT_EQ(d.score, oracle.score);
    EXPECT_LE(d.start, d.end);
    EXPECT_LE(d.end - d.start + 1, m);
    EXPECT_GE(d.start, begin);
    EXPECT_LT(d.end, end);
  }
}

TEST(Decode, RaisingUniqueArgmaxStartKeepsIt) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_distribution(8, rng);
    const auto e = random_distribution(8, rng);
    const DecodedSpan before = decode_span(s, e, {0, 8}, 4);
    s[before.start] += 0.3;
    for (double& x : s) x /= 1.3;
    const DecodedSpan after = decode_span(s, e, {0, 8}, 4);
    EXPECT_EQ(after.start, before.start);
    EXPECT_EQ(after.end, before.end);
  }
}

TEST(ExtractText, JoinRules) {
  const std::vector<std::string> cjk{"他", "是", "王"};
  EXPECT_EQ(extract_text(cjk, {0, 2}), "他是王");
  const std::vector<std::string> latin{"new", "york"};
  EXPECT_EQ(extract_text(latin, {0, 1}), "new york");
  const std::vector<std::string> with_cls{"[CLS]", "a"};
  EXPECT_EQ(extract_text(with_cls, {0, 0}), "");
  const std::vector<std::string> mixed{"住", "在", "beijing", "。"};
  EXPECT_EQ(extract_text(mixed, {0, 3}), "住在beijing。");
  EXPECT_THROW(extract_text(cjk, {1, 3}), ContractError);
}

TEST(PredictAnswer, ClsPairWinsGivesEmptyAnswer) {
  const TokenSequence seq = layout({"q"}, {"a", "b"});
  const auto d = from_probs({0.9, 0, 0, 0.05, 0.05, 0}, {0.9, 0, 0, 0.05, 0.05, 0});
  EXPECT_EQ(predict_answer(seq, d).answer_text, "");
  const auto d2 = from_probs({0.1, 0, 0, 0.8, 0.1, 0}, {0.1, 0, 0, 0.1, 0.8, 0});
  const SpanPrediction p = predict_answer(seq, d2);
  EXPECT_EQ(p.answer_text, "a b");
  EXPECT_EQ(p.best_span, (TokenSpan{3, 4}));
  EXPECT_NEAR(p.best_score, 0.64, 1e-15);
}

TEST(Predictions, FileRoundTripAndDuplicates) {
  const std::map<std::string, std::string> preds{{"q1", "王"}, {"q2", ""}, {"q3", "new york"}};
  EXPECT_EQ(parse_predictions_text(write_predictions_text(preds)), preds);
  const auto dir = std::filesystem::temp_directory_path() / "xlrc_pred_test";
  std::filesystem::create_directories(dir);
  write_predictions(dir / "p.json", preds);
  EXPECT_EQ(read_predictions(dir / "p.json"), preds);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(parse_predictions_text(R"({"a":"x","a":"y"})"), ValidationError);
  EXPECT_THROW(parse_predictions_text(R"({"a":1})"), SchemaError);
  EXPECT_THROW(parse_predictions_text(R"({"a":)"), ParseError);
}
