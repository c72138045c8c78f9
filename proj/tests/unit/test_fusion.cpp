#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "xlrc/error.hpp"
#include "xlrc/fusion.hpp"

using namespace xlrc;
using xlrc::testing::naive_matmul;
using xlrc::testing::random_matrix;
using xlrc::testing::random_vector;

namespace {

// Independent softmax over a row-major m×n buffer.
std::vector<double> ref_softmax(const std::vector<double>& x, std::size_t m, std::size_t n) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[i * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = std::exp(x[i * n + j] - mx) / z;
  }
  return out;
}

std::vector<double> ref_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                               std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * n + j] += a[i * k + t] * b[t * n + j];
  return out;
}

std::vector<double> ref_transpose(const std::vector<double>& a, std::size_t m, std::size_t n) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void expect_near_all(const Tensor& t, const std::vector<double>& expected, double tol) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.values()[i], expected[i], tol) << i;
}

Tensor permute_rows(const Tensor& m, const std::vector<std::size_t>& perm) {
  std::vector<double> out(m.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i * m.cols() + j] = m.at(perm[i], j);
  return Tensor::from(m.shape(), std::move(out));
}

EncodedBatch random_batch(std::size_t lt, std::size_t lm, std::size_t ln, std::size_t h, std::mt19937_64& rng) {
  EncodedBatch b;
  b.target_language = "zh";
  b.target = random_matrix(lt, h, rng);
  b.sources.emplace("en", random_matrix(lm, h, rng));
  b.sources.emplace("ja", random_matrix(ln, h, rng));
  return b;
}

}  // namespace

TEST(SelfAttention, Examples) {
  const Tensor one = self_attention(Tensor::from({1, 3}, {1, 2, 3}));
  EXPECT_EQ(one.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(one.item(), 1.0);
  const Tensor uniform = self_attention(Tensor::zeros({4, 5}));
  for (double v : uniform.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SelfAttention, MatchesPrimitiveOracle) {
  std::mt19937_64 rng(1);
  const Tensor b = random_matrix(3, 5, rng);
  const auto logits = ref_matmul(vals(b), ref_transpose(vals(b), 3, 5), 3, 5, 3);
  expect_near_all(self_attention(b), ref_softmax(logits, 3, 3), 1e-12);
}

TEST(SelfAttention, ScaledOption) {
  std::mt19937_64 rng(2);
  const Tensor b = random_matrix(3, 4, rng);
  FusionOptions options;
  options.scale_logits = true;
  auto logits = ref_matmul(vals(b), ref_transpose(vals(b), 3, 4), 3, 4, 3);
  for (double& v : logits) v /= 2.0;
  expect_near_all(self_attention(b, options), ref_softmax(logits, 3, 3), 1e-12);
}

TEST(InterAttention, Examples) {
  const Tensor out = inter_attention(Tensor::identity(2), Tensor::from({3, 2}, {2, 0, 0, 3, 1, 1}));
  EXPECT_EQ(vals(out), (std::vector<double>{2, 0, 1, 0, 3, 1}));
  std::mt19937_64 rng(3);
  const Tensor zero = inter_attention(Tensor::zeros({2, 3}), random_matrix(4, 3, rng));
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(inter_attention(random_matrix(2, 3, rng), random_matrix(2, 4, rng)), ShapeError);
}

TEST(InterAttention, MatchesTripleLoop) {
  std::mt19937_64 rng(4);
  const Tensor t = random_matrix(3, 4, rng), s = random_matrix(5, 4, rng);
  expect_near_all(inter_attention(t, s), ref_matmul(vals(t), ref_transpose(vals(s), 5, 4), 3, 4, 5), 1e-12);
}

TEST(SelfAdaptive, IdentityFactorsCollapseChain) {
  std::mt19937_64 rng(5);
  const Tensor inter = random_matrix(1, 4, rng), b_src = random_matrix(4, 3, rng);
  const AdaptiveAttention out = self_adaptive_attention(Tensor::identity(1), inter, Tensor::identity(4), b_src);
  expect_near_all(out.adaptive, vals(inter), 1e-15);
  expect_near_all(out.attended, ref_matmul(ref_softmax(vals(inter), 1, 4), vals(b_src), 1, 4, 3), 1e-12);
}

TEST(SelfAdaptive, ZeroLogitsGiveUniformMixture) {
  std::mt19937_64 rng(6);
  const Tensor a_t = self_attention(random_matrix(3, 2, rng));
  const Tensor a_src = self_attention(random_matrix(4, 2, rng));
  const Tensor b_src = random_matrix(4, 5, rng);
  const AdaptiveAttention out = self_adaptive_attention(a_t, Tensor::zeros({3, 4}), a_src, b_src);
  for (double v : out.adaptive.values()) EXPECT_EQ(v, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 4; ++r) mean += b_src.at(r, j) / 4.0;
      EXPECT_NEAR(out.attended.at(i, j), mean, 1e-12);
    }
}

TEST(SelfAdaptive, MatchesStepByStepChain) {
  std::mt19937_64 rng(7);
  const std::size_t lt = 3, ls = 4, h = 5;
  const Tensor bt = random_matrix(lt, h, rng), bs = random_matrix(ls, h, rng);
  const Tensor a_t = self_attention(bt), a_s = self_attention(bs), inter = inter_attention(bt, bs);
  const auto chain = ref_matmul(ref_matmul(vals(a_t), vals(inter), lt, lt, ls), ref_transpose(vals(a_s), ls, ls), lt,
                                ls, ls);
  const AdaptiveAttention out = self_adaptive_attention(a_t, inter, a_s, bs);
  expect_near_all(out.adaptive, chain, 1e-10);
  expect_near_all(out.attended, ref_matmul(ref_softmax(chain, lt, ls), vals(bs), lt, ls, h), 1e-10);
  EXPECT_THROW(self_adaptive_attention(a_t, inter, a_t, bs), ShapeError);
}

TEST(MultilingualAttention, Concatenation) {
  std::mt19937_64 rng(8);
  const std::vector<Tensor> two{random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  const Tensor c = multilingual_attention(two);
  EXPECT_EQ(c.shape(), (Shape{3, 8}));
  expect_near_all(slice_cols(c, 0, 4), vals(two[0]), 0.0);
  const std::vector<Tensor> one{two[0]};
  expect_near_all(multilingual_attention(one), vals(two[0]), 0.0);
  const std::vector<Tensor> three{random_matrix(2, 4, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng)};
  EXPECT_EQ(multilingual_attention(three).shape(), (Shape{2, 12}));
  const std::vector<Tensor> mismatched{random_matrix(2, 4, rng), random_matrix(3, 4, rng)};
  EXPECT_THROW(multilingual_attention(mismatched), ShapeError);
  EXPECT_THROW(multilingual_attention(std::vector<Tensor>{}), ContractError);
}

TEST(EnhanceTarget, ZeroProjectionLeavesLayerNormOfTarget) {
  std::mt19937_64 rng(9);
  const std::size_t h = 4;
  FusionParams params = FusionParams::init(h, 2, rng);
  params.w_c = Tensor::zeros({2 * h, h}, true);
  const Tensor bt = random_matrix(3, h, rng), cp = random_matrix(3, 2 * h, rng);
  const Enhanced out = enhance_target(bt, cp, params);
  const Tensor ln = layer_norm_rows(bt, Tensor::full({h}, 1.0), Tensor::zeros({h}));
  expect_near_all(slice_cols(out.enhanced, h, 2 * h), vals(ln), 1e-15);
}

TEST(EnhanceTarget, MatchesPrimitiveChainAndPassesTargetThrough) {
  std::mt19937_64 rng(10);
  const std::size_t h = 5, lt = 3;
  FusionParams params = FusionParams::init(h, 2, rng);
  params.b_c = random_vector(h, rng);
  params.gamma = random_vector(h, rng);
  params.beta = random_vector(h, rng);
  const Tensor bt = random_matrix(lt, h, rng), cp = random_matrix(lt, 2 * h, rng);
  const Enhanced out = enhance_target(bt, cp, params);
  auto c = naive_matmul(cp, params.w_c);
  for (std::size_t i = 0; i < lt; ++i)
    for (std::size_t j = 0; j < h; ++j) c[i * h + j] += params.b_c.values()[j];
  expect_near_all(out.projected, c, 1e-12);
  for (std::size_t i = 0; i < lt; ++i) {
    std::vector<double> row(h);
    double mean = 0.0;
    for (std::size_t j = 0; j < h; ++j) mean += (row[j] = bt.at(i, j) + c[i * h + j]) / h;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean) / h;
    for (std::size_t j = 0; j < h; ++j) {
      EXPECT_EQ(out.enhanced.at(i, j), bt.at(i, j));
      const double ln = (row[j] - mean) / std::sqrt(var + kLayerNormEps) * params.gamma.values()[j] +
                        params.beta.values()[j];
      EXPECT_NEAR(out.enhanced.at(i, h + j), ln, 1e-10);
    }
  }
  EXPECT_THROW(enhance_target(bt, random_matrix(lt, h, rng), params), ShapeError);
}

TEST(Fuse, TraceShapesForTwoSources) {
  std::mt19937_64 rng(11);
  const EncodedBatch batch = random_batch(4, 6, 5, 16, rng);
  const FusionParams params = FusionParams::init(16, 2, rng);
  const FusionTrace trace = fuse(batch, params);
  EXPECT_EQ(trace.enhanced.shape(), (Shape{4, 32}));
  EXPECT_EQ(trace.target_self_attention.shape(), (Shape{4, 4}));
  EXPECT_EQ(trace.sources.at("en").inter.shape(), (Shape{4, 6}));
  EXPECT_EQ(trace.sources.at("ja").adaptive.shape(), (Shape{4, 5}));
  EXPECT_EQ(trace.multilingual.shape(), (Shape{4, 32}));
  EXPECT_EQ(trace.projected.shape(), (Shape{4, 16}));
  // Lexicographic order: en first.
  expect_near_all(slice_cols(trace.multilingual, 0, 16), vals(trace.sources.at("en").attended), 0.0);
  expect_near_all(slice_cols(trace.multilingual, 16, 32), vals(trace.sources.at("ja").attended), 0.0);
}

TEST(Fuse, MonolingualFallback) {
  std::mt19937_64 rng(12);
  const std::size_t h = 6;
  EncodedBatch batch;
  batch.target = random_matrix(3, h, rng);
  FusionParams params = FusionParams::init(h, 2, rng);
  params.gamma = random_vector(h, rng);
  params.beta = random_vector(h, rng);
  const FusionTrace trace = fuse(batch, params);
  const Tensor expected = concat_cols(batch.target, layer_norm_rows(batch.target, params.gamma, params.beta));
  expect_near_all(trace.enhanced, vals(expected), 0.0);
  EXPECT_FALSE(trace.multilingual.defined());
}

TEST(Fuse, SourceCountMismatchIsRejected) {
  std::mt19937_64 rng(13);
  EncodedBatch batch = random_batch(3, 4, 5, 8, rng);
  const FusionParams two = FusionParams::init(8, 2, rng);
  batch.sources.erase("ja");
  EXPECT_THROW(fuse(batch, two), ContractError);
  const FusionParams one = FusionParams::init(8, 1, rng);
  EXPECT_EQ(fuse(batch, one).enhanced.shape(), (Shape{3, 16}));
}

TEST(Fuse, InitialisationFollowsConvention) {
  std::mt19937_64 rng(14);
  const FusionParams p = FusionParams::init(8, 2, rng);
  EXPECT_EQ(p.w_c.shape(), (Shape{16, 8}));
  const double limit = 1.0 / std::sqrt(16.0);
  for (double v : p.w_c.values()) EXPECT_LE(std::abs(v), limit);
  for (double v : p.b_c.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.gamma.values()) EXPECT_EQ(v, 1.0);
  for (double v : p.beta.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.num_sources(), 2u);
}

// Shape chain, normalization and passthrough over random draws.
TEST(FuseProperties, ShapeChainAndNormalization) {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<std::size_t> len(1, 8), hid(2, 16);
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t lt = len(rng), lm = len(rng), ln = len(rng), h = hid(rng);
    const EncodedBatch batch = random_batch(lt, lm, ln, h, rng);
    const FusionParams params = FusionParams::init(h, 2, rng);
    const FusionTrace t = fuse(batch, params);
    ASSERT_EQ(t.target_self_attention.shape(), (Shape{lt, lt}));
    ASSERT_EQ(t.sources.at("en").self_attention.shape(), (Shape{lm, lm}));
    ASSERT_EQ(t.sources.at("en").inter.shape(), (Shape{lt, lm}));
    ASSERT_EQ(t.sources.at("en").adaptive.shape(), (Shape{lt, lm}));
    ASSERT_EQ(t.sources.at("ja").adaptive.shape(), (Shape{lt, ln}));
    ASSERT_EQ(t.sources.at("en").attended.shape(), (Shape{lt, h}));
    ASSERT_EQ(t.multilingual.shape(), (Shape{lt, 2 * h}));
    ASSERT_EQ(t.projected.shape(), (Shape{lt, h}));
    ASSERT_EQ(t.enhanced.shape(), (Shape{lt, 2 * h}));
    for (std::size_t r = 0; r < lt; ++r) EXPECT_NEAR(xlrc::testing::row_sum(t.target_self_attention, r), 1.0, 1e-6);
    for (const auto& [lang, s] : t.sources) {
      for (std::size_t r = 0; r < s.self_attention.rows(); ++r)
        EXPECT_NEAR(xlrc::testing::row_sum(s.self_attention, r), 1.0, 1e-6);
      const Tensor weights = softmax_rows(s.adaptive);
      for (std::size_t r = 0; r < lt; ++r) EXPECT_NEAR(xlrc::testing::row_sum(weights, r), 1.0, 1e-6);
    }
    for (std::size_t i = 0; i < lt; ++i)
      for (std::size_t j = 0; j < h; ++j) ASSERT_EQ(t.enhanced.at(i, j), batch.target.at(i, j));
  }
}

TEST(FuseProperties, SourceRowPermutationInvariance) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> len(1, 8), hid(2, 16);
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t lt = len(rng), ls = len(rng), h = hid(rng);
    const Tensor bt = random_matrix(lt, h, rng), bs = random_matrix(ls, h, rng);
    std::vector<std::size_t> perm(ls);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor bp = permute_rows(bs, perm);
    auto attended = [&](const Tensor& src) {
      return self_adaptive_attention(self_attention(bt), inter_attention(bt, src), self_attention(src), src).attended;
    };
    const Tensor a = attended(bs), b = attended(bp);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-6);
  }
}

TEST(FuseProperties, AttendedRowsAreConvexMixtures) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> len(1, 8), hid(2, 16);
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t lt = len(rng), ls = len(rng), h = hid(rng);
    const Tensor bt = random_matrix(lt, h, rng), bs = random_matrix(ls, h, rng);
    const AdaptiveAttention out =
        self_adaptive_attention(self_attention(bt), inter_attention(bt, bs), self_attention(bs), bs);
    const auto weights = ref_softmax(vals(out.adaptive), lt, ls);
    for (std::size_t i = 0; i < lt; ++i) {
      double total = 0.0;
      for (std::size_t r = 0; r < ls; ++r) {
        EXPECT_GE(weights[i * ls + r], 0.0);
        total += weights[i * ls + r];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      for (std::size_t j = 0; j < h; ++j) {
        double mix = 0.0, lo = bs.at(0, j), hi = bs.at(0, j);
        for (std::size_t r = 0; r < ls; ++r) {
          mix += weights[i * ls + r] * bs.at(r, j);
          lo = std::min(lo, bs.at(r, j));
          hi = std::max(hi, bs.at(r, j));
        }
        EXPECT_NEAR(out.attended.at(i, j), mix, 1e-10);
        EXPECT_GE(out.attended.at(i, j), lo - 1e-12);
        EXPECT_LE(out.attended.at(i, j), hi + 1e-12);
      }
    }
  }
}

TEST(FuseGradients, AllFusionParametersAndStates) {
  std::mt19937_64 rng(18);
  const std::size_t h = 4;
  EncodedBatch batch;
  batch.target = random_matrix(3, h, rng, 0.5, true);
  batch.sources.emplace("en", random_matrix(4, h, rng, 0.5, true));
  batch.sources.emplace("ja", random_matrix(2, h, rng, 0.5, true));
  FusionParams params = FusionParams::init(h, 2, rng);
  params.b_c = random_vector(h, rng, 0.5, true);
  params.gamma = random_vector(h, rng, 1.0, true);
  params.beta = random_vector(h, rng, 0.5, true);
  const Tensor probe = random_matrix(3, 2 * h, rng);
  xlrc::testing::expect_gradients_match(
      [&] { return sum(mul(fuse(batch, params).enhanced, probe)); },
      {batch.target, batch.sources.at("en"), batch.sources.at("ja"), params.w_c, params.b_c, params.gamma,
       params.beta});
}

TEST(Trace, JsonMirrorsFields) {
  std::mt19937_64 rng(19);
  const EncodedBatch batch = random_batch(2, 3, 2, 4, rng);
  const FusionTrace trace = fuse(batch, FusionParams::init(4, 2, rng));
  const nlohmann::json j = trace_to_json("ex-1", trace);
  EXPECT_EQ(j.at("id"), "ex-1");
  EXPECT_TRUE(j.contains("sources"));
  EXPECT_TRUE(j.at("sources").contains("en"));
  EXPECT_EQ(j.at("G_T").at("shape"), (std::vector<std::size_t>{2, 8}));
}
