#include <gtest/gtest.h>

#include <cmath>

#include "polyscore/model.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace polyscore;

namespace {

TransformerOutput<double> output_of(const TensorD& h, std::vector<std::uint8_t> mask = {}) {
  if (mask.empty()) mask.assign(h.rows(), 1);
  return {h, std::move(mask)};
}

std::span<const double> as_span(const TensorD& t) { return {t.data().data(), t.numel()}; }

TensorD rows_equal(std::size_t n, const std::vector<double>& v) {
  TensorD t({n, v.size()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < v.size(); ++d) t.at(i, d) = v[d];
  return t;
}

}  // namespace

TEST(Reduce, SingleRowIsFirstOutput) {
  gen::Rng rng(1);
  const auto h = gen::tensor({1, 6}, rng);
  for (auto r : {Reduction{ReductionKind::FirstOutput, 1}, Reduction{ReductionKind::AvgAll, 1},
                 Reduction{ReductionKind::AvgFirstM, 3}})
    EXPECT_EQ(reduce(output_of(h), r), h.reshaped({6}));
}

TEST(Reduce, EqualRowsGiveThatRow) {
  const std::vector<double> v{0.5, -1.25, 2};
  const auto h = rows_equal(5, v);
  for (auto r : {Reduction{ReductionKind::FirstOutput, 1}, Reduction{ReductionKind::AvgAll, 1},
                 Reduction{ReductionKind::AvgFirstM, 3}}) {
    const auto y = reduce(output_of(h), r);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(y[d], v[d], 1e-15);
  }
}

TEST(Reduce, AvgFirstMIsMeanOfLeadingRows) {
  gen::Rng rng(2);
  const auto h = gen::tensor({5, 4}, rng);
  const auto y = reduce(output_of(h), Reduction{ReductionKind::AvgFirstM, 3});
  for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(y[d], (h.at(0, d) + h.at(1, d) + h.at(2, d)) / 3.0, 1e-15);
}

TEST(Reduce, AveragesSkipPadRows) {
  gen::Rng rng(3);
  const auto h = gen::tensor({4, 3}, rng);
  const auto y = reduce(output_of(h, {1, 1, 0, 0}), Reduction{ReductionKind::AvgAll, 1});
  for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(y[d], (h.at(0, d) + h.at(1, d)) / 2.0, 1e-15);
}

TEST(BiScore, OrthonormalBasis) {
  const std::vector<double> e1{1, 0, 0}, e2{0, 1, 0};
  EXPECT_EQ(bi_score<double>(e1, e1), 1.0);
  EXPECT_EQ(bi_score<double>(e1, e2), 0.0);
}

TEST(BiScore, SymmetricAndMatchesSumOracle) {
  gen::Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto a = gen::tensor({7}, rng), b = gen::tensor({7}, rng);
    EXPECT_EQ(bi_score(as_span(a), as_span(b)), bi_score(as_span(b), as_span(a)));
    EXPECT_NEAR(bi_score(as_span(a), as_span(b)), oracle::dot(oracle::vec(a), oracle::vec(b)), 1e-12);
  }
}

TEST(BiScore, PositiveScalingPreservesRanking) {
  gen::Rng rng(5);
  const auto ctx = gen::tensor({6}, rng);
  const auto cands = gen::tensor({10, 6}, rng);
  std::vector<double> a, b;
  for (std::size_t c = 0; c < 10; ++c) {
    const auto row = cands.row(c);
    std::vector<double> scaled(row.begin(), row.end());
    for (double& x : scaled) x *= 3.7;
    a.push_back(bi_score<double>(as_span(ctx), row));
    b.push_back(bi_score<double>(as_span(ctx), scaled));
  }
  std::vector<std::uint64_t> ids(10);
  for (std::size_t i = 0; i < 10; ++i) ids[i] = i;
  EXPECT_EQ(oracle::brute_force_rank(ids, a, 0).order, oracle::brute_force_rank(ids, b, 0).order);
}

TEST(BiScore, LengthMismatch) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(bi_score<double>(a, b), DimensionError);
}

TEST(CrossScore, ZeroWeightGivesZero) {
  gen::Rng rng(6);
  const auto cfg = gen::desk_config(20);
  const auto m = init_model(cfg, parse_head_spec("cross"), 6);
  const auto v = gen::vocab(16);
  CrossHead<double> head{TensorD({cfg.hidden, 1}, 0.0)};
  for (int t = 0; t < 10; ++t)
    EXPECT_EQ(cross_score(encode_pair(gen::sentence(rng, v, 5), gen::sentence(rng, v, 3), v, 64), m.params, cfg, head), 0.0);
}

TEST(CrossScore, HandTracedHiddenTwo) {
  // Hidden 2: every layer norm maps a row to +-(1,-1). Attention and FFN are
  // set up so h1 is the [S] row after the last norm's gain and bias.
  ModelConfig cfg = gen::desk_config(6);
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.hidden = 2;
  cfg.ffn_hidden = 2;
  cfg.max_positions = 8;
  ParamSet<double> ps;
  gen::Rng rng(7);
  init_encoder_params(ps, cfg, "encoder", rng);
  for (auto& [_, t] : ps)
    for (double& x : t.data()) x = 0.0;
  auto& tok = ps["encoder.embeddings.token"];
  tok.at(Vocabulary::kSep, 0) = 1;  // [S] -> (1, -1)
  tok.at(4, 1) = 1;                 // a -> (-1, 1)
  tok.at(5, 1) = 2;                 // b -> (-1, 1)
  ps["encoder.embeddings.norm.gain"] = TensorD({2}, 1.0);
  ps["encoder.layer.0.attention.value.weight"] = TensorD::identity(2);
  ps["encoder.layer.0.attention.output.weight"] = TensorD::identity(2);
  ps["encoder.layer.0.attention.norm.gain"] = TensorD({2}, 1.0);
  ps["encoder.layer.0.ffn.norm.gain"] = TensorD::matrix({{0.5, 2}}).reshaped({2});
  ps["encoder.layer.0.ffn.norm.bias"] = TensorD::matrix({{0.1, -0.2}}).reshaped({2});
  const auto v = Vocabulary::from_tokens({"a", "b"});
  const auto pair = encode_pair("a a", "b", v, 8);  // [S] a a [S] b
  // Uniform attention: mean row (-0.2, 0.2); [S] + mean = (0.8, -0.8) -> (1, -1).
  // FFN adds 0; final norm: (0.5 * 1 + 0.1, 2 * -1 - 0.2) = (0.6, -2.2).
  CrossHead<double> head{TensorD::matrix({{2}, {1}})};
  EXPECT_NEAR(cross_score(pair, ps, cfg, head), 2 * 0.6 - 2.2, 1e-9);
}

TEST(CrossScore, NotBagOfWords) {
  gen::Rng rng(8);
  const auto cfg = gen::desk_config(20);
  Model m = init_model(cfg, parse_head_spec("cross"), 8);
  gen::jitter(m, rng, 0.3);
  CrossHead<double> head{m.params.at(names::kCrossWeight)};
  const auto v = gen::vocab(16);
  bool differs = false;
  for (int t = 0; t < 20 && !differs; ++t) {
    auto words = tokenize(gen::sentence(rng, v, 4));
    const auto join = [](const std::vector<std::string>& ws) {
      std::string s;
      for (const auto& w : ws) s += w + " ";
      return s;
    };
    const auto ctx = gen::sentence(rng, v, 5);
    const double a = cross_score(encode_pair(ctx, join(words), v, 64), m.params, cfg, head);
    std::reverse(words.begin(), words.end());
    const double b = cross_score(encode_pair(ctx, join(words), v, 64), m.params, cfg, head);
    differs = std::abs(a - b) > 1e-9;
  }
  EXPECT_TRUE(differs);
}

TEST(PolyVectors, LearntCodesOnEqualRowsReturnThatRow) {
  gen::Rng rng(9);
  const std::vector<double> v{1.5, -0.5, 0.25, 2};
  PolyHeadState<double> st{PolyVariant::LearntCodes, 5, gen::tensor({5, 4}, rng, 3.0)};
  const auto y = poly_context_vectors(output_of(rows_equal(6, v)), st);
  ASSERT_EQ(y.shape(), (Shape{5, 4}));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(y.at(i, d), v[d], 1e-12);
}

TEST(PolyVectors, RowSelectionVariants) {
  gen::Rng rng(10);
  const auto h = gen::tensor({5, 3}, rng);
  const auto out = output_of(h, {1, 1, 1, 1, 0});
  auto rows_of = [&](PolyVariant var, std::size_t m) { return poly_context_vectors(out, PolyHeadState<double>{var, m, {}}); };
  const auto first = rows_of(PolyVariant::FirstM, 10);
  ASSERT_EQ(first.rows(), 4u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(first.at(i, d), h.at(i, d));
  const auto last = rows_of(PolyVariant::LastM, 2);
  ASSERT_EQ(last.rows(), 2u);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(last.at(0, d), h.at(2, d));
    EXPECT_EQ(last.at(1, d), h.at(3, d));
  }
  const auto plus = rows_of(PolyVariant::LastMPlusH1, 4);
  ASSERT_EQ(plus.rows(), 5u);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(plus.at(0, d), h.at(0, d));
    EXPECT_EQ(plus.at(1, d), h.at(0, d));  // no dedup
  }
  EXPECT_EQ(poly_vector_count(PolyConfig{PolyVariant::LastMPlusH1, 4}, 4), 5u);
  EXPECT_THROW(rows_of(PolyVariant::FirstM, 0), ContractError);
}

TEST(PolyVectors, CodeAttentionWeightsAreClosedFormSoftmax) {
  // Real rows are scaled basis vectors, so y's coordinates are the weights
  // times the scales. The pad row lives in its own dimension.
  const std::vector<double> scale{1.0, 2.0, 0.5};
  TensorD h({4, 4}, 0.0);
  for (std::size_t j = 0; j < 3; ++j) h.at(j, j) = scale[j];
  h.at(3, 3) = 100.0;
  TensorD codes = TensorD::matrix({{1.3, 0, 0, 0}, {0.2, -0.7, 1.1, 5}});
  const auto y = poly_context_vectors(output_of(h, {1, 1, 1, 0}), PolyHeadState<double>{PolyVariant::LearntCodes, 2, codes});
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> logits;
    for (std::size_t j = 0; j < 3; ++j) logits.push_back(codes.at(i, j) * scale[j]);
    const auto w = oracle::softmax(logits);
    double total = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double got = y.at(i, j) / scale[j];
      EXPECT_NEAR(got, w[j], 1e-12);
      EXPECT_GE(got, 0.0);
      total += got;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_EQ(y.at(i, 3), 0.0);
  }
}

TEST(PolyScore, SingleVectorIsDotProductExactly) {
  gen::Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto c = gen::tensor({1, 8}, rng), y = gen::tensor({8}, rng);
    EXPECT_EQ(poly_score(c, as_span(y)), bi_score(c.row(0), as_span(y)));
  }
}

TEST(PolyScore, EqualVectorsGiveDot) {
  const std::vector<double> v{0.5, 1, -2};
  const auto y = TensorD::matrix({{3, -1, 0.5}}).reshaped({3});
  EXPECT_NEAR(poly_score(rows_equal(4, v), as_span(y)), 0.5 * 3 - 1 - 1, 1e-12);
}

TEST(PolyScore, TwoWayMixtureByHand) {
  // c.v1 = 1, c.v2 = 0: weights e/(e+1), 1/(e+1).
  const auto ctx = TensorD::matrix({{1, 0}, {0, 2}});
  const std::vector<double> c{1, 0};
  const double w1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(poly_score(ctx, std::span<const double>(c)), w1 * 1.0, 1e-12);
  gen::Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto cv = gen::tensor({2, 5}, rng), y = gen::tensor({5}, rng);
    EXPECT_NEAR(poly_score(cv, as_span(y)), oracle::poly_score(oracle::to_mat(cv), oracle::vec(y)), 1e-12);
  }
}

TEST(Degeneracy, PolyFirstOneEqualsBiFirstOutput) {
  gen::Rng rng(13);
  const auto v = gen::vocab(40);
  for (int t = 0; t < 100; ++t) {
    ModelConfig cfg = gen::desk_config(v.size());
    Model bi = init_model(cfg, parse_head_spec("bi"), 1000 + t);
    gen::jitter(bi, rng, 0.2);
    Model poly = bi;
    poly.head = parse_head_spec("poly:first:1");
    const InferenceModel<double> ib(bi, v), ip(poly, v);
    const auto ctx = gen::sentence(rng, v, gen::uniform(rng, 1, 20));
    std::vector<std::string> cands;
    for (int c = 0; c < 3; ++c) cands.push_back(gen::sentence(rng, v, gen::uniform(rng, 0, 8)));
    const auto yb = ib.embed_candidates(cands), yp = ip.embed_candidates(cands);
    EXPECT_EQ(yb, yp);
    const auto cb = ib.context_vectors(ctx), cp = ip.context_vectors(ctx);
    for (std::size_t c = 0; c < cands.size(); ++c) {
      EXPECT_NEAR(bi_score(cb.row(0), yb.row(c)), poly_score(cp, yp.row(c)), 1e-9);
    }
  }
}
