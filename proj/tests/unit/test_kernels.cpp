#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "polyscore/kernels.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace polyscore;

TEST(Tensor, RejectsZeroSizedDimensions) {
  EXPECT_THROW(TensorD({2, 0}), DimensionError);
  EXPECT_THROW(TensorD({3}, std::vector<double>{1, 2}), DimensionError);
}

TEST(Tensor, ProductOfShapeMatchesData) {
  gen::Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    Shape s{gen::uniform(rng, 1, 5), gen::uniform(rng, 1, 5), gen::uniform(rng, 1, 5)};
    TensorD t(s);
    EXPECT_EQ(t.numel(), s[0] * s[1] * s[2]);
  }
}

TEST(Matmul, IdentityTimesVector) {
  const auto v = TensorD::matrix({{1.5}, {-2}, {7}});
  EXPECT_EQ(kernels::matmul(TensorD::identity(3), v), v);
}

TEST(Matmul, TwoByTwo) {
  const auto c = kernels::matmul(TensorD::matrix({{1, 2}, {3, 4}}), TensorD::matrix({{1}, {1}}));
  EXPECT_EQ(c, TensorD::matrix({{3}, {7}}));
}

TEST(Matmul, MatchesTripleLoop) {
  gen::Rng rng(2);
  const auto a = gen::tensor({5, 7}, rng), b = gen::tensor({7, 3}, rng);
  const auto want = oracle::matmul(oracle::to_mat(a), oracle::to_mat(b));
  const auto got = kernels::matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got.at(i, j), want[i][j], 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    kernels::matmul(TensorD({2, 3}), TensorD({4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, IdentityIsExact) {
  gen::Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto a = gen::tensor({gen::uniform(rng, 1, 9), gen::uniform(rng, 1, 9)}, rng);
    EXPECT_EQ(kernels::matmul(TensorD::identity(a.dim(0)), a), a);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  gen::Rng rng(4);
  const auto a = gen::tensor({4, 6}, rng), b = gen::tensor({5, 6}, rng), c = gen::tensor({4, 3}, rng);
  const auto nt = kernels::matmul_nt(a, b);
  const auto bt = oracle::transpose(oracle::to_mat(b));
  const auto want = oracle::matmul(oracle::to_mat(a), bt);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(nt.at(i, j), want[i][j], 1e-12);
  const auto tn = kernels::matmul_tn(a, c);
  const auto want_tn = oracle::matmul(oracle::transpose(oracle::to_mat(a)), oracle::to_mat(c));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(tn.at(i, j), want_tn[i][j], 1e-12);
}

TEST(Softmax, UniformOnEqualInputs) {
  const auto s = kernels::softmax_rows(TensorD::matrix({{0, 0, 0}}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, NoOverflowOnLargeInputs) {
  const auto s = kernels::softmax_rows(TensorD::matrix({{1000, 0}}));
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
}

TEST(Softmax, ClosedForm) {
  const auto s = kernels::softmax_rows(TensorD::matrix({{1, 2, 3}}));
  const auto want = oracle::softmax({1, 2, 3});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], want[i], 1e-12);
  EXPECT_NEAR(s[0], 0.09003, 1e-5);
  EXPECT_NEAR(s[1], 0.24473, 1e-5);
  EXPECT_NEAR(s[2], 0.66524, 1e-5);
}

TEST(Softmax, NaNIsRejected) {
  EXPECT_THROW(kernels::softmax_rows(TensorD::matrix({{1, std::nan("")}})), NumericError);
}

TEST(Softmax, RowsSumToOneAndArePermutationEquivariant) {
  gen::Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = gen::uniform(rng, 1, 12);
    const auto x = gen::tensor({1, n}, rng, 5.0);
    const auto s = kernels::softmax_rows(x);
    double total = 0;
    for (double v : s.data()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TensorD px({1, n});
    for (std::size_t i = 0; i < n; ++i) px[i] = x[perm[i]];
    const auto ps = kernels::softmax_rows(px);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ps[i], s[perm[i]], 1e-15);
  }
}

TEST(LayerNorm, ConstantVectorGoesToZero) {
  const auto r = kernels::layer_norm_rows(TensorD::matrix({{4, 4, 4, 4}}), TensorD({4}, 1.0), TensorD({4}), 1e-12);
  for (double v : r.out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValues) {
  const auto r = kernels::layer_norm_rows(TensorD::matrix({{1, 3}}), TensorD({2}, 1.0), TensorD({2}), 1e-12);
  EXPECT_NEAR(r.out[0], -1.0, 1e-5);
  EXPECT_NEAR(r.out[1], 1.0, 1e-5);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  gen::Rng rng(6);
  const auto x = gen::tensor({3, 5}, rng);
  const auto bias = gen::tensor({5}, rng);
  const auto r = kernels::layer_norm_rows(x, TensorD({5}, 0.0), bias, 1e-12);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(r.out.at(i, j), bias[j]);
}

TEST(LayerNorm, MatchesOracle) {
  gen::Rng rng(7);
  const auto x = gen::tensor({4, 6}, rng), g = gen::tensor({6}, rng), b = gen::tensor({6}, rng);
  const auto r = kernels::layer_norm_rows(x, g, b, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto want = oracle::layer_norm(std::vector<double>(x.row(i).begin(), x.row(i).end()), oracle::vec(g),
                                         oracle::vec(b), 1e-12);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(r.out.at(i, j), want[j], 1e-12);
  }
}

TEST(Gelu, TanhForm) {
  const auto x = TensorD::matrix({{-3, -0.5, 0, 0.5, 2}});
  const auto y = kernels::gelu(x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], oracle::gelu(x[i]), 1e-15);
}

TEST(Attention, MatchesLoopOracleAndIgnoresPadKeys) {
  gen::Rng rng(8);
  const std::size_t L = 5, H = 4;
  const auto q = gen::tensor({L, H}, rng), k = gen::tensor({L, H}, rng), v = gen::tensor({L, H}, rng);
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0};
  const auto r = kernels::attention(q, k, v, AttentionLayout{1, L, 2, mask});
  const std::size_t dh = 2;
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> logits;
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (std::size_t d = 0; d < dh; ++d) s += q.at(i, h * dh + d) * k.at(j, h * dh + d);
        logits.push_back(s / std::sqrt(2.0));
      }
      const auto w = oracle::softmax(logits);
      for (std::size_t d = 0; d < dh; ++d) {
        double want = 0;
        for (std::size_t j = 0; j < 3; ++j) want += w[j] * v.at(j, h * dh + d);
        EXPECT_NEAR(r.out.at(i, h * dh + d), want, 1e-12);
      }
    }
  }
}

// The OpenMP kernels and the serial references share loop order per output
// element, so results must be identical bit for bit.
TEST(Parallel, MatchesSerialBitForBit) {
  gen::Rng rng(9);
  set_num_threads(4);
  for (int t = 0; t < 10; ++t) {
    const std::size_t m = gen::uniform(rng, 1, 70), k = gen::uniform(rng, 1, 40), n = gen::uniform(rng, 1, 30);
    const auto a = gen::tensor<float>({m, k}, rng), b = gen::tensor<float>({k, n}, rng);
    EXPECT_EQ(kernels::matmul(a, b), kernels::serial::matmul(a, b));
    const auto bt = gen::tensor<float>({n, k}, rng);
    EXPECT_EQ(kernels::matmul_nt(a, bt), kernels::serial::matmul_nt(a, bt));
    const auto c = gen::tensor<float>({m, n}, rng);
    EXPECT_EQ(kernels::matmul_tn(a, c), kernels::serial::matmul_tn(a, c));

    const auto cands = gen::tensor<float>({m, k}, rng), ctx = gen::tensor<float>({n, k}, rng);
    EXPECT_EQ(kernels::poly_scores(cands, ctx), kernels::serial::poly_scores(cands, ctx));
    EXPECT_EQ(kernels::row_scores(cands, ctx.row(0)), kernels::serial::row_scores(cands, ctx.row(0)));

    const std::size_t B = gen::uniform(rng, 1, 3), L = gen::uniform(rng, 1, 9);
    const auto q = gen::tensor<float>({B * L, 4}, rng), kk = gen::tensor<float>({B * L, 4}, rng),
               v = gen::tensor<float>({B * L, 4}, rng);
    std::vector<std::uint8_t> mask(B * L, 1);
    for (std::size_t b = 0; b < B; ++b) mask[b * L + L - 1] = L > 1 ? 0 : 1;
    const AttentionLayout lay{B, L, 2, mask};
    const auto par = kernels::attention(q, kk, v, lay);
    const auto ser = kernels::serial::attention(q, kk, v, lay);
    EXPECT_EQ(par.out, ser.out);
    EXPECT_EQ(par.probs, ser.probs);
  }
  set_num_threads(1);
}

TEST(PolyScores, MatchOracle) {
  gen::Rng rng(10);
  const auto cands = gen::tensor({6, 4}, rng), ctx = gen::tensor({3, 4}, rng);
  const auto got = kernels::poly_scores(cands, ctx);
  for (std::size_t c = 0; c < 6; ++c) {
    const auto want = oracle::poly_score(oracle::to_mat(ctx), std::vector<double>(cands.row(c).begin(), cands.row(c).end()));
    EXPECT_NEAR(got[c], want, 1e-12);
  }
}
