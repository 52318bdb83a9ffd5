#include <gtest/gtest.h>

#include <cmath>

#include "deepr/model.hpp"
#include "deepr/train.hpp"

using namespace deepr;

namespace {

// Independent triple-loop recomputation of the valid convolution + ReLU.
Matrix conv_relu_oracle(const Matrix& x, const ConvKernel& kern) {
  Matrix out(x.rows - kern.k + 1, kern.p);
  for (int t = 0; t < out.rows; ++t)
    for (int f = 0; f < kern.p; ++f) {
      double acc = kern.b[static_cast<std::size_t>(f)];
      for (int j = 0; j < kern.k; ++j)
        for (int c = 0; c < kern.m; ++c) acc += kern.at(f, j, c) * x.at(t + j, c);
      out.at(t, f) = std::max(0.0, acc);
    }
  return out;
}

ModelParams random_params(Rng& rng, int vocab_size, int m, std::vector<int> widths, int p) {
  ModelConfig cfg;
  cfg.m = m;
  cfg.widths = std::move(widths);
  cfg.filters_per_width = p;
  return init_params(cfg, vocab_size, rng());
}

std::vector<int> random_tokens(Rng& rng, int vocab_size, int len) {
  std::vector<int> t(static_cast<std::size_t>(len));
  for (auto& id : t) id = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(vocab_size)));
  return t;
}

}  // namespace

TEST(Embed, LookupDeterminism) {
  Rng rng(1);
  ModelParams params = random_params(rng, 6, 3, {2}, 1);
  Matrix x = embed({4, 4}, params);
  ASSERT_EQ(x.rows, 2);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(x.at(0, c), x.at(1, c));
}

TEST(Embed, ZeroTableGivesZeroMatrix) {
  ModelParams params;
  params.vocab_size = 4;
  params.m = 3;
  params.embedding = Matrix(5, 3);
  Matrix x = embed({0, 1, 2, 3}, params);
  for (double v : x.data) EXPECT_EQ(v, 0.0);
}

TEST(Embed, SingleTokenRow) {
  Rng rng(2);
  ModelParams params = random_params(rng, 4, 3, {2}, 1);
  Matrix x = embed({2}, params);
  ASSERT_EQ(x.rows, 1);
  ASSERT_EQ(x.cols, 3);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(x.at(0, c), params.embedding.at(2, c));
}

TEST(ConvolveRelu, ZeroKernelGivesZeros) {
  Matrix x(5, 2, 1.0);
  ConvKernel kern(3, 2, 2);
  Matrix pre, post;
  convolve_relu(x, kern, pre, post);
  ASSERT_EQ(post.rows, 4);
  for (double v : post.data) EXPECT_EQ(v, 0.0);
}

TEST(ConvolveRelu, BiasOnlyReluKillsNegative) {
  Matrix x(4, 2, 0.5);
  ConvKernel kern(2, 3, 2);
  kern.b = {1.0, -1.0};
  Matrix pre, post;
  convolve_relu(x, kern, pre, post);
  ASSERT_EQ(post.rows, 2);
  for (int t = 0; t < post.rows; ++t) {
    EXPECT_EQ(post.at(t, 0), 1.0);
    EXPECT_EQ(post.at(t, 1), 0.0);
    EXPECT_EQ(pre.at(t, 1), -1.0);
  }
}

TEST(ConvolveRelu, MatchesTripleLoopOracle) {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    int m = 1 + static_cast<int>(uniform_index(rng, 6));
    int k = 1 + static_cast<int>(uniform_index(rng, 4));
    int p = 1 + static_cast<int>(uniform_index(rng, 5));
    int t_len = k + static_cast<int>(uniform_index(rng, 8));
    Matrix x(t_len, m);
    for (double& v : x.data) v = uniform_range(rng, -2.0, 2.0);
    ConvKernel kern(p, k, m);
    for (double& v : kern.w) v = uniform_range(rng, -2.0, 2.0);
    for (double& v : kern.b) v = uniform_range(rng, -1.0, 1.0);

    Matrix pre, post;
    convolve_relu(x, kern, pre, post);
    Matrix expected = conv_relu_oracle(x, kern);
    ASSERT_EQ(post.rows, expected.rows);
    for (std::size_t i = 0; i < post.data.size(); ++i) EXPECT_NEAR(post.data[i], expected.data[i], 1e-10);
  }
}

TEST(MaxPool, SingleRow) {
  Matrix r(1, 3);
  r.at(0, 0) = 1.0;
  r.at(0, 1) = 2.0;
  r.at(0, 2) = 0.5;
  std::vector<double> pooled;
  std::vector<int> argmax;
  max_pool(r, pooled, argmax);
  EXPECT_EQ(pooled, (std::vector<double>{1.0, 2.0, 0.5}));
  EXPECT_EQ(argmax, (std::vector<int>{0, 0, 0}));
}

TEST(MaxPool, DuplicateRowUnchangedAndTieBreaksLow) {
  Matrix r(2, 2);
  r.at(0, 0) = 1.0;
  r.at(0, 1) = 5.0;
  r.at(1, 0) = 1.0;
  r.at(1, 1) = 5.0;
  std::vector<double> pooled;
  std::vector<int> argmax;
  max_pool(r, pooled, argmax);
  EXPECT_EQ(pooled, (std::vector<double>{1.0, 5.0}));
  EXPECT_EQ(argmax, (std::vector<int>{0, 0}));
}

TEST(MaxPool, SpecExample) {
  Matrix r(2, 2);
  r.at(0, 0) = 1.0;
  r.at(0, 1) = 5.0;
  r.at(1, 0) = 3.0;
  r.at(1, 1) = 2.0;
  std::vector<double> pooled;
  std::vector<int> argmax;
  max_pool(r, pooled, argmax);
  EXPECT_EQ(pooled, (std::vector<double>{3.0, 5.0}));
  EXPECT_EQ(argmax, (std::vector<int>{1, 0}));
}

TEST(MaxPool, DominanceProperty) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    int rows = 1 + static_cast<int>(uniform_index(rng, 10));
    int cols = 1 + static_cast<int>(uniform_index(rng, 6));
    Matrix r(rows, cols);
    for (double& v : r.data) v = uniform_range(rng, -3.0, 3.0);
    std::vector<double> pooled;
    std::vector<int> argmax;
    max_pool(r, pooled, argmax);
    for (int f = 0; f < cols; ++f) {
      for (int t = 0; t < rows; ++t) EXPECT_GE(pooled[static_cast<std::size_t>(f)], r.at(t, f));
      EXPECT_EQ(pooled[static_cast<std::size_t>(f)], r.at(argmax[static_cast<std::size_t>(f)], f));
    }
  }
}

TEST(Forward, AllZeroParamsGiveHalf) {
  ModelParams params;
  params.vocab_size = 4;
  params.m = 2;
  params.widths = {2};
  params.filters_per_width = 3;
  params.embedding = Matrix(5, 2);
  params.kernels.emplace_back(3, 2, 2);
  params.classifier_w.assign(3, 0.0);
  ForwardTrace trace = forward(std::vector<int>{0, 1, 2}, params);
  EXPECT_DOUBLE_EQ(trace.probability, 0.5);
}

TEST(Forward, EmptySentenceThrows) {
  ModelParams params;
  params.vocab_size = 2;
  params.m = 2;
  params.widths = {2};
  params.filters_per_width = 1;
  params.embedding = Matrix(3, 2);
  params.kernels.emplace_back(1, 2, 2);
  params.classifier_w.assign(1, 0.0);
  EXPECT_THROW(forward(std::vector<int>{}, params), std::runtime_error);
}

TEST(Forward, SingleWindowPoolsThatRow) {
  Rng rng(3);
  ModelParams params = random_params(rng, 8, 3, {3}, 2);
  auto tokens = random_tokens(rng, 8, 3);  // T == k
  ForwardTrace trace = forward(tokens, params);
  ASSERT_EQ(trace.per_width[0].post.rows, 1);
  for (int f = 0; f < 2; ++f) {
    EXPECT_EQ(trace.pooled[static_cast<std::size_t>(f)], trace.per_width[0].post.at(0, f));
    EXPECT_EQ(trace.per_width[0].argmax[static_cast<std::size_t>(f)], 0);
  }
}

// Fixed tiny configuration checked against independent scalar arithmetic.
TEST(Forward, TinyHandComputedOracle) {
  ModelParams params;
  params.vocab_size = 4;
  params.m = 2;
  params.widths = {2};
  params.filters_per_width = 1;
  params.embedding = Matrix(5, 2);
  params.embedding.at(0, 0) = 1.0;  params.embedding.at(0, 1) = 0.0;
  params.embedding.at(2, 0) = 1.0;  params.embedding.at(2, 1) = 1.0;
  params.embedding.at(3, 0) = -1.0; params.embedding.at(3, 1) = 2.0;
  ConvKernel kern(1, 2, 2);
  kern.at(0, 0, 0) = 0.5;
  kern.at(0, 0, 1) = -0.25;
  kern.at(0, 1, 0) = 0.25;
  kern.at(0, 1, 1) = 0.5;
  kern.b[0] = 0.1;
  params.kernels.push_back(kern);
  params.classifier_w = {2.0};
  params.classifier_b = -0.5;

  ForwardTrace trace = forward(std::vector<int>{0, 2, 3}, params);

  double z0 = 0.1 + 0.5 * 1.0 + (-0.25) * 0.0 + 0.25 * 1.0 + 0.5 * 1.0;   // 1.35
  double z1 = 0.1 + 0.5 * 1.0 + (-0.25) * 1.0 + 0.25 * (-1.0) + 0.5 * 2.0; // 1.10
  ASSERT_EQ(trace.per_width[0].post.rows, 2);
  EXPECT_NEAR(trace.per_width[0].post.at(0, 0), z0, 1e-15);
  EXPECT_NEAR(trace.per_width[0].post.at(1, 0), z1, 1e-15);
  EXPECT_NEAR(trace.pooled[0], 1.35, 1e-15);
  double logit = 2.0 * 1.35 - 0.5;
  EXPECT_NEAR(trace.logit, logit, 1e-15);
  EXPECT_NEAR(trace.probability, 1.0 / (1.0 + std::exp(-logit)), 1e-15);
}

TEST(Forward, ShortSentencePadsWithFrozenZeroRow) {
  Rng rng(4);
  ModelParams params = random_params(rng, 6, 3, {2, 4}, 2);
  ForwardTrace trace = forward(std::vector<int>{1}, params);
  ASSERT_EQ(trace.padded_tokens.size(), 4u);
  EXPECT_EQ(trace.padded_tokens[0], params.pad_id());
  EXPECT_EQ(trace.padded_tokens[1], params.pad_id());
  EXPECT_EQ(trace.padded_tokens[2], params.pad_id());
  EXPECT_EQ(trace.padded_tokens[3], 1);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(trace.embedded.at(0, c), 0.0);
}

TEST(Forward, ReluNonNegativityProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    int vocab = 3 + static_cast<int>(uniform_index(rng, 20));
    ModelParams params = random_params(rng, vocab, 1 + static_cast<int>(uniform_index(rng, 5)),
                                       {2, 3}, 1 + static_cast<int>(uniform_index(rng, 3)));
    auto tokens = random_tokens(rng, vocab, 1 + static_cast<int>(uniform_index(rng, 10)));
    ForwardTrace trace = forward(tokens, params);
    for (const auto& wt : trace.per_width)
      for (double v : wt.post.data) EXPECT_GE(v, 0.0);
    for (double v : trace.pooled) EXPECT_GE(v, 0.0);
  }
}

TEST(Forward, SuffixMonotonePooling) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    int vocab = 5 + static_cast<int>(uniform_index(rng, 20));
    ModelParams params = random_params(rng, vocab, 3, {3}, 2);
    auto tokens = random_tokens(rng, vocab, 3 + static_cast<int>(uniform_index(rng, 8)));
    ForwardTrace base = forward(tokens, params);
    auto extended = tokens;
    auto extra = random_tokens(rng, vocab, 1 + static_cast<int>(uniform_index(rng, 4)));
    extended.insert(extended.end(), extra.begin(), extra.end());
    ForwardTrace ext = forward(extended, params);
    for (std::size_t i = 0; i < base.pooled.size(); ++i) EXPECT_GE(ext.pooled[i] + 1e-12, base.pooled[i]);
  }
}

TEST(Forward, WidthIndependence) {
  Rng rng(8);
  ModelParams params = random_params(rng, 10, 4, {2, 3, 4}, 3);
  auto tokens = random_tokens(rng, 10, 9);
  ForwardTrace base = forward(tokens, params);

  ModelParams zeroed = params;
  for (double& v : zeroed.kernels[1].w) v = 0.0;
  for (double& v : zeroed.kernels[1].b) v = 0.0;
  ForwardTrace after = forward(tokens, zeroed);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(after.pooled[static_cast<std::size_t>(f)], base.pooled[static_cast<std::size_t>(f)]);
    EXPECT_EQ(after.pooled[static_cast<std::size_t>(6 + f)], base.pooled[static_cast<std::size_t>(6 + f)]);
    EXPECT_EQ(after.pooled[static_cast<std::size_t>(3 + f)], 0.0);
  }
}

TEST(Forward, FilterPermutationEquivariance) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    int p = 2 + static_cast<int>(uniform_index(rng, 3));
    ModelParams params = random_params(rng, 8, 3, {2}, p);
    auto tokens = random_tokens(rng, 8, 6);
    ForwardTrace base = forward(tokens, params);

    std::vector<int> perm(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) perm[static_cast<std::size_t>(i)] = i;
    shuffle_vec(perm, rng);

    ModelParams permuted = params;
    for (int f = 0; f < p; ++f) {
      int src = perm[static_cast<std::size_t>(f)];
      permuted.kernels[0].b[static_cast<std::size_t>(f)] = params.kernels[0].b[static_cast<std::size_t>(src)];
      permuted.classifier_w[static_cast<std::size_t>(f)] = params.classifier_w[static_cast<std::size_t>(src)];
      for (int j = 0; j < 2; ++j)
        for (int c = 0; c < 3; ++c) permuted.kernels[0].at(f, j, c) = params.kernels[0].at(src, j, c);
    }
    ForwardTrace after = forward(tokens, permuted);
    for (int f = 0; f < p; ++f)
      EXPECT_EQ(after.pooled[static_cast<std::size_t>(f)],
                base.pooled[static_cast<std::size_t>(perm[static_cast<std::size_t>(f)])]);
    EXPECT_DOUBLE_EQ(after.probability, base.probability);
  }
}
