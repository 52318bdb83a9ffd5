// Forward computation: embed -> per-width convolution + ReLU -> max-over-time
// pooling -> logistic unit. The full trace is kept so inspection and
// backpropagation read the exact values the prediction used.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepr/matrix.hpp"
#include "deepr/sequencer.hpp"

namespace deepr {

struct ModelConfig {
  int m = 100;                       // embedding dimension
  std::vector<int> widths = {3, 4, 5};
  int filters_per_width = 100;
};

// One kernel set per motif width. w is laid out [filter][offset][channel] so
// each (filter, offset) slice is a contiguous m-vector.
struct ConvKernel {
  int p = 0;  // filters
  int k = 0;  // width
  int m = 0;  // channels
  std::vector<double> w;
  std::vector<double> b;

  ConvKernel() = default;
  ConvKernel(int p_, int k_, int m_)
      : p(p_), k(k_), m(m_), w(static_cast<std::size_t>(p_) * k_ * m_, 0.0), b(static_cast<std::size_t>(p_), 0.0) {}

  double& at(int f, int j, int c) { return w[(static_cast<std::size_t>(f) * k + j) * m + c]; }
  double at(int f, int j, int c) const { return w[(static_cast<std::size_t>(f) * k + j) * m + c]; }
  const double* slice(int f, int j) const { return w.data() + (static_cast<std::size_t>(f) * k + j) * m; }
  double* slice(int f, int j) { return w.data() + (static_cast<std::size_t>(f) * k + j) * m; }
};

// Embedding has one extra row past the vocabulary for PAD; that row is frozen
// at zero so left-padding short sentences contributes nothing.
struct ModelParams {
  int vocab_size = 0;  // V; PAD occupies row V of the embedding
  int m = 0;
  std::vector<int> widths;
  int filters_per_width = 0;
  Matrix embedding;  // (V+1) x m
  std::vector<ConvKernel> kernels;  // aligned with widths
  std::vector<double> classifier_w;  // p * |widths|
  double classifier_b = 0.0;

  int pad_id() const { return vocab_size; }
  int pooled_dim() const { return filters_per_width * static_cast<int>(widths.size()); }
};

struct WidthTrace {
  int width = 0;
  Matrix pre;   // (T-k+1) x p, before ReLU
  Matrix post;  // after ReLU
  std::vector<int> argmax;  // per filter, smallest position attaining the max
};

struct ForwardTrace {
  std::vector<int> padded_tokens;  // ids actually convolved, PAD included
  Matrix embedded;                 // T x m
  std::vector<WidthTrace> per_width;
  std::vector<double> pooled;      // concatenated in widths order
  double logit = 0.0;
  double probability = 0.5;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix embed(const std::vector<int>& tokens, const ModelParams& params) {
  Matrix x(static_cast<int>(tokens.size()), params.m);
  for (int t = 0; t < x.rows; ++t) {
    int id = tokens[static_cast<std::size_t>(t)];
    if (id < 0 || id > params.vocab_size) throw std::out_of_range("embed: token id " + std::to_string(id));
    const double* src = params.embedding.row(id);
    double* dst = x.row(t);
    for (int c = 0; c < params.m; ++c) dst[c] = src[c];
  }
  return x;
}

// Valid convolution: row t = ReLU(b + sum_j W[:,j,:] . X[t+j]). No implicit
// padding here; callers guarantee T >= k.
inline void convolve_relu(const Matrix& x, const ConvKernel& kernel, Matrix& pre, Matrix& post) {
  const int out_rows = x.rows - kernel.k + 1;
  if (out_rows < 1) throw std::invalid_argument("convolve_relu: T < k");
  pre = Matrix(out_rows, kernel.p);
  post = Matrix(out_rows, kernel.p);
  for (int t = 0; t < out_rows; ++t) {
    for (int f = 0; f < kernel.p; ++f) {
      double acc = kernel.b[static_cast<std::size_t>(f)];
      for (int j = 0; j < kernel.k; ++j) acc += dot(kernel.slice(f, j), x.row(t + j), kernel.m);
      pre.at(t, f) = acc;
      post.at(t, f) = acc > 0.0 ? acc : 0.0;
    }
  }
}

// Element-wise max over positions; ties go to the smallest position so
// inspection is deterministic.
inline void max_pool(const Matrix& responses, std::vector<double>& pooled, std::vector<int>& argmax) {
  if (responses.rows < 1) throw std::invalid_argument("max_pool: empty response matrix");
  pooled.assign(static_cast<std::size_t>(responses.cols), 0.0);
  argmax.assign(static_cast<std::size_t>(responses.cols), 0);
  for (int f = 0; f < responses.cols; ++f) {
    double best = responses.at(0, f);
    int best_t = 0;
    for (int t = 1; t < responses.rows; ++t) {
      if (responses.at(t, f) > best) {
        best = responses.at(t, f);
        best_t = t;
      }
    }
    pooled[static_cast<std::size_t>(f)] = best;
    argmax[static_cast<std::size_t>(f)] = best_t;
  }
}

inline ForwardTrace forward(const std::vector<int>& tokens, const ModelParams& params) {
  if (tokens.empty()) throw std::runtime_error("empty sentence");

  ForwardTrace trace;
  int max_width = 1;
  for (int k : params.widths) max_width = std::max(max_width, k);
  // left-pad short sentences with the zero-embedded PAD token
  if (static_cast<int>(tokens.size()) < max_width)
    trace.padded_tokens.assign(static_cast<std::size_t>(max_width) - tokens.size(), params.pad_id());
  trace.padded_tokens.insert(trace.padded_tokens.end(), tokens.begin(), tokens.end());

  trace.embedded = embed(trace.padded_tokens, params);
  trace.pooled.reserve(static_cast<std::size_t>(params.pooled_dim()));
  for (std::size_t wi = 0; wi < params.widths.size(); ++wi) {
    WidthTrace wt;
    wt.width = params.widths[wi];
    convolve_relu(trace.embedded, params.kernels[wi], wt.pre, wt.post);
    std::vector<double> pooled;
    max_pool(wt.post, pooled, wt.argmax);
    trace.pooled.insert(trace.pooled.end(), pooled.begin(), pooled.end());
    trace.per_width.push_back(std::move(wt));
  }

  trace.logit = params.classifier_b +
                dot(params.classifier_w.data(), trace.pooled.data(), static_cast<int>(trace.pooled.size()));
  trace.probability = sigmoid(trace.logit);
  return trace;
}

inline ForwardTrace forward(const Sentence& sentence, const ModelParams& params) {
  return forward(sentence.tokens, params);
}

}  // namespace deepr
