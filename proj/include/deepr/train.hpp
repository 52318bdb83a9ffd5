// Cross-entropy training with hand-derived gradients and mini-batch SGD.
// Max-pool gradient flows only to the argmax position, ReLU only through
// positive pre-activations, and the PAD embedding row never moves.
//
// Also: skip-gram-with-negative-sampling pretraining for the embedding
// matrix, usable as a warm start.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepr/model.hpp"
#include "deepr/rng.hpp"
#include "deepr/vocab.hpp"

namespace deepr {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double l2_lambda = 1.0;
  double learning_rate = 0.05;
  double lr_decay = 1.0;  // multiplicative per epoch
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;  // global L2 norm
};

struct Gradients {
  Matrix embedding;
  std::vector<ConvKernel> kernels;
  std::vector<double> classifier_w;
  double classifier_b = 0.0;
};

struct PretrainConfig {
  int window = 5;
  int negatives = 5;
  int dims = 100;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

using Batch = std::vector<const Sentence*>;

inline Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.embedding = Matrix(params.embedding.rows, params.embedding.cols);
  for (const auto& kern : params.kernels) g.kernels.emplace_back(kern.p, kern.k, kern.m);
  g.classifier_w.assign(params.classifier_w.size(), 0.0);
  return g;
}

namespace detail {

constexpr double kProbEps = 1e-12;

inline double bce(double prob, int label) {
  double p = std::min(std::max(prob, kProbEps), 1.0 - kProbEps);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

// (lambda/2) * ||weights||^2 over kernels, classifier weights and embedding
// rows except PAD; biases exempt.
inline double l2_penalty(const ModelParams& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double sq = 0.0;
  for (int r = 0; r < params.vocab_size; ++r) {  // skips the PAD row
    const double* row = params.embedding.row(r);
    for (int c = 0; c < params.m; ++c) sq += row[c] * row[c];
  }
  for (const auto& kern : params.kernels)
    for (double v : kern.w) sq += v * v;
  for (double v : params.classifier_w) sq += v * v;
  return 0.5 * lambda * sq;
}

inline void add_l2_gradient(const ModelParams& params, double lambda, Gradients& g) {
  if (lambda == 0.0) return;
  for (int r = 0; r < params.vocab_size; ++r) {
    const double* row = params.embedding.row(r);
    double* grow = g.embedding.row(r);
    for (int c = 0; c < params.m; ++c) grow[c] += lambda * row[c];
  }
  for (std::size_t wi = 0; wi < params.kernels.size(); ++wi)
    for (std::size_t i = 0; i < params.kernels[wi].w.size(); ++i)
      g.kernels[wi].w[i] += lambda * params.kernels[wi].w[i];
  for (std::size_t i = 0; i < params.classifier_w.size(); ++i)
    g.classifier_w[i] += lambda * params.classifier_w[i];
}

}  // namespace detail

// Mean binary cross-entropy over the batch plus the L2 penalty.
inline double loss(const Batch& batch, const ModelParams& params, const TrainConfig& cfg) {
  double data = 0.0;
  for (const Sentence* s : batch) {
    if (!s->label || (*s->label != 0 && *s->label != 1))
      throw std::runtime_error("loss: unlabeled sentence " + s->patient_id);
    data += detail::bce(forward(*s, params).probability, *s->label);
  }
  return data / static_cast<double>(batch.size()) + detail::l2_penalty(params, cfg.l2_lambda);
}

// Exact analytic gradients of `loss` for every parameter.
inline Gradients backward(const Batch& batch, const ModelParams& params, const TrainConfig& cfg,
                          double* out_loss = nullptr) {
  Gradients g = zero_gradients(params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double data_loss = 0.0;

  for (const Sentence* s : batch) {
    if (!s->label || (*s->label != 0 && *s->label != 1))
      throw std::runtime_error("backward: unlabeled sentence " + s->patient_id);
    ForwardTrace trace = forward(*s, params);
    data_loss += detail::bce(trace.probability, *s->label);

    // d(mean BCE)/d(logit); the sigmoid and log cancel
    double dlogit = (trace.probability - static_cast<double>(*s->label)) * inv_b;
    g.classifier_b += dlogit;

    Matrix dx(trace.embedded.rows, trace.embedded.cols);
    for (std::size_t wi = 0; wi < params.widths.size(); ++wi) {
      const WidthTrace& wt = trace.per_width[wi];
      const ConvKernel& kern = params.kernels[wi];
      ConvKernel& gk = g.kernels[wi];
      const int offset = static_cast<int>(wi) * params.filters_per_width;
      for (int f = 0; f < kern.p; ++f) {
        const int q = offset + f;
        g.classifier_w[static_cast<std::size_t>(q)] += dlogit * trace.pooled[static_cast<std::size_t>(q)];
        // pooled gradient routes to the argmax position only, and stops
        // unless the pre-activation was strictly positive
        const int t = wt.argmax[static_cast<std::size_t>(f)];
        if (wt.pre.at(t, f) <= 0.0) continue;
        double dpre = dlogit * params.classifier_w[static_cast<std::size_t>(q)];
        if (dpre == 0.0) continue;
        gk.b[static_cast<std::size_t>(f)] += dpre;
        for (int j = 0; j < kern.k; ++j) {
          const double* xrow = trace.embedded.row(t + j);
          double* grow = gk.slice(f, j);
          const double* wrow = kern.slice(f, j);
          double* dxrow = dx.row(t + j);
          for (int c = 0; c < kern.m; ++c) {
            grow[c] += dpre * xrow[c];
            dxrow[c] += dpre * wrow[c];
          }
        }
      }
    }

    // scatter embedded-input gradients back to the rows they were read from
    for (int t = 0; t < dx.rows; ++t) {
      int id = trace.padded_tokens[static_cast<std::size_t>(t)];
      if (id == params.pad_id()) continue;  // PAD row stays frozen
      double* erow = g.embedding.row(id);
      const double* dxrow = dx.row(t);
      for (int c = 0; c < params.m; ++c) erow[c] += dxrow[c];
    }
  }

  detail::add_l2_gradient(params, cfg.l2_lambda, g);
  if (out_loss) *out_loss = data_loss * inv_b + detail::l2_penalty(params, cfg.l2_lambda);
  return g;
}

namespace detail {

inline double grad_sq_norm(const Gradients& g) {
  double sq = 0.0;
  for (double v : g.embedding.data) sq += v * v;
  for (const auto& k : g.kernels) {
    for (double v : k.w) sq += v * v;
    for (double v : k.b) sq += v * v;
  }
  for (double v : g.classifier_w) sq += v * v;
  sq += g.classifier_b * g.classifier_b;
  return sq;
}

inline void apply_update(ModelParams& params, const Gradients& g, double lr, double scale = 1.0) {
  const double step = lr * scale;
  for (std::size_t i = 0; i < params.embedding.data.size(); ++i)
    params.embedding.data[i] -= step * g.embedding.data[i];
  for (std::size_t wi = 0; wi < params.kernels.size(); ++wi) {
    for (std::size_t i = 0; i < params.kernels[wi].w.size(); ++i)
      params.kernels[wi].w[i] -= step * g.kernels[wi].w[i];
    for (std::size_t i = 0; i < params.kernels[wi].b.size(); ++i)
      params.kernels[wi].b[i] -= step * g.kernels[wi].b[i];
  }
  for (std::size_t i = 0; i < params.classifier_w.size(); ++i)
    params.classifier_w[i] -= step * g.classifier_w[i];
  params.classifier_b -= step * g.classifier_b;
}

}  // namespace detail

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

inline double dataset_accuracy(const std::vector<Sentence>& data, const ModelParams& params) {
  if (data.empty()) return 0.0;
  int correct = 0;
  for (const auto& s : data) {
    int pred = forward(s, params).probability >= 0.5 ? 1 : 0;
    if (s.label && pred == *s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Seeded mini-batch SGD. Returns the parameter snapshot with the best dev
// accuracy (earliest epoch on ties) along with the per-epoch history.
inline std::pair<ModelParams, std::vector<EpochStats>> sgd_fit(const std::vector<Sentence>& train,
                                                               const std::vector<Sentence>& dev,
                                                               ModelParams params, const TrainConfig& cfg) {
  if (train.empty() || dev.empty()) throw std::runtime_error("sgd_fit: empty dataset");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> history;
  ModelParams best = params;
  double best_acc = -1.0;
  double lr = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_vec(order, rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      Batch batch;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
        batch.push_back(&train[order[i]]);
      double batch_loss = 0.0;
      Gradients g = backward(batch, params, cfg, &batch_loss);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("sgd_fit: non-finite loss at epoch " + std::to_string(epoch + 1));
      double scale = 1.0;
      if (cfg.grad_clip) {
        double norm = std::sqrt(detail::grad_sq_norm(g));
        if (norm > *cfg.grad_clip) scale = *cfg.grad_clip / norm;
      }
      detail::apply_update(params, g, lr, scale);
      epoch_loss += batch_loss;
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = epoch_loss / static_cast<double>(batches);
    stats.dev_accuracy = dataset_accuracy(dev, params);
    history.push_back(stats);
    if (stats.dev_accuracy > best_acc) {
      best_acc = stats.dev_accuracy;
      best = params;
    }
    lr *= cfg.lr_decay;
  }
  return {std::move(best), std::move(history)};
}

// Glorot-uniform initialization; biases and the PAD row start at zero.
inline ModelParams init_params(const ModelConfig& config, int vocab_size, std::uint64_t seed,
                               const Matrix* warm_start_e = nullptr) {
  ModelParams params;
  params.vocab_size = vocab_size;
  params.m = config.m;
  params.widths = config.widths;
  params.filters_per_width = config.filters_per_width;
  params.embedding = Matrix(vocab_size + 1, config.m);
  params.classifier_w.assign(static_cast<std::size_t>(params.pooled_dim()), 0.0);

  Rng rng(seed);
  auto fill = [&rng](double* ptr, std::size_t n, double fan_in, double fan_out) {
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < n; ++i) ptr[i] = uniform_range(rng, -a, a);
  };

  fill(params.embedding.data.data(), static_cast<std::size_t>(params.embedding.rows - 1) * params.m,
       static_cast<double>(vocab_size + 1), static_cast<double>(config.m));  // PAD row untouched: zero
  for (int k : config.widths) {
    ConvKernel kern(config.filters_per_width, k, config.m);
    fill(kern.w.data(), kern.w.size(), static_cast<double>(config.m * k),
         static_cast<double>(config.filters_per_width));
    params.kernels.push_back(std::move(kern));
  }
  fill(params.classifier_w.data(), params.classifier_w.size(), static_cast<double>(params.pooled_dim()), 1.0);

  if (warm_start_e) {
    if (warm_start_e->rows != vocab_size || warm_start_e->cols != config.m)
      throw std::runtime_error("init_params: warm-start embedding shape mismatch");
    for (int r = 0; r < vocab_size; ++r)
      for (int c = 0; c < config.m; ++c) params.embedding.at(r, c) = warm_start_e->at(r, c);
  }
  return params;
}

// Enumerates (center, context) pairs for one sentence with a fixed window.
inline std::vector<std::pair<int, int>> skipgram_pairs(const std::vector<int>& tokens, int window) {
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(tokens.size());
  for (int i = 0; i < n; ++i)
    for (int j = std::max(0, i - window); j <= std::min(n - 1, i + window); ++j)
      if (j != i) pairs.emplace_back(tokens[static_cast<std::size_t>(i)], tokens[static_cast<std::size_t>(j)]);
  return pairs;
}

// Skip-gram with negative sampling over the sentence token streams; separator
// words participate like any other token. Negatives are drawn from the
// unigram^(3/4) distribution. Returns the input-side vectors, V x m.
inline Matrix pretrain_embeddings(const std::vector<Sentence>& corpus, int vocab_size,
                                  const PretrainConfig& cfg) {
  if (corpus.empty()) throw std::runtime_error("pretrain_embeddings: empty corpus");

  Rng rng(cfg.seed);
  Matrix in(vocab_size, cfg.dims);
  Matrix out(vocab_size, cfg.dims);
  for (double& v : in.data) v = uniform_range(rng, -0.5 / cfg.dims, 0.5 / cfg.dims);

  std::vector<double> cum(static_cast<std::size_t>(vocab_size), 0.0);
  {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(vocab_size), 0);
    for (const auto& s : corpus)
      for (int id : s.tokens) ++counts[static_cast<std::size_t>(id)];
    double acc = 0.0;
    for (int i = 0; i < vocab_size; ++i) {
      acc += std::pow(static_cast<double>(counts[static_cast<std::size_t>(i)]), 0.75);
      cum[static_cast<std::size_t>(i)] = acc;
    }
    if (acc <= 0.0) throw std::runtime_error("pretrain_embeddings: corpus has no tokens");
  }

  std::vector<double> grad_in(static_cast<std::size_t>(cfg.dims));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& s : corpus) {
      for (const auto& [center, context] : skipgram_pairs(s.tokens, cfg.window)) {
        double* v = in.row(center);
        std::fill(grad_in.begin(), grad_in.end(), 0.0);
        // positive pair plus cfg.negatives sampled words
        for (int neg = -1; neg < cfg.negatives; ++neg) {
          int target;
          double label;
          if (neg < 0) {
            target = context;
            label = 1.0;
          } else {
            target = static_cast<int>(sample_cumulative(rng, cum));
            if (target == context) continue;
            label = 0.0;
          }
          double* u = out.row(target);
          double err = (sigmoid(dot(u, v, cfg.dims)) - label) * cfg.learning_rate;
          for (int c = 0; c < cfg.dims; ++c) {
            grad_in[static_cast<std::size_t>(c)] += err * u[c];
            u[c] -= err * v[c];
          }
        }
        for (int c = 0; c < cfg.dims; ++c) v[c] -= grad_in[static_cast<std::size_t>(c)];
      }
    }
  }
  return in;
}

}  // namespace deepr
