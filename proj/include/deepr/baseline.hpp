// Bag-of-words + L2-regularized logistic regression comparator.
//
// Objective: mean cross-entropy + (1/(2*C*N)) * ||w||^2, intercept exempt.
// C is the conventional inverse regularization strength, i.e. the MAP
// estimate under a Gaussian prior on w with variance proportional to C.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "deepr/model.hpp"
#include "deepr/sequencer.hpp"
#include "deepr/vocab.hpp"

namespace deepr {

// Sparse token counts over the whole sentence, sorted by id.
struct BowVector {
  std::vector<std::pair<int, double>> counts;
  std::optional<int> label;
};

inline BowVector bow_featurize(const Sentence& sentence, const Vocabulary& vocab, bool include_time_tokens) {
  std::map<int, double> acc;
  for (int id : sentence.tokens) {
    if (!include_time_tokens && vocab.is_gap_token(id)) continue;
    acc[id] += 1.0;
  }
  BowVector bow;
  bow.counts.assign(acc.begin(), acc.end());
  bow.label = sentence.label;
  return bow;
}

struct LogisticModel {
  std::vector<double> w;
  double b = 0.0;
  double final_grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;

  double decision(const BowVector& x) const {
    double z = b;
    for (const auto& [id, c] : x.counts) z += w[static_cast<std::size_t>(id)] * c;
    return z;
  }
  double probability(const BowVector& x) const { return sigmoid(decision(x)); }
};

namespace detail {

inline double bce_scalar(double p, int y) {
  constexpr double eps = 1e-12;
  p = std::min(std::max(p, eps), 1.0 - eps);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

inline double lr_objective_grad(const std::vector<BowVector>& data, const std::vector<double>& w, double b,
                                double reg, std::vector<double>& gw, double& gb) {
  const double inv_n = 1.0 / static_cast<double>(data.size());
  std::fill(gw.begin(), gw.end(), 0.0);
  gb = 0.0;
  double obj = 0.0;
  for (const auto& x : data) {
    double z = b;
    for (const auto& [id, c] : x.counts) z += w[static_cast<std::size_t>(id)] * c;
    double p = sigmoid(z);
    int y = *x.label;
    obj += bce_scalar(p, y);
    double err = (p - static_cast<double>(y)) * inv_n;
    for (const auto& [id, c] : x.counts) gw[static_cast<std::size_t>(id)] += err * c;
    gb += err;
  }
  obj *= inv_n;
  for (std::size_t i = 0; i < w.size(); ++i) {
    obj += 0.5 * reg * w[i] * w[i];
    gw[i] += reg * w[i];
  }
  return obj;
}

}  // namespace detail

// Full-batch gradient descent with Nesterov momentum and adaptive restart,
// run to gradient-norm tolerance or the iteration cap. The objective is
// smooth and strictly convex, so the optimum is unique.
inline LogisticModel lr_fit(const std::vector<BowVector>& train, int dim, double C, double tol = 1e-6,
                            int max_iters = 10000) {
  if (train.empty()) throw std::runtime_error("lr_fit: empty dataset");
  for (const auto& x : train)
    if (!x.label || (*x.label != 0 && *x.label != 1)) throw std::runtime_error("lr_fit: unlabeled example");

  const double n = static_cast<double>(train.size());
  const double reg = 1.0 / (C * n);

  // Lipschitz bound for the gradient: 0.25 * max ||x||^2 + reg
  double max_sq = 0.0;
  for (const auto& x : train) {
    double sq = 1.0;  // intercept column
    for (const auto& [id, c] : x.counts) sq += c * c;
    max_sq = std::max(max_sq, sq);
  }
  const double step = 1.0 / (0.25 * max_sq + reg);

  std::vector<double> w(static_cast<std::size_t>(dim), 0.0), y = w, gw(w.size());
  std::vector<double> best_w = w;
  double b = 0.0, yb = 0.0, gb = 0.0, best_b = 0.0;
  double momentum_t = 1.0;
  double prev_obj = std::numeric_limits<double>::infinity();
  double best_norm = std::numeric_limits<double>::infinity();

  LogisticModel model;
  for (int iter = 0; iter < max_iters; ++iter) {
    double obj = detail::lr_objective_grad(train, y, yb, reg, gw, gb);
    double sq = gb * gb;
    for (double v : gw) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm < best_norm) {
      best_norm = norm;
      best_w = y;
      best_b = yb;
    }
    model.iterations = iter + 1;
    if (norm <= tol) {
      model.converged = true;
      break;
    }
    if (obj > prev_obj) momentum_t = 1.0;  // restart momentum when the objective backslides
    prev_obj = obj;

    double next_t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
    double beta = (momentum_t - 1.0) / next_t;
    momentum_t = next_t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double w_new = y[i] - step * gw[i];
      y[i] = w_new + beta * (w_new - w[i]);
      w[i] = w_new;
    }
    double b_new = yb - step * gb;
    yb = b_new + beta * (b_new - b);
    b = b_new;
  }

  model.w = std::move(best_w);
  model.b = best_b;
  model.final_grad_norm = best_norm;
  if (!model.converged)
    std::fprintf(stderr, "lr_fit: not converged after %d iterations (grad norm %.3e)\n", model.iterations,
                 best_norm);
  return model;
}

inline double lr_accuracy(const std::vector<BowVector>& data, const LogisticModel& model) {
  if (data.empty()) return 0.0;
  int correct = 0;
  for (const auto& x : data) {
    int pred = model.decision(x) >= 0.0 ? 1 : 0;
    if (x.label && pred == *x.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace deepr
