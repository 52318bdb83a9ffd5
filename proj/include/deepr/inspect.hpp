// Model inspection: motif responses per sentence, frequent strong motifs
// across a dataset, embedding cosine similarity, pooled patient vectors, and
// a 2D PCA export.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "deepr/model.hpp"
#include "deepr/rng.hpp"

namespace deepr {

struct MotifHit {
  int filter_index = 0;  // within its width's kernel set
  int width = 0;
  int position = 0;
  std::vector<int> token_window;
  double response = 0.0;  // post-ReLU
  std::string sentence_ref;
};

struct MotifSummary {
  std::vector<int> token_window;
  int width = 0;
  int filter_index = 0;
  std::int64_t occurrence_count = 0;
  double mean_response = 0.0;
  double class_association = 0.0;  // fraction of occurrences in positive sentences
};

// Every (filter, position) whose rectified response is positive; ReLU already
// gates the weak signals.
inline std::vector<MotifHit> motif_responses(const Sentence& sentence, const ModelParams& params) {
  ForwardTrace trace = forward(sentence, params);
  std::vector<MotifHit> hits;
  for (const auto& wt : trace.per_width) {
    for (int t = 0; t < wt.post.rows; ++t) {
      for (int f = 0; f < wt.post.cols; ++f) {
        double r = wt.post.at(t, f);
        if (r <= 0.0) continue;
        MotifHit hit;
        hit.filter_index = f;
        hit.width = wt.width;
        hit.position = t;
        hit.token_window.assign(trace.padded_tokens.begin() + t, trace.padded_tokens.begin() + t + wt.width);
        hit.response = r;
        hit.sentence_ref = sentence.patient_id;
        hits.push_back(std::move(hit));
      }
    }
  }
  return hits;
}

// Groups hits by (width, filter, token window), keeps groups seen at least
// min_count times, ranks by mean response, and returns the top windows per
// filter together with how often they occurred in positive-labeled sentences.
inline std::vector<MotifSummary> mine_motifs(const std::vector<Sentence>& dataset, const ModelParams& params,
                                             int top_per_filter, int min_count) {
  struct Group {
    std::int64_t count = 0;
    std::int64_t positive = 0;
    double response_sum = 0.0;
  };
  std::map<std::tuple<int, int, std::vector<int>>, Group> groups;
  for (const auto& sentence : dataset) {
    bool positive = sentence.label && *sentence.label == 1;
    for (auto& hit : motif_responses(sentence, params)) {
      Group& g = groups[{hit.width, hit.filter_index, std::move(hit.token_window)}];
      ++g.count;
      if (positive) ++g.positive;
      g.response_sum += hit.response;
    }
  }

  std::map<std::pair<int, int>, std::vector<MotifSummary>> per_filter;
  for (const auto& [key, g] : groups) {
    if (g.count < min_count) continue;
    MotifSummary s;
    s.width = std::get<0>(key);
    s.filter_index = std::get<1>(key);
    s.token_window = std::get<2>(key);
    s.occurrence_count = g.count;
    s.mean_response = g.response_sum / static_cast<double>(g.count);
    s.class_association = static_cast<double>(g.positive) / static_cast<double>(g.count);
    per_filter[{s.width, s.filter_index}].push_back(std::move(s));
  }

  std::vector<MotifSummary> result;
  for (auto& [key, summaries] : per_filter) {
    std::sort(summaries.begin(), summaries.end(), [](const MotifSummary& a, const MotifSummary& b) {
      if (a.mean_response != b.mean_response) return a.mean_response > b.mean_response;
      return a.token_window < b.token_window;
    });
    if (static_cast<int>(summaries.size()) > top_per_filter) summaries.resize(static_cast<std::size_t>(top_per_filter));
    result.insert(result.end(), summaries.begin(), summaries.end());
  }
  return result;
}

// Cosine of two embedding rows.
inline double word_similarity(int w, int v, const ModelParams& params) {
  if (w < 0 || w >= params.vocab_size || v < 0 || v >= params.vocab_size)
    throw std::out_of_range("word_similarity: id out of vocabulary");
  const double* a = params.embedding.row(w);
  const double* b = params.embedding.row(v);
  double na = std::sqrt(dot(a, a, params.m));
  double nb = std::sqrt(dot(b, b, params.m));
  if (na == 0.0 || nb == 0.0) throw std::runtime_error("word_similarity: zero-norm embedding row");
  return dot(a, b, params.m) / (na * nb);
}

// The pooled feature vector doubles as the patient vector.
inline std::vector<double> patient_vector(const Sentence& sentence, const ModelParams& params) {
  return forward(sentence, params).pooled;
}

struct Projection2D {
  std::vector<std::array<double, 2>> points;
  std::array<std::vector<double>, 2> axes;
  bool rank_deficient = false;
};

namespace detail {

// Power iteration for the dominant eigenvector of the covariance implied by
// the centered data (never materializes the covariance matrix).
inline double power_component(const std::vector<std::vector<double>>& centered, std::vector<double>& axis,
                              double tol) {
  const std::size_t dim = centered.front().size();
  const double denom = static_cast<double>(centered.size() > 1 ? centered.size() - 1 : 1);
  axis.assign(dim, 0.0);
  Rng rng(0x9d2c5680u);  // fixed start; only needs nonzero overlap with the eigenvector
  for (double& v : axis) v = uniform01(rng) - 0.5;
  {
    double norm = std::sqrt(dot(axis.data(), axis.data(), static_cast<int>(dim)));
    for (double& v : axis) v /= norm;
  }

  double eigval = 0.0;
  std::vector<double> next(dim);
  for (int iter = 0; iter < 10000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (const auto& row : centered) {
      double proj = dot(row.data(), axis.data(), static_cast<int>(dim));
      for (std::size_t c = 0; c < dim; ++c) next[c] += proj * row[c];
    }
    for (std::size_t c = 0; c < dim; ++c) next[c] /= denom;
    double norm = std::sqrt(dot(next.data(), next.data(), static_cast<int>(dim)));
    if (norm == 0.0) {
      axis.assign(dim, 0.0);
      return 0.0;
    }
    double align = dot(next.data(), axis.data(), static_cast<int>(dim)) >= 0.0 ? 1.0 : -1.0;
    double diff = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      next[c] /= norm;
      diff = std::max(diff, std::abs(align * next[c] - axis[c]));
    }
    axis = next;
    eigval = norm;
    if (diff < tol) break;
  }
  // sign convention: largest-magnitude loading positive
  std::size_t arg = 0;
  for (std::size_t c = 1; c < dim; ++c)
    if (std::abs(axis[c]) > std::abs(axis[arg])) arg = c;
  if (axis[arg] < 0.0)
    for (double& v : axis) v = -v;
  return eigval;
}

}  // namespace detail

// Mean-centered projection onto the top two principal components via power
// iteration with deflation. Rank-deficient input zeroes the second component.
inline Projection2D project_2d(const std::vector<std::vector<double>>& vectors, double tol = 1e-9,
                               bool* warned_rank_deficient = nullptr) {
  if (vectors.size() < 2) throw std::invalid_argument("project_2d: need at least 2 vectors");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw std::invalid_argument("project_2d: ragged input");

  std::vector<double> mean(dim, 0.0);
  for (const auto& v : vectors)
    for (std::size_t c = 0; c < dim; ++c) mean[c] += v[c];
  for (double& v : mean) v /= static_cast<double>(vectors.size());

  std::vector<std::vector<double>> centered(vectors.size(), std::vector<double>(dim));
  for (std::size_t r = 0; r < vectors.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) centered[r][c] = vectors[r][c] - mean[c];

  Projection2D proj;
  double ev1 = detail::power_component(centered, proj.axes[0], tol);
  double ev2 = 0.0;
  if (ev1 > 0.0) {
    // deflate by projecting out the first axis from the data
    std::vector<std::vector<double>> residual = centered;
    for (auto& row : residual) {
      double p = dot(row.data(), proj.axes[0].data(), static_cast<int>(dim));
      for (std::size_t c = 0; c < dim; ++c) row[c] -= p * proj.axes[0][c];
    }
    ev2 = detail::power_component(residual, proj.axes[1], tol);
  } else {
    proj.axes[1].assign(dim, 0.0);
  }
  const double rank_eps = 1e-12;
  if (ev2 <= rank_eps * std::max(ev1, 1.0)) {
    proj.axes[1].assign(dim, 0.0);
    proj.rank_deficient = true;
    if (warned_rank_deficient) *warned_rank_deficient = true;
  }

  proj.points.resize(vectors.size());
  for (std::size_t r = 0; r < vectors.size(); ++r) {
    proj.points[r][0] = dot(centered[r].data(), proj.axes[0].data(), static_cast<int>(dim));
    proj.points[r][1] = proj.axes[1].empty() || proj.rank_deficient
                            ? 0.0
                            : dot(centered[r].data(), proj.axes[1].data(), static_cast<int>(dim));
  }
  return proj;
}

}  // namespace deepr
