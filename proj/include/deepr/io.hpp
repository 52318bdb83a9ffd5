// File formats: line-delimited JSON for records, sentences and predictions;
// JSON containers for the vocabulary and checkpoints. Sentence files start
// with a header line carrying the vocabulary hash so downstream commands can
// refuse mismatched id spaces.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepr/model.hpp"
#include "deepr/sequencer.hpp"
#include "deepr/vocab.hpp"

namespace deepr {

using nlohmann::json;

inline json parse_json_line(const std::string& line, const std::string& context) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error(context + ": bad JSON line");
  return j;
}

// --- raw records ----------------------------------------------------------

inline RawRecord record_from_json(const json& j) {
  RawRecord rec;
  rec.patient_id = j.at("patient_id").get<std::string>();
  for (const auto& a : j.at("admissions")) {
    Admission adm;
    adm.admit_time = parse_timestamp(a.at("admit").get<std::string>());
    adm.discharge_time = parse_timestamp(a.at("discharge").get<std::string>());
    if (adm.discharge_time < adm.admit_time)
      throw std::runtime_error("record " + rec.patient_id + ": discharge before admit");
    if (a.contains("dx")) a.at("dx").get_to(adm.diagnoses);
    if (a.contains("px")) a.at("px").get_to(adm.procedures);
    adm.transfer_flag = a.value("transfer", false);
    rec.admissions.push_back(std::move(adm));
  }
  std::sort(rec.admissions.begin(), rec.admissions.end(),
            [](const Admission& x, const Admission& y) { return x.admit_time < y.admit_time; });
  if (j.contains("label") && !j.at("label").is_null()) rec.label = j.at("label").get<int>();
  return rec;
}

inline json record_to_json(const RawRecord& rec) {
  json adms = json::array();
  for (const auto& a : rec.admissions) {
    json ja = {{"admit", format_timestamp(a.admit_time)},
               {"discharge", format_timestamp(a.discharge_time)},
               {"dx", a.diagnoses},
               {"px", a.procedures}};
    if (a.transfer_flag) ja["transfer"] = true;
    adms.push_back(std::move(ja));
  }
  json j = {{"patient_id", rec.patient_id}, {"admissions", std::move(adms)}};
  j["label"] = rec.label ? json(*rec.label) : json(nullptr);
  return j;
}

inline std::vector<RawRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<RawRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(parse_json_line(line, path)));
  }
  return records;
}

inline void write_records(const std::string& path, const std::vector<RawRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
}

// --- sentence files --------------------------------------------------------

struct TokenSentence {
  std::string patient_id;
  std::vector<std::string> tokens;
  std::optional<int> label;
};

struct SentenceFile {
  std::string vocab_hash;
  std::vector<TokenSentence> sentences;
};

inline void write_sentences(const std::string& path, const SentenceFile& file) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << json{{"format", "deepr-sentences"}, {"version", 1}, {"vocab_hash", file.vocab_hash}}.dump() << "\n";
  for (const auto& s : file.sentences) {
    json j = {{"patient_id", s.patient_id}, {"tokens", s.tokens}};
    j["label"] = s.label ? json(*s.label) : json(nullptr);
    out << j.dump() << "\n";
  }
}

inline SentenceFile read_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  SentenceFile file;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json_line(line, path);
    if (first) {
      first = false;
      if (j.value("format", "") != "deepr-sentences")
        throw std::runtime_error(path + ": missing deepr-sentences header line");
      file.vocab_hash = j.value("vocab_hash", "");
      continue;
    }
    TokenSentence s;
    s.patient_id = j.at("patient_id").get<std::string>();
    j.at("tokens").get_to(s.tokens);
    if (j.contains("label") && !j.at("label").is_null()) s.label = j.at("label").get<int>();
    file.sentences.push_back(std::move(s));
  }
  return file;
}

inline std::vector<Sentence> encode_sentences(const SentenceFile& file, const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(file.sentences.size());
  for (const auto& ts : file.sentences) {
    Sentence s;
    s.patient_id = ts.patient_id;
    s.tokens = encode(ts.tokens, vocab);
    s.label = ts.label;
    out.push_back(std::move(s));
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  Vocabulary vocab;
  std::string hash;  // vocab hash
};

namespace detail {

inline json tensor_json(const std::vector<double>& data, std::vector<int> shape) {
  return {{"shape", std::move(shape)}, {"data", data}};
}

inline std::vector<double> tensor_data(const json& j, const std::vector<int>& expect_shape,
                                       const std::string& name) {
  std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  if (shape != expect_shape) throw std::runtime_error("checkpoint: tensor " + name + " shape mismatch");
  auto data = j.at("data").get<std::vector<double>>();
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (data.size() != n) throw std::runtime_error("checkpoint: tensor " + name + " size mismatch");
  for (double v : data)
    if (!std::isfinite(v)) throw std::runtime_error("checkpoint: tensor " + name + " has non-finite values");
  return data;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  json tensors;
  tensors["embedding"] = detail::tensor_json(p.embedding.data, {p.embedding.rows, p.embedding.cols});
  for (std::size_t wi = 0; wi < p.widths.size(); ++wi) {
    const ConvKernel& k = p.kernels[wi];
    std::string suffix = std::to_string(p.widths[wi]);
    tensors["kernel_w" + suffix] = detail::tensor_json(k.w, {k.p, k.k, k.m});
    tensors["kernel_b" + suffix] = detail::tensor_json(k.b, {k.p});
  }
  tensors["classifier_w"] = detail::tensor_json(p.classifier_w, {static_cast<int>(p.classifier_w.size())});
  tensors["classifier_b"] = detail::tensor_json({p.classifier_b}, {1});

  json j = {{"format", "deepr-checkpoint"},
            {"version", 1},
            {"vocab_hash", ckpt.hash},
            {"config",
             {{"m", ckpt.config.m},
              {"widths", ckpt.config.widths},
              {"filters_per_width", ckpt.config.filters_per_width}}},
            {"vocab", vocab_to_json(ckpt.vocab)},
            {"tensors", std::move(tensors)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception&) {
    throw std::runtime_error(path + ": not a valid checkpoint");
  }
  if (j.value("format", "") != "deepr-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error(path + ": unrecognized checkpoint format/version");

  Checkpoint ckpt;
  ckpt.hash = j.at("vocab_hash").get<std::string>();
  ckpt.config.m = j.at("config").at("m").get<int>();
  j.at("config").at("widths").get_to(ckpt.config.widths);
  ckpt.config.filters_per_width = j.at("config").at("filters_per_width").get<int>();
  ckpt.vocab = vocab_from_json(j.at("vocab"));
  if (vocab_hash(ckpt.vocab) != ckpt.hash) throw std::runtime_error(path + ": vocab hash mismatch inside checkpoint");

  ModelParams& p = ckpt.params;
  p.vocab_size = ckpt.vocab.size();
  p.m = ckpt.config.m;
  p.widths = ckpt.config.widths;
  p.filters_per_width = ckpt.config.filters_per_width;
  const json& tensors = j.at("tensors");
  p.embedding = Matrix(p.vocab_size + 1, p.m);
  p.embedding.data = detail::tensor_data(tensors.at("embedding"), {p.vocab_size + 1, p.m}, "embedding");
  for (int k : p.widths) {
    ConvKernel kern(p.filters_per_width, k, p.m);
    std::string suffix = std::to_string(k);
    kern.w = detail::tensor_data(tensors.at("kernel_w" + suffix), {kern.p, kern.k, kern.m}, "kernel_w" + suffix);
    kern.b = detail::tensor_data(tensors.at("kernel_b" + suffix), {kern.p}, "kernel_b" + suffix);
    p.kernels.push_back(std::move(kern));
  }
  p.classifier_w = detail::tensor_data(tensors.at("classifier_w"), {p.pooled_dim()}, "classifier_w");
  p.classifier_b = detail::tensor_data(tensors.at("classifier_b"), {1}, "classifier_b")[0];
  return ckpt;
}

// --- predictions & metrics ---------------------------------------------------

struct Prediction {
  std::string patient_id;
  double probability = 0.0;
  int label = 0;  // probability >= 0.5
};

inline void write_predictions(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& p : preds)
    out << json{{"patient_id", p.patient_id}, {"probability", p.probability}, {"label", p.label}}.dump() << "\n";
}

inline std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Prediction> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json_line(line, path);
    preds.push_back({j.at("patient_id").get<std::string>(), j.at("probability").get<double>(),
                     j.at("label").get<int>()});
  }
  return preds;
}

struct Metrics {
  double accuracy = 0.0;
  std::optional<double> auc;  // undefined for single-class labels
  int n = 0;
};

// Accuracy at threshold 0.5 plus rank-statistic AUC with tie correction
// (ties contribute half a concordant pair via average ranks).
inline Metrics evaluate(const std::vector<double>& probabilities, const std::vector<int>& labels) {
  if (probabilities.size() != labels.size()) throw std::invalid_argument("evaluate: size mismatch");
  Metrics m;
  m.n = static_cast<int>(labels.size());
  if (m.n == 0) return m;

  int correct = 0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int pred = probabilities[i] >= 0.5 ? 1 : 0;
    if (pred == labels[i]) ++correct;
    if (labels[i] == 1) ++n_pos;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);

  std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) return m;  // AUC undefined

  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probabilities[a] < probabilities[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && probabilities[order[j]] == probabilities[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  m.auc = (rank_sum_pos - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0) /
          (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return m;
}

inline json metrics_to_json(const Metrics& m) {
  json j = {{"accuracy", m.accuracy}, {"n", m.n}};
  j["auc"] = m.auc ? json(*m.auc) : json(nullptr);
  return j;
}

}  // namespace deepr
