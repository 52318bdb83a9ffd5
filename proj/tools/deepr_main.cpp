// deepr: end-to-end risk prediction over coded medical records.
//
// Subcommands: synth, sequence, train, predict, baseline, motifs, similar,
// export-embeddings, evaluate. All outputs are line-delimited JSON unless
// noted. Exit codes: 0 success, 2 usage error, 3 data/format error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deepr/baseline.hpp"
#include "deepr/inspect.hpp"
#include "deepr/io.hpp"
#include "deepr/model.hpp"
#include "deepr/sequencer.hpp"
#include "deepr/synth.hpp"
#include "deepr/train.hpp"
#include "deepr/vocab.hpp"

using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error(path + ": invalid JSON");
  return j;
}

deepr::SequencerConfig sequencer_config_from_json(const json& j) {
  deepr::SequencerConfig cfg;
  cfg.episode_merge_hours = j.value("episode_merge_hours", cfg.episode_merge_hours);
  cfg.episode_merge_with_transfer_hours =
      j.value("episode_merge_with_transfer_hours", cfg.episode_merge_with_transfer_hours);
  cfg.code_truncation_level = j.value("code_truncation_level", cfg.code_truncation_level);
  cfg.randomize_within_phrase = j.value("randomize_within_phrase", cfg.randomize_within_phrase);
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  cfg.max_sentence_tokens = j.value("max_sentence_tokens", cfg.max_sentence_tokens);
  if (j.contains("procedure_blocks"))
    cfg.procedure_blocks = j.at("procedure_blocks").get<std::unordered_map<std::string, std::string>>();
  if (j.contains("gap_bins")) {
    cfg.gap_bins.clear();
    for (const auto& bin : j.at("gap_bins")) {
      double ub = bin.at(0).is_null() ? std::numeric_limits<double>::infinity() : bin.at(0).get<double>();
      cfg.gap_bins.push_back({ub, bin.at(1).get<std::string>()});
    }
  }
  return cfg;
}

deepr::ModelConfig model_config_from_json(const json& j) {
  deepr::ModelConfig cfg;
  cfg.m = j.value("m", cfg.m);
  if (j.contains("widths")) j.at("widths").get_to(cfg.widths);
  cfg.filters_per_width = j.value("filters_per_width", cfg.filters_per_width);
  return cfg;
}

deepr::TrainConfig train_config_from_json(const json& j) {
  deepr::TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.l2_lambda = j.value("l2_lambda", cfg.l2_lambda);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("grad_clip") && !j.at("grad_clip").is_null()) cfg.grad_clip = j.at("grad_clip").get<double>();
  return cfg;
}

deepr::PretrainConfig pretrain_config_from_json(const json& j, int dims) {
  deepr::PretrainConfig cfg;
  cfg.dims = dims;
  cfg.window = j.value("window", cfg.window);
  cfg.negatives = j.value("negatives", cfg.negatives);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

deepr::Vocabulary load_vocab_file(const std::string& path) {
  return deepr::vocab_from_json(load_json_file(path));
}

void require_hash_match(const std::string& got, const std::string& expected, const std::string& what) {
  if (got != expected)
    throw std::runtime_error(what + ": vocabulary hash mismatch (" + got + " vs " + expected +
                             "); re-sequence with the matching vocabulary");
}

std::vector<deepr::Sentence> load_encoded(const std::string& path, const deepr::Vocabulary& vocab,
                                          const std::string& expected_hash) {
  deepr::SentenceFile file = deepr::read_sentences(path);
  if (!file.sentences.empty()) require_hash_match(file.vocab_hash, expected_hash, path);
  return deepr::encode_sentences(file, vocab);
}

// --- subcommand handlers ----------------------------------------------------

int run_synth(const std::string& spec_path, const std::string& out_records, const std::string& out_manifest,
              std::optional<std::uint64_t> seed) {
  deepr::CohortSpec spec;
  if (!spec_path.empty()) spec = load_json_file(spec_path).get<deepr::CohortSpec>();
  if (seed) spec.seed = *seed;
  auto [records, manifest] = deepr::generate_cohort(spec);
  deepr::write_records(out_records, records);
  std::ofstream out(out_manifest);
  if (!out) throw std::runtime_error("cannot write " + out_manifest);
  out << deepr::manifest_to_json(manifest).dump(2) << "\n";
  std::fprintf(stderr, "synth: %d patients (%d positive), chi2 p=%.4f, tv=%.4f\n", manifest.n_patients,
               manifest.n_positive, manifest.chi2_pvalue, manifest.unigram_tv_distance);
  return 0;
}

int run_sequence(const std::string& input, const std::string& output, const std::string& config_path,
                 std::string vocab_path, std::optional<std::uint64_t> seed) {
  deepr::SequencerConfig cfg;
  int rare_threshold = 100;
  if (!config_path.empty()) {
    json j = load_json_file(config_path);
    cfg = sequencer_config_from_json(j);
    rare_threshold = j.value("rare_threshold", rare_threshold);
  }
  if (seed) cfg.rng_seed = *seed;

  auto records = deepr::read_records(input);
  if (vocab_path.empty()) vocab_path = output + ".vocab.json";

  deepr::Vocabulary vocab;
  std::ifstream probe(vocab_path);
  if (probe.good()) {
    vocab = load_vocab_file(vocab_path);
    std::fprintf(stderr, "sequence: using existing vocabulary %s (V=%d)\n", vocab_path.c_str(), vocab.size());
  } else {
    // pass 1: collect untrimmed token streams for corpus counts
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(records.size());
    deepr::SequencerDiagnostics diag;
    for (const auto& rec : records) corpus.push_back(deepr::sequence_tokens(rec, cfg, &diag).tokens);
    std::vector<std::string> gap_tokens;
    for (const auto& bin : cfg.gap_bins) gap_tokens.push_back(bin.token);
    vocab = deepr::build_vocab(corpus, rare_threshold, gap_tokens);
    std::ofstream vout(vocab_path);
    if (!vout) throw std::runtime_error("cannot write " + vocab_path);
    vout << deepr::vocab_to_json(vocab).dump() << "\n";
    std::fprintf(stderr, "sequence: built vocabulary %s (V=%d, threshold %d)\n", vocab_path.c_str(),
                 vocab.size(), rare_threshold);
  }

  deepr::SentenceFile out_file;
  out_file.vocab_hash = deepr::vocab_hash(vocab);
  deepr::SequencerDiagnostics diag;
  for (const auto& rec : records) {
    deepr::Sentence s = deepr::sequence_record(rec, vocab, cfg, &diag);
    out_file.sentences.push_back({s.patient_id, deepr::decode(s.tokens, vocab), s.label});
  }
  deepr::write_sentences(output, out_file);
  if (diag.malformed_codes || diag.overlapping_admissions)
    std::fprintf(stderr, "sequence: diagnostics malformed_codes=%lld overlapping_admissions=%lld\n",
                 static_cast<long long>(diag.malformed_codes),
                 static_cast<long long>(diag.overlapping_admissions));
  return 0;
}

int run_train(const std::string& sentences_path, const std::string& dev_path, const std::string& config_path,
              const std::string& vocab_path, const std::string& out_path, const std::string& pretrain_corpus,
              std::optional<std::uint64_t> seed) {
  json j = config_path.empty() ? json::object() : load_json_file(config_path);
  deepr::ModelConfig mcfg = model_config_from_json(j.value("model", json::object()));
  deepr::TrainConfig tcfg = train_config_from_json(j.value("train", json::object()));
  deepr::PretrainConfig pcfg = pretrain_config_from_json(j.value("pretrain", json::object()), mcfg.m);
  if (seed) {
    tcfg.seed = *seed;
    pcfg.seed = *seed;
  }

  deepr::Vocabulary vocab = load_vocab_file(vocab_path);
  std::string hash = deepr::vocab_hash(vocab);
  auto train_set = load_encoded(sentences_path, vocab, hash);
  auto dev_set = load_encoded(dev_path, vocab, hash);

  deepr::Matrix warm;
  const deepr::Matrix* warm_ptr = nullptr;
  if (!pretrain_corpus.empty()) {
    auto corpus = load_encoded(pretrain_corpus, vocab, hash);
    warm = deepr::pretrain_embeddings(corpus, vocab.size(), pcfg);
    warm_ptr = &warm;
    std::fprintf(stderr, "train: pretrained %dx%d embeddings on %zu sentences\n", warm.rows, warm.cols,
                 corpus.size());
  }

  deepr::ModelParams params = deepr::init_params(mcfg, vocab.size(), tcfg.seed, warm_ptr);
  auto [fitted, history] = deepr::sgd_fit(train_set, dev_set, std::move(params), tcfg);
  for (const auto& epoch : history)
    std::cout << json{{"epoch", epoch.epoch}, {"train_loss", epoch.train_loss}, {"dev_acc", epoch.dev_accuracy}}
                     .dump()
              << "\n";

  deepr::Checkpoint ckpt;
  ckpt.config = mcfg;
  ckpt.params = std::move(fitted);
  ckpt.vocab = std::move(vocab);
  ckpt.hash = hash;
  deepr::save_checkpoint(out_path, ckpt);
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& sentences_path, const std::string& out_path) {
  deepr::Checkpoint ckpt = deepr::load_checkpoint(ckpt_path);
  deepr::SentenceFile file = deepr::read_sentences(sentences_path);
  std::vector<deepr::Prediction> preds;
  if (!file.sentences.empty()) {
    require_hash_match(file.vocab_hash, ckpt.hash, sentences_path);
    for (const auto& s : deepr::encode_sentences(file, ckpt.vocab)) {
      double p = deepr::forward(s, ckpt.params).probability;
      preds.push_back({s.patient_id, p, p >= 0.5 ? 1 : 0});
    }
  }
  if (out_path.empty()) {
    for (const auto& p : preds)
      std::cout << json{{"patient_id", p.patient_id}, {"probability", p.probability}, {"label", p.label}}.dump()
                << "\n";
  } else {
    deepr::write_predictions(out_path, preds);
  }
  return 0;
}

int run_baseline(const std::string& train_path, const std::string& dev_path, const std::string& test_path,
                 const std::string& vocab_path, double C, bool no_time_tokens, const std::string& out_path) {
  deepr::Vocabulary vocab = load_vocab_file(vocab_path);
  std::string hash = deepr::vocab_hash(vocab);
  auto featurize = [&](const std::string& path) {
    std::vector<deepr::BowVector> out;
    for (const auto& s : load_encoded(path, vocab, hash))
      out.push_back(deepr::bow_featurize(s, vocab, !no_time_tokens));
    return out;
  };
  auto train_x = featurize(train_path);
  auto dev_x = featurize(dev_path);
  auto test_x = featurize(test_path);

  deepr::LogisticModel model = deepr::lr_fit(train_x, vocab.size(), C);
  json result = {{"C", C},
                 {"with_time_tokens", !no_time_tokens},
                 {"converged", model.converged},
                 {"final_grad_norm", model.final_grad_norm},
                 {"iterations", model.iterations},
                 {"train_accuracy", deepr::lr_accuracy(train_x, model)},
                 {"dev_accuracy", deepr::lr_accuracy(dev_x, model)},
                 {"test_accuracy", deepr::lr_accuracy(test_x, model)}};
  std::cout << result.dump() << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << result.dump() << "\n";
  }
  return 0;
}

int run_motifs(const std::string& ckpt_path, const std::string& sentences_path, int top, int min_count,
               const std::string& out_path) {
  deepr::Checkpoint ckpt = deepr::load_checkpoint(ckpt_path);
  auto sentences = load_encoded(sentences_path, ckpt.vocab, ckpt.hash);
  auto summaries = deepr::mine_motifs(sentences, ckpt.params, top, min_count);

  auto token_name = [&](int id) {
    return id == ckpt.params.pad_id() ? std::string(deepr::kPadToken) : ckpt.vocab.token_of(id);
  };
  json motifs = json::array();
  for (const auto& s : summaries) {
    json window = json::array();
    for (int id : s.token_window) window.push_back(token_name(id));
    motifs.push_back({{"width", s.width},
                      {"filter_index", s.filter_index},
                      {"tokens", window},
                      {"occurrence_count", s.occurrence_count},
                      {"mean_response", s.mean_response},
                      {"class_association", s.class_association}});
  }
  json out_json = {{"motifs", motifs}};
  if (out_path.empty()) {
    std::cout << out_json.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << out_json.dump(2) << "\n";
  }
  return 0;
}

int run_similar(const std::string& ckpt_path, const std::string& sentences_path, const std::string& query,
                int k) {
  deepr::Checkpoint ckpt = deepr::load_checkpoint(ckpt_path);
  auto sentences = load_encoded(sentences_path, ckpt.vocab, ckpt.hash);

  const deepr::Sentence* target = nullptr;
  for (const auto& s : sentences)
    if (s.patient_id == query) target = &s;
  if (!target) throw std::runtime_error("patient " + query + " not found in " + sentences_path);

  auto qv = deepr::patient_vector(*target, ckpt.params);
  double qn = std::sqrt(deepr::dot(qv.data(), qv.data(), static_cast<int>(qv.size())));
  std::vector<std::pair<double, const deepr::Sentence*>> scored;
  for (const auto& s : sentences) {
    if (s.patient_id == query) continue;
    auto v = deepr::patient_vector(s, ckpt.params);
    double n = std::sqrt(deepr::dot(v.data(), v.data(), static_cast<int>(v.size())));
    double sim = (qn > 0.0 && n > 0.0)
                     ? deepr::dot(qv.data(), v.data(), static_cast<int>(qv.size())) / (qn * n)
                     : 0.0;
    scored.emplace_back(sim, &s);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i) {
    const auto& [sim, s] = scored[static_cast<std::size_t>(i)];
    json line = {{"patient_id", s->patient_id}, {"similarity", sim}};
    line["label"] = s->label ? json(*s->label) : json(nullptr);
    std::cout << line.dump() << "\n";
  }
  return 0;
}

int run_export_embeddings(const std::string& ckpt_path, const std::string& out_path) {
  deepr::Checkpoint ckpt = deepr::load_checkpoint(ckpt_path);
  const deepr::ModelParams& p = ckpt.params;
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < p.vocab_size; ++r)
    rows.emplace_back(p.embedding.row(r), p.embedding.row(r) + p.m);
  deepr::Projection2D proj = deepr::project_2d(rows);
  if (proj.rank_deficient) std::fprintf(stderr, "export-embeddings: rank-deficient embedding, pc2 zeroed\n");

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out.precision(17);
  out << "token\tpc1\tpc2";
  for (int c = 0; c < p.m; ++c) out << "\tv" << c;
  out << "\n";
  for (int r = 0; r < p.vocab_size; ++r) {
    out << ckpt.vocab.token_of(r) << "\t" << proj.points[static_cast<std::size_t>(r)][0] << "\t"
        << proj.points[static_cast<std::size_t>(r)][1];
    for (int c = 0; c < p.m; ++c) out << "\t" << p.embedding.at(r, c);
    out << "\n";
  }
  return 0;
}

int run_evaluate(const std::string& predictions_path, const std::string& sentences_path,
                 const std::string& out_path) {
  auto preds = deepr::read_predictions(predictions_path);
  deepr::SentenceFile file = deepr::read_sentences(sentences_path);
  std::map<std::string, int> labels;
  for (const auto& s : file.sentences)
    if (s.label) labels[s.patient_id] = *s.label;

  std::vector<double> probs;
  std::vector<int> y;
  for (const auto& p : preds) {
    auto it = labels.find(p.patient_id);
    if (it == labels.end()) throw std::runtime_error("evaluate: no label for patient " + p.patient_id);
    probs.push_back(p.probability);
    y.push_back(it->second);
  }
  json out_json = deepr::metrics_to_json(deepr::evaluate(probs, y));
  std::cout << out_json.dump() << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << out_json.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deepr: convolutional risk prediction over coded medical records"};
  app.require_subcommand(1);

  std::string spec_path, input, output, config_path, vocab_path, ckpt_path, sentences_path, dev_path,
      test_path, out_path, pretrain_corpus, predictions_path, query;
  double C = 0.1;
  bool no_time_tokens = false;
  int top = 3, min_count = 5, k = 10;
  std::optional<std::uint64_t> seed;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with planted motifs");
  synth->add_option("--spec", spec_path, "cohort spec JSON (defaults used when omitted)");
  synth->add_option("--out-records", output, "records JSONL output")->required();
  synth->add_option("--out-manifest", out_path, "ground-truth manifest JSON output")->required();
  synth->add_option("--seed", seed, "override the spec seed");

  auto* sequence = app.add_subcommand("sequence", "convert records to token sentences");
  sequence->add_option("--input", input, "records JSONL")->required();
  sequence->add_option("--output", output, "sentences JSONL output")->required();
  sequence->add_option("--config", config_path, "sequencer config JSON");
  sequence->add_option("--vocab", vocab_path, "vocabulary JSON (loaded if present, else built and saved)");
  sequence->add_option("--seed", seed, "override within-phrase shuffle seed");

  auto* train = app.add_subcommand("train", "fit the convolutional model");
  train->add_option("--sentences", sentences_path, "training sentences JSONL")->required();
  train->add_option("--dev", dev_path, "development sentences JSONL")->required();
  train->add_option("--config", config_path, "model/train/pretrain config JSON");
  train->add_option("--vocab", vocab_path, "vocabulary JSON")->required();
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--pretrain-embeddings", pretrain_corpus, "skip-gram pretraining corpus JSONL");
  train->add_option("--seed", seed, "override training (and pretraining) seed");

  auto* predict = app.add_subcommand("predict", "score sentences with a checkpoint");
  predict->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  predict->add_option("--sentences", sentences_path, "sentences JSONL")->required();
  predict->add_option("--out", output, "predictions JSONL (stdout when omitted)");

  auto* baseline = app.add_subcommand("baseline", "bag-of-words + logistic regression comparator");
  baseline->add_option("--sentences", sentences_path, "training sentences JSONL")->required();
  baseline->add_option("--dev", dev_path, "development sentences JSONL")->required();
  baseline->add_option("--test", test_path, "test sentences JSONL")->required();
  baseline->add_option("--vocab", vocab_path, "vocabulary JSON")->required();
  baseline->add_option("--C", C, "inverse regularization strength");
  baseline->add_flag("--no-time-tokens", no_time_tokens, "drop gap words from features");
  baseline->add_option("--out", output, "also write metrics JSON here");

  auto* motifs = app.add_subcommand("motifs", "mine frequent strong motifs from a trained model");
  motifs->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  motifs->add_option("--sentences", sentences_path, "sentences JSONL")->required();
  motifs->add_option("--top", top, "windows kept per filter");
  motifs->add_option("--min-count", min_count, "minimum window occurrences");
  motifs->add_option("--out", output, "motifs JSON output (stdout when omitted)");

  auto* similar = app.add_subcommand("similar", "retrieve nearest patients by pooled vector");
  similar->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  similar->add_option("--sentences", sentences_path, "sentences JSONL")->required();
  similar->add_option("--query", query, "patient id to search around")->required();
  similar->add_option("--k", k, "neighbors to return");

  auto* export_emb = app.add_subcommand("export-embeddings", "write token embeddings with a 2D projection");
  export_emb->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  export_emb->add_option("--out", output, "TSV output path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "accuracy and AUC of predictions against labels");
  evaluate->add_option("--predictions", predictions_path, "predictions JSONL")->required();
  evaluate->add_option("--sentences", sentences_path, "labeled sentences JSONL")->required();
  evaluate->add_option("--out", output, "also write metrics JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return run_synth(spec_path, output, out_path, seed);
    if (sequence->parsed()) return run_sequence(input, output, config_path, vocab_path, seed);
    if (train->parsed())
      return run_train(sentences_path, dev_path, config_path, vocab_path, out_path, pretrain_corpus, seed);
    if (predict->parsed()) return run_predict(ckpt_path, sentences_path, output);
    if (baseline->parsed())
      return run_baseline(sentences_path, dev_path, test_path, vocab_path, C, no_time_tokens, output);
    if (motifs->parsed()) return run_motifs(ckpt_path, sentences_path, top, min_count, output);
    if (similar->parsed()) return run_similar(ckpt_path, sentences_path, query, k);
    if (export_emb->parsed()) return run_export_embeddings(ckpt_path, output);
    if (evaluate->parsed()) return run_evaluate(predictions_path, sentences_path, output);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "deepr: %s\n", e.what());
    return 3;
  }
  return 2;
}
