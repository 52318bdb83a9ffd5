// Token vocabulary with frequency-based rare-word folding.
//
// Special tokens get fixed low ids so checkpoints stay comparable across
// corpora: RAREWORD=0, TRANSFER=1, then one id per time-gap token (2..6 with
// the default five bins). All remaining tokens are id-ordered by descending
// corpus count, ties broken lexicographically.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepr/rng.hpp"

namespace deepr {

inline constexpr const char* kRareWord = "RAREWORD";
inline constexpr const char* kTransfer = "TRANSFER";
inline constexpr const char* kPadToken = "PAD";

inline const std::vector<std::string>& default_gap_tokens() {
  static const std::vector<std::string> t = {"0-1m", "1-3m", "3-6m", "6-12m", "12m+"};
  return t;
}

struct Vocabulary {
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;
  std::vector<std::int64_t> counts;  // indexed by id
  int rare_threshold = 0;
  int n_special = 0;  // RAREWORD + TRANSFER + gap tokens, ids [0, n_special)

  int size() const { return static_cast<int>(id_to_token.size()); }

  bool contains(const std::string& tok) const { return token_to_id.count(tok) > 0; }

  int id_of(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? 0 : it->second;  // unknown folds to RAREWORD
  }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<std::size_t>(id)];
  }

  bool is_special(int id) const { return id >= 0 && id < n_special; }
  bool is_gap_token(int id) const { return id >= 2 && id < n_special; }
};

inline std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

inline std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(vocab.token_of(id));
  return tokens;
}

// Builds the vocabulary from token lists. Tokens occurring fewer than
// rare_threshold times fold into RAREWORD (whose count accumulates them).
// Special tokens are exempt from thresholding and always present.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int rare_threshold,
                              const std::vector<std::string>& gap_tokens = default_gap_tokens()) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");

  std::map<std::string, std::int64_t> freq;
  for (const auto& doc : corpus)
    for (const auto& tok : doc) ++freq[tok];

  Vocabulary v;
  v.rare_threshold = rare_threshold;
  auto add = [&v](const std::string& tok, std::int64_t count) {
    v.token_to_id.emplace(tok, v.size());
    v.id_to_token.push_back(tok);
    v.counts.push_back(count);
  };

  add(kRareWord, 0);
  add(kTransfer, freq.count(kTransfer) ? freq[kTransfer] : 0);
  for (const auto& g : gap_tokens) add(g, freq.count(g) ? freq[g] : 0);
  v.n_special = v.size();

  std::vector<std::pair<std::string, std::int64_t>> kept;
  std::int64_t folded = 0;
  for (const auto& [tok, count] : freq) {
    if (v.token_to_id.count(tok)) continue;  // special, already placed
    if (count < rare_threshold)
      folded += count;
    else
      kept.emplace_back(tok, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, count] : kept) add(tok, count);
  v.counts[0] = folded;
  return v;
}

// Stable digest of the id assignment; embedded in sentence files and
// checkpoints to catch id-space mismatches.
inline std::string vocab_hash(const Vocabulary& v) {
  std::uint64_t h = fnv1a64("deepr-vocab/1");
  h = fnv1a64(std::to_string(v.rare_threshold), h);
  for (int id = 0; id < v.size(); ++id) {
    h = fnv1a64(v.id_to_token[static_cast<std::size_t>(id)], h);
    h = fnv1a64("\x1f", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline nlohmann::json vocab_to_json(const Vocabulary& v) {
  nlohmann::json tokens = nlohmann::json::object();
  for (int id = 0; id < v.size(); ++id)
    tokens[v.id_to_token[static_cast<std::size_t>(id)]] = {id, v.counts[static_cast<std::size_t>(id)]};
  return {{"version", 1}, {"rare_threshold", v.rare_threshold}, {"n_special", v.n_special}, {"tokens", tokens}};
}

inline Vocabulary vocab_from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.rare_threshold = j.at("rare_threshold").get<int>();
  v.n_special = j.at("n_special").get<int>();
  const auto& tokens = j.at("tokens");
  v.id_to_token.resize(tokens.size());
  v.counts.resize(tokens.size(), 0);
  for (auto it = tokens.begin(); it != tokens.end(); ++it) {
    int id = it.value().at(0).get<int>();
    if (id < 0 || id >= static_cast<int>(tokens.size())) throw std::runtime_error("vocab file: non-dense ids");
    v.id_to_token[static_cast<std::size_t>(id)] = it.key();
    v.counts[static_cast<std::size_t>(id)] = it.value().at(1).get<std::int64_t>();
    v.token_to_id.emplace(it.key(), id);
  }
  if (v.token_to_id.size() != v.id_to_token.size()) throw std::runtime_error("vocab file: duplicate ids");
  return v;
}

}  // namespace deepr
