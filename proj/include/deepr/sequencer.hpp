// Turns a raw admission history into a sentence: one phrase per admission,
// TRANSFER words at intra-episode merge points, coded time-gap words between
// episodes, rare codes folded to RAREWORD, and a suffix trim to the last
// max_sentence_tokens words.
#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deepr/rng.hpp"
#include "deepr/vocab.hpp"

namespace deepr {

// --- timestamps ---------------------------------------------------------
// Hour-resolution epoch seconds. Accepts "YYYY-MM-DD[THH:MM[:SS]]".

inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u + static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t parse_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
  if (n < 3) throw std::runtime_error("bad timestamp: \"" + s + "\"");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 60)
    throw std::runtime_error("bad timestamp: \"" + s + "\"");
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::string format_timestamp(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  // civil_from_days, inverse of the above
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : static_cast<unsigned>(-9));
  y += m <= 2;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem % 3600) / 60),
                static_cast<long long>(rem % 60));
  return buf;
}

// --- domain types -------------------------------------------------------

struct Admission {
  std::int64_t admit_time = 0;     // epoch seconds
  std::int64_t discharge_time = 0;
  std::vector<std::string> diagnoses;   // primary first
  std::vector<std::string> procedures;
  bool transfer_flag = false;
};

struct RawRecord {
  std::string patient_id;
  std::vector<Admission> admissions;  // sorted by admit_time
  std::optional<int> label;
};

struct Sentence {
  std::string patient_id;
  std::vector<int> tokens;  // vocabulary ids
  std::vector<std::pair<int, int>> boundaries;  // [start, end) phrase spans
  std::optional<int> label;
};

struct GapBin {
  double upper_months;  // last bin uses +inf
  std::string token;
};

struct SequencerConfig {
  std::vector<GapBin> gap_bins = default_gap_bins();
  double episode_merge_hours = 12.0;
  double episode_merge_with_transfer_hours = 24.0;
  int code_truncation_level = 3;
  bool randomize_within_phrase = false;
  std::uint64_t rng_seed = 0;
  int max_sentence_tokens = 100;
  std::unordered_map<std::string, std::string> procedure_blocks;  // optional; identity when empty

  static std::vector<GapBin> default_gap_bins() {
    const auto& toks = default_gap_tokens();
    return {{1.0, toks[0]},
            {3.0, toks[1]},
            {6.0, toks[2]},
            {12.0, toks[3]},
            {std::numeric_limits<double>::infinity(), toks[4]}};
  }
};

struct SequencerDiagnostics {
  std::int64_t malformed_codes = 0;
  std::int64_t overlapping_admissions = 0;
};

// mean Gregorian month; the gap bins are specified in months
inline constexpr double kDaysPerMonth = 30.4375;

// --- operations ---------------------------------------------------------

// Cuts a diagnosis code to its category level: everything after the first dot
// is dropped, and letter-prefixed codes keep at most `level` leading
// characters. All-numeric procedure codes map through the block table, or
// pass unchanged without one. Anything else passes through verbatim.
inline std::string truncate_code(const std::string& raw, int level,
                                 const std::unordered_map<std::string, std::string>* blocks = nullptr,
                                 SequencerDiagnostics* diag = nullptr) {
  bool all_digits = !raw.empty();
  for (char c : raw)
    if (!std::isdigit(static_cast<unsigned char>(c))) all_digits = false;
  if (all_digits) {
    if (blocks) {
      auto it = blocks->find(raw);
      if (it != blocks->end()) return it->second;
    }
    return raw;
  }
  if (!raw.empty() && std::isalpha(static_cast<unsigned char>(raw[0]))) {
    std::size_t cut = raw.find('.');
    std::size_t n = cut == std::string::npos ? raw.size() : cut;
    if (n > static_cast<std::size_t>(level)) n = static_cast<std::size_t>(level);
    return raw.substr(0, n);
  }
  if (diag) ++diag->malformed_codes;
  return raw;
}

struct Episode {
  std::vector<Admission> admissions;  // linked by transfers / short gaps
  std::int64_t admit_time() const { return admissions.front().admit_time; }
  std::int64_t discharge_time() const { return admissions.back().discharge_time; }
};

// Links consecutive admissions into episodes: gap < episode_merge_hours, or
// within [merge, merge_with_transfer) hours when the later admission carries
// a documented transfer. Overlaps count as gap 0.
inline std::vector<Episode> link_episodes(const RawRecord& record, const SequencerConfig& cfg,
                                          SequencerDiagnostics* diag = nullptr) {
  std::vector<Episode> episodes;
  for (const auto& adm : record.admissions) {
    if (!episodes.empty()) {
      const Admission& prev = episodes.back().admissions.back();
      double gap_h = static_cast<double>(adm.admit_time - prev.discharge_time) / 3600.0;
      if (gap_h < 0) {
        if (diag) ++diag->overlapping_admissions;
        gap_h = 0;
      }
      bool merge = gap_h < cfg.episode_merge_hours ||
                   (gap_h < cfg.episode_merge_with_transfer_hours && adm.transfer_flag);
      if (merge) {
        episodes.back().admissions.push_back(adm);
        continue;
      }
    }
    episodes.push_back(Episode{{adm}});
  }
  return episodes;
}

// First bin whose upper bound covers the gap; intervals are right-closed per
// the (0-1], (1-3], ... scheme, so a gap of exactly 1 month is still "0-1m".
inline const std::string& gap_token(double gap_hours, const SequencerConfig& cfg) {
  double months = gap_hours / 24.0 / kDaysPerMonth;
  for (const auto& bin : cfg.gap_bins)
    if (months <= bin.upper_months) return bin.token;
  return cfg.gap_bins.back().token;  // unreachable while the last bound is +inf
}

namespace detail {

inline std::vector<std::string> phrase_tokens(const Admission& adm, const SequencerConfig& cfg,
                                              SequencerDiagnostics* diag, Rng* rng) {
  std::vector<std::string> toks;
  toks.reserve(adm.diagnoses.size() + adm.procedures.size());
  for (const auto& dx : adm.diagnoses) {
    if (dx.empty()) throw std::runtime_error("empty diagnosis code");
    toks.push_back(truncate_code(dx, cfg.code_truncation_level, nullptr, diag));
  }
  const auto* blocks = cfg.procedure_blocks.empty() ? nullptr : &cfg.procedure_blocks;
  for (const auto& px : adm.procedures) {
    if (px.empty()) throw std::runtime_error("empty procedure code");
    toks.push_back(truncate_code(px, cfg.code_truncation_level, blocks, diag));
  }
  if (rng) shuffle_vec(toks, *rng);
  return toks;
}

}  // namespace detail

struct TokenStream {
  std::vector<std::string> tokens;
  std::vector<std::pair<int, int>> boundaries;  // phrase spans, pre-trim
};

// Full untrimmed, unfolded token stream: phrases in EMR (or shuffled) order,
// TRANSFER words at intra-episode junctions, gap words between episodes.
inline TokenStream sequence_tokens(const RawRecord& record, const SequencerConfig& cfg,
                                   SequencerDiagnostics* diag = nullptr) {
  if (record.admissions.empty()) throw std::runtime_error("empty record: " + record.patient_id);

  std::optional<Rng> rng;
  if (cfg.randomize_within_phrase) rng.emplace(mix_seed(cfg.rng_seed, fnv1a64(record.patient_id)));

  auto episodes = link_episodes(record, cfg, diag);
  TokenStream out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (e > 0) {
      double gap_h =
          static_cast<double>(episodes[e].admit_time() - episodes[e - 1].discharge_time()) / 3600.0;
      if (gap_h < 0) gap_h = 0;
      out.tokens.push_back(gap_token(gap_h, cfg));
    }
    for (std::size_t a = 0; a < episodes[e].admissions.size(); ++a) {
      if (a > 0) out.tokens.push_back(kTransfer);
      auto phrase = detail::phrase_tokens(episodes[e].admissions[a], cfg, diag, rng ? &*rng : nullptr);
      int start = static_cast<int>(out.tokens.size());
      out.tokens.insert(out.tokens.end(), phrase.begin(), phrase.end());
      out.boundaries.emplace_back(start, static_cast<int>(out.tokens.size()));
    }
  }
  return out;
}

inline Sentence sequence_record(const RawRecord& record, const Vocabulary& vocab, const SequencerConfig& cfg,
                                SequencerDiagnostics* diag = nullptr) {
  TokenStream stream = sequence_tokens(record, cfg, diag);

  // keep the last max_sentence_tokens words; boundaries are recomputed
  // relative to the kept suffix, clipping any phrase the cut lands in
  int offset = 0;
  if (cfg.max_sentence_tokens > 0 && static_cast<int>(stream.tokens.size()) > cfg.max_sentence_tokens)
    offset = static_cast<int>(stream.tokens.size()) - cfg.max_sentence_tokens;

  Sentence s;
  s.patient_id = record.patient_id;
  s.label = record.label;
  s.tokens.reserve(stream.tokens.size() - static_cast<std::size_t>(offset));
  for (std::size_t i = static_cast<std::size_t>(offset); i < stream.tokens.size(); ++i)
    s.tokens.push_back(vocab.id_of(stream.tokens[i]));
  for (const auto& [start, end] : stream.boundaries) {
    if (end <= offset) continue;
    s.boundaries.emplace_back(std::max(start - offset, 0), end - offset);
  }
  return s;
}

}  // namespace deepr
