// Synthetic EMR cohorts with planted, order-sensitive risk motifs.
//
// Positive-class patients carry a planted trigram as a contiguous in-phrase
// run; negative-class patients receive the same three tokens scattered so the
// exact window never occurs. Class-conditional token counts therefore match,
// which starves bag-of-words features while leaving full signal for
// contiguous motif detectors. Admission timing exercises every gap bin and
// both episode-merge rules.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "deepr/rng.hpp"
#include "deepr/sequencer.hpp"

namespace deepr {

struct PlantedMotif {
  std::vector<std::string> tokens;  // trigram
  bool positive_effect = true;
  double injection_probability = 1.0;
};

struct CohortSpec {
  int n_patients = 5000;
  int vocab_size = 30;  // distinct background codes
  double mean_admissions = 3.0;
  int codes_min = 4;
  int codes_max = 7;
  std::vector<PlantedMotif> planted_motifs = {{{"S11", "S12", "S13"}, true, 1.0}};
  std::vector<double> gap_bin_weights = {0.35, 0.25, 0.2, 0.12, 0.08};
  double label_noise = 0.05;
  std::uint64_t seed = 0;
};

struct CohortManifest {
  std::vector<PlantedMotif> motifs;
  int n_patients = 0;
  int n_positive = 0;          // final labels
  int n_flipped = 0;
  double chi2_stat = 0.0;
  double chi2_pvalue = 1.0;
  double unigram_tv_distance = 0.0;
  std::vector<double> contiguous_presence_rate;  // per motif, among its target class pre-noise
};

namespace detail {

inline std::string background_code(int k) {
  char letter = static_cast<char>('A' + k % 26);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%02d", letter, k / 26);
  return buf;
}

inline int draw_admission_count(Rng& rng, double mean) {
  if (mean <= 1.0) return 1;
  double q = 1.0 - 1.0 / mean;
  double u = uniform01(rng);
  int n = 1 + static_cast<int>(std::floor(std::log1p(-u) / std::log(q)));
  return std::min(std::max(n, 1), 8);
}

// True if the exact token window occurs contiguously inside any single
// phrase (dx followed by px, the order the sequencer renders).
inline bool contains_contiguous(const RawRecord& rec, const std::vector<std::string>& motif) {
  for (const auto& adm : rec.admissions) {
    std::vector<std::string> phrase = adm.diagnoses;
    phrase.insert(phrase.end(), adm.procedures.begin(), adm.procedures.end());
    if (phrase.size() < motif.size()) continue;
    for (std::size_t t = 0; t + motif.size() <= phrase.size(); ++t) {
      bool match = true;
      for (std::size_t j = 0; j < motif.size(); ++j)
        if (phrase[t + j] != motif[j]) {
          match = false;
          break;
        }
      if (match) return true;
    }
  }
  return false;
}

inline void inject_contiguous(RawRecord& rec, const std::vector<std::string>& motif, Rng& rng) {
  auto& adm = rec.admissions[uniform_index(rng, rec.admissions.size())];
  std::size_t pos = uniform_index(rng, adm.diagnoses.size() + 1);
  adm.diagnoses.insert(adm.diagnoses.begin() + static_cast<std::ptrdiff_t>(pos), motif.begin(), motif.end());
}

// Scatters the motif tokens so the exact window never becomes contiguous:
// across distinct admissions when possible (phrases are always separated by
// a gap or TRANSFER word), otherwise into one phrase with at least one
// background token breaking the run.
inline void inject_scattered(RawRecord& rec, const std::vector<std::string>& motif, Rng& rng) {
  if (rec.admissions.size() >= 2) {
    std::vector<std::size_t> adms(rec.admissions.size());
    for (std::size_t i = 0; i < adms.size(); ++i) adms[i] = i;
    shuffle_vec(adms, rng);
    for (std::size_t j = 0; j < motif.size(); ++j) {
      auto& adm = rec.admissions[adms[j % adms.size()]];
      std::size_t pos = uniform_index(rng, adm.diagnoses.size() + 1);
      adm.diagnoses.insert(adm.diagnoses.begin() + static_cast<std::ptrdiff_t>(pos), motif[j]);
    }
    if (!contains_contiguous(rec, motif)) return;
    // collisions are possible when two tokens share an admission; fall through
    for (auto& adm : rec.admissions)
      for (const auto& tok : motif)
        adm.diagnoses.erase(std::remove(adm.diagnoses.begin(), adm.diagnoses.end(), tok), adm.diagnoses.end());
  }
  // single phrase: pick slots in the background run, rejecting the
  // all-in-one-slot draw that would keep the trigram contiguous
  auto& adm = rec.admissions[uniform_index(rng, rec.admissions.size())];
  std::size_t g = adm.diagnoses.size();
  std::vector<std::size_t> slots(motif.size());
  do {
    for (auto& s : slots) s = uniform_index(rng, g + 1);
    std::sort(slots.begin(), slots.end());
  } while (slots.front() == slots.back());
  for (std::size_t j = motif.size(); j-- > 0;)
    adm.diagnoses.insert(adm.diagnoses.begin() + static_cast<std::ptrdiff_t>(slots[j]), motif[j]);
}

}  // namespace detail

inline std::pair<std::vector<RawRecord>, CohortManifest> generate_cohort(const CohortSpec& spec) {
  if (spec.n_patients < 1) throw std::invalid_argument("generate_cohort: n_patients < 1");
  if (spec.vocab_size < 1 || spec.vocab_size > 2600)
    throw std::invalid_argument("generate_cohort: vocab_size out of range");
  if (spec.codes_min < 1 || spec.codes_max < spec.codes_min)
    throw std::invalid_argument("generate_cohort: bad codes_per_admission range");
  if (spec.gap_bin_weights.size() != 5) throw std::invalid_argument("generate_cohort: need 5 gap bin weights");
  if (spec.label_noise < 0.0 || spec.label_noise >= 0.5)
    throw std::invalid_argument("generate_cohort: label_noise outside [0, 0.5)");

  std::vector<std::string> background(static_cast<std::size_t>(spec.vocab_size));
  for (int k = 0; k < spec.vocab_size; ++k) background[static_cast<std::size_t>(k)] = detail::background_code(k);
  {
    std::vector<std::string> seen(background);
    for (const auto& motif : spec.planted_motifs) {
      if (motif.tokens.size() != 3) throw std::invalid_argument("generate_cohort: planted motifs must be trigrams");
      for (const auto& tok : motif.tokens) {
        if (std::find(seen.begin(), seen.end(), tok) != seen.end())
          throw std::invalid_argument("generate_cohort: planted token collides: " + tok);
        seen.push_back(tok);
      }
    }
  }

  std::vector<double> gap_cum(5);
  {
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      acc += spec.gap_bin_weights[i];
      gap_cum[i] = acc;
    }
    if (acc <= 0.0) throw std::invalid_argument("generate_cohort: gap bin weights sum to zero");
  }
  // month spans per bin; the first starts above the 24h merge window so a
  // drawn separator gap never accidentally links two episodes
  static constexpr double kBinLo[5] = {24.5 / 24.0 / kDaysPerMonth, 1.0, 3.0, 6.0, 12.0};
  static constexpr double kBinHi[5] = {1.0, 3.0, 6.0, 12.0, 24.0};

  std::vector<RawRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n_patients));
  CohortManifest manifest;
  manifest.motifs = spec.planted_motifs;
  manifest.n_patients = spec.n_patients;
  std::vector<std::int64_t> injected(spec.planted_motifs.size(), 0);
  std::vector<std::int64_t> contiguous_ok(spec.planted_motifs.size(), 0);
  std::vector<std::int64_t> target_class_count(spec.planted_motifs.size(), 0);

  for (int i = 0; i < spec.n_patients; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    RawRecord rec;
    {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "p%06d", i);
      rec.patient_id = buf;
    }

    int true_label = uniform01(rng) < 0.5 ? 1 : 0;
    int n_adm = detail::draw_admission_count(rng, spec.mean_admissions);

    std::int64_t t = parse_timestamp("2012-01-01T08:00:00") + static_cast<std::int64_t>(uniform_index(rng, 720)) * 3600;
    bool next_transfer = false;
    for (int a = 0; a < n_adm; ++a) {
      Admission adm;
      adm.admit_time = t;
      adm.discharge_time = t + 43200 + static_cast<std::int64_t>(uniform_index(rng, 96)) * 3600;  // 12h..4.5d stay
      adm.transfer_flag = next_transfer;
      int n_codes = spec.codes_min + static_cast<int>(uniform_index(
                                         rng, static_cast<std::size_t>(spec.codes_max - spec.codes_min + 1)));
      int n_dx = std::max(1, (n_codes * 3 + 2) / 5);
      for (int c = 0; c < n_codes; ++c) {
        const std::string& code = background[uniform_index(rng, background.size())];
        if (c < n_dx)
          adm.diagnoses.push_back(code);
        else
          adm.procedures.push_back(code);
      }
      std::int64_t discharged = adm.discharge_time;
      rec.admissions.push_back(std::move(adm));

      if (a + 1 < n_adm) {
        double u = uniform01(rng);
        std::int64_t gap_s;
        next_transfer = false;
        if (u < 0.10) {
          gap_s = static_cast<std::int64_t>(uniform_range(rng, 0.0, 11.9 * 3600.0));  // merges
        } else if (u < 0.15) {
          gap_s = static_cast<std::int64_t>(uniform_range(rng, 12.5 * 3600.0, 23.5 * 3600.0));
          next_transfer = true;  // merges via documented transfer
        } else if (u < 0.18) {
          gap_s = static_cast<std::int64_t>(uniform_range(rng, 12.5 * 3600.0, 23.5 * 3600.0));  // separate episode
        } else {
          std::size_t bin = sample_cumulative(rng, gap_cum);
          double months = uniform_range(rng, kBinLo[bin], kBinHi[bin]);
          gap_s = static_cast<std::int64_t>(months * kDaysPerMonth * 86400.0);
        }
        t = discharged + gap_s;
      }
    }

    for (std::size_t mi = 0; mi < spec.planted_motifs.size(); ++mi) {
      const auto& motif = spec.planted_motifs[mi];
      int target = motif.positive_effect ? 1 : 0;
      bool in_target = true_label == target;
      if (in_target) ++target_class_count[mi];
      if (uniform01(rng) < motif.injection_probability) {
        ++injected[mi];
        if (in_target)
          detail::inject_contiguous(rec, motif.tokens, rng);
        else
          detail::inject_scattered(rec, motif.tokens, rng);
      }
      if (in_target && detail::contains_contiguous(rec, motif.tokens)) ++contiguous_ok[mi];
    }

    rec.label = true_label;
    if (uniform01(rng) < spec.label_noise) {
      rec.label = 1 - *rec.label;
      ++manifest.n_flipped;
    }
    if (*rec.label == 1) ++manifest.n_positive;
    records.push_back(std::move(rec));
  }

  for (std::size_t mi = 0; mi < spec.planted_motifs.size(); ++mi)
    manifest.contiguous_presence_rate.push_back(
        target_class_count[mi] > 0
            ? static_cast<double>(contiguous_ok[mi]) / static_cast<double>(target_class_count[mi])
            : 0.0);

  // class-conditional unigram diagnostics over the code streams
  std::map<std::string, std::array<std::int64_t, 2>> table;
  std::array<std::int64_t, 2> totals = {0, 0};
  for (const auto& rec : records) {
    int cls = *rec.label;
    for (const auto& adm : rec.admissions) {
      for (const auto& c : adm.diagnoses) {
        ++table[c][static_cast<std::size_t>(cls)];
        ++totals[static_cast<std::size_t>(cls)];
      }
      for (const auto& c : adm.procedures) {
        ++table[c][static_cast<std::size_t>(cls)];
        ++totals[static_cast<std::size_t>(cls)];
      }
    }
  }
  double chi2 = 0.0;
  double tv = 0.0;
  const double grand = static_cast<double>(totals[0] + totals[1]);
  for (const auto& [tok, cells] : table) {
    double rowsum = static_cast<double>(cells[0] + cells[1]);
    for (int cls = 0; cls < 2; ++cls) {
      double expected = rowsum * static_cast<double>(totals[static_cast<std::size_t>(cls)]) / grand;
      if (expected > 0.0) {
        double d = static_cast<double>(cells[static_cast<std::size_t>(cls)]) - expected;
        chi2 += d * d / expected;
      }
    }
    tv += std::abs(static_cast<double>(cells[0]) / static_cast<double>(totals[0]) -
                   static_cast<double>(cells[1]) / static_cast<double>(totals[1]));
  }
  manifest.chi2_stat = chi2;
  manifest.unigram_tv_distance = 0.5 * tv;
  if (table.size() > 1) {
    boost::math::chi_squared dist(static_cast<double>(table.size() - 1));
    manifest.chi2_pvalue = 1.0 - boost::math::cdf(dist, chi2);
  }
  return {std::move(records), std::move(manifest)};
}

inline void to_json(nlohmann::json& j, const PlantedMotif& m) {
  j = {{"tokens", m.tokens},
       {"label_effect", m.positive_effect ? "positive" : "negative"},
       {"injection_probability", m.injection_probability}};
}

inline void from_json(const nlohmann::json& j, PlantedMotif& m) {
  j.at("tokens").get_to(m.tokens);
  m.positive_effect = j.value("label_effect", "positive") == std::string("positive");
  m.injection_probability = j.value("injection_probability", 1.0);
}

inline void to_json(nlohmann::json& j, const CohortSpec& s) {
  j = {{"n_patients", s.n_patients},
       {"vocab_size", s.vocab_size},
       {"mean_admissions", s.mean_admissions},
       {"codes_per_admission", {s.codes_min, s.codes_max}},
       {"planted_motifs", s.planted_motifs},
       {"gap_bin_weights", s.gap_bin_weights},
       {"label_noise", s.label_noise},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, CohortSpec& s) {
  s.n_patients = j.value("n_patients", s.n_patients);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.mean_admissions = j.value("mean_admissions", s.mean_admissions);
  if (j.contains("codes_per_admission")) {
    s.codes_min = j.at("codes_per_admission").at(0).get<int>();
    s.codes_max = j.at("codes_per_admission").at(1).get<int>();
  }
  if (j.contains("planted_motifs")) j.at("planted_motifs").get_to(s.planted_motifs);
  if (j.contains("gap_bin_weights")) j.at("gap_bin_weights").get_to(s.gap_bin_weights);
  s.label_noise = j.value("label_noise", s.label_noise);
  s.seed = j.value("seed", s.seed);
}

inline nlohmann::json manifest_to_json(const CohortManifest& m) {
  return {{"planted_motifs", m.motifs},
          {"n_patients", m.n_patients},
          {"n_positive", m.n_positive},
          {"n_flipped", m.n_flipped},
          {"chi2_stat", m.chi2_stat},
          {"chi2_pvalue", m.chi2_pvalue},
          {"unigram_tv_distance", m.unigram_tv_distance},
          {"contiguous_presence_rate", m.contiguous_presence_rate}};
}

}  // namespace deepr
