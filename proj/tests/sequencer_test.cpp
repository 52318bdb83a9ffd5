#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "deepr/sequencer.hpp"
#include "deepr/vocab.hpp"

using namespace deepr;

namespace {

Admission make_admission(std::int64_t admit, std::int64_t discharge, std::vector<std::string> dx,
                         std::vector<std::string> px = {}, bool transfer = false) {
  Admission a;
  a.admit_time = admit;
  a.discharge_time = discharge;
  a.diagnoses = std::move(dx);
  a.procedures = std::move(px);
  a.transfer_flag = transfer;
  return a;
}

constexpr std::int64_t kHour = 3600;
constexpr std::int64_t kDay = 86400;

Vocabulary vocab_of(std::vector<std::string> tokens) {
  return build_vocab({std::move(tokens)}, 0);
}

}  // namespace

TEST(TruncateCode, DiagnosisLevel3) {
  EXPECT_EQ(truncate_code("F20.0", 3), "F20");
  EXPECT_EQ(truncate_code("F20", 3), "F20");
  EXPECT_EQ(truncate_code("E11.29", 3), "E11");
  EXPECT_EQ(truncate_code("Z83.41", 3), "Z83");
  EXPECT_EQ(truncate_code("F2", 3), "F2");
  EXPECT_EQ(truncate_code("M1011", 3), "M10");
}

TEST(TruncateCode, NumericProcedureIdentityWithoutBlockTable) {
  EXPECT_EQ(truncate_code("1910", 3), "1910");
  EXPECT_EQ(truncate_code("911", 3), "911");
}

TEST(TruncateCode, NumericProcedureUsesBlockTable) {
  std::unordered_map<std::string, std::string> blocks = {{"1910", "BLK_1910"}};
  EXPECT_EQ(truncate_code("1910", 3, &blocks), "BLK_1910");
  EXPECT_EQ(truncate_code("911", 3, &blocks), "911");  // unmapped passes through
}

TEST(TruncateCode, MalformedPassesThroughAndIsCounted) {
  SequencerDiagnostics diag;
  EXPECT_EQ(truncate_code("9A1.2", 3, nullptr, &diag), "9A1.2");
  EXPECT_EQ(diag.malformed_codes, 1);
  EXPECT_EQ(truncate_code("F20.0", 3, nullptr, &diag), "F20");
  EXPECT_EQ(diag.malformed_codes, 1);
}

TEST(GapToken, SpecExamples) {
  SequencerConfig cfg;
  EXPECT_EQ(gap_token(45 * 24.0, cfg), "1-3m");   // 45 days = 1.48 months
  EXPECT_EQ(gap_token(0.0, cfg), "0-1m");
  EXPECT_EQ(gap_token(400 * 24.0, cfg), "12m+");  // 13.1 months
}

TEST(GapToken, RightClosedIntervals) {
  SequencerConfig cfg;
  EXPECT_EQ(gap_token(kDaysPerMonth * 24.0, cfg), "0-1m");  // exactly one month
  EXPECT_EQ(gap_token(kDaysPerMonth * 24.0 + 1.0, cfg), "1-3m");
  EXPECT_EQ(gap_token(3 * kDaysPerMonth * 24.0, cfg), "1-3m");
  EXPECT_EQ(gap_token(12 * kDaysPerMonth * 24.0, cfg), "6-12m");
  EXPECT_EQ(gap_token(12 * kDaysPerMonth * 24.0 + 1.0, cfg), "12m+");
}

TEST(GapToken, TotalityProperty) {
  SequencerConfig cfg;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    double hours = uniform_range(rng, 0.0, 24.0 * 4000.0);
    const std::string& tok = gap_token(hours, cfg);
    int matches = 0;
    double months = hours / 24.0 / kDaysPerMonth;
    double lo = -1.0;
    for (const auto& bin : cfg.gap_bins) {
      if (months > lo && months <= bin.upper_months) {
        ++matches;
        EXPECT_EQ(tok, bin.token);
      }
      lo = bin.upper_months;
    }
    EXPECT_EQ(matches, 1);
  }
}

TEST(LinkEpisodes, ShortGapMerges) {
  RawRecord rec;
  rec.patient_id = "p";
  rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
  rec.admissions.push_back(make_admission(48 * kHour + 10 * kHour, 100 * kHour, {"B00"}));
  auto episodes = link_episodes(rec, SequencerConfig{});
  ASSERT_EQ(episodes.size(), 1u);
  EXPECT_EQ(episodes[0].admissions.size(), 2u);
  EXPECT_EQ(episodes[0].admit_time(), 0);
  EXPECT_EQ(episodes[0].discharge_time(), 100 * kHour);
}

TEST(LinkEpisodes, MediumGapWithTransferMerges) {
  RawRecord rec;
  rec.patient_id = "p";
  rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
  rec.admissions.push_back(make_admission(48 * kHour + 18 * kHour, 100 * kHour, {"B00"}, {}, true));
  auto episodes = link_episodes(rec, SequencerConfig{});
  ASSERT_EQ(episodes.size(), 1u);
  EXPECT_EQ(episodes[0].admissions.size(), 2u);
}

TEST(LinkEpisodes, MediumGapWithoutTransferSplits) {
  RawRecord rec;
  rec.patient_id = "p";
  rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
  rec.admissions.push_back(make_admission(48 * kHour + 18 * kHour, 100 * kHour, {"B00"}));
  auto episodes = link_episodes(rec, SequencerConfig{});
  EXPECT_EQ(episodes.size(), 2u);
}

TEST(LinkEpisodes, BoundaryGaps) {
  SequencerConfig cfg;
  auto episodes_for = [&cfg](std::int64_t gap, bool transfer) {
    RawRecord rec;
    rec.patient_id = "p";
    rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
    rec.admissions.push_back(make_admission(48 * kHour + gap, 100 * kHour, {"B00"}, {}, transfer));
    return link_episodes(rec, cfg).size();
  };
  EXPECT_EQ(episodes_for(12 * kHour - 1, false), 1u);  // strictly below 12h
  EXPECT_EQ(episodes_for(12 * kHour, false), 2u);      // exactly 12h, no transfer
  EXPECT_EQ(episodes_for(12 * kHour, true), 1u);
  EXPECT_EQ(episodes_for(24 * kHour - 1, true), 1u);
  EXPECT_EQ(episodes_for(24 * kHour, true), 2u);       // at the transfer cap
}

TEST(LinkEpisodes, OverlapTreatedAsZeroGap) {
  RawRecord rec;
  rec.patient_id = "p";
  rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
  rec.admissions.push_back(make_admission(40 * kHour, 100 * kHour, {"B00"}));
  SequencerDiagnostics diag;
  auto episodes = link_episodes(rec, SequencerConfig{}, &diag);
  EXPECT_EQ(episodes.size(), 1u);
  EXPECT_EQ(diag.overlapping_admissions, 1);
}

TEST(SequenceRecord, SingleAdmissionSinglePhrase) {
  RawRecord rec;
  rec.patient_id = "p1";
  rec.admissions.push_back(make_admission(0, kDay, {"D12"}));
  auto vocab = vocab_of({"D12"});
  Sentence s = sequence_record(rec, vocab, SequencerConfig{});
  ASSERT_EQ(s.tokens.size(), 1u);
  EXPECT_EQ(vocab.token_of(s.tokens[0]), "D12");
  ASSERT_EQ(s.boundaries.size(), 1u);
  EXPECT_EQ(s.boundaries[0], std::make_pair(0, 1));
}

TEST(SequenceRecord, EmptyRecordThrows) {
  RawRecord rec;
  rec.patient_id = "p";
  Vocabulary vocab = vocab_of({"D12"});
  EXPECT_THROW(sequence_record(rec, vocab, SequencerConfig{}), std::runtime_error);
}

TEST(SequenceRecord, WorkedExampleSkeleton) {
  // Four single-admission episodes with 45d / 15d / 240d gaps should render
  // exactly [P1] 1-3m [P2] 0-1m [P3] 6-12m [P4].
  std::vector<std::string> in_vocab = {"1910", "Z83", "911", "1008", "D12", "K31", "R94", "H53", "Y83",
                                       "M62",  "Y92", "E87", "T81",  "1893", "S14", "738", "1916", "T91",
                                       "K91",  "M10", "E86", "Z13"};
  Vocabulary vocab = vocab_of(in_vocab);

  RawRecord rec;
  rec.patient_id = "worked";
  std::int64_t t = 0;
  auto add = [&](std::vector<std::string> dx, std::vector<std::string> px, std::int64_t gap_days_after) {
    rec.admissions.push_back(make_admission(t, t + 2 * kDay, std::move(dx), std::move(px)));
    t += 2 * kDay + gap_days_after * kDay;
  };
  add({"Z83.4", "D12.8", "K31"}, {"1910", "911", "1008"}, 45);
  add({"R94", "Q96.8", "H53", "Y83", "M62", "Y92", "E87", "T81", "V90.1", "W55", "D12", "S14", "Z83"},
      {"1893", "738", "1910", "1916"}, 15);
  add({"T91", "U60", "Y83", "Y92", "K91", "M10", "E86"}, {}, 240);
  add({"K31", "Z13", "Z83"}, {"1008", "1910"}, 0);

  Sentence s = sequence_record(rec, vocab, SequencerConfig{});
  auto tokens = decode(s.tokens, vocab);

  ASSERT_EQ(s.boundaries.size(), 4u);
  // separators sit exactly between consecutive phrase spans
  std::vector<std::string> separators;
  for (std::size_t i = 1; i < s.boundaries.size(); ++i) {
    EXPECT_EQ(s.boundaries[i].first, s.boundaries[i - 1].second + 1);
    separators.push_back(tokens[static_cast<std::size_t>(s.boundaries[i - 1].second)]);
  }
  EXPECT_EQ(separators, (std::vector<std::string>{"1-3m", "0-1m", "6-12m"}));

  auto phrase_multiset = [&](int idx) {
    std::multiset<std::string> m;
    for (int i = s.boundaries[static_cast<std::size_t>(idx)].first;
         i < s.boundaries[static_cast<std::size_t>(idx)].second; ++i)
      m.insert(tokens[static_cast<std::size_t>(i)]);
    return m;
  };
  EXPECT_EQ(phrase_multiset(0), (std::multiset<std::string>{"1910", "Z83", "911", "1008", "D12", "K31"}));
  EXPECT_EQ(phrase_multiset(1),
            (std::multiset<std::string>{"R94", "RAREWORD", "H53", "Y83", "M62", "Y92", "E87", "T81",
                                        "RAREWORD", "RAREWORD", "1893", "D12", "S14", "738", "1910",
                                        "1916", "Z83"}));
  EXPECT_EQ(phrase_multiset(2),
            (std::multiset<std::string>{"T91", "RAREWORD", "Y83", "Y92", "K91", "M10", "E86"}));
  EXPECT_EQ(phrase_multiset(3), (std::multiset<std::string>{"K31", "1008", "1910", "Z13", "Z83"}));

  // EMR ordering is deterministic: primary diagnosis leads its phrase
  EXPECT_EQ(tokens[0], "Z83");
}

TEST(SequenceRecord, TransferTokenInsideEpisode) {
  RawRecord rec;
  rec.patient_id = "p";
  rec.admissions.push_back(make_admission(0, 48 * kHour, {"A00"}));
  rec.admissions.push_back(make_admission(48 * kHour + 6 * kHour, 100 * kHour, {"B00"}));
  Vocabulary vocab = vocab_of({"A00", "B00"});
  Sentence s = sequence_record(rec, vocab, SequencerConfig{});
  auto tokens = decode(s.tokens, vocab);
  EXPECT_EQ(tokens, (std::vector<std::string>{"A00", "TRANSFER", "B00"}));
  ASSERT_EQ(s.boundaries.size(), 2u);
}

TEST(SequenceRecord, TrimKeepsLastTokensAndIsSuffix) {
  RawRecord rec;
  rec.patient_id = "p";
  std::vector<std::string> dx;
  std::vector<std::string> all;
  for (int i = 0; i < 150; ++i) {
    dx.push_back("C" + std::to_string(i % 40));
  }
  rec.admissions.push_back(make_admission(0, kDay, dx));
  Vocabulary vocab = vocab_of(dx);

  SequencerConfig untrimmed;
  untrimmed.max_sentence_tokens = 1000;
  Sentence full = sequence_record(rec, vocab, untrimmed);
  ASSERT_EQ(full.tokens.size(), 150u);

  Sentence trimmed = sequence_record(rec, vocab, SequencerConfig{});
  ASSERT_EQ(trimmed.tokens.size(), 100u);
  std::vector<int> suffix(full.tokens.end() - 100, full.tokens.end());
  EXPECT_EQ(trimmed.tokens, suffix);
  ASSERT_EQ(trimmed.boundaries.size(), 1u);
  EXPECT_EQ(trimmed.boundaries[0], std::make_pair(0, 100));
}

TEST(SequenceRecord, SeparatorCountMatchesEpisodes) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    RawRecord rec;
    rec.patient_id = "p" + std::to_string(trial);
    int n = 1 + static_cast<int>(uniform_index(rng, 5));
    std::int64_t t = 0;
    for (int a = 0; a < n; ++a) {
      rec.admissions.push_back(make_admission(t, t + kDay, {"A00"}));
      t += kDay + 30 * kDay + static_cast<std::int64_t>(uniform_index(rng, 200)) * kDay;
    }
    SequencerConfig cfg;
    cfg.max_sentence_tokens = 100000;  // no trim
    Vocabulary vocab = vocab_of({"A00"});
    Sentence s = sequence_record(rec, vocab, cfg);
    auto episodes = link_episodes(rec, cfg);
    int gap_count = 0;
    for (int id : s.tokens)
      if (vocab.is_gap_token(id)) ++gap_count;
    EXPECT_EQ(gap_count, static_cast<int>(episodes.size()) - 1);
  }
}

TEST(SequenceRecord, DeterministicAndPermutationSafe) {
  RawRecord rec;
  rec.patient_id = "p42";
  rec.admissions.push_back(make_admission(0, kDay, {"A00", "B00", "C00", "D00"}, {"100", "200"}));
  rec.admissions.push_back(make_admission(100 * kDay, 101 * kDay, {"E00", "F00", "G00"}));
  Vocabulary vocab = vocab_of({"A00", "B00", "C00", "D00", "E00", "F00", "G00", "100", "200"});

  SequencerConfig cfg;
  cfg.randomize_within_phrase = true;
  cfg.rng_seed = 7;
  Sentence a = sequence_record(rec, vocab, cfg);
  Sentence b = sequence_record(rec, vocab, cfg);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.boundaries, b.boundaries);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SequencerConfig c2 = cfg;
    c2.rng_seed = seed;
    Sentence s2 = sequence_record(rec, vocab, c2);
    ASSERT_EQ(s2.boundaries.size(), a.boundaries.size());
    for (std::size_t i = 0; i < a.boundaries.size(); ++i) {
      std::multiset<int> ma(a.tokens.begin() + a.boundaries[i].first, a.tokens.begin() + a.boundaries[i].second);
      std::multiset<int> ms(s2.tokens.begin() + s2.boundaries[i].first,
                            s2.tokens.begin() + s2.boundaries[i].second);
      EXPECT_EQ(ma, ms);
    }
  }
}

TEST(SequenceRecord, SeparatorsNeverInsidePhrases) {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    RawRecord rec;
    rec.patient_id = "p" + std::to_string(trial);
    int n = 1 + static_cast<int>(uniform_index(rng, 6));
    std::int64_t t = 0;
    for (int a = 0; a < n; ++a) {
      int codes = 1 + static_cast<int>(uniform_index(rng, 4));
      std::vector<std::string> dx;
      for (int c = 0; c < codes; ++c) dx.push_back("A0" + std::to_string(uniform_index(rng, 8)));
      bool transfer = uniform01(rng) < 0.3;
      rec.admissions.push_back(make_admission(t, t + kDay, dx, {}, transfer));
      t += kDay + static_cast<std::int64_t>(uniform_index(rng, 72) * 10) * kHour;
    }
    Vocabulary vocab =
        vocab_of({"A00", "A01", "A02", "A03", "A04", "A05", "A06", "A07"});
    Sentence s = sequence_record(rec, vocab, SequencerConfig{});
    for (const auto& [start, end] : s.boundaries) {
      ASSERT_LE(start, end);
      for (int i = start; i < end; ++i) EXPECT_FALSE(vocab.is_special(s.tokens[static_cast<std::size_t>(i)]));
    }
    for (std::size_t i = 1; i < s.boundaries.size(); ++i)
      EXPECT_LE(s.boundaries[i - 1].second, s.boundaries[i].first);
  }
}

TEST(Timestamps, ParseFormatRoundTrip) {
  EXPECT_EQ(parse_timestamp("1970-01-01T00:00:00"), 0);
  EXPECT_EQ(parse_timestamp("1970-01-02T00:00:00"), 86400);
  EXPECT_EQ(format_timestamp(parse_timestamp("2013-06-15T13:00:00")), "2013-06-15T13:00:00");
  EXPECT_EQ(parse_timestamp("2013-06-15"), parse_timestamp("2013-06-15T00:00:00"));
  EXPECT_THROW(parse_timestamp("junk"), std::runtime_error);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::int64_t t = static_cast<std::int64_t>(uniform_index(rng, 4000000000ull));
    t -= t % 3600;  // hour resolution
    EXPECT_EQ(parse_timestamp(format_timestamp(t)), t);
  }
}
