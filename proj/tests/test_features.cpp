#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"

using namespace mimictext;

namespace {

TimeBinnedSeries chart_series(std::vector<double> col) {
  TimeBinnedSeries s;
  s.windows = col.size();
  s.grid(FeatureGroup::ChartLab) = Grid(col.size(), 1, 0.0);
  for (std::size_t r = 0; r < col.size(); ++r) s.grid(FeatureGroup::ChartLab).at(r, 0) = col[r];
  for (FeatureGroup g : {FeatureGroup::Meds, FeatureGroup::Proc, FeatureGroup::Oute})
    s.grid(g) = Grid(col.size(), 0, 0.0);
  return s;
}

std::vector<double> chart_col(const TimeBinnedSeries& s) {
  std::vector<double> out;
  for (std::size_t r = 0; r < s.windows; ++r) out.push_back(s.grid(FeatureGroup::ChartLab).at(r, 0));
  return out;
}

const double kNaN = std::nan("");

}  // namespace

TEST(Features, DemographicsIndexEncoding) {
  DemographicEncoder enc;
  const auto v = encode_demographics({"M", "WHITE", "Other", 55}, enc);
  EXPECT_EQ(v, (std::vector<double>{1, 0, 2, 5}));
  EXPECT_EQ(encode_demographics({"F", "WHITE", "Medicare", 0}, enc)[3], 0.0);
  EXPECT_EQ(encode_demographics({"F", "WHITE", "Medicare", 130}, enc)[3], 12.0);
  EXPECT_EQ(enc.width(), 4u);
}

TEST(Features, UnknownCategoryMapsToOther) {
  DemographicEncoder enc;
  const auto v = encode_demographics({"X", "MARTIAN", "Private", 40}, enc);
  EXPECT_EQ(v[0], static_cast<double>(enc.vocab.gender.other_index()));
  EXPECT_EQ(v[1], static_cast<double>(enc.vocab.ethnicity.other_index()));
  EXPECT_EQ(v[2], static_cast<double>(enc.vocab.insurance.other_index()));
}

TEST(Features, DemographicsOneHot) {
  DemographicEncoder enc;
  enc.encoding = DemographicEncoding::OneHot;
  const auto v = encode_demographics({"M", "ASIAN", "Medicaid", 79}, enc);
  ASSERT_EQ(v.size(), 3u + 6u + 3u + 13u);
  EXPECT_EQ(std::count(v.begin(), v.end(), 1.0), 4);
  EXPECT_EQ(std::count(v.begin(), v.end(), 0.0), static_cast<long>(v.size()) - 4);
  EXPECT_EQ(v[1], 1.0);           // M
  EXPECT_EQ(v[3 + 3], 1.0);       // ASIAN
  EXPECT_EQ(v[9 + 1], 1.0);       // Medicaid
  EXPECT_EQ(v[12 + 7], 1.0);      // [70, 80)
  EXPECT_EQ(enc.slot_names().size(), v.size());
}

TEST(Features, AgeBins) {
  AgeBins b;
  EXPECT_EQ(b.bin(0), 0u);
  EXPECT_EQ(b.bin(9), 0u);
  EXPECT_EQ(b.bin(10), 1u);
  EXPECT_EQ(b.bin(120), 12u);
  EXPECT_EQ(b.bin(130), 12u);
  EXPECT_THROW(b.bin(131), DataError);
  EXPECT_THROW(AgeBins({5, 10}), DataError);
  EXPECT_THROW(AgeBins({0, 10, 10}), DataError);
  AgeBins two({0, 65});
  EXPECT_EQ(two.bin(64), 0u);
  EXPECT_EQ(two.bin(65), 1u);
}

TEST(Features, DemographicWidthConstantOverCohort) {
  testutil::TempDir d("feat_width");
  SynthConfig sc;
  sc.n_patients = 80;
  generate(sc, d.path());
  const auto cb = build_cohort(load_tables(d.path()), CohortConfig{});
  for (auto enc : {DemographicEncoding::Index, DemographicEncoding::OneHot}) {
    DemographicEncoder e;
    e.encoding = enc;
    for (const auto& s : cb.cohort) EXPECT_EQ(encode_demographics(s.demographics, e).size(), e.width());
  }
}

TEST(Features, DiagnosesEmptyAndDuplicates) {
  const auto vocab = testutil::small_vocab();
  EXPECT_EQ(encode_diagnoses({}, vocab), (std::vector<double>{0, 0}));
  std::vector<DiagnosisCode> once{{"E11", IcdVersion::Icd10}};
  std::vector<DiagnosisCode> twice{{"E11", IcdVersion::Icd10}, {"E11", IcdVersion::Icd10}};
  EXPECT_EQ(encode_diagnoses(once, vocab), encode_diagnoses(twice, vocab));
  std::size_t ignored = 0;
  std::vector<DiagnosisCode> unknown{{"Z99", IcdVersion::Icd10}, {"I10", IcdVersion::Icd9}};
  EXPECT_EQ(encode_diagnoses(unknown, vocab, &ignored), (std::vector<double>{0, 0}));
  EXPECT_EQ(ignored, 2u);
}

TEST(Features, DiagnosesRandomSubsetOracle) {
  std::vector<DiagnosisCode> codes;
  for (int i = 0; i < 50; ++i) codes.push_back({"C" + std::to_string(i), i % 2 ? IcdVersion::Icd9 : IcdVersion::Icd10});
  FeatureVocabulary vocab(codes, {});
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    auto pool = codes;
    rng.shuffle(pool);
    pool.resize(10);
    const auto seg = encode_diagnoses(pool, vocab);
    ASSERT_EQ(seg.size(), 50u);
    std::set<std::size_t> want;
    for (const auto& c : pool)
      for (std::size_t i = 0; i < codes.size(); ++i)
        if (codes[i] == c) want.insert(i);
    ASSERT_EQ(want.size(), 10u);
    for (std::size_t i = 0; i < seg.size(); ++i) EXPECT_EQ(seg[i], want.count(i) ? 1.0 : 0.0) << i;
  }
}

TEST(Features, ImputeCarrySample) {
  auto s = impute(chart_series({80, kNaN, kNaN, kNaN}), ImputeStrategy::CarrySample);
  EXPECT_EQ(chart_col(s), (std::vector<double>{80, 80, 80, 80}));
  std::vector<std::optional<double>> means{50.0};
  s = impute(chart_series({kNaN, 60, kNaN, 90}), ImputeStrategy::CarrySample, means);
  EXPECT_EQ(chart_col(s), (std::vector<double>{50, 60, 60, 90}));
}

TEST(Features, ImputeMeanFill) {
  auto s = impute(chart_series({60, kNaN, 80, kNaN}), ImputeStrategy::MeanFill);
  EXPECT_EQ(chart_col(s), (std::vector<double>{60, 70, 80, 70}));
}

TEST(Features, ImputeNeverObservedIsZero) {
  for (auto st : {ImputeStrategy::CarrySample, ImputeStrategy::MeanFill}) {
    auto s = impute(chart_series({kNaN, kNaN, kNaN}), st);
    EXPECT_EQ(chart_col(s), (std::vector<double>{0, 0, 0}));
    std::vector<std::optional<double>> none{std::nullopt};
    s = impute(chart_series({kNaN, kNaN}), st, none);
    EXPECT_EQ(chart_col(s), (std::vector<double>{0, 0}));
  }
}

TEST(Features, ImputeLeavesOtherGroupsAlone) {
  const auto vocab = testutil::small_vocab();
  const auto b = bin_events(testutil::small_stay(), CohortConfig{}, vocab);
  const auto i = impute(b, ImputeStrategy::CarrySample);
  for (FeatureGroup g : {FeatureGroup::Meds, FeatureGroup::Proc, FeatureGroup::Oute}) EXPECT_EQ(b.grid(g), i.grid(g));
  for (double v : i.grid(FeatureGroup::ChartLab).cells) EXPECT_TRUE(std::isfinite(v));
}

TEST(Features, LayoutDimensions) {
  DemographicEncoder enc;
  const auto vocab = testutil::small_vocab();
  const auto l1 = FeatureLayout::make(Representation::Rep1, 24, enc, vocab);
  const auto l2 = FeatureLayout::make(Representation::Rep2, 24, enc, vocab);
  EXPECT_EQ(l1.total_dim(), 4u + 2u + 24u * 6u);
  EXPECT_EQ(l2.total_dim(), 4u + 2u + 6u);
  EXPECT_EQ(slot_names(l1, enc, vocab).size(), l1.total_dim());
  EXPECT_EQ(slot_names(l2, enc, vocab)[6], "chart_lab_220045");
  EXPECT_EQ(slot_names(l1, enc, vocab)[6 + 6], "w1_chart_lab_220045");
}

TEST(Features, ConfiguredCountsGive1110) {
  DemographicEncoder enc;
  enc.encoding = DemographicEncoding::OneHot;
  enc.vocab.gender = CategoryVocabulary({"F", "M"});
  enc.vocab.ethnicity = CategoryVocabulary({"WHITE"});
  enc.vocab.insurance = CategoryVocabulary({"Medicare", "Medicaid"});
  enc.age_bins = AgeBins({0, 65});
  ASSERT_EQ(enc.width(), 10u);
  std::vector<DiagnosisCode> cond;
  for (int i = 0; i < 1034; ++i) cond.push_back({"D" + std::to_string(i), IcdVersion::Icd10});
  std::array<std::vector<std::string>, 4> dyn;
  const std::array<int, 4> widths{30, 16, 12, 8};
  int id = 0;
  for (std::size_t g = 0; g < 4; ++g)
    for (int i = 0; i < widths[g]; ++i) dyn[g].push_back(std::to_string(++id));
  FeatureVocabulary vocab(cond, dyn);
  ASSERT_EQ(vocab.dynamic_width(), 66u);
  EXPECT_EQ(FeatureLayout::make(Representation::Rep2, 24, enc, vocab).total_dim(), 1110u);
  EXPECT_EQ(FeatureLayout::make(Representation::Rep1, 24, enc, vocab).total_dim(), 1034u + 10u + 24u * 66u);
}

TEST(Features, SingleWindowRepsAgree) {
  const auto vocab = testutil::small_vocab();
  CohortConfig cfg;
  cfg.observation_window_hours = 48;
  cfg.bin_hours = 48;
  DemographicEncoder enc;
  const auto series = impute(bin_events(testutil::small_stay(), cfg, vocab), ImputeStrategy::CarrySample);
  const auto a = assemble(testutil::small_stay(), series, FeatureLayout::make(Representation::Rep1, 1, enc, vocab), enc, vocab);
  const auto b = assemble(testutil::small_stay(), series, FeatureLayout::make(Representation::Rep2, 1, enc, vocab), enc, vocab);
  EXPECT_EQ(a.values, b.values);
}

TEST(Features, Rep2IsWindowMeanOfRep1) {
  testutil::TempDir d("feat_rep");
  SynthConfig sc;
  sc.n_patients = 60;
  sc.seed = 21;
  generate(sc, d.path());
  CohortConfig cfg;
  const auto cb = build_cohort(load_tables(d.path()), cfg);
  const auto means = cohort_chart_means(cb.cohort, cb.vocab);
  DemographicEncoder enc;
  const auto w = static_cast<std::size_t>(cfg.window_count());
  const auto l1 = FeatureLayout::make(Representation::Rep1, w, enc, cb.vocab);
  const auto l2 = FeatureLayout::make(Representation::Rep2, w, enc, cb.vocab);
  const std::size_t dd = cb.vocab.dynamic_width();
  const std::size_t head = enc.width() + cb.vocab.cond_codes().size();
  for (const auto& s : cb.cohort) {
    const auto series = impute(bin_events(s, cfg, cb.vocab), ImputeStrategy::CarrySample, means);
    const auto r1 = assemble(s, series, l1, enc, cb.vocab);
    const auto r2 = assemble(s, series, l2, enc, cb.vocab);
    ASSERT_EQ(r1.values.size(), head + w * dd);
    ASSERT_EQ(r2.values.size(), head + dd);
    for (std::size_t i = 0; i < head; ++i) EXPECT_EQ(r1.values[i], r2.values[i]);
    for (std::size_t j = 0; j < dd; ++j) {
      double sum = 0;
      for (std::size_t k = 0; k < w; ++k) sum += r1.values[head + k * dd + j];
      EXPECT_NEAR(r2.values[head + j], sum / static_cast<double>(w), 1e-12);
    }
    // one-hot segments in REP1: COND, PROC, OUTE
    for (std::size_t i = enc.width(); i < head; ++i) EXPECT_TRUE(r1.values[i] == 0.0 || r1.values[i] == 1.0);
    const std::size_t proc = l1.group_offset(FeatureGroup::Proc);
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t j = proc; j < dd; ++j) {
        const double v = r1.values[head + k * dd + j];
        EXPECT_TRUE(v == 0.0 || v == 1.0);
      }
    for (double v : r1.values) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Features, AssembleRejectsMismatch) {
  const auto vocab = testutil::small_vocab();
  DemographicEncoder enc;
  const auto series = impute(bin_events(testutil::small_stay(), CohortConfig{}, vocab), ImputeStrategy::CarrySample);
  auto layout = FeatureLayout::make(Representation::Rep2, 24, enc, vocab);
  layout.cond_width = 5;
  EXPECT_THROW(assemble(testutil::small_stay(), series, layout, enc, vocab), DataError);
  const auto raw = bin_events(testutil::small_stay(), CohortConfig{}, vocab);
  EXPECT_THROW(assemble(testutil::small_stay(), raw, FeatureLayout::make(Representation::Rep2, 24, enc, vocab), enc, vocab),
               DataError);  // NaN cells left in
}
