#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimictext/ehr_model.hpp"
#include "mimictext/error.hpp"
#include "mimictext/ingest.hpp"

namespace mimictext {

enum class Representation : std::uint8_t {
  Rep1,  // per-window concatenation
  Rep2,  // window average
};

inline std::string_view representation_name(Representation r) noexcept {
  return r == Representation::Rep1 ? "rep1" : "rep2";
}

inline std::optional<Representation> parse_representation(std::string_view s) {
  auto l = to_lower(s);
  if (l == "rep1" || l == "1") return Representation::Rep1;
  if (l == "rep2" || l == "2") return Representation::Rep2;
  return std::nullopt;
}

enum class DemographicEncoding : std::uint8_t {
  Index,   // one slot per attribute holding the category index
  OneHot,  // one slot per category of every attribute
};

enum class ImputeStrategy : std::uint8_t { CarrySample, MeanFill };

// Age bins given by ascending lower edges; the last bin is closed at 130.
class AgeBins {
 public:
  AgeBins() {
    for (int e = 0; e <= 120; e += 10) edges_.push_back(e);
  }

  explicit AgeBins(std::vector<int> edges) : edges_(std::move(edges)) {
    if (edges_.empty() || edges_.front() != 0) throw DataError("age bin edges must start at 0");
    if (!std::is_sorted(edges_.begin(), edges_.end()) ||
        std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
      throw DataError("age bin edges must be strictly increasing");
    if (edges_.back() > 130) throw DataError("age bin edges must not exceed 130");
  }

  std::size_t count() const noexcept { return edges_.size(); }
  std::span<const int> edges() const noexcept { return edges_; }

  std::size_t bin(int age) const {
    if (age < 0 || age > 130) throw DataError("age " + std::to_string(age) + " outside [0, 130]");
    auto it = std::upper_bound(edges_.begin(), edges_.end(), age);
    return static_cast<std::size_t>(it - edges_.begin()) - 1;
  }

 private:
  std::vector<int> edges_;
};

struct DemographicEncoder {
  DemographicVocabulary vocab;
  AgeBins age_bins;
  DemographicEncoding encoding = DemographicEncoding::Index;

  std::size_t width() const {
    if (encoding == DemographicEncoding::Index) return 4;
    return vocab.gender.size() + vocab.ethnicity.size() + vocab.insurance.size() + age_bins.count();
  }

  std::vector<std::string> slot_names() const {
    if (encoding == DemographicEncoding::Index)
      return {"demo_gender", "demo_ethnicity", "demo_insurance", "demo_age_bin"};
    std::vector<std::string> out;
    auto add = [&](const char* prefix, const CategoryVocabulary& v) {
      for (const auto& c : v.values()) out.push_back(std::string(prefix) + c);
    };
    add("demo_gender=", vocab.gender);
    add("demo_ethnicity=", vocab.ethnicity);
    add("demo_insurance=", vocab.insurance);
    for (int e : age_bins.edges()) out.push_back("demo_age>=" + std::to_string(e));
    return out;
  }
};

// DEMO segment. Unknown categories resolve to the reserved "Other" index.
inline std::vector<double> encode_demographics(const PatientDemographics& d, const DemographicEncoder& enc) {
  const std::size_t g = enc.vocab.gender.index_of(d.gender);
  const std::size_t e = enc.vocab.ethnicity.index_of(d.ethnicity);
  const std::size_t i = enc.vocab.insurance.index_of(d.insurance);
  const std::size_t a = enc.age_bins.bin(d.age_years);
  if (enc.encoding == DemographicEncoding::Index)
    return {static_cast<double>(g), static_cast<double>(e), static_cast<double>(i), static_cast<double>(a)};
  std::vector<double> out(enc.width(), 0.0);
  std::size_t off = 0;
  out[off + g] = 1.0;
  off += enc.vocab.gender.size();
  out[off + e] = 1.0;
  off += enc.vocab.ethnicity.size();
  out[off + i] = 1.0;
  off += enc.vocab.insurance.size();
  out[off + a] = 1.0;
  return out;
}

// COND one-hot segment. Codes absent from the vocabulary are ignored and, if
// `ignored` is non-null, counted there.
inline std::vector<double> encode_diagnoses(std::span<const DiagnosisCode> codes, const FeatureVocabulary& vocab,
                                            std::size_t* ignored = nullptr) {
  std::vector<double> out(vocab.cond_codes().size(), 0.0);
  for (const auto& c : codes) {
    if (auto idx = vocab.cond_index(c)) {
      out[*idx] = 1.0;
    } else if (ignored) {
      ++*ignored;
    }
  }
  return out;
}

// Per CHART_LAB item, the mean of all in-window observed values across the
// cohort; nullopt for items never observed.
inline std::vector<std::optional<double>> cohort_chart_means(const Cohort& cohort, const FeatureVocabulary& vocab) {
  const auto n = vocab.items(FeatureGroup::ChartLab).size();
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> cnt(n, 0);
  for (const auto& s : cohort)
    for (const auto& e : s.events) {
      if (e.group != FeatureGroup::ChartLab) continue;
      if (auto i = vocab.item_index(FeatureGroup::ChartLab, e.item_id)) {
        sum[*i] += e.value;
        ++cnt[*i];
      }
    }
  std::vector<std::optional<double>> out(n);
  for (std::size_t i = 0; i < n; ++i)
    if (cnt[i]) out[i] = sum[i] / static_cast<double>(cnt[i]);
  return out;
}

// Fills missing CHART_LAB cells. CarrySample forward-fills from the most
// recent earlier observed bin; MeanFill uses the mean of the stay's observed
// bins for that item. Both fall back to the cohort mean, then to 0. Other
// groups are returned unchanged.
inline TimeBinnedSeries impute(TimeBinnedSeries series, ImputeStrategy strategy,
                               std::span<const std::optional<double>> cohort_means = {}) {
  Grid& g = series.grid(FeatureGroup::ChartLab);
  for (std::size_t c = 0; c < g.cols; ++c) {
    const double fallback = c < cohort_means.size() && cohort_means[c] ? *cohort_means[c] : 0.0;
    if (strategy == ImputeStrategy::CarrySample) {
      std::optional<double> last;
      for (std::size_t r = 0; r < g.rows; ++r) {
        double& v = g.at(r, c);
        if (!TimeBinnedSeries::is_missing(v)) {
          last = v;
        } else {
          v = last.value_or(fallback);
        }
      }
    } else {
      double sum = 0;
      std::size_t n = 0;
      for (std::size_t r = 0; r < g.rows; ++r)
        if (!TimeBinnedSeries::is_missing(g.at(r, c))) {
          sum += g.at(r, c);
          ++n;
        }
      const double fill = n ? sum / static_cast<double>(n) : fallback;
      for (std::size_t r = 0; r < g.rows; ++r)
        if (TimeBinnedSeries::is_missing(g.at(r, c))) g.at(r, c) = fill;
    }
  }
  return series;
}

// Segment layout of a feature vector:
//   DEMO | COND | dynamic block(s)
// Rep1 repeats the dynamic block once per window, window-major (all items of
// window 0, then window 1, ...). Rep2 has a single window-averaged block.
// Inside a block the groups follow CHART_LAB, MEDS, PROC, OUTE and items
// follow vocabulary order.
struct FeatureLayout {
  Representation mode = Representation::Rep2;
  std::size_t windows = 1;
  std::size_t demo_width = 0;
  std::size_t cond_width = 0;
  std::array<std::size_t, 4> group_widths{};

  static FeatureLayout make(Representation mode, std::size_t windows, const DemographicEncoder& demo,
                            const FeatureVocabulary& vocab) {
    FeatureLayout l;
    l.mode = mode;
    l.windows = windows;
    l.demo_width = demo.width();
    l.cond_width = vocab.cond_codes().size();
    for (FeatureGroup g : kDynamicGroups) l.group_widths[dynamic_index(g)] = vocab.items(g).size();
    return l;
  }

  std::size_t dynamic_width() const noexcept {
    return group_widths[0] + group_widths[1] + group_widths[2] + group_widths[3];
  }
  std::size_t cond_offset() const noexcept { return demo_width; }
  std::size_t dynamic_offset() const noexcept { return demo_width + cond_width; }
  std::size_t dynamic_blocks() const noexcept { return mode == Representation::Rep1 ? windows : 1; }
  std::size_t total_dim() const noexcept { return demo_width + cond_width + dynamic_blocks() * dynamic_width(); }

  // Offset of a dynamic group inside one block.
  std::size_t group_offset(FeatureGroup g) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < dynamic_index(g); ++i) off += group_widths[i];
    return off;
  }

  std::string id() const {
    std::string s(representation_name(mode));
    s += "-w" + std::to_string(windows) + "-demo" + std::to_string(demo_width) + "-cond" +
         std::to_string(cond_width);
    for (FeatureGroup g : kDynamicGroups) {
      s += "-";
      s += to_lower(group_name(g));
      s += std::to_string(group_widths[dynamic_index(g)]);
    }
    return s;
  }

  bool operator==(const FeatureLayout&) const = default;
};

inline std::vector<std::string> slot_names(const FeatureLayout& layout, const DemographicEncoder& demo,
                                           const FeatureVocabulary& vocab) {
  auto out = demo.slot_names();
  if (out.size() != layout.demo_width) throw DataError("layout/demographic encoder mismatch");
  for (const auto& c : vocab.cond_codes())
    out.push_back("cond_icd" + std::to_string(static_cast<int>(c.version)) + "_" + c.code);
  for (std::size_t w = 0; w < layout.dynamic_blocks(); ++w)
    for (FeatureGroup g : kDynamicGroups)
      for (const auto& item : vocab.items(g)) {
        std::string name = layout.mode == Representation::Rep1 ? "w" + std::to_string(w) + "_" : std::string();
        out.push_back(name + to_lower(group_name(g)) + "_" + item);
      }
  if (out.size() != layout.total_dim()) throw DataError("layout/vocabulary mismatch");
  return out;
}

struct FeatureVector {
  std::string layout_id;
  std::vector<double> values;

  bool operator==(const FeatureVector&) const = default;
};

// Concatenates DEMO, COND and the dynamic block(s) of an imputed series.
inline FeatureVector assemble(const ICUStayRecord& stay, const TimeBinnedSeries& series, const FeatureLayout& layout,
                              const DemographicEncoder& demo, const FeatureVocabulary& vocab) {
  if (series.windows != layout.windows) throw DataError("series window count does not match layout");
  if (vocab.cond_codes().size() != layout.cond_width || demo.width() != layout.demo_width)
    throw DataError("vocabulary does not match layout");
  for (FeatureGroup g : kDynamicGroups) {
    const Grid& gr = series.grid(g);
    if (gr.cols != layout.group_widths[dynamic_index(g)] || gr.rows != layout.windows)
      throw DataError(std::string("series grid for ") + std::string(group_name(g)) + " does not match layout");
  }

  FeatureVector fv;
  fv.layout_id = layout.id();
  fv.values.reserve(layout.total_dim());
  auto d = encode_demographics(stay.demographics, demo);
  fv.values.insert(fv.values.end(), d.begin(), d.end());
  auto c = encode_diagnoses(stay.diagnoses, vocab);
  fv.values.insert(fv.values.end(), c.begin(), c.end());

  if (layout.mode == Representation::Rep1) {
    for (std::size_t w = 0; w < layout.windows; ++w)
      for (FeatureGroup g : kDynamicGroups) {
        const Grid& gr = series.grid(g);
        for (std::size_t i = 0; i < gr.cols; ++i) fv.values.push_back(gr.at(w, i));
      }
  } else {
    for (FeatureGroup g : kDynamicGroups) {
      const Grid& gr = series.grid(g);
      for (std::size_t i = 0; i < gr.cols; ++i) {
        double sum = 0;
        for (std::size_t w = 0; w < gr.rows; ++w) sum += gr.at(w, i);
        fv.values.push_back(gr.rows ? sum / static_cast<double>(gr.rows) : 0.0);
      }
    }
  }
  for (double v : fv.values)
    if (!std::isfinite(v)) throw DataError("non-finite feature value for stay " + stay.stay_id + "; impute first");
  return fv;
}

}  // namespace mimictext
