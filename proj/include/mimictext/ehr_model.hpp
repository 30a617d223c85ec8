#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mimictext/error.hpp"

namespace mimictext {

// The six feature groups, in their fixed rendering and layout order.
enum class FeatureGroup : std::uint8_t { Demo, Cond, ChartLab, Meds, Proc, Oute };

inline constexpr std::array<FeatureGroup, 6> kAllGroups = {
    FeatureGroup::Demo,     FeatureGroup::Cond, FeatureGroup::ChartLab,
    FeatureGroup::Meds,     FeatureGroup::Proc, FeatureGroup::Oute};

// Groups that carry time-stamped events.
inline constexpr std::array<FeatureGroup, 4> kDynamicGroups = {
    FeatureGroup::ChartLab, FeatureGroup::Meds, FeatureGroup::Proc, FeatureGroup::Oute};

inline constexpr bool is_dynamic(FeatureGroup g) noexcept {
  return g == FeatureGroup::ChartLab || g == FeatureGroup::Meds || g == FeatureGroup::Proc ||
         g == FeatureGroup::Oute;
}

// Position of a dynamic group inside kDynamicGroups.
inline constexpr std::size_t dynamic_index(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::ChartLab: return 0;
    case FeatureGroup::Meds: return 1;
    case FeatureGroup::Proc: return 2;
    case FeatureGroup::Oute: return 3;
    default: throw DataError("not a dynamic feature group");
  }
}

inline constexpr std::string_view group_name(FeatureGroup g) noexcept {
  switch (g) {
    case FeatureGroup::Demo: return "DEMO";
    case FeatureGroup::Cond: return "COND";
    case FeatureGroup::ChartLab: return "CHART_LAB";
    case FeatureGroup::Meds: return "MEDS";
    case FeatureGroup::Proc: return "PROC";
    case FeatureGroup::Oute: return "OUTE";
  }
  return "?";
}

// Accepts the canonical names case-insensitively, plus "CHART-LAB"/"CHARTLAB".
inline std::optional<FeatureGroup> parse_group(std::string_view name) {
  std::string up;
  for (char c : name) {
    if (c == '-' || c == '/') c = '_';
    up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  if (up == "CHARTLAB") up = "CHART_LAB";
  for (FeatureGroup g : kAllGroups)
    if (group_name(g) == up) return g;
  return std::nullopt;
}

enum class IcdVersion : std::uint8_t { Icd9 = 9, Icd10 = 10 };

inline std::optional<IcdVersion> parse_icd_version(std::string_view s) {
  if (s == "9" || s == "ICD9") return IcdVersion::Icd9;
  if (s == "10" || s == "ICD10") return IcdVersion::Icd10;
  return std::nullopt;
}

// Numeric-aware ordering for identifiers: two all-digit strings compare by
// value, anything else compares lexicographically.
inline bool natural_less(std::string_view a, std::string_view b) noexcept {
  auto digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (digits(a) && digits(b)) {
    auto strip = [](std::string_view s) {
      auto p = s.find_first_not_of('0');
      return p == std::string_view::npos ? std::string_view{} : s.substr(p);
    };
    auto sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

struct PatientDemographics {
  std::string gender;
  std::string ethnicity;
  std::string insurance;
  int age_years = 0;

  bool operator==(const PatientDemographics&) const = default;
};

struct DiagnosisCode {
  std::string code;
  IcdVersion version = IcdVersion::Icd10;

  auto operator<=>(const DiagnosisCode&) const = default;
  bool operator==(const DiagnosisCode&) const = default;
};

struct ClinicalEvent {
  FeatureGroup group = FeatureGroup::ChartLab;
  std::string item_id;
  std::int64_t t_minutes = 0;  // minutes since ICU admission
  double value = 1.0;

  bool operator==(const ClinicalEvent&) const = default;
};

struct ICUStayRecord {
  std::string stay_id;
  PatientDemographics demographics;
  std::vector<DiagnosisCode> diagnoses;
  std::vector<ClinicalEvent> events;  // ascending t_minutes
  int label = 0;                      // 1 = in-hospital death

  bool operator==(const ICUStayRecord&) const = default;
};

using Cohort = std::vector<ICUStayRecord>;

// Closed set of categories for one demographic attribute. Values outside the
// set map to the reserved "Other" entry, which is always present.
class CategoryVocabulary {
 public:
  static constexpr std::string_view kOther = "Other";

  CategoryVocabulary() : values_{std::string(kOther)} { reindex(); }

  explicit CategoryVocabulary(std::vector<std::string> values) : values_(std::move(values)) {
    if (std::find(values_.begin(), values_.end(), kOther) == values_.end())
      values_.emplace_back(kOther);
    reindex();
  }

  std::span<const std::string> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t other_index() const noexcept { return other_; }

  bool contains(std::string_view v) const { return index_.contains(std::string(v)); }

  std::size_t index_of(std::string_view v) const {
    auto it = index_.find(std::string(v));
    return it == index_.end() ? other_ : it->second;
  }

  const std::string& canonical(std::string_view v) const { return values_[index_of(v)]; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].empty()) throw DataError("empty demographic category");
      if (!index_.emplace(values_[i], i).second)
        throw DataError("duplicate demographic category: " + values_[i]);
      if (values_[i] == kOther) other_ = i;
    }
  }

  std::vector<std::string> values_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t other_ = 0;
};

struct DemographicVocabulary {
  CategoryVocabulary gender{{"F", "M"}};
  CategoryVocabulary ethnicity{{"WHITE", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "ASIAN", "UNKNOWN"}};
  CategoryVocabulary insurance{{"Medicare", "Medicaid", "Other"}};
};

// Ordered dictionaries that fix the vector layout of COND and of the four
// dynamic groups, plus human-readable labels used by the text renderer.
class FeatureVocabulary {
 public:
  FeatureVocabulary() = default;

  FeatureVocabulary(std::vector<DiagnosisCode> cond_codes,
                    std::array<std::vector<std::string>, 4> dynamic_items,
                    std::map<std::string, std::string> item_labels = {},
                    std::map<DiagnosisCode, std::string> code_labels = {})
      : cond_codes_(std::move(cond_codes)),
        items_(std::move(dynamic_items)),
        item_labels_(std::move(item_labels)),
        code_labels_(std::move(code_labels)) {
    for (std::size_t i = 0; i < cond_codes_.size(); ++i)
      if (!cond_index_.emplace(cond_codes_[i], i).second)
        throw DataError("duplicate diagnosis code in vocabulary: " + cond_codes_[i].code);
    for (std::size_t g = 0; g < items_.size(); ++g)
      for (std::size_t i = 0; i < items_[g].size(); ++i)
        if (!item_index_[g].emplace(items_[g][i], i).second)
          throw DataError("duplicate item_id in vocabulary: " + items_[g][i]);
  }

  std::span<const DiagnosisCode> cond_codes() const noexcept { return cond_codes_; }
  std::span<const std::string> items(FeatureGroup g) const { return items_[dynamic_index(g)]; }

  // Total number of dynamic items across the four groups.
  std::size_t dynamic_width() const noexcept {
    std::size_t d = 0;
    for (const auto& v : items_) d += v.size();
    return d;
  }

  std::optional<std::size_t> cond_index(const DiagnosisCode& c) const {
    auto it = cond_index_.find(c);
    if (it == cond_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> item_index(FeatureGroup g, const std::string& item_id) const {
    const auto& m = item_index_[dynamic_index(g)];
    auto it = m.find(item_id);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  const std::string* item_label(const std::string& item_id) const {
    auto it = item_labels_.find(item_id);
    return it == item_labels_.end() ? nullptr : &it->second;
  }

  const std::string* code_label(const DiagnosisCode& c) const {
    auto it = code_labels_.find(c);
    return it == code_labels_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::string>& item_labels() const noexcept { return item_labels_; }
  const std::map<DiagnosisCode, std::string>& code_labels() const noexcept { return code_labels_; }

 private:
  std::vector<DiagnosisCode> cond_codes_;
  std::array<std::vector<std::string>, 4> items_;
  std::map<std::string, std::string> item_labels_;
  std::map<DiagnosisCode, std::string> code_labels_;
  std::map<DiagnosisCode, std::size_t> cond_index_;
  std::array<std::unordered_map<std::string, std::size_t>, 4> item_index_;
};

enum class ViolationKind : std::uint8_t {
  EmptyStayId,
  AgeOutOfRange,
  EmptyDemographic,
  UnknownDemographic,
  EmptyDiagnosisCode,
  NegativeTimestamp,
  UnsortedEvents,
  NonFiniteValue,
  IndicatorValueNotOne,
  NegativeAmount,
  NonDynamicGroup,
  UnknownItem,
  LabelOutOfRange,
  DuplicateStayId,
};

struct Violation {
  ViolationKind kind;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

namespace detail {

inline void check_category(ValidationReport& out, std::string_view field, const std::string& value,
                           const CategoryVocabulary* vocab) {
  if (value.empty()) {
    out.push_back({ViolationKind::EmptyDemographic, std::string(field) + " is empty"});
  } else if (vocab != nullptr && !vocab->contains(value)) {
    out.push_back({ViolationKind::UnknownDemographic, std::string(field) + " '" + value + "' not in vocabulary"});
  }
}

}  // namespace detail

// Lists every invariant violation of a stay. An empty report means the stay is
// accepted by every downstream stage. When `demo` is given, demographic codes
// must also belong to its vocabularies.
inline ValidationReport validate_stay(const ICUStayRecord& stay, const FeatureVocabulary& vocab,
                                      const DemographicVocabulary* demo = nullptr) {
  ValidationReport out;
  if (stay.stay_id.empty()) out.push_back({ViolationKind::EmptyStayId, "stay_id is empty"});

  const auto& d = stay.demographics;
  if (d.age_years < 0 || d.age_years > 130)
    out.push_back({ViolationKind::AgeOutOfRange, "age " + std::to_string(d.age_years) + " outside [0, 130]"});
  detail::check_category(out, "gender", d.gender, demo ? &demo->gender : nullptr);
  detail::check_category(out, "ethnicity", d.ethnicity, demo ? &demo->ethnicity : nullptr);
  detail::check_category(out, "insurance", d.insurance, demo ? &demo->insurance : nullptr);

  for (const auto& c : stay.diagnoses)
    if (c.code.empty()) out.push_back({ViolationKind::EmptyDiagnosisCode, "empty diagnosis code"});

  std::int64_t prev = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < stay.events.size(); ++i) {
    const auto& e = stay.events[i];
    const std::string where = "event " + std::to_string(i) + " (item " + e.item_id + ")";
    if (e.t_minutes < 0)
      out.push_back({ViolationKind::NegativeTimestamp, where + ": t_minutes " + std::to_string(e.t_minutes)});
    if (e.t_minutes < prev) out.push_back({ViolationKind::UnsortedEvents, where + ": out of order"});
    prev = std::max(prev, e.t_minutes);
    if (!std::isfinite(e.value)) out.push_back({ViolationKind::NonFiniteValue, where + ": non-finite value"});
    if (!is_dynamic(e.group)) {
      out.push_back({ViolationKind::NonDynamicGroup, where + ": group " + std::string(group_name(e.group))});
      continue;
    }
    if ((e.group == FeatureGroup::Proc || e.group == FeatureGroup::Oute) && e.value != 1.0)
      out.push_back({ViolationKind::IndicatorValueNotOne, where + ": indicator value must be 1"});
    if (e.group == FeatureGroup::Meds && e.value < 0)
      out.push_back({ViolationKind::NegativeAmount, where + ": negative administered amount"});
    if (!vocab.item_index(e.group, e.item_id))
      out.push_back({ViolationKind::UnknownItem, where + ": not in " + std::string(group_name(e.group)) + " vocabulary"});
  }

  if (stay.label != 0 && stay.label != 1)
    out.push_back({ViolationKind::LabelOutOfRange, "label " + std::to_string(stay.label)});
  return out;
}

// Stay-level validation over a cohort plus the cohort-level uniqueness rule.
inline ValidationReport validate_cohort(const Cohort& cohort, const FeatureVocabulary& vocab,
                                        const DemographicVocabulary* demo = nullptr) {
  ValidationReport out;
  std::map<std::string, int> seen;
  for (const auto& s : cohort) {
    auto r = validate_stay(s, vocab, demo);
    for (auto& v : r) v.detail = "stay " + s.stay_id + ": " + v.detail;
    out.insert(out.end(), r.begin(), r.end());
    if (++seen[s.stay_id] == 2) out.push_back({ViolationKind::DuplicateStayId, "duplicate stay_id " + s.stay_id});
  }
  return out;
}

}  // namespace mimictext
