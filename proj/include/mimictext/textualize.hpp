#pragma once

#include <bitset>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mimictext/ehr_model.hpp"
#include "mimictext/error.hpp"
#include "mimictext/ingest.hpp"
#include "mimictext/text_util.hpp"

namespace mimictext {

// Set of feature groups rendered into a document. Iteration always follows
// DEMO, COND, CHART_LAB, MEDS, PROC, OUTE.
class AblationFlags {
 public:
  AblationFlags() = default;
  AblationFlags(std::initializer_list<FeatureGroup> groups) {
    for (auto g : groups) set(g);
  }

  static AblationFlags all() {
    AblationFlags f;
    f.bits_.set();
    return f;
  }

  // "DEMO,COND,CHART_LAB" (case-insensitive; whitespace ignored).
  static AblationFlags parse(std::string_view list) {
    AblationFlags f;
    while (!list.empty()) {
      auto comma = list.find(',');
      auto tok = trim(list.substr(0, comma));
      if (!tok.empty()) {
        auto g = parse_group(tok);
        if (!g) throw UsageError("unknown feature group '" + std::string(tok) + "'");
        f.set(*g);
      }
      if (comma == std::string_view::npos) break;
      list.remove_prefix(comma + 1);
    }
    return f;
  }

  void set(FeatureGroup g, bool on = true) { bits_.set(static_cast<std::size_t>(g), on); }
  bool has(FeatureGroup g) const { return bits_.test(static_cast<std::size_t>(g)); }
  bool empty() const { return bits_.none(); }
  bool subset_of(const AblationFlags& o) const { return (bits_ & ~o.bits_).none(); }

  std::vector<FeatureGroup> groups() const {
    std::vector<FeatureGroup> out;
    for (FeatureGroup g : kAllGroups)
      if (has(g)) out.push_back(g);
    return out;
  }

  std::string to_string() const {
    std::string s;
    for (FeatureGroup g : groups()) {
      if (!s.empty()) s += ',';
      s += group_name(g);
    }
    return s;
  }

  bool operator==(const AblationFlags&) const = default;

 private:
  std::bitset<6> bits_;
};

// Three decimals, '.' separator, no digit grouping. Rounding is half-to-even
// on the shortest decimal form of `x`, so 1.0005 becomes "1.000".
inline std::string format_value(double x) {
  if (!std::isfinite(x)) throw DataError("cannot format a non-finite value");
  char buf[400];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed);
  std::string s(buf, end);
  bool negative = false;
  if (!s.empty() && s[0] == '-') {
    negative = true;
    s.erase(0, 1);
  }
  auto dot = s.find('.');
  std::string ip = dot == std::string::npos ? s : s.substr(0, dot);
  std::string fp = dot == std::string::npos ? std::string() : s.substr(dot + 1);

  std::string digits = ip + (fp.size() >= 3 ? fp.substr(0, 3) : fp + std::string(3 - fp.size(), '0'));
  if (fp.size() > 3) {
    const char next = fp[3];
    const bool rest_zero = fp.find_first_not_of('0', 4) == std::string::npos;
    bool up = next > '5' || (next == '5' && !rest_zero);
    if (next == '5' && rest_zero) up = (digits.back() - '0') % 2 == 1;
    if (up) {
      int i = static_cast<int>(digits.size()) - 1;
      while (i >= 0 && digits[i] == '9') digits[i--] = '0';
      if (i < 0) {
        digits.insert(digits.begin(), '1');
      } else {
        ++digits[i];
      }
    }
  }
  std::string out = digits.substr(0, digits.size() - 3) + "." + digits.substr(digits.size() - 3);
  if (negative && out.find_first_not_of("0.") != std::string::npos) out.insert(out.begin(), '-');
  return out;
}

struct RenderStats {
  std::size_t missing_labels = 0;  // identifiers rendered raw for lack of a description
};

inline std::string gender_text(std::string_view code) {
  const auto l = to_lower(code);
  if (l == "m") return "male";
  if (l == "f") return "female";
  return l;
}

namespace detail {

// Braces are reserved for template placeholders and never reach output text.
inline std::string clean(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == '{') c = '(';
    if (c == '}') c = ')';
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& items) {
  if (items.empty()) return "nothing reported";
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += "; ";
    s += items[i];
  }
  return s;
}

inline std::string item_text(const FeatureVocabulary& vocab, const std::string& id, RenderStats* stats) {
  if (const auto* l = vocab.item_label(id)) return clean(*l);
  if (stats) ++stats->missing_labels;
  return clean(id);
}

inline std::vector<bool> observed_items(const ICUStayRecord& stay, FeatureGroup g, const FeatureVocabulary& vocab) {
  std::vector<bool> seen(vocab.items(g).size(), false);
  for (const auto& e : stay.events)
    if (e.group == g)
      if (auto i = vocab.item_index(g, e.item_id)) seen[*i] = true;
  return seen;
}

inline double episode_mean(const Grid& g, std::size_t col) {
  double sum = 0;
  for (std::size_t r = 0; r < g.rows; ++r) sum += g.at(r, col);
  return g.rows ? sum / static_cast<double>(g.rows) : 0.0;
}

}  // namespace detail

// Renders one group's sentence. `series` must already be imputed. When
// `cond_follows` is set the DEMO sentence is left open so the COND sentence
// continues it ("... covered by Other was diagnosed with ...").
inline std::string render_section(FeatureGroup group, const ICUStayRecord& stay, const TimeBinnedSeries& series,
                                  const FeatureVocabulary& vocab, bool cond_follows = true,
                                  RenderStats* stats = nullptr) {
  switch (group) {
    case FeatureGroup::Demo: {
      const auto& d = stay.demographics;
      std::string s = "The patient " + detail::clean(to_lower(d.ethnicity)) + " " +
                      detail::clean(gender_text(d.gender)) + ", " + std::to_string(d.age_years) +
                      " years old, covered by " + detail::clean(d.insurance);
      if (!cond_follows) s += ".";
      return s;
    }
    case FeatureGroup::Cond: {
      std::vector<std::string> parts;
      std::vector<DiagnosisCode> seen;
      for (const auto& c : stay.diagnoses) {
        if (std::find(seen.begin(), seen.end(), c) != seen.end()) continue;
        seen.push_back(c);
        if (const auto* l = vocab.code_label(c)) {
          parts.push_back(detail::clean(*l));
        } else {
          if (stats) ++stats->missing_labels;
          parts.push_back(detail::clean(c.code));
        }
      }
      return "was diagnosed with " + detail::join_list(parts) + ".";
    }
    case FeatureGroup::ChartLab: {
      const Grid& g = series.grid(group);
      const auto seen = detail::observed_items(stay, group, vocab);
      std::vector<std::string> parts;
      for (std::size_t i = 0; i < g.cols; ++i)
        if (seen[i])
          parts.push_back(format_value(detail::episode_mean(g, i)) + " for " +
                          detail::item_text(vocab, vocab.items(group)[i], stats));
      return "The chart events measured were: " + detail::join_list(parts) + ".";
    }
    case FeatureGroup::Meds: {
      const Grid& g = series.grid(group);
      std::vector<std::string> parts;
      for (std::size_t i = 0; i < g.cols; ++i) {
        const double m = detail::episode_mean(g, i);
        if (m > 0)
          parts.push_back(format_value(m) + " of " + detail::item_text(vocab, vocab.items(group)[i], stats));
      }
      return "The mean amounts of medications administered during the episode were: " + detail::join_list(parts) +
             ".";
    }
    case FeatureGroup::Proc:
    case FeatureGroup::Oute: {
      const Grid& g = series.grid(group);
      std::vector<std::string> parts;
      for (std::size_t i = 0; i < g.cols; ++i) {
        bool any = false;
        for (std::size_t r = 0; r < g.rows && !any; ++r) any = g.at(r, i) > 0;
        if (any) parts.push_back(detail::item_text(vocab, vocab.items(group)[i], stats));
      }
      return std::string(group == FeatureGroup::Proc ? "The procedures performed were: "
                                                     : "The outputs collected were: ") +
             detail::join_list(parts) + ".";
    }
  }
  return {};
}

struct PatientDocument {
  std::string stay_id;
  std::vector<std::pair<FeatureGroup, std::string>> sections;
  std::string full_text;

  bool operator==(const PatientDocument&) const = default;
};

// Renders the enabled sections in fixed group order and joins them with single
// spaces.
inline PatientDocument render_document(const ICUStayRecord& stay, const TimeBinnedSeries& series,
                                       const FeatureVocabulary& vocab, const AblationFlags& flags,
                                       RenderStats* stats = nullptr) {
  PatientDocument doc;
  doc.stay_id = stay.stay_id;
  for (FeatureGroup g : flags.groups()) {
    auto text = render_section(g, stay, series, vocab, flags.has(FeatureGroup::Cond), stats);
    if (text.empty()) continue;
    if (!doc.full_text.empty()) doc.full_text += ' ';
    doc.full_text += text;
    doc.sections.emplace_back(g, std::move(text));
  }
  return doc;
}

}  // namespace mimictext
