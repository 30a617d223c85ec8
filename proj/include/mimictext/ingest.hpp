#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/csv.hpp"
#include "mimictext/ehr_model.hpp"
#include "mimictext/error.hpp"
#include "mimictext/text_util.hpp"

namespace mimictext {

// ---------------------------------------------------------------------------
// Schema

enum class Table : std::uint8_t {
  Patients,
  Admissions,
  IcuStays,
  Diagnoses,
  ChartLabEvents,
  MedEvents,
  ProcEvents,
  OutEvents,
  ItemDictionary,
  IcdDictionary,
};

inline constexpr std::array<Table, 10> kAllTables = {
    Table::Patients,      Table::Admissions,     Table::IcuStays,  Table::Diagnoses,
    Table::ChartLabEvents, Table::MedEvents,     Table::ProcEvents, Table::OutEvents,
    Table::ItemDictionary, Table::IcdDictionary};

inline constexpr std::string_view table_key(Table t) noexcept {
  switch (t) {
    case Table::Patients: return "patients";
    case Table::Admissions: return "admissions";
    case Table::IcuStays: return "icustays";
    case Table::Diagnoses: return "diagnoses_icd";
    case Table::ChartLabEvents: return "chartevents";
    case Table::MedEvents: return "inputevents";
    case Table::ProcEvents: return "procedureevents";
    case Table::OutEvents: return "outputevents";
    case Table::ItemDictionary: return "d_items";
    case Table::IcdDictionary: return "d_icd_diagnoses";
  }
  return "?";
}

inline constexpr FeatureGroup event_group(Table t) {
  switch (t) {
    case Table::ChartLabEvents: return FeatureGroup::ChartLab;
    case Table::MedEvents: return FeatureGroup::Meds;
    case Table::ProcEvents: return FeatureGroup::Proc;
    case Table::OutEvents: return FeatureGroup::Oute;
    default: throw DataError("not an events table");
  }
}

// Logical column names each table must provide. PROC/OUTE values are fixed to
// 1, so their value column is optional.
inline std::vector<std::string> required_columns(Table t) {
  switch (t) {
    case Table::Patients: return {"subject_id", "gender", "anchor_age", "ethnicity"};
    case Table::Admissions:
      return {"hadm_id", "subject_id", "admittime", "dischtime", "insurance", "hospital_expire_flag"};
    case Table::IcuStays: return {"stay_id", "hadm_id", "intime", "outtime"};
    case Table::Diagnoses: return {"hadm_id", "icd_code", "icd_version"};
    case Table::ChartLabEvents:
    case Table::MedEvents: return {"stay_id", "item_id", "charttime", "value"};
    case Table::ProcEvents:
    case Table::OutEvents: return {"stay_id", "item_id", "charttime"};
    case Table::ItemDictionary: return {"item_id", "label"};
    case Table::IcdDictionary: return {"icd_code", "icd_version", "long_title"};
  }
  return {};
}

// File name and logical->physical column mapping for every input table.
// Defaults are the identity mapping onto "<table>.csv".
struct SchemaConfig {
  struct TableSchema {
    std::string file;
    std::map<std::string, std::string> columns;  // logical -> physical

    const std::string& column(const std::string& logical) const {
      auto it = columns.find(logical);
      return it == columns.end() ? logical : it->second;
    }
  };

  std::map<Table, TableSchema> tables;

  SchemaConfig() {
    for (Table t : kAllTables) tables[t].file = std::string(table_key(t)) + ".csv";
  }

  const TableSchema& at(Table t) const { return tables.at(t); }

  // {"patients": {"file": "PATIENTS.csv", "columns": {"subject_id": "SUBJECT_ID"}}, ...}
  static SchemaConfig from_json(const nlohmann::json& j) {
    SchemaConfig cfg;
    if (!j.is_object()) throw SchemaError("schema config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto t = std::find_if(kAllTables.begin(), kAllTables.end(), [&](Table x) { return table_key(x) == it.key(); });
      if (t == kAllTables.end()) throw SchemaError("schema config: unknown table '" + it.key() + "'");
      auto& ts = cfg.tables[*t];
      if (it->contains("file")) ts.file = it->at("file").get<std::string>();
      if (it->contains("columns"))
        for (auto c = it->at("columns").begin(); c != it->at("columns").end(); ++c)
          ts.columns[c.key()] = c->get<std::string>();
    }
    return cfg;
  }

  static SchemaConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open schema config " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("schema config " + path.string() + ": " + e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Raw tables

struct PatientRow {
  std::string subject_id;
  std::string gender;
  int anchor_age = 0;
  std::string ethnicity;
};

struct AdmissionRow {
  std::string hadm_id;
  std::string subject_id;
  std::int64_t admit_minutes = 0;
  std::int64_t discharge_minutes = 0;
  std::string insurance;
  std::optional<int> expire_flag;  // empty cell -> disposition unknown
};

struct IcuStayRow {
  std::string stay_id;
  std::string hadm_id;
  std::int64_t in_minutes = 0;
  std::int64_t out_minutes = 0;
};

struct DiagnosisRow {
  std::string hadm_id;
  DiagnosisCode code;
};

struct EventRow {
  std::string stay_id;
  std::string item_id;
  std::int64_t time_minutes = 0;  // absolute
  double value = 1.0;
};

struct TableStats {
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::vector<std::string> skip_examples;  // first few reasons, for diagnostics
};

struct RawTables {
  std::vector<PatientRow> patients;
  std::vector<AdmissionRow> admissions;
  std::vector<IcuStayRow> icustays;
  std::vector<DiagnosisRow> diagnoses;
  std::array<std::vector<EventRow>, 4> events;  // indexed by dynamic_index()
  std::map<std::string, std::string> item_labels;
  std::map<DiagnosisCode, std::string> icd_labels;
  std::map<Table, TableStats> stats;

  const std::vector<EventRow>& events_of(FeatureGroup g) const { return events[dynamic_index(g)]; }
};

namespace detail {

inline constexpr std::size_t kMaxSkipExamples = 5;

// Reads one CSV table, resolving logical columns through the schema, and
// hands each record to `row` as a vector of cells ordered like `logical`.
// `row` returns an empty string on success or a skip reason.
template <class RowFn>
TableStats read_table(const std::filesystem::path& dir, const SchemaConfig::TableSchema& schema,
                      const std::vector<std::string>& logical, const std::vector<std::string>& optional_cols,
                      RowFn&& row) {
  const auto path = dir / schema.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("missing input file " + path.string());
  csv::Reader reader(in);
  reader.set_name(path.string());
  std::vector<std::string> rec;
  if (!reader.next(rec)) throw SchemaError(path.string() + ": missing header row");
  csv::Header header(rec);

  std::vector<std::optional<std::size_t>> pos;
  for (const auto& name : logical) {
    auto p = header.find(schema.column(name));
    if (!p) throw SchemaError(path.string() + ": missing required column '" + schema.column(name) + "'");
    pos.push_back(p);
  }
  for (const auto& name : optional_cols) pos.push_back(header.find(schema.column(name)));

  TableStats stats;
  std::vector<std::string_view> cells(pos.size());
  const std::string empty;
  while (reader.next(rec)) {
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    ++stats.rows_read;
    std::string reason;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (!pos[i]) {
        cells[i] = empty;
      } else if (*pos[i] >= rec.size()) {
        reason = "short row";
        break;
      } else {
        cells[i] = rec[*pos[i]];
      }
    }
    if (reason.empty()) reason = row(cells);
    if (!reason.empty()) {
      ++stats.rows_skipped;
      if (stats.skip_examples.size() < kMaxSkipExamples)
        stats.skip_examples.push_back("line " + std::to_string(reader.record_line()) + ": " + reason);
    }
  }
  return stats;
}

inline std::string require_id(std::string_view v, const char* what) {
  return trim(v).empty() ? std::string("empty ") + what : std::string();
}

inline TableStats load_events(const std::filesystem::path& dir, const SchemaConfig& schema, Table t,
                              std::vector<EventRow>& out) {
  const bool indicator = t == Table::ProcEvents || t == Table::OutEvents;
  std::vector<std::string> opt;
  if (indicator) opt.push_back("value");
  return read_table(dir, schema.at(t), required_columns(t), opt, [&](const std::vector<std::string_view>& c) {
    EventRow e;
    if (auto r = require_id(c[0], "stay_id"); !r.empty()) return r;
    if (auto r = require_id(c[1], "item_id"); !r.empty()) return r;
    auto tm = parse_time_minutes(c[2]);
    if (!tm) return std::string("unparseable charttime '") + std::string(c[2]) + "'";
    if (!indicator) {
      auto v = parse_double(c[3]);
      if (!v) return std::string("unparseable value '") + std::string(c[3]) + "'";
      if (t == Table::MedEvents && *v < 0) return std::string("negative administered amount");
      e.value = *v;
    }
    e.stay_id = std::string(trim(c[0]));
    e.item_id = std::string(trim(c[1]));
    e.time_minutes = *tm;
    out.push_back(std::move(e));
    return std::string();
  });
}

}  // namespace detail

// Parses every input table under `dir`. Missing files and missing required
// columns are fatal; rows with unparseable cells are skipped and counted in
// RawTables::stats. Tables are parsed concurrently when `threads` > 1.
inline RawTables load_tables(const std::filesystem::path& dir, const SchemaConfig& schema = {},
                             unsigned threads = 1) {
  RawTables raw;
  using detail::read_table;
  using detail::require_id;

  std::map<Table, std::function<TableStats()>> jobs;
  jobs[Table::Patients] = [&] {
    return read_table(dir, schema.at(Table::Patients), required_columns(Table::Patients), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "subject_id"); !r.empty()) return r;
                        auto age = parse_int(c[2]);
                        if (!age) return std::string("unparseable anchor_age '") + std::string(c[2]) + "'";
                        raw.patients.push_back({std::string(trim(c[0])), std::string(trim(c[1])),
                                                static_cast<int>(*age), std::string(trim(c[3]))});
                        return std::string();
                      });
  };
  jobs[Table::Admissions] = [&] {
    return read_table(dir, schema.at(Table::Admissions), required_columns(Table::Admissions), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "hadm_id"); !r.empty()) return r;
                        if (auto r = require_id(c[1], "subject_id"); !r.empty()) return r;
                        auto a = parse_time_minutes(c[2]);
                        auto d = parse_time_minutes(c[3]);
                        if (!a || !d) return std::string("unparseable admittime/dischtime");
                        AdmissionRow row{std::string(trim(c[0])), std::string(trim(c[1])), *a, *d,
                                         std::string(trim(c[4])), std::nullopt};
                        if (!trim(c[5]).empty()) {
                          auto f = parse_int(c[5]);
                          if (!f || (*f != 0 && *f != 1))
                            return std::string("unparseable hospital_expire_flag '") + std::string(c[5]) + "'";
                          row.expire_flag = static_cast<int>(*f);
                        }
                        raw.admissions.push_back(std::move(row));
                        return std::string();
                      });
  };
  jobs[Table::IcuStays] = [&] {
    return read_table(dir, schema.at(Table::IcuStays), required_columns(Table::IcuStays), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "stay_id"); !r.empty()) return r;
                        if (auto r = require_id(c[1], "hadm_id"); !r.empty()) return r;
                        auto in = parse_time_minutes(c[2]);
                        auto out = parse_time_minutes(c[3]);
                        if (!in || !out) return std::string("unparseable intime/outtime");
                        raw.icustays.push_back({std::string(trim(c[0])), std::string(trim(c[1])), *in, *out});
                        return std::string();
                      });
  };
  jobs[Table::Diagnoses] = [&] {
    return read_table(dir, schema.at(Table::Diagnoses), required_columns(Table::Diagnoses), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "hadm_id"); !r.empty()) return r;
                        if (auto r = require_id(c[1], "icd_code"); !r.empty()) return r;
                        auto v = parse_icd_version(trim(c[2]));
                        if (!v) return std::string("unknown icd_version '") + std::string(c[2]) + "'";
                        raw.diagnoses.push_back({std::string(trim(c[0])), {std::string(trim(c[1])), *v}});
                        return std::string();
                      });
  };
  for (FeatureGroup g : kDynamicGroups) {
    const Table t = g == FeatureGroup::ChartLab ? Table::ChartLabEvents
                    : g == FeatureGroup::Meds   ? Table::MedEvents
                    : g == FeatureGroup::Proc   ? Table::ProcEvents
                                                : Table::OutEvents;
    jobs[t] = [&, t, g] { return detail::load_events(dir, schema, t, raw.events[dynamic_index(g)]); };
  }
  jobs[Table::ItemDictionary] = [&] {
    return read_table(dir, schema.at(Table::ItemDictionary), required_columns(Table::ItemDictionary), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "item_id"); !r.empty()) return r;
                        raw.item_labels[std::string(trim(c[0]))] = std::string(trim(c[1]));
                        return std::string();
                      });
  };
  jobs[Table::IcdDictionary] = [&] {
    return read_table(dir, schema.at(Table::IcdDictionary), required_columns(Table::IcdDictionary), {},
                      [&](const std::vector<std::string_view>& c) {
                        if (auto r = require_id(c[0], "icd_code"); !r.empty()) return r;
                        auto v = parse_icd_version(trim(c[1]));
                        if (!v) return std::string("unknown icd_version '") + std::string(c[1]) + "'";
                        raw.icd_labels[{std::string(trim(c[0])), *v}] = std::string(trim(c[2]));
                        return std::string();
                      });
  };

  // Every job writes to its own member of `raw`, so jobs never share state.
  if (threads > 1) {
    std::map<Table, std::future<TableStats>> futures;
    for (auto& [t, job] : jobs) futures.emplace(t, std::async(std::launch::async, job));
    for (auto& [t, f] : futures) raw.stats[t] = f.get();
  } else {
    for (auto& [t, job] : jobs) raw.stats[t] = job();
  }
  return raw;
}

// ---------------------------------------------------------------------------
// Cohort

enum class LabelKind : std::uint8_t { InHospitalDeath };

struct CohortConfig {
  int observation_window_hours = 48;
  int bin_hours = 2;
  LabelKind label_kind = LabelKind::InHospitalDeath;
  std::optional<int> min_stay_hours;  // defaults to the observation window

  int window_count() const { return observation_window_hours / bin_hours; }
  int effective_min_stay_hours() const { return min_stay_hours.value_or(observation_window_hours); }
  std::int64_t window_minutes() const { return std::int64_t{observation_window_hours} * 60; }
  std::int64_t bin_minutes() const { return std::int64_t{bin_hours} * 60; }

  void validate() const {
    if (observation_window_hours <= 0 || bin_hours <= 0)
      throw DataError("observation_window_hours and bin_hours must be positive");
    if (observation_window_hours % bin_hours != 0)
      throw DataError("bin_hours must divide observation_window_hours");
    if (min_stay_hours && *min_stay_hours <= 0) throw DataError("min_stay_hours must be positive");
  }
};

// Outcome label for the admission containing a stay; nullopt when the
// discharge disposition is unknown.
inline std::optional<int> assign_label(const AdmissionRow& admission, const CohortConfig& cfg) {
  switch (cfg.label_kind) {
    case LabelKind::InHospitalDeath: return admission.expire_flag;
  }
  return std::nullopt;
}

// Batch form: one optional label per stay row, nullopt when the admission is
// missing or has no disposition.
inline std::vector<std::optional<int>> assign_label(std::span<const IcuStayRow> stays,
                                                    std::span<const AdmissionRow> admissions,
                                                    const CohortConfig& cfg) {
  std::unordered_map<std::string, const AdmissionRow*> by_id;
  for (const auto& a : admissions) by_id.emplace(a.hadm_id, &a);
  std::vector<std::optional<int>> out;
  out.reserve(stays.size());
  for (const auto& s : stays) {
    auto it = by_id.find(s.hadm_id);
    out.push_back(it == by_id.end() ? std::nullopt : assign_label(*it->second, cfg));
  }
  return out;
}

// Exclusion reasons reported by build_cohort.
namespace exclusion {
inline constexpr const char* kNotFirstStay = "not_first_stay_of_admission";
inline constexpr const char* kMissingAdmission = "missing_admission";
inline constexpr const char* kMissingPatient = "missing_patient";
inline constexpr const char* kShortStay = "shorter_than_min_stay";
inline constexpr const char* kMissingDisposition = "missing_disposition";
inline constexpr const char* kInvalidAge = "age_out_of_range";
}  // namespace exclusion

struct CohortBuild {
  Cohort cohort;  // sorted by stay_id
  FeatureVocabulary vocab;
  std::map<std::string, std::size_t> exclusions;
  std::size_t events_outside_window = 0;
  std::size_t events_unmatched = 0;  // referencing stays outside the cohort
};

// Assembles one record per qualifying ICU stay: the first stay of each
// admission, at least min_stay_hours long, with a known disposition. Events
// outside [0, observation window) are dropped. Vocabularies are built over the
// whole retained cohort.
inline CohortBuild build_cohort(const RawTables& raw, const CohortConfig& cfg,
                                const DemographicVocabulary& demo = {}) {
  cfg.validate();
  CohortBuild out;
  auto& excl = out.exclusions;
  for (const char* k : {exclusion::kNotFirstStay, exclusion::kMissingAdmission, exclusion::kMissingPatient,
                        exclusion::kShortStay, exclusion::kMissingDisposition, exclusion::kInvalidAge})
    excl[k] = 0;

  std::unordered_map<std::string, const PatientRow*> patients;
  for (const auto& p : raw.patients) patients.emplace(p.subject_id, &p);
  std::unordered_map<std::string, const AdmissionRow*> admissions;
  for (const auto& a : raw.admissions) admissions.emplace(a.hadm_id, &a);

  // First stay per admission: earliest intime, ties by stay_id.
  std::map<std::string, const IcuStayRow*> first_stay;
  for (const auto& s : raw.icustays) {
    auto [it, inserted] = first_stay.emplace(s.hadm_id, &s);
    if (inserted) continue;
    const IcuStayRow* cur = it->second;
    if (s.in_minutes < cur->in_minutes ||
        (s.in_minutes == cur->in_minutes && natural_less(s.stay_id, cur->stay_id)))
      it->second = &s;
  }
  excl[exclusion::kNotFirstStay] = raw.icustays.size() - first_stay.size();

  std::unordered_map<std::string, std::vector<DiagnosisCode>> dx_by_hadm;
  for (const auto& d : raw.diagnoses) {
    auto& v = dx_by_hadm[d.hadm_id];
    if (std::find(v.begin(), v.end(), d.code) == v.end()) v.push_back(d.code);
  }

  const std::int64_t min_minutes = std::int64_t{cfg.effective_min_stay_hours()} * 60;
  std::unordered_map<std::string, std::size_t> cohort_index;
  std::unordered_map<std::string, std::int64_t> intime;
  for (const auto& [hadm, stay] : first_stay) {
    auto a = admissions.find(hadm);
    if (a == admissions.end()) {
      ++excl[exclusion::kMissingAdmission];
      continue;
    }
    auto p = patients.find(a->second->subject_id);
    if (p == patients.end()) {
      ++excl[exclusion::kMissingPatient];
      continue;
    }
    if (stay->out_minutes - stay->in_minutes < min_minutes) {
      ++excl[exclusion::kShortStay];
      continue;
    }
    auto label = assign_label(*a->second, cfg);
    if (!label) {
      ++excl[exclusion::kMissingDisposition];
      continue;
    }
    const PatientRow& pt = *p->second;
    if (pt.anchor_age < 0 || pt.anchor_age > 130) {
      ++excl[exclusion::kInvalidAge];
      continue;
    }
    ICUStayRecord rec;
    rec.stay_id = stay->stay_id;
    rec.demographics = {demo.gender.canonical(pt.gender), demo.ethnicity.canonical(pt.ethnicity),
                        demo.insurance.canonical(a->second->insurance), pt.anchor_age};
    if (auto dx = dx_by_hadm.find(hadm); dx != dx_by_hadm.end()) rec.diagnoses = dx->second;
    rec.label = *label;
    if (!cohort_index.emplace(rec.stay_id, out.cohort.size()).second)
      throw DataError("stay_id " + rec.stay_id + " appears in more than one admission");
    intime[rec.stay_id] = stay->in_minutes;
    out.cohort.push_back(std::move(rec));
  }

  if (out.cohort.empty()) {
    std::string msg = "empty cohort after filtering (" + std::to_string(raw.icustays.size()) + " ICU stays read;";
    for (const auto& [k, v] : excl) msg += " " + k + "=" + std::to_string(v);
    throw EmptyCohortError(msg + ")");
  }

  std::array<std::set<std::string, decltype(&natural_less)>, 4> items{
      std::set<std::string, decltype(&natural_less)>(&natural_less),
      std::set<std::string, decltype(&natural_less)>(&natural_less),
      std::set<std::string, decltype(&natural_less)>(&natural_less),
      std::set<std::string, decltype(&natural_less)>(&natural_less)};
  const std::int64_t window = cfg.window_minutes();
  for (FeatureGroup g : kDynamicGroups) {
    for (const auto& e : raw.events_of(g)) {
      auto idx = cohort_index.find(e.stay_id);
      if (idx == cohort_index.end()) {
        ++out.events_unmatched;
        continue;
      }
      const std::int64_t t = e.time_minutes - intime[e.stay_id];
      if (t < 0 || t >= window) {
        ++out.events_outside_window;
        continue;
      }
      const bool indicator = g == FeatureGroup::Proc || g == FeatureGroup::Oute;
      out.cohort[idx->second].events.push_back({g, e.item_id, t, indicator ? 1.0 : e.value});
      items[dynamic_index(g)].insert(e.item_id);
    }
  }

  std::set<DiagnosisCode> codes;
  for (auto& rec : out.cohort) {
    std::stable_sort(rec.events.begin(), rec.events.end(),
                     [](const ClinicalEvent& a, const ClinicalEvent& b) { return a.t_minutes < b.t_minutes; });
    codes.insert(rec.diagnoses.begin(), rec.diagnoses.end());
  }
  std::sort(out.cohort.begin(), out.cohort.end(),
            [](const ICUStayRecord& a, const ICUStayRecord& b) { return natural_less(a.stay_id, b.stay_id); });

  std::vector<DiagnosisCode> cond(codes.begin(), codes.end());
  std::stable_sort(cond.begin(), cond.end(), [](const DiagnosisCode& a, const DiagnosisCode& b) {
    if (a.version != b.version) return a.version < b.version;
    return natural_less(a.code, b.code);
  });
  std::array<std::vector<std::string>, 4> dyn;
  for (std::size_t g = 0; g < 4; ++g) dyn[g].assign(items[g].begin(), items[g].end());

  std::map<std::string, std::string> item_labels;
  for (const auto& ids : dyn)
    for (const auto& id : ids)
      if (auto it = raw.item_labels.find(id); it != raw.item_labels.end()) item_labels.emplace(id, it->second);
  std::map<DiagnosisCode, std::string> code_labels;
  for (const auto& c : cond)
    if (auto it = raw.icd_labels.find(c); it != raw.icd_labels.end()) code_labels.emplace(c, it->second);

  out.vocab = FeatureVocabulary(std::move(cond), std::move(dyn), std::move(item_labels), std::move(code_labels));

  auto report = validate_cohort(out.cohort, out.vocab, &demo);
  if (!report.empty()) throw DataError("cohort failed validation: " + report.front().detail);
  return out;
}

// ---------------------------------------------------------------------------
// Time binning

// Row-major W x n grid.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> cells;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill) : rows(r), cols(c), cells(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }

  bool operator==(const Grid& o) const {
    if (rows != o.rows || cols != o.cols) return false;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double a = cells[i], b = o.cells[i];
      if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
    }
    return true;
  }
};

// Per dynamic group, a W x |items| grid. CHART_LAB cells hold the mean of the
// values observed in the bin, NaN when nothing was observed; MEDS cells hold
// the summed quantity; PROC/OUTE cells hold 0/1 occurrence.
struct TimeBinnedSeries {
  std::size_t windows = 0;
  std::array<Grid, 4> grids;

  Grid& grid(FeatureGroup g) { return grids[dynamic_index(g)]; }
  const Grid& grid(FeatureGroup g) const { return grids[dynamic_index(g)]; }

  static bool is_missing(double v) noexcept { return std::isnan(v); }

  bool operator==(const TimeBinnedSeries&) const = default;
};

// Bins are left-closed, right-open: t in [k*bin, (k+1)*bin) falls in bin k.
inline TimeBinnedSeries bin_events(const ICUStayRecord& stay, const CohortConfig& cfg,
                                   const FeatureVocabulary& vocab) {
  const auto w = static_cast<std::size_t>(cfg.window_count());
  const std::int64_t bin = cfg.bin_minutes();
  TimeBinnedSeries s;
  s.windows = w;
  std::vector<std::size_t> counts;
  for (FeatureGroup g : kDynamicGroups)
    s.grid(g) = Grid(w, vocab.items(g).size(), 0.0);
  counts.assign(w * vocab.items(FeatureGroup::ChartLab).size(), 0);

  for (const auto& e : stay.events) {
    if (e.t_minutes < 0 || e.t_minutes >= cfg.window_minutes()) continue;
    auto col = vocab.item_index(e.group, e.item_id);
    if (!col) continue;
    const auto row = static_cast<std::size_t>(e.t_minutes / bin);
    Grid& gr = s.grid(e.group);
    switch (e.group) {
      case FeatureGroup::ChartLab:
        gr.at(row, *col) += e.value;
        ++counts[row * gr.cols + *col];
        break;
      case FeatureGroup::Meds: gr.at(row, *col) += e.value; break;
      default: gr.at(row, *col) = 1.0; break;
    }
  }
  Grid& chart = s.grid(FeatureGroup::ChartLab);
  for (std::size_t i = 0; i < chart.cells.size(); ++i)
    chart.cells[i] = counts[i] ? chart.cells[i] / static_cast<double>(counts[i])
                               : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace mimictext
