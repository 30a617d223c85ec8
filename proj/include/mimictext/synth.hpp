#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/csv.hpp"
#include "mimictext/error.hpp"
#include "mimictext/ingest.hpp"
#include "mimictext/rng.hpp"
#include "mimictext/text_util.hpp"

namespace mimictext {

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_patients = 100;
  double mortality_prevalence = 0.15;
  int n_cond_codes = 60;
  std::array<int, 4> n_items = {20, 10, 8, 6};  // CHART_LAB, MEDS, PROC, OUTE
  double events_per_stay = 60;
  double signal_strength = 0.0;  // in [0, 1]
  int n_signal_items = 4;        // leading CHART_LAB items shifted by label
  double short_stay_fraction = 0.1;
  double second_stay_fraction = 0.05;
  double missing_disposition_fraction = 0.0;
  double outside_window_fraction = 0.05;  // events placed after the window
  int observation_window_hours = 48;

  void validate() const {
    if (n_patients <= 0) throw DataError("n_patients must be positive");
    if (!(mortality_prevalence > 0.0 && mortality_prevalence < 1.0))
      throw DataError("mortality_prevalence must lie strictly inside (0, 1)");
    if (n_cond_codes <= 0) throw DataError("n_cond_codes must be positive");
    for (int n : n_items)
      if (n <= 0) throw DataError("item vocabulary sizes must be positive");
    if (!(events_per_stay > 0)) throw DataError("events_per_stay must be positive");
    if (signal_strength < 0.0 || signal_strength > 1.0) throw DataError("signal_strength must lie in [0, 1]");
    if (n_signal_items < 0 || n_signal_items > n_items[0]) throw DataError("n_signal_items exceeds CHART_LAB items");
    for (double f : {short_stay_fraction, second_stay_fraction, missing_disposition_fraction, outside_window_fraction})
      if (f < 0.0 || f >= 1.0) throw DataError("fractions must lie in [0, 1)");
    if (observation_window_hours <= 0) throw DataError("observation_window_hours must be positive");
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"n_patients", c.n_patients},
          {"mortality_prevalence", c.mortality_prevalence},
          {"n_cond_codes", c.n_cond_codes},
          {"n_items", c.n_items},
          {"events_per_stay", c.events_per_stay},
          {"signal_strength", c.signal_strength},
          {"n_signal_items", c.n_signal_items},
          {"short_stay_fraction", c.short_stay_fraction},
          {"second_stay_fraction", c.second_stay_fraction},
          {"missing_disposition_fraction", c.missing_disposition_fraction},
          {"outside_window_fraction", c.outside_window_fraction},
          {"observation_window_hours", c.observation_window_hours}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.seed = j.value("seed", c.seed);
  c.n_patients = j.value("n_patients", c.n_patients);
  c.mortality_prevalence = j.value("mortality_prevalence", c.mortality_prevalence);
  c.n_cond_codes = j.value("n_cond_codes", c.n_cond_codes);
  if (j.contains("n_items")) c.n_items = j.at("n_items").get<std::array<int, 4>>();
  c.events_per_stay = j.value("events_per_stay", c.events_per_stay);
  c.signal_strength = j.value("signal_strength", c.signal_strength);
  c.n_signal_items = j.value("n_signal_items", c.n_signal_items);
  c.short_stay_fraction = j.value("short_stay_fraction", c.short_stay_fraction);
  c.second_stay_fraction = j.value("second_stay_fraction", c.second_stay_fraction);
  c.missing_disposition_fraction = j.value("missing_disposition_fraction", c.missing_disposition_fraction);
  c.outside_window_fraction = j.value("outside_window_fraction", c.outside_window_fraction);
  c.observation_window_hours = j.value("observation_window_hours", c.observation_window_hours);
  return c;
}

// Planted ground truth of one generate() call.
struct SynthLedger {
  std::size_t planted_cohort_size = 0;   // stays that should survive build_cohort
  std::size_t planted_positives = 0;     // among them
  std::map<std::string, int> planted_labels;  // stay_id -> label, cohort stays only
  std::map<std::string, std::size_t> row_counts;  // table key -> data rows written
  std::size_t short_stays = 0;
  std::size_t second_stays = 0;
  std::size_t missing_dispositions = 0;
  std::size_t events_outside_window = 0;
  std::vector<std::string> signal_items;

  nlohmann::json to_json() const {
    return {{"planted_cohort_size", planted_cohort_size},
            {"planted_positives", planted_positives},
            {"planted_labels", planted_labels},
            {"row_counts", row_counts},
            {"short_stays", short_stays},
            {"second_stays", second_stays},
            {"missing_dispositions", missing_dispositions},
            {"events_outside_window", events_outside_window},
            {"signal_items", signal_items}};
  }
};

namespace detail {

inline constexpr std::array<const char*, 12> kChartNames = {
    "Heart Rate",           "Respiratory Rate", "Lactate",          "Creatinine",
    "Arterial Blood Pressure mean", "O2 saturation pulseoxymetry", "Temperature Fahrenheit", "Glucose",
    "Hemoglobin",           "Potassium",        "Sodium",           "Heart rate Alarm - High"};
inline constexpr std::array<const char*, 6> kMedNames = {"Albumin 5%",   "NaCl 0.9%", "Propofol",
                                                         "Norepinephrine", "Insulin - Regular", "Heparin Sodium"};
inline constexpr std::array<const char*, 6> kProcNames = {"Dialysis Catheter", "18 Gauge", "EKG",
                                                          "Chest X-Ray",       "Arterial Line", "Intubation"};
inline constexpr std::array<const char*, 5> kOutNames = {"OR EBL", "OR Urine", "Pre-Admission", "Foley",
                                                         "Chest Tube #1"};

inline std::string item_name(std::size_t group, int i) {
  auto pick = [&](auto const& names, const char* generic) {
    return static_cast<std::size_t>(i) < names.size() ? std::string(names[i])
                                                      : std::string(generic) + " " + std::to_string(i + 1);
  };
  switch (group) {
    case 0: return pick(kChartNames, "Chart measurement");
    case 1: return pick(kMedNames, "Medication");
    case 2: return pick(kProcNames, "Procedure");
    default: return pick(kOutNames, "Output");
  }
}

inline constexpr std::array<int, 4> kItemBase = {220000, 221000, 225000, 226000};

// Exactly round(fraction * n) indices chosen by shuffle.
inline std::vector<bool> exact_subset(Rng& rng, int n, double fraction) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  rng.shuffle(idx);
  const auto k = static_cast<std::size_t>(std::llround(fraction * n));
  std::vector<bool> out(static_cast<std::size_t>(n), false);
  for (std::size_t i = 0; i < k; ++i) out[static_cast<std::size_t>(idx[i])] = true;
  return out;
}

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, std::vector<std::string> header) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path.string());
    csv::write_record(out_, header);
  }
  void row(const std::vector<std::string>& r) {
    csv::write_record(out_, r);
    ++rows_;
  }
  std::size_t rows() const { return rows_; }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed");
  }

 private:
  std::ofstream out_;
  std::size_t rows_ = 0;
};

}  // namespace detail

// Writes every table load_tables() reads, with planted labels and (when
// signal_strength > 0) label-dependent shifts on the leading CHART_LAB items.
inline SynthLedger generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  Rng rng(cfg.seed);
  SynthLedger ledger;
  const int n = cfg.n_patients;
  const std::int64_t window = std::int64_t{cfg.observation_window_hours} * 60;

  const auto dead = detail::exact_subset(rng, n, cfg.mortality_prevalence);
  const auto is_short = detail::exact_subset(rng, n, cfg.short_stay_fraction);
  const auto has_second = detail::exact_subset(rng, n, cfg.second_stay_fraction);
  const auto no_disposition = detail::exact_subset(rng, n, cfg.missing_disposition_fraction);

  using detail::CsvFile;
  const SchemaConfig schema;
  auto file = [&](Table t) { return out_dir / schema.at(t).file; };
  CsvFile patients(file(Table::Patients), {"subject_id", "gender", "anchor_age", "ethnicity"});
  CsvFile admissions(file(Table::Admissions), {"hadm_id", "subject_id", "admittime", "dischtime", "insurance",
                                               "hospital_expire_flag"});
  CsvFile icustays(file(Table::IcuStays), {"stay_id", "hadm_id", "intime", "outtime"});
  CsvFile diagnoses(file(Table::Diagnoses), {"hadm_id", "icd_code", "icd_version"});
  std::array<CsvFile, 4> events = {CsvFile(file(Table::ChartLabEvents), {"stay_id", "item_id", "charttime", "value"}),
                                   CsvFile(file(Table::MedEvents), {"stay_id", "item_id", "charttime", "value"}),
                                   CsvFile(file(Table::ProcEvents), {"stay_id", "item_id", "charttime", "value"}),
                                   CsvFile(file(Table::OutEvents), {"stay_id", "item_id", "charttime", "value"})};
  CsvFile d_items(file(Table::ItemDictionary), {"item_id", "label"});
  CsvFile d_icd(file(Table::IcdDictionary), {"icd_code", "icd_version", "long_title"});

  // Dictionaries.
  std::array<std::vector<std::string>, 4> item_ids;
  for (std::size_t g = 0; g < 4; ++g)
    for (int i = 0; i < cfg.n_items[g]; ++i) {
      item_ids[g].push_back(std::to_string(detail::kItemBase[g] + i));
      d_items.row({item_ids[g].back(), detail::item_name(g, i)});
    }
  for (int i = 0; i < cfg.n_signal_items; ++i) ledger.signal_items.push_back(item_ids[0][static_cast<std::size_t>(i)]);
  std::vector<std::string> codes;
  for (int i = 0; i < cfg.n_cond_codes; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%03d", i + 1);
    codes.emplace_back(buf);
    d_icd.row({codes.back(), "10", "Synthetic condition " + std::to_string(i + 1)});
  }

  // Per-item log-scale baselines.
  std::vector<double> chart_mu;
  for (int i = 0; i < cfg.n_items[0]; ++i) chart_mu.push_back(std::log(10.0 + 15.0 * (i % 7)));
  const double shift = cfg.signal_strength * 0.5;

  static constexpr std::array<const char*, 6> kEthnicity = {"WHITE", "WHITE", "BLACK/AFRICAN AMERICAN",
                                                            "HISPANIC/LATINO", "ASIAN", "AMERICAN INDIAN"};
  static constexpr std::array<const char*, 3> kInsurance = {"Medicare", "Medicaid", "Other"};
  const std::int64_t base = days_from_civil(2150, 1, 1) * 1440;

  for (int p = 0; p < n; ++p) {
    const auto up = static_cast<std::size_t>(p);
    const std::string subject = std::to_string(10000000 + p);
    const std::string hadm = std::to_string(20000000 + p);
    const std::string stay = std::to_string(30000000 + p);
    const int label = dead[up] ? 1 : 0;

    patients.row({subject, rng.bernoulli(0.5) ? "M" : "F", std::to_string(18 + rng.index(73)),
                  kEthnicity[rng.index(kEthnicity.size())]});

    const std::int64_t admit = base + static_cast<std::int64_t>(rng.index(3650)) * 1440 +
                               static_cast<std::int64_t>(rng.index(1440));
    const std::int64_t intime = admit + static_cast<std::int64_t>(rng.index(12 * 60));
    const std::int64_t length = is_short[up] ? 6 * 60 + static_cast<std::int64_t>(rng.index(window - 6 * 60))
                                             : window + static_cast<std::int64_t>(rng.index(10 * 1440));
    const std::int64_t outtime = intime + length;
    std::int64_t discharge = outtime + 60 + static_cast<std::int64_t>(rng.index(5 * 1440));
    if (has_second[up]) {
      const std::int64_t in2 = outtime + 120 + static_cast<std::int64_t>(rng.index(1440));
      const std::int64_t out2 = in2 + window + static_cast<std::int64_t>(rng.index(3 * 1440));
      discharge = std::max(discharge, out2 + 60);
      icustays.row({std::to_string(30500000 + p), hadm, format_time_minutes(in2), format_time_minutes(out2)});
      ++ledger.second_stays;
    }
    admissions.row({hadm, subject, format_time_minutes(admit), format_time_minutes(discharge),
                    kInsurance[rng.index(kInsurance.size())],
                    no_disposition[up] ? std::string() : std::to_string(label)});
    icustays.row({stay, hadm, format_time_minutes(intime), format_time_minutes(outtime)});

    // Diagnoses: distinct codes.
    const int n_dx = 1 + rng.poisson(5.0);
    std::vector<std::size_t> dx;
    for (int k = 0; k < n_dx && dx.size() < codes.size(); ++k) {
      auto c = static_cast<std::size_t>(rng.index(codes.size()));
      if (std::find(dx.begin(), dx.end(), c) == dx.end()) dx.push_back(c);
    }
    for (auto c : dx) diagnoses.row({hadm, codes[c], "10"});

    // Events; timestamps inside the stay.
    const std::int64_t span = std::min(length, window);
    auto draw_time = [&]() -> std::int64_t {
      if (length > window && rng.bernoulli(cfg.outside_window_fraction)) {
        ++ledger.events_outside_window;
        return window + static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(length - window)));
      }
      return static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(span)));
    };
    struct Ev {
      std::int64_t t;
      std::size_t item;
      double value;
    };
    std::array<std::vector<Ev>, 4> evs;
    const double stay_effect = rng.normal(0.0, 0.2);
    for (int i = 0; i < cfg.n_signal_items; ++i) {
      const int reps = 1 + rng.poisson(6.0);
      const double item_effect = rng.normal(0.0, 0.15);
      for (int r = 0; r < reps; ++r) {
        const double z = chart_mu[static_cast<std::size_t>(i)] + 0.5 * stay_effect + item_effect +
                         rng.normal(0.0, 0.25) + shift * label;
        evs[0].push_back({draw_time(), static_cast<std::size_t>(i), std::exp(z)});
      }
    }
    const std::array<double, 4> share = {0.5, 0.2, 0.15, 0.15};
    for (std::size_t g = 0; g < 4; ++g) {
      const int count = rng.poisson(share[g] * cfg.events_per_stay);
      for (int k = 0; k < count; ++k) {
        const auto item = static_cast<std::size_t>(rng.index(item_ids[g].size()));
        double v = 1.0;
        if (g == 0) v = std::exp(chart_mu[item] + rng.normal(0.0, 0.3));
        if (g == 1) v = std::exp(std::log(50.0) + rng.normal(0.0, 0.5));
        if (g == 3) v = std::round(std::exp(std::log(200.0) + rng.normal(0.0, 0.4)));
        evs[g].push_back({draw_time(), item, v});
      }
    }
    for (std::size_t g = 0; g < 4; ++g) {
      std::stable_sort(evs[g].begin(), evs[g].end(), [](const Ev& a, const Ev& b) { return a.t < b.t; });
      for (const auto& e : evs[g]) {
        // three decimals keeps files compact; PROC value is a duration in minutes
        char vbuf[32];
        std::snprintf(vbuf, sizeof vbuf, "%.3f", g == 2 ? 30.0 : e.value);
        events[g].row({stay, item_ids[g][e.item], format_time_minutes(intime + e.t), vbuf});
      }
    }

    if (!is_short[up] && !no_disposition[up]) {
      ++ledger.planted_cohort_size;
      ledger.planted_positives += static_cast<std::size_t>(label);
      ledger.planted_labels[stay] = label;
    }
    ledger.short_stays += is_short[up];
    ledger.missing_dispositions += no_disposition[up];
  }

  ledger.row_counts[std::string(table_key(Table::Patients))] = patients.rows();
  ledger.row_counts[std::string(table_key(Table::Admissions))] = admissions.rows();
  ledger.row_counts[std::string(table_key(Table::IcuStays))] = icustays.rows();
  ledger.row_counts[std::string(table_key(Table::Diagnoses))] = diagnoses.rows();
  ledger.row_counts[std::string(table_key(Table::ChartLabEvents))] = events[0].rows();
  ledger.row_counts[std::string(table_key(Table::MedEvents))] = events[1].rows();
  ledger.row_counts[std::string(table_key(Table::ProcEvents))] = events[2].rows();
  ledger.row_counts[std::string(table_key(Table::OutEvents))] = events[3].rows();
  ledger.row_counts[std::string(table_key(Table::ItemDictionary))] = d_items.rows();
  ledger.row_counts[std::string(table_key(Table::IcdDictionary))] = d_icd.rows();
  for (auto* f : {&patients, &admissions, &icustays, &diagnoses, &events[0], &events[1], &events[2], &events[3],
                  &d_items, &d_icd})
    f->close();

  std::ofstream lj(out_dir / "ledger.json", std::ios::binary);
  if (!lj) throw IoError("cannot write ledger.json");
  lj << ledger.to_json().dump(2) << '\n';
  return ledger;
}

}  // namespace mimictext
