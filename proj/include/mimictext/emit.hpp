#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/csv.hpp"
#include "mimictext/ehr_model.hpp"
#include "mimictext/error.hpp"
#include "mimictext/evaluate.hpp"
#include "mimictext/rng.hpp"
#include "mimictext/text_util.hpp"

namespace mimictext {

enum class Split : std::uint8_t { Train, Test };

inline std::string_view split_name(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct DatasetRecord {
  std::string stay_id;
  int label = 0;
  std::string text;
  std::optional<std::vector<double>> features;
  Split split = Split::Train;

  bool operator==(const DatasetRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Splitting and oversampling

struct CohortSplit {
  std::vector<std::string> train;  // cohort order
  std::vector<std::string> test;
};

// Stratified train/test split: each class contributes round(fraction * n_class)
// records to the test side, drawn by a seeded shuffle.
inline CohortSplit split_cohort(std::span<const std::string> stay_ids, std::span<const int> labels,
                                double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test_fraction must lie in (0, 1)");
  if (stay_ids.size() != labels.size()) throw DataError("stay ids and labels differ in length");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("label outside {0,1}");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " member(s); at least 2 are needed to split");
  Rng rng(seed);
  std::vector<bool> in_test(labels.size(), false);
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto k = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < k && i < members.size(); ++i) in_test[members[i]] = true;
  }
  CohortSplit out;
  for (std::size_t i = 0; i < labels.size(); ++i) (in_test[i] ? out.test : out.train).push_back(stay_ids[i]);
  return out;
}

inline CohortSplit split_cohort(const Cohort& cohort, double test_fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& s : cohort) {
    ids.push_back(s.stay_id);
    labels.push_back(s.label);
  }
  return split_cohort(ids, labels, test_fraction, seed);
}

// Balances classes by duplicating minority records (with replacement).
// Originals are kept in order; duplicates are appended.
inline std::vector<DatasetRecord> oversample(const std::vector<DatasetRecord>& train, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& r : train) labels.push_back(r.label);
  std::vector<DatasetRecord> out;
  for (auto i : oversample_indices(labels, seed)) out.push_back(train[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

enum class DatasetKind : std::uint8_t { TextJsonl, TabularCsv };

inline std::string_view kind_name(DatasetKind k) noexcept {
  return k == DatasetKind::TextJsonl ? "text_jsonl" : "tabular_csv";
}

struct WriteOptions {
  std::vector<std::string> slot_names;  // TABULAR_CSV feature columns
  nlohmann::ordered_json layout;        // descriptor stamped into the manifest; null for text
  std::string config_digest;
};

struct Dataset {
  std::vector<std::string> slot_names;
  std::vector<DatasetRecord> records;
};

inline std::filesystem::path manifest_path(const std::filesystem::path& data) {
  return data.string() + ".manifest.json";
}

namespace detail {

// Writes through a sibling temp file renamed into place; the temp file is
// removed if anything fails.
template <class WriteFn>
void write_atomically(const std::filesystem::path& path, WriteFn&& fn) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
      fn(out);
      out.flush();
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

}  // namespace detail

// Writes records as JSON lines ({"stay_id","label","text","split"}) or as CSV
// (stay_id,label,split + one column per feature slot), then a manifest next
// to the file. Returns the manifest.
inline nlohmann::ordered_json write_dataset(const std::vector<DatasetRecord>& records,
                                            const std::filesystem::path& path, DatasetKind kind,
                                            const WriteOptions& opts = {}) {
  if (records.empty()) throw DataError("refusing to write an empty dataset to " + path.string());
  for (const auto& r : records) {
    if (r.label != 0 && r.label != 1) throw DataError("record " + r.stay_id + ": label outside {0,1}");
    if (kind == DatasetKind::TextJsonl && r.text.empty())
      throw DataError("record " + r.stay_id + ": empty text in a text dataset");
    if (kind == DatasetKind::TabularCsv) {
      if (!r.features) throw DataError("record " + r.stay_id + ": missing features in a tabular dataset");
      if (r.features->size() != opts.slot_names.size())
        throw DataError("record " + r.stay_id + ": feature length does not match layout");
      for (double v : *r.features)
        if (!std::isfinite(v)) throw DataError("record " + r.stay_id + ": non-finite feature");
    }
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());

  detail::write_atomically(path, [&](std::ostream& out) {
    if (kind == DatasetKind::TextJsonl) {
      for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["stay_id"] = r.stay_id;
        j["label"] = r.label;
        j["text"] = r.text;
        j["split"] = split_name(r.split);
        out << j.dump() << '\n';
      }
    } else {
      std::vector<std::string> row{"stay_id", "label", "split"};
      row.insert(row.end(), opts.slot_names.begin(), opts.slot_names.end());
      csv::write_record(out, row);
      for (const auto& r : records) {
        row.assign({r.stay_id, std::to_string(r.label), std::string(split_name(r.split))});
        for (double v : *r.features) row.push_back(format_shortest(v));
        csv::write_record(out, row);
      }
    }
  });

  std::size_t train = 0, pos = 0;
  std::set<std::string> unique;
  for (const auto& r : records) {
    train += r.split == Split::Train;
    pos += static_cast<std::size_t>(r.label);
    unique.insert(r.stay_id);
  }
  nlohmann::ordered_json m;
  m["kind"] = kind_name(kind);
  m["file"] = path.filename().string();
  m["counts"] = {{"records", records.size()},
                 {"train", train},
                 {"test", records.size() - train},
                 {"positive", pos},
                 {"unique_stays", unique.size()}};
  m["layout"] = opts.layout;
  m["config_digest"] = opts.config_digest;
  detail::write_atomically(manifest_path(path), [&](std::ostream& out) { out << m.dump(2) << '\n'; });
  return m;
}

namespace detail {

inline DatasetRecord parse_jsonl_record(const std::string& path, std::size_t lineno, const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path, lineno, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError(path, lineno, "record is not a JSON object");
  DatasetRecord r;
  try {
    r.stay_id = j.at("stay_id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.text = j.at("text").get<std::string>();
    auto s = parse_split(j.at("split").get<std::string>());
    if (!s) throw FormatError(path, lineno, "split must be \"train\" or \"test\"");
    r.split = *s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path, lineno, std::string("bad record: ") + e.what());
  }
  if (r.label != 0 && r.label != 1) throw FormatError(path, lineno, "label must be 0 or 1");
  return r;
}

}  // namespace detail

// Inverse of write_dataset. Malformed input is fatal and names the line;
// unknown JSON keys are ignored.
inline Dataset read_dataset(const std::filesystem::path& path, DatasetKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset ds;
  const std::string name = path.string();
  if (kind == DatasetKind::TextJsonl) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      ds.records.push_back(detail::parse_jsonl_record(name, lineno, line));
    }
    return ds;
  }

  csv::Reader reader(in);
  reader.set_name(name);
  std::vector<std::string> rec;
  if (!reader.next(rec)) throw FormatError(name, 1, "missing header");
  if (rec.size() < 3 || rec[0] != "stay_id" || rec[1] != "label" || rec[2] != "split")
    throw FormatError(name, 1, "header must start with stay_id,label,split");
  ds.slot_names.assign(rec.begin() + 3, rec.end());
  while (reader.next(rec)) {
    const auto lineno = reader.record_line();
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != ds.slot_names.size() + 3)
      throw FormatError(name, lineno,
                        "expected " + std::to_string(ds.slot_names.size() + 3) + " fields, found " +
                            std::to_string(rec.size()));
    DatasetRecord r;
    r.stay_id = rec[0];
    auto label = parse_int(rec[1]);
    if (!label || (*label != 0 && *label != 1)) throw FormatError(name, lineno, "label must be 0 or 1");
    r.label = static_cast<int>(*label);
    auto split = parse_split(rec[2]);
    if (!split) throw FormatError(name, lineno, "split must be train or test");
    r.split = *split;
    std::vector<double> f;
    f.reserve(ds.slot_names.size());
    for (std::size_t i = 3; i < rec.size(); ++i) {
      auto v = parse_double(rec[i]);
      if (!v) throw FormatError(name, lineno, "unparseable feature '" + rec[i] + "' in column " + ds.slot_names[i - 3]);
      f.push_back(*v);
    }
    r.features = std::move(f);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace mimictext
