#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/config.hpp"
#include "mimictext/digest.hpp"
#include "mimictext/emit.hpp"
#include "mimictext/evaluate.hpp"
#include "mimictext/features.hpp"
#include "mimictext/ingest.hpp"
#include "mimictext/textualize.hpp"
#include "mimictext/zeroshot.hpp"

// Stage orchestration behind the command-line tool. Every stage reads and
// writes under one output directory:
//   build/build.json, build/cohort.jsonl     cached cohort, features, documents
//   export/text.jsonl, export/tabular_<rep>.csv (+ .manifest.json)
//   eval_tabular.json, model_logreg.json
//   eval_zeroshot_<prompt>.json, zeroshot_<prompt>_audit.jsonl
//   report.json
namespace mimictext::pipeline {

struct BuiltStay {
  std::string stay_id;
  int label = 0;
  std::string text;
  std::vector<double> features;
};

struct BuildResult {
  nlohmann::ordered_json summary;  // contents of build.json
  std::vector<std::string> slot_names;
  std::vector<BuiltStay> stays;  // stay_id order
  bool from_cache = false;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& p) {
  auto j = nlohmann::ordered_json::parse(read_file(p), nullptr, false);
  if (j.is_discarded()) throw FormatError(p.string(), 1, "not valid JSON");
  return j;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
  mimictext::detail::write_atomically(p, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline SchemaConfig schema_of(const RunConfig& cfg) {
  if (!cfg.schema_file) return {};
  return SchemaConfig::from_json(nlohmann::json::parse(read_file(*cfg.schema_file)));
}

// Content hash of every input table, in fixed table order.
inline std::string input_fingerprint(const std::filesystem::path& data, const SchemaConfig& schema) {
  Sha256 h;
  std::vector<char> buf(1 << 16);
  for (Table t : kAllTables) {
    const auto path = data / schema.at(t).file;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("missing input table " + path.string());
    h.update(schema.at(t).file);
    h.update(std::string_view("\0", 1));
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
    }
  }
  return h.hex();
}

inline nlohmann::ordered_json layout_json(const FeatureLayout& l) {
  nlohmann::ordered_json j;
  j["id"] = l.id();
  j["representation"] = representation_name(l.mode);
  j["windows"] = l.windows;
  j["demo"] = l.demo_width;
  j["cond"] = l.cond_width;
  for (FeatureGroup g : kDynamicGroups) j[to_lower(group_name(g))] = l.group_widths[dynamic_index(g)];
  j["dynamic"] = l.dynamic_width();
  j["total_dim"] = l.total_dim();
  return j;
}

inline std::vector<BuiltStay> read_cohort(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<BuiltStay> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(p.string(), lineno, "malformed JSON");
    try {
      out.push_back({j.at("stay_id").get<std::string>(), j.at("label").get<int>(), j.at("text").get<std::string>(),
                     j.at("features").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(p.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace detail

// Ingest, cohort, features and documents. Reuses build/ when the build-stage
// settings and the input tables are unchanged.
inline BuildResult build(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out) {
  const auto schema = detail::schema_of(cfg);
  const std::string key = cfg.build_key();
  const std::string fingerprint = detail::input_fingerprint(data, schema);
  const auto dir = out / "build";
  const auto summary_path = dir / "build.json";
  const auto cohort_path = dir / "cohort.jsonl";

  if (std::filesystem::exists(summary_path) && std::filesystem::exists(cohort_path)) {
    auto s = detail::read_json(summary_path);
    if (s.value("build_key", "") == key && s.value("input_fingerprint", "") == fingerprint) {
      BuildResult r;
      r.summary = s;
      r.slot_names = s.at("slot_names").get<std::vector<std::string>>();
      r.stays = detail::read_cohort(cohort_path);
      r.from_cache = true;
      return r;
    }
  }

  const auto raw = load_tables(data, schema, cfg.effective_threads());
  const DemographicEncoder demo = cfg.demographic_encoder();
  auto cb = build_cohort(raw, cfg.cohort, demo.vocab);
  const auto layout = FeatureLayout::make(cfg.representation, static_cast<std::size_t>(cfg.cohort.window_count()),
                                          demo, cb.vocab);
  const auto means = cohort_chart_means(cb.cohort, cb.vocab);

  BuildResult r;
  r.slot_names = slot_names(layout, demo, cb.vocab);
  RenderStats rs;
  std::size_t positives = 0;
  for (const auto& stay : cb.cohort) {
    const auto series = impute(bin_events(stay, cfg.cohort, cb.vocab), cfg.impute, means);
    auto fv = assemble(stay, series, layout, demo, cb.vocab);
    auto doc = render_document(stay, series, cb.vocab, cfg.text_features, &rs);
    r.stays.push_back({stay.stay_id, stay.label, std::move(doc.full_text), std::move(fv.values)});
    positives += static_cast<std::size_t>(stay.label);
  }

  nlohmann::ordered_json s;
  s["build_key"] = key;
  s["input_fingerprint"] = fingerprint;
  s["counts"] = {{"stays", r.stays.size()}, {"positive", positives}};
  nlohmann::ordered_json rows;
  for (Table t : kAllTables) {
    auto it = raw.stats.find(t);
    if (it == raw.stats.end()) continue;
    rows[std::string(table_key(t))] = {{"read", it->second.rows_read}, {"skipped", it->second.rows_skipped}};
  }
  s["input_rows"] = rows;
  s["exclusions"] = cb.exclusions;
  s["events_outside_window"] = cb.events_outside_window;
  s["events_unmatched"] = cb.events_unmatched;
  s["missing_labels_rendered_raw"] = rs.missing_labels;
  s["layout"] = detail::layout_json(layout);
  s["slot_names"] = r.slot_names;
  r.summary = s;

  std::filesystem::create_directories(dir);
  mimictext::detail::write_atomically(cohort_path, [&](std::ostream& o) {
    for (const auto& b : r.stays) {
      nlohmann::ordered_json j;
      j["stay_id"] = b.stay_id;
      j["label"] = b.label;
      j["text"] = b.text;
      j["features"] = b.features;
      o << j.dump() << '\n';
    }
  });
  detail::write_json(summary_path, s);
  return r;
}

struct SplitRecords {
  std::vector<DatasetRecord> train;  // oversampled when configured
  std::vector<DatasetRecord> test;
};

inline SplitRecords split_records(const RunConfig& cfg, const BuildResult& b) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& s : b.stays) {
    ids.push_back(s.stay_id);
    labels.push_back(s.label);
  }
  const auto sp = split_cohort(ids, labels, cfg.test_fraction, cfg.seed);
  std::set<std::string> test_ids(sp.test.begin(), sp.test.end());
  SplitRecords out;
  for (const auto& s : b.stays) {
    DatasetRecord r{s.stay_id, s.label, s.text, s.features, Split::Train};
    if (test_ids.count(s.stay_id)) {
      r.split = Split::Test;
      out.test.push_back(std::move(r));
    } else {
      out.train.push_back(std::move(r));
    }
  }
  if (cfg.oversample) out.train = oversample(out.train, cfg.seed + 1);
  return out;
}

struct ExportResult {
  std::filesystem::path text_path;
  std::filesystem::path tabular_path;
  nlohmann::ordered_json text_manifest;
  nlohmann::ordered_json tabular_manifest;
};

// Writes the text and tabular datasets: TRAIN records (oversampled) first,
// then TEST.
inline ExportResult export_datasets(const RunConfig& cfg, const BuildResult& b, const std::filesystem::path& out) {
  auto sp = split_records(cfg, b);
  std::vector<DatasetRecord> all = sp.train;
  all.insert(all.end(), sp.test.begin(), sp.test.end());

  ExportResult r;
  const auto dir = out / "export";
  r.text_path = dir / "text.jsonl";
  r.tabular_path = dir / ("tabular_" + std::string(representation_name(cfg.representation)) + ".csv");
  WriteOptions text_opts;
  text_opts.config_digest = cfg.digest();
  r.text_manifest = write_dataset(all, r.text_path, DatasetKind::TextJsonl, text_opts);
  WriteOptions tab_opts;
  tab_opts.slot_names = b.slot_names;
  tab_opts.layout = b.summary.at("layout");
  tab_opts.config_digest = text_opts.config_digest;
  r.tabular_manifest = write_dataset(all, r.tabular_path, DatasetKind::TabularCsv, tab_opts);
  return r;
}

inline Matrix to_matrix(const std::vector<DatasetRecord>& recs, std::vector<int>& labels) {
  std::vector<std::vector<double>> rows;
  labels.clear();
  for (const auto& r : recs) {
    rows.push_back(*r.features);
    labels.push_back(r.label);
  }
  return Matrix::from_rows(rows);
}

// Cross-validated logistic regression on the un-oversampled TRAIN split
// (oversampling, when enabled, is applied inside each training fold and to the
// final fit), then scored on TEST.
inline nlohmann::ordered_json eval_tabular(const RunConfig& cfg, const BuildResult& b,
                                           const std::filesystem::path& out) {
  RunConfig plain = cfg;
  plain.oversample = false;
  const auto sp = split_records(plain, b);
  std::vector<int> ytr, yte;
  const Matrix Xtr = to_matrix(sp.train, ytr);
  const Matrix Xte = to_matrix(sp.test, yte);

  const auto cv = cross_validate(Xtr, ytr, cfg.folds, cfg.grid, cfg.seed, cfg.oversample);
  Matrix Xfit = Xtr;
  std::vector<int> yfit = ytr;
  if (cfg.oversample) {
    const auto idx = oversample_indices(ytr, cfg.seed + 1);
    Xfit = Xtr.select_rows(idx);
    yfit.clear();
    for (auto i : idx) yfit.push_back(ytr[i]);
  }
  const auto model = train_logreg(Xfit, yfit, cv.best);
  const auto test = evaluate_scores(ScoredSet{model.predict_proba(Xte), yte});

  nlohmann::ordered_json j;
  j["method"] = "logistic_regression";
  j["representation"] = representation_name(cfg.representation);
  j["config_digest"] = cfg.digest();
  nlohmann::ordered_json grid = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < cfg.grid.size(); ++g)
    grid.push_back({{"l2_lambda", cfg.grid[g].l2_lambda}, {"mean_auroc", cv.mean_auroc[g]}});
  j["cv"] = {{"folds", cfg.folds}, {"grid", grid}, {"best_l2_lambda", cv.best.l2_lambda}};
  j["train"] = {{"n", yfit.size()}, {"iterations", model.iterations}, {"final_loss", model.final_loss}};
  j["test"] = to_json(test);
  detail::write_json(out / "eval_tabular.json", j);
  detail::write_json(out / "model_logreg.json", to_json(model));
  return j;
}

// Zero-shot harness over the TEST split. With a mock fixture configured the
// requests go to an in-process scripted endpoint.
inline nlohmann::ordered_json eval_zeroshot(const RunConfig& cfg, const BuildResult& b,
                                            const std::filesystem::path& out) {
  RunConfig plain = cfg;
  plain.oversample = false;
  const auto sp = split_records(plain, b);
  std::vector<HarnessInput> inputs;
  for (const auto& r : sp.test) inputs.push_back({r.stay_id, r.text, r.label});

  ClientConfig cc = cfg.client;
  std::unique_ptr<MockCompletionServer> mock;
  if (cfg.mock_fixture) {
    mock = std::make_unique<MockCompletionServer>(
        MockScript::from_json(nlohmann::json::parse(detail::read_file(*cfg.mock_fixture))));
    cc.endpoint = mock->endpoint();
    cc.backoff_initial_ms = std::min(cc.backoff_initial_ms, 10);
  }
  HttpCompletionClient client(cc);
  HarnessOptions opts;
  opts.budget = cfg.token_budget;
  opts.default_mode = cfg.default_mode;
  opts.max_in_flight = cfg.threads > 0 ? std::min(cc.max_in_flight, cfg.threads) : cc.max_in_flight;
  const auto res = run_harness(inputs, cfg.prompt, client, opts);

  const std::string p(prompt_name(cfg.prompt));
  write_audit_log(out / ("zeroshot_" + p + "_audit.jsonl"), res.audit);
  nlohmann::ordered_json j;
  j["method"] = "zeroshot";
  j["prompt"] = p;
  j["model"] = cfg.client.model;
  j["config_digest"] = cfg.digest();
  j["n_answered"] = res.tally.n_answered;
  j["n_unanswered"] = res.tally.n_unanswered;
  j["test"] = to_json(res.metrics);
  detail::write_json(out / ("eval_zeroshot_" + p + ".json"), j);
  return j;
}

// Gathers whatever evaluation outputs exist under `out` into report.json.
inline nlohmann::ordered_json report(const RunConfig& cfg, const std::filesystem::path& out) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::array();
  auto metric = [](const nlohmann::ordered_json& t, const char* k) -> nlohmann::ordered_json {
    return t.contains(k) ? t.at(k) : nlohmann::ordered_json();
  };
  const auto tab = out / "eval_tabular.json";
  if (std::filesystem::exists(tab)) {
    auto j = detail::read_json(tab);
    methods.push_back({{"method", "logistic_regression"},
                       {"representation", j.at("representation")},
                       {"auroc", metric(j.at("test"), "auroc")},
                       {"auprc", metric(j.at("test"), "auprc")}});
  }
  for (PromptKind k : {PromptKind::P1, PromptKind::P2}) {
    const auto p = out / ("eval_zeroshot_" + std::string(prompt_name(k)) + ".json");
    if (!std::filesystem::exists(p)) continue;
    auto j = detail::read_json(p);
    methods.push_back({{"method", "zeroshot"},
                       {"prompt", j.at("prompt")},
                       {"model", j.at("model")},
                       {"auroc", metric(j.at("test"), "auroc")},
                       {"auprc", metric(j.at("test"), "auprc")},
                       {"n_answered", j.at("n_answered")},
                       {"n_unanswered", j.at("n_unanswered")}});
  }
  if (methods.empty()) throw UsageError("nothing to report under " + out.string() + "; run an eval command first");
  nlohmann::ordered_json r;
  r["config_digest"] = cfg.digest();
  r["methods"] = methods;
  detail::write_json(out / "report.json", r);
  return r;
}

}  // namespace mimictext::pipeline
