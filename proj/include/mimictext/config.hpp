#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimictext/digest.hpp"
#include "mimictext/error.hpp"
#include "mimictext/evaluate.hpp"
#include "mimictext/features.hpp"
#include "mimictext/ingest.hpp"
#include "mimictext/synth.hpp"
#include "mimictext/textualize.hpp"
#include "mimictext/zeroshot.hpp"

namespace mimictext {

// Everything a run depends on, read from one JSON file. Paths and the thread
// count are deliberately outside digest(): they do not change results.
struct RunConfig {
  CohortConfig cohort;
  std::optional<std::string> schema_file;  // SchemaConfig JSON; identity mapping when absent

  Representation representation = Representation::Rep2;
  ImputeStrategy impute = ImputeStrategy::CarrySample;
  DemographicEncoding demo_encoding = DemographicEncoding::Index;
  std::vector<int> age_bin_edges;  // empty -> decades
  AblationFlags text_features = AblationFlags::all();

  double test_fraction = 0.2;
  bool oversample = true;
  int folds = 5;
  std::vector<LogRegHyper> grid = default_hyper_grid();

  PromptKind prompt = PromptKind::P1;
  std::size_t token_budget = kZeroShotBudget;
  DefaultMode default_mode = DefaultMode::Token;
  ClientConfig client;
  std::optional<std::string> mock_fixture;  // scripted in-process endpoint instead of client.endpoint

  SynthConfig synth;
  std::uint64_t seed = 7;

  // Not part of the digest.
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  int threads = 0;  // 0 -> hardware concurrency

  DemographicEncoder demographic_encoder() const {
    DemographicEncoder e;
    e.encoding = demo_encoding;
    if (!age_bin_edges.empty()) e.age_bins = AgeBins(age_bin_edges);
    return e;
  }

  int effective_threads() const {
    if (threads > 0) return threads;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  void validate() const {
    cohort.validate();
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("split.test_fraction must lie in (0, 1)");
    if (folds < 2) throw UsageError("eval.folds must be at least 2");
    if (grid.empty()) throw UsageError("eval.grid must not be empty");
    if (token_budget < 1) throw UsageError("zeroshot.token_budget must be at least 1");
    if (text_features.empty()) throw UsageError("text.features must name at least one group");
    if (threads < 0) throw UsageError("threads must be non-negative");
    synth.validate();
  }

  // Settings that determine the build stage output (cohort, features, text).
  nlohmann::json build_json() const {
    nlohmann::json j;
    j["cohort"] = {{"observation_window_hours", cohort.observation_window_hours},
                   {"bin_hours", cohort.bin_hours},
                   {"min_stay_hours", cohort.effective_min_stay_hours()},
                   {"label", "in_hospital_death"}};
    if (schema_file) j["schema_file"] = *schema_file;
    j["features"] = {{"representation", representation_name(representation)},
                     {"impute", impute == ImputeStrategy::CarrySample ? "carry_sample" : "mean_fill"},
                     {"demo_encoding", demo_encoding == DemographicEncoding::OneHot ? "onehot" : "index"},
                     {"age_bin_edges", demographic_encoder().age_bins.edges()}};
    j["text"] = {{"features", text_features.to_string()}};
    return j;
  }

  // The digested part, with sorted keys (nlohmann::json is an ordered map).
  nlohmann::json semantic_json() const {
    nlohmann::json j = build_json();
    j["split"] = {{"test_fraction", test_fraction}, {"oversample", oversample}};
    nlohmann::json g = nlohmann::json::array();
    for (const auto& h : grid) g.push_back(mimictext::to_json(h));
    j["eval"] = {{"folds", folds}, {"grid", g}};
    j["zeroshot"] = {{"prompt", prompt_name(prompt)},
                     {"token_budget", token_budget},
                     {"default_mode", default_mode == DefaultMode::Token ? "token" : "class"},
                     {"client", mimictext::to_json(client)}};
    if (mock_fixture) j["zeroshot"]["mock_fixture"] = *mock_fixture;
    j["synth"] = mimictext::to_json(synth);
    j["seed"] = seed;
    return j;
  }

  nlohmann::json to_json() const {
    auto j = semantic_json();
    j["cohort"]["min_stay_hours"] = cohort.min_stay_hours ? nlohmann::json(*cohort.min_stay_hours) : nlohmann::json();
    j["features"]["age_bin_edges"] = age_bin_edges;
    if (data_dir) j["paths"]["data"] = *data_dir;
    if (out_dir) j["paths"]["out"] = *out_dir;
    j["threads"] = threads;
    return j;
  }

  // Hex SHA-256 of the canonical (sorted-key, compact) semantic JSON.
  std::string digest() const { return sha256_hex(semantic_json().dump()); }
  std::string build_key() const { return sha256_hex(build_json().dump()); }

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

namespace detail {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return empty;
  if (!it->is_object()) throw UsageError(std::string("config section '") + key + "' must be an object");
  return *it;
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw UsageError("unknown config key '" + where + it.key() + "'");
  }
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using detail::get_or;
  using detail::section;
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  detail::reject_unknown(j, {"cohort", "schema_file", "features", "text", "split", "eval", "zeroshot", "synth", "seed",
                             "paths", "threads"},
                         "");
  RunConfig c;
  const auto& co = section(j, "cohort");
  detail::reject_unknown(co, {"observation_window_hours", "bin_hours", "min_stay_hours", "label"}, "cohort.");
  c.cohort.observation_window_hours = get_or(co, "observation_window_hours", c.cohort.observation_window_hours);
  c.cohort.bin_hours = get_or(co, "bin_hours", c.cohort.bin_hours);
  if (co.contains("min_stay_hours") && !co.at("min_stay_hours").is_null())
    c.cohort.min_stay_hours = get_or(co, "min_stay_hours", 0);
  if (get_or<std::string>(co, "label", "in_hospital_death") != "in_hospital_death")
    throw UsageError("cohort.label must be in_hospital_death");
  if (j.contains("schema_file") && !j.at("schema_file").is_null()) c.schema_file = get_or<std::string>(j, "schema_file", "");

  const auto& fe = section(j, "features");
  detail::reject_unknown(fe, {"representation", "impute", "demo_encoding", "age_bin_edges"}, "features.");
  if (auto r = parse_representation(get_or<std::string>(fe, "representation", "rep2"))) {
    c.representation = *r;
  } else {
    throw UsageError("features.representation must be rep1 or rep2");
  }
  const auto imp = get_or<std::string>(fe, "impute", "carry_sample");
  if (imp == "carry_sample") {
    c.impute = ImputeStrategy::CarrySample;
  } else if (imp == "mean_fill") {
    c.impute = ImputeStrategy::MeanFill;
  } else {
    throw UsageError("features.impute must be carry_sample or mean_fill");
  }
  const auto enc = get_or<std::string>(fe, "demo_encoding", "index");
  if (enc == "onehot") {
    c.demo_encoding = DemographicEncoding::OneHot;
  } else if (enc == "index") {
    c.demo_encoding = DemographicEncoding::Index;
  } else {
    throw UsageError("features.demo_encoding must be onehot or index");
  }
  c.age_bin_edges = get_or(fe, "age_bin_edges", std::vector<int>{});

  const auto& tx = section(j, "text");
  detail::reject_unknown(tx, {"features"}, "text.");
  if (tx.contains("features")) c.text_features = AblationFlags::parse(get_or<std::string>(tx, "features", ""));

  const auto& sp = section(j, "split");
  detail::reject_unknown(sp, {"test_fraction", "oversample"}, "split.");
  c.test_fraction = get_or(sp, "test_fraction", c.test_fraction);
  c.oversample = get_or(sp, "oversample", c.oversample);

  const auto& ev = section(j, "eval");
  detail::reject_unknown(ev, {"folds", "grid"}, "eval.");
  c.folds = get_or(ev, "folds", c.folds);
  if (ev.contains("grid")) {
    c.grid.clear();
    for (const auto& h : ev.at("grid")) c.grid.push_back(hyper_from_json(h));
  }

  const auto& zs = section(j, "zeroshot");
  detail::reject_unknown(zs, {"prompt", "token_budget", "default_mode", "client", "mock_fixture"}, "zeroshot.");
  if (auto p = parse_prompt_kind(get_or<std::string>(zs, "prompt", "p1"))) {
    c.prompt = *p;
  } else {
    throw UsageError("zeroshot.prompt must be p1 or p2");
  }
  c.token_budget = get_or(zs, "token_budget", c.token_budget);
  const auto dm = get_or<std::string>(zs, "default_mode", "token");
  if (dm == "token") {
    c.default_mode = DefaultMode::Token;
  } else if (dm == "class") {
    c.default_mode = DefaultMode::Class;
  } else {
    throw UsageError("zeroshot.default_mode must be token or class");
  }
  if (zs.contains("client")) c.client = client_config_from_json(zs.at("client"));
  if (zs.contains("mock_fixture") && !zs.at("mock_fixture").is_null())
    c.mock_fixture = get_or<std::string>(zs, "mock_fixture", "");

  if (j.contains("synth")) c.synth = synth_config_from_json(section(j, "synth"));
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);

  const auto& pa = section(j, "paths");
  detail::reject_unknown(pa, {"data", "out"}, "paths.");
  if (pa.contains("data")) c.data_dir = get_or<std::string>(pa, "data", "");
  if (pa.contains("out")) c.out_dir = get_or<std::string>(pa, "out", "");
  c.threads = get_or(j, "threads", c.threads);

  try {
    c.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return c;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw UsageError("config " + path.string() + " is not valid JSON");
  return from_json(j);
}

}  // namespace mimictext
