#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mimictext.hpp"

namespace mt = mimictext;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string representation;
  std::string features;
  std::string prompt;
  std::string mock_fixture;
  std::optional<int> n;
  std::optional<double> signal_strength;
  std::optional<double> prevalence;
};

mt::RunConfig resolve(const Flags& f, bool config_required) {
  mt::RunConfig cfg;
  if (!f.config.empty()) {
    cfg = mt::RunConfig::load(f.config);
  } else if (config_required) {
    throw mt::UsageError("--config is required for this command");
  }
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  if (!f.representation.empty()) {
    auto r = mt::parse_representation(f.representation);
    if (!r) throw mt::UsageError("--representation must be rep1 or rep2");
    cfg.representation = *r;
  }
  if (!f.features.empty()) cfg.text_features = mt::AblationFlags::parse(f.features);
  if (!f.prompt.empty()) {
    auto p = mt::parse_prompt_kind(f.prompt);
    if (!p) throw mt::UsageError("--prompt must be p1 or p2");
    cfg.prompt = *p;
  }
  if (!f.mock_fixture.empty()) cfg.mock_fixture = f.mock_fixture;
  if (f.n) cfg.synth.n_patients = *f.n;
  if (f.signal_strength) cfg.synth.signal_strength = *f.signal_strength;
  if (f.prevalence) cfg.synth.mortality_prevalence = *f.prevalence;
  try {
    cfg.validate();
  } catch (const mt::DataError& e) {
    throw mt::UsageError(e.what());
  }
  return cfg;
}

fs::path need(const std::optional<std::string>& dir, const char* flag) {
  if (!dir || dir->empty()) throw mt::UsageError(std::string(flag) + " is required for this command");
  return *dir;
}

mt::pipeline::BuildResult build(const mt::RunConfig& cfg) {
  auto b = mt::pipeline::build(cfg, need(cfg.data_dir, "--data"), need(cfg.out_dir, "--out"));
  std::cerr << "build: " << b.stays.size() << " stays" << (b.from_cache ? " (cached)" : "") << '\n';
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cohort extraction, text rendering and evaluation for ICU mortality prediction"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "Run configuration JSON");
  app.add_option("--data", f.data, "Input table directory (synth writes here)");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--seed", f.seed, "Seed (split and CV; synth generator for synth)");
  app.add_option("--threads", f.threads, "Cap on worker threads")->check(CLI::NonNegativeNumber);
  app.add_option("--representation", f.representation, "rep1 or rep2");
  app.add_option("--features", f.features, "Comma-separated groups rendered into text");
  app.add_option("--prompt", f.prompt, "p1 or p2");
  app.add_option("--mock-fixture", f.mock_fixture, "Scripted completions served in-process");

  auto* synth = app.add_subcommand("synth", "Generate synthetic input tables");
  synth->add_option("--n", f.n, "Number of patients")->check(CLI::PositiveNumber);
  synth->add_option("--signal-strength", f.signal_strength, "Label signal in [0, 1]");
  synth->add_option("--prevalence", f.prevalence, "Mortality prevalence");
  auto* build_cmd = app.add_subcommand("build", "Cohort, features and documents (cached)");
  auto* export_cmd = app.add_subcommand("export", "Write text and tabular datasets");
  auto* tab_cmd = app.add_subcommand("eval-tabular", "Cross-validated logistic regression");
  auto* zs_cmd = app.add_subcommand("eval-zeroshot", "Zero-shot prompt harness");
  auto* report_cmd = app.add_subcommand("report", "Consolidate evaluation outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      auto cfg = resolve(f, false);
      if (f.seed) cfg.synth.seed = *f.seed;
      cfg.synth.validate();
      const auto ledger = mt::generate(cfg.synth, need(cfg.data_dir, "--data"));
      auto j = ledger.to_json();
      j.erase("planted_labels");
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    const auto cfg = resolve(f, true);
    nlohmann::ordered_json out;
    if (build_cmd->parsed()) {
      auto b = build(cfg);
      out = b.summary;
      out.erase("slot_names");
      out["cached"] = b.from_cache;
    } else if (export_cmd->parsed()) {
      auto r = mt::pipeline::export_datasets(cfg, build(cfg), *cfg.out_dir);
      out["text"] = r.text_manifest;
      out["tabular"] = r.tabular_manifest;
    } else if (tab_cmd->parsed()) {
      out = mt::pipeline::eval_tabular(cfg, build(cfg), *cfg.out_dir);
    } else if (zs_cmd->parsed()) {
      out = mt::pipeline::eval_zeroshot(cfg, build(cfg), *cfg.out_dir);
    } else if (report_cmd->parsed()) {
      out = mt::pipeline::report(cfg, need(cfg.out_dir, "--out"));
    }
    std::cout << out.dump(2) << '\n';
    return 0;
  } catch (const mt::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const mt::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
  } catch (const mt::EmptyCohortError& e) {
    std::cerr << "empty cohort: " << e.what() << '\n';
  } catch (const mt::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
  } catch (const mt::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
  } catch (const mt::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}
