// Acceptance checks, one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>

#include "helpers.hpp"

using namespace mimictext;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = true;
  std::string detail;
  void check(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// --- 1 ----------------------------------------------------------------------

Outcome templates() {
  Outcome o;
  const auto vocab = testutil::small_vocab();
  const auto s = testutil::small_stay();
  const auto series = impute(bin_events(s, CohortConfig{}, vocab), ImputeStrategy::CarrySample);
  const std::pair<FeatureGroup, std::string> want[] = {
      {FeatureGroup::Demo, "The patient white male, 55 years old, covered by Other"},
      {FeatureGroup::Cond, "was diagnosed with Essential (primary) hypertension."},
      {FeatureGroup::ChartLab, "The chart events measured were: 72.000 for Heart Rate."},
      {FeatureGroup::Meds, "The mean amounts of medications administered during the episode were: 0.208 of NaCl 0.9%."},
      {FeatureGroup::Proc, "The procedures performed were: Chest X-Ray."},
      {FeatureGroup::Oute, "The outputs collected were: Foley."},
  };
  std::string full;
  for (const auto& [g, text] : want) {
    const auto got = render_section(g, s, series, vocab);
    o.check(got == text, std::string(group_name(g)) + " rendered as \"" + got + "\"");
    full += (full.empty() ? "" : " ") + text;
  }
  const auto doc = render_document(s, series, vocab, AblationFlags::all());
  o.check(doc.full_text == full, "document text differs");
  return o;
}

// --- 2 ----------------------------------------------------------------------

double pairwise_auroc(const ScoredSet& s) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s.labels[i] == 1 && s.labels[j] == 0) {
        den += 1;
        num += s.scores[i] > s.scores[j] ? 1.0 : s.scores[i] == s.scores[j] ? 0.5 : 0.0;
      }
  return num / den;
}

double threshold_auprc(const ScoredSet& s) {
  std::set<double, std::greater<>> thresholds(s.scores.begin(), s.scores.end());
  const double total = static_cast<double>(s.positives());
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.scores[i] >= t) (s.labels[i] ? tp : fp) += 1;
    const double recall = tp / total;
    if (recall > prev_recall) ap += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
  }
  return ap;
}

Outcome metric_oracle() {
  Outcome o;
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    ScoredSet s;
    const std::size_t n = 2 + rng.index(11);
    const bool ties = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      s.scores.push_back(ties ? static_cast<double>(rng.index(4)) : rng.uniform());
      s.labels.push_back(static_cast<int>(rng.index(2)));
    }
    s.labels[0] = 1;
    s.labels[1] = 0;
    const auto a = auroc(s), p = auprc(s);
    o.check(a && std::abs(*a - pairwise_auroc(s)) < 1e-9, "auroc differs on set " + std::to_string(k));
    o.check(p && std::abs(*p - threshold_auprc(s)) < 1e-9, "auprc differs on set " + std::to_string(k));
  }
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome representation() {
  Outcome o;
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    testutil::TempDir d("acc_rep");
    SynthConfig sc;
    sc.seed = seed;
    sc.n_patients = 40;
    generate(sc, d.path());
    CohortConfig cfg;
    cfg.bin_hours = seed == 4 ? 4 : 2;
    const auto cb = build_cohort(load_tables(d.path()), cfg);
    const auto means = cohort_chart_means(cb.cohort, cb.vocab);
    DemographicEncoder enc;
    if (seed == 5) enc.encoding = DemographicEncoding::OneHot;
    const auto w = static_cast<std::size_t>(cfg.window_count());
    const std::size_t dd = cb.vocab.dynamic_width();
    const std::size_t head = enc.width() + cb.vocab.cond_codes().size();
    const auto l1 = FeatureLayout::make(Representation::Rep1, w, enc, cb.vocab);
    const auto l2 = FeatureLayout::make(Representation::Rep2, w, enc, cb.vocab);
    o.check(l1.total_dim() == head + w * dd, "REP1 dimension");
    o.check(l2.total_dim() == head + dd, "REP2 dimension");
    for (const auto& s : cb.cohort) {
      const auto series = impute(bin_events(s, cfg, cb.vocab), ImputeStrategy::CarrySample, means);
      const auto r1 = assemble(s, series, l1, enc, cb.vocab).values;
      const auto r2 = assemble(s, series, l2, enc, cb.vocab).values;
      o.check(r1.size() == l1.total_dim() && r2.size() == l2.total_dim(), "vector length");
      for (std::size_t j = 0; j < dd && r2.size() == head + dd; ++j) {
        double sum = 0;
        for (std::size_t k = 0; k < w; ++k) sum += r1[head + k * dd + j];
        o.check(std::abs(r2[head + j] - sum / static_cast<double>(w)) <= 1e-12, "REP2 is not the REP1 window mean");
      }
    }
  }

  DemographicEncoder enc;
  enc.encoding = DemographicEncoding::OneHot;
  enc.vocab.gender = CategoryVocabulary({"F", "M"});
  enc.vocab.ethnicity = CategoryVocabulary({"WHITE"});
  enc.vocab.insurance = CategoryVocabulary({"Medicare", "Medicaid"});
  enc.age_bins = AgeBins({0, 65});
  std::vector<DiagnosisCode> cond;
  for (int i = 0; i < 1034; ++i) cond.push_back({"D" + std::to_string(i), IcdVersion::Icd10});
  std::array<std::vector<std::string>, 4> dyn;
  const std::array<int, 4> widths{30, 16, 12, 8};
  int id = 0;
  for (std::size_t g = 0; g < 4; ++g)
    for (int i = 0; i < widths[g]; ++i) dyn[g].push_back(std::to_string(++id));
  const FeatureVocabulary vocab(cond, dyn);
  const auto l = FeatureLayout::make(Representation::Rep2, 24, enc, vocab);
  o.check(enc.width() == 10 && vocab.dynamic_width() == 66, "configured widths");
  o.check(l.total_dim() == 1110, "configured REP2 length is " + std::to_string(l.total_dim()));
  return o;
}

// --- 4 ----------------------------------------------------------------------

double baseline_auroc(double signal, double prevalence, double test_fraction, std::uint64_t seed) {
  testutil::TempDir data("acc_base_data"), out("acc_base_out");
  SynthConfig sc;
  sc.seed = seed;
  sc.n_patients = 2000;
  sc.signal_strength = signal;
  sc.mortality_prevalence = prevalence;
  generate(sc, data.path());
  RunConfig cfg;
  cfg.test_fraction = test_fraction;
  cfg.folds = 5;
  cfg.seed = seed;
  const auto b = pipeline::build(cfg, data.path(), out.path());
  const auto j = pipeline::eval_tabular(cfg, b, out.path());
  return j.at("test").at("auroc").get<double>();
}

Outcome baseline() {
  Outcome o;
  const double strong = baseline_auroc(0.8, 0.15, 0.2, 11);
  const double flat = baseline_auroc(0.0, 0.5, 0.5, 12);
  o.detail = "signal 0.8: " + num(strong) + ", signal 0: " + num(flat);
  o.ok = strong >= 0.90 && flat >= 0.45 && flat <= 0.55;
  return o;
}

// --- 5 ----------------------------------------------------------------------

Outcome gradient() {
  Outcome o;
  Rng rng(5);
  double worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 10 + rng.index(40), d = 2 + rng.index(10);
    Matrix X(n, d);
    for (double& v : X.data) v = rng.normal(0, 2);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.index(2));
    std::vector<double> mean(d), sd(d), w(d);
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = rng.normal();
      sd[j] = rng.uniform(0.5, 2.0);
      w[j] = rng.normal();
    }
    const double b = rng.normal(), lam = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0, 1);
    std::vector<double> g;
    logloss_and_gradient(X, y, mean, sd, w, b, lam, &g);
    const double h = 1e-5;
    for (std::size_t j = 0; j <= d; ++j) {
      auto wp = w, wm = w;
      double bp = b, bm = b;
      if (j < d) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double fd = (logloss_and_gradient(X, y, mean, sd, wp, bp, lam, nullptr) -
                         logloss_and_gradient(X, y, mean, sd, wm, bm, lam, nullptr)) /
                        (2 * h);
      worst = std::max(worst, std::abs(fd - g[j]));
    }
  }
  o.ok = worst < 1e-6;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", worst);
  o.detail = std::string("max abs diff ") + buf;
  return o;
}

// --- 6 ----------------------------------------------------------------------

HarnessResult run_fixture(const MockScript& script, const std::vector<HarnessInput>& records) {
  MockCompletionServer server(script);
  ClientConfig cc;
  cc.endpoint = server.endpoint();
  cc.backoff_initial_ms = 1;
  HttpCompletionClient client(cc);
  HarnessOptions opts;
  return run_harness(records, PromptKind::P1, client, opts);
}

Outcome zeroshot_fixture() {
  Outcome o;
  const std::size_t n = 6155, unanswered = 203;
  Rng rng(6);
  std::vector<HarnessInput> records;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back({std::to_string(30000000 + i), "The patient record " + std::to_string(i),
                       rng.bernoulli(0.1) ? 1 : 0});
    order[i] = i;
  }
  rng.shuffle(order);
  MockScript mixed, answered;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& id = records[order[k]].stay_id;
    const std::string yn = rng.bernoulli(0.3) ? "Yes" : "No";
    answered.replies[id] = {{200, yn, false}};
    mixed.replies[id] = {{200, k < unanswered ? "The patient" : yn, false}};
  }
  const auto a = run_fixture(mixed, records);
  o.check(a.tally.n_answered == n - unanswered && a.tally.n_unanswered == unanswered,
          "mixed fixture tally " + std::to_string(a.tally.n_answered) + "/" + std::to_string(a.tally.n_unanswered));
  const auto b = run_fixture(answered, records);
  o.check(b.tally.n_answered == n && b.tally.n_unanswered == 0,
          "answered fixture tally " + std::to_string(b.tally.n_answered) + "/" + std::to_string(b.tally.n_unanswered));
  const ParsedAnswer yes{AnswerStatus::Yes, "Yes"};
  o.check(resolve_prediction(yes, PromptKind::P1).label == 1, "(YES, P1) must give 1");
  o.check(resolve_prediction(yes, PromptKind::P2).label == 0, "(YES, P2) must give 0");
  if (o.ok) o.detail = std::to_string(a.tally.n_answered) + "/" + std::to_string(a.tally.n_unanswered);
  return o;
}

// --- 7 ----------------------------------------------------------------------

Outcome determinism() {
  Outcome o;
  testutil::TempDir data_a("acc_det_da"), data_b("acc_det_db"), out_a("acc_det_a"), out_b("acc_det_b");
  RunConfig cfg;
  cfg.synth.seed = 7;
  cfg.synth.n_patients = 300;
  cfg.synth.signal_strength = 0.5;
  for (auto [data, out] : {std::pair{&data_a, &out_a}, std::pair{&data_b, &out_b}}) {
    generate(cfg.synth, data->path());
    const auto b = pipeline::build(cfg, data->path(), out->path());
    pipeline::export_datasets(cfg, b, out->path());
  }
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(out_a / "export")) {
    const auto name = e.path().filename().string();
    o.check(fs::exists(out_b / "export" / name), name + " missing from second run");
    o.check(testutil::slurp(e.path()) == testutil::slurp(out_b / "export" / name), name + " differs");
    ++compared;
  }
  o.check(compared == 4, "expected 4 export files, found " + std::to_string(compared));
  return o;
}

// --- 8 ----------------------------------------------------------------------

Outcome end_to_end() {
  Outcome o;
  testutil::TempDir data("acc_e2e_data"), out("acc_e2e_out");
  RunConfig cfg;
  cfg.synth.n_patients = 500;
  cfg.synth.signal_strength = 0.8;
  generate(cfg.synth, data.path());
  const auto b = pipeline::build(cfg, data.path(), out.path());
  pipeline::export_datasets(cfg, b, out.path());
  pipeline::eval_tabular(cfg, b, out.path());
  testutil::spit(out / "fixture.json", R"({"default": "No"})");
  cfg.mock_fixture = (out / "fixture.json").string();
  pipeline::eval_zeroshot(cfg, b, out.path());
  const auto r = pipeline::report(cfg, out.path());
  o.check(r.at("methods").size() == 2, "report lists " + std::to_string(r.at("methods").size()) + " methods");
  return o;
}

// --- 9 ----------------------------------------------------------------------

Outcome round_trip() {
  Outcome o;
  Rng rng(9);
  testutil::TempDir d("acc_rt");
  static constexpr std::string_view kPieces[] = {"The patient ", "\"q\"", ",", "\n", "\\", "\t", "\xc3\xa9", "72.000 for "};
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng.index(60), dim = 1 + rng.index(20);
    std::vector<DatasetRecord> text, tab;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < dim; ++j) names.push_back("slot_" + std::to_string(j));
    for (std::size_t i = 0; i < n; ++i) {
      DatasetRecord r;
      r.stay_id = std::to_string(rng.index(1'000'000));
      r.label = static_cast<int>(rng.index(2));
      r.split = rng.bernoulli(0.8) ? Split::Train : Split::Test;
      for (std::size_t p = 1 + rng.index(12); p > 0; --p) r.text += kPieces[rng.index(std::size(kPieces))];
      text.push_back(r);
      std::vector<double> f(dim);
      for (auto& v : f) v = rng.bernoulli(0.4) ? static_cast<double>(rng.index(2)) : rng.normal(0, std::pow(10, rng.index(8)));
      r.features = f;
      r.text.clear();
      tab.push_back(r);
    }
    const auto tp = d / ("t" + std::to_string(k) + ".jsonl");
    const auto cp = d / ("t" + std::to_string(k) + ".csv");
    write_dataset(text, tp, DatasetKind::TextJsonl);
    write_dataset(tab, cp, DatasetKind::TabularCsv, {names, nullptr, ""});
    o.check(read_dataset(tp, DatasetKind::TextJsonl).records == text, "text dataset " + std::to_string(k));
    const auto back = read_dataset(cp, DatasetKind::TabularCsv);
    o.check(back.records == tab && back.slot_names == names, "tabular dataset " + std::to_string(k));
  }
  return o;
}

// --- 10 ---------------------------------------------------------------------

int credentialed(const char* dir) {
  testutil::TempDir out("acc_real");
  RunConfig cfg;
  if (const char* c = std::getenv("MIMICTEXT_CONFIG")) cfg = RunConfig::load(c);
  cfg.representation = Representation::Rep2;
  const auto b = pipeline::build(cfg, dir, out.path());
  const auto j = pipeline::eval_tabular(cfg, b, out.path());
  const double a = j.at("test").at("auroc").get<double>(), p = j.at("test").at("auprc").get<double>();
  const bool ok = std::abs(a - 0.77) <= 0.05 && std::abs(p - 0.37) <= 0.05;
  std::cout << (ok ? "PASS" : "FAIL") << " 10 credentialed tables (auroc " << num(a) << ", auprc " << num(p) << ")\n";
  return ok ? 0 : 1;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const Criterion all[] = {
      {1, "template golden", 1.0, templates},
      {2, "metric oracle", 5.0, metric_oracle},
      {3, "representation invariant", 0.0, representation},
      {4, "baseline sanity", 30.0, baseline},
      {5, "gradient check", 0.0, gradient},
      {6, "zero-shot fixture", 0.0, zeroshot_fixture},
      {7, "determinism", 0.0, determinism},
      {8, "end-to-end budget", 60.0, end_to_end},
      {9, "round trip", 0.0, round_trip},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.ok = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("over budget");
    }
    failed += !o.ok;
    std::cout << (o.ok ? "PASS" : "FAIL") << ' ' << c.id << ' ' << c.name << " (" << num(secs) << " s"
              << (o.detail.empty() ? "" : "; " + o.detail) << ")\n"
              << std::flush;
  }
  if (const char* dir = std::getenv("MIMICTEXT_MIMIC_DIR")) {
    try {
      failed += credentialed(dir);
    } catch (const std::exception& e) {
      std::cout << "FAIL 10 credentialed tables (threw: " << e.what() << ")\n";
      ++failed;
    }
  } else {
    std::cout << "SKIP 10 credentialed tables (set MIMICTEXT_MIMIC_DIR to run)\n";
  }
  return failed == 0 ? 0 : 1;
}
