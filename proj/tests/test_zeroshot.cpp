#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace mimictext;

namespace {

ClientConfig client_for(const MockCompletionServer& server) {
  ClientConfig c;
  c.endpoint = server.endpoint();
  c.backoff_initial_ms = 1;
  c.timeout_seconds = 5;
  return c;
}

std::string random_text(Rng& rng, std::size_t max_tokens) {
  static constexpr std::string_view kWs[] = {" ", "  ", "\n", "\t", " \n "};
  std::string s;
  const auto n = rng.index(max_tokens + 1);
  if (rng.bernoulli(0.3)) s += kWs[rng.index(5)];
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = 1 + rng.index(6);
    for (std::size_t k = 0; k < len; ++k) s.push_back(static_cast<char>('a' + rng.index(26)));
    if (i + 1 < n || rng.bernoulli(0.3)) s += kWs[rng.index(5)];
  }
  return s;
}

}  // namespace

TEST(Zeroshot, CountTokens) {
  EXPECT_EQ(count_tokens(""), 0u);
  EXPECT_EQ(count_tokens("a b  c"), 3u);
  EXPECT_EQ(count_tokens("  \n\t "), 0u);
  EXPECT_EQ(count_tokens("73.655 for Heart Rate."), 4u);
}

TEST(Zeroshot, CountTokensMonotoneUnderConcatenation) {
  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_text(rng, 8), b = random_text(rng, 8);
    EXPECT_GE(count_tokens(a + b), count_tokens(a));
    EXPECT_GE(count_tokens(a + b), count_tokens(b));
  }
}

TEST(Zeroshot, TruncateExamples) {
  EXPECT_EQ(truncate_to_budget("t1 t2 t3 t4 t5 t6 t7 t8 t9 t10", 4), "t1 t2 t3 t4");
  EXPECT_EQ(truncate_to_budget("short text ", 4), "short text ");
  EXPECT_THROW(truncate_to_budget("x", 0), DataError);
}

TEST(Zeroshot, TruncateProperties) {
  Rng rng(78);
  for (int i = 0; i < 500; ++i) {
    const auto t = random_text(rng, 30);
    const std::size_t budget = 1 + rng.index(20);
    const auto r = truncate_to_budget(t, budget);
    EXPECT_LE(count_tokens(r), budget);
    EXPECT_TRUE(std::string_view(t).starts_with(r));
    EXPECT_EQ(truncate_to_budget(r, budget), r);
    if (count_tokens(t) > budget) {
      EXPECT_EQ(count_tokens(r), budget);  // longest whole-token prefix
      ASSERT_FALSE(r.empty());
      EXPECT_FALSE(std::isspace(static_cast<unsigned char>(r.back())));
      EXPECT_TRUE(std::isspace(static_cast<unsigned char>(t[r.size()])));  // never cuts a token
    }
  }
}

TEST(Zeroshot, CustomCounterIsUsed) {
  // two "tokens" per word
  TokenCounter twice = [](std::string_view s) { return 2 * count_tokens(s); };
  EXPECT_EQ(truncate_to_budget("a b c d", 5, twice), "a b");
}

TEST(Zeroshot, PromptP1Golden) {
  EXPECT_EQ(build_prompt(PromptKind::P1, "The patient white male, 55 years old, covered by Other."),
            "You are an extremely helpful healthcare assistant. You answer the question using only 'yes' or 'no' "
            "and considering a patient hospital profile: 'The patient white male, 55 years old, covered by "
            "Other.'.\nQuestion: Is the patient dead?.\nAnswer (only yes or no): ");
}

TEST(Zeroshot, PromptP2EmptyEhr) {
  EXPECT_EQ(build_prompt(PromptKind::P2, ""),
            "Analyze the provided ICU data for a patient. The data covers the first 48 hours of the ICU stay, "
            "including vital statistics, lab test results, and treatments administered. Answer only Yes for a "
            "prediction of survival or No for a prediction of mortality. The patient ICU data is: ''. Based on "
            "this data, answer.\nQuestion: Will the patient survive in the next 24 hours?.\nAnswer (use only yes "
            "or no): ");
}

TEST(Zeroshot, OversizedEhrKeepsScaffold) {
  std::string ehr;
  for (int i = 0; i < 3000; ++i) ehr += "w" + std::to_string(i) + " ";
  for (auto k : {PromptKind::P1, PromptKind::P2}) {
    const auto p = build_prompt(k, ehr);
    EXPECT_LE(count_tokens(p), 1024u);
    EXPECT_GE(count_tokens(p), 1023u);
    const auto& t = prompt_template(k);
    EXPECT_TRUE(std::string_view(p).starts_with(t.prefix()));
    EXPECT_TRUE(std::string_view(p).ends_with(t.suffix()));
    const auto body = p.substr(t.prefix().size(), p.size() - t.prefix().size() - t.suffix().size());
    EXPECT_TRUE(std::string_view(ehr).starts_with(body));
  }
  EXPECT_THROW(build_prompt(PromptKind::P2, "x", 10), DataError);
}

TEST(Zeroshot, ParseAnswer) {
  EXPECT_EQ(parse_answer("Yes").status, AnswerStatus::Yes);
  EXPECT_EQ(parse_answer(" no.").status, AnswerStatus::No);
  EXPECT_EQ(parse_answer("The patient").status, AnswerStatus::Unanswered);
  EXPECT_EQ(parse_answer("\n'YES,").status, AnswerStatus::Yes);
  EXPECT_EQ(parse_answer("").status, AnswerStatus::Unanswered);
  EXPECT_EQ(parse_answer("Nobody").status, AnswerStatus::Unanswered);
  EXPECT_EQ(parse_answer("yesterday").status, AnswerStatus::Unanswered);
  EXPECT_EQ(parse_answer(" no.").raw, " no.");
}

TEST(Zeroshot, ResolvePrediction) {
  const ParsedAnswer yes{AnswerStatus::Yes, "Yes"}, no{AnswerStatus::No, "No"}, un{AnswerStatus::Unanswered, "?"};
  EXPECT_EQ(resolve_prediction(yes, PromptKind::P1).label, 1);
  EXPECT_EQ(resolve_prediction(no, PromptKind::P1).label, 0);
  EXPECT_EQ(resolve_prediction(yes, PromptKind::P2).label, 0);
  EXPECT_EQ(resolve_prediction(no, PromptKind::P2).label, 1);
  const auto u1 = resolve_prediction(un, PromptKind::P1);
  EXPECT_EQ(u1.label, 0);
  EXPECT_TRUE(u1.was_unanswered);
  EXPECT_EQ(resolve_prediction(un, PromptKind::P2).label, 1);
  EXPECT_EQ(resolve_prediction(un, PromptKind::P2, DefaultMode::Class).label, 0);
  EXPECT_FALSE(resolve_prediction(yes, PromptKind::P2).was_unanswered);
}

TEST(Zeroshot, MockYesPassthroughAndRequestShape) {
  MockScript script;
  script.fallback.completion = "Yes";
  MockCompletionServer server(script);
  HttpCompletionClient client(client_for(server));
  const auto r = client.complete("r1", "hello");
  ASSERT_TRUE(r.completion);
  EXPECT_EQ(*r.completion, "Yes");
  EXPECT_EQ(r.attempts, 1);
  const auto body = nlohmann::json::parse(server.request_bodies().at(0));
  EXPECT_EQ(body["max_tokens"], 2);
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["model"], "llama-2-13b");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
}

TEST(Zeroshot, ServerErrorsExhaustRetries) {
  MockScript script;
  script.fallback = {500, "", false};
  MockCompletionServer server(script);
  HttpCompletionClient client(client_for(server));
  const auto r = client.complete("r1", "hello");
  EXPECT_FALSE(r.completion);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(server.request_count(), 3u);
  EXPECT_EQ(r.http_status, 500);

  const auto h = run_harness({{"a", "text", 1}}, PromptKind::P1, client);
  EXPECT_EQ(h.tally.n_unanswered, 1u);
  EXPECT_EQ(h.audit[0].status, AnswerStatus::Unanswered);
  EXPECT_FALSE(h.audit[0].error.empty());
}

TEST(Zeroshot, TransientFailureThenSuccess) {
  MockScript script;
  script.replies["r1"] = {{503, "", false}, {200, "No", false}};
  script.replies["bad"] = {{200, "", true}};
  MockCompletionServer server(script);
  HttpCompletionClient client(client_for(server));
  const auto r = client.complete("r1", "p");
  ASSERT_TRUE(r.completion);
  EXPECT_EQ(*r.completion, "No");
  EXPECT_EQ(r.attempts, 2);
  EXPECT_FALSE(client.complete("bad", "p").completion);
}

TEST(Zeroshot, UnreachableEndpointIsUnanswered) {
  ClientConfig c;
  c.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  c.backoff_initial_ms = 1;
  c.timeout_seconds = 1;
  HttpCompletionClient client(c);
  const auto h = run_harness({{"a", "text", 0}, {"b", "text", 1}}, PromptKind::P2, client);
  EXPECT_EQ(h.tally.n_unanswered, 2u);
  EXPECT_EQ(h.tally.n_answered, 0u);
}

TEST(Zeroshot, HundredCompletionFixtureLedger) {
  Rng rng(100);
  MockScript script;
  std::vector<HarnessInput> records;
  std::size_t want_yes = 0, want_no = 0, want_un = 0;
  std::map<std::string, int> want_label;
  static constexpr std::string_view kReplies[] = {"Yes", "No", " yes.", "NO", "The patient", "I cannot", "Nope"};
  for (int i = 0; i < 100; ++i) {
    const std::string id = "s" + std::to_string(i);
    const auto reply = std::string(kReplies[rng.index(7)]);
    script.replies[id] = {{200, reply, false}};
    records.push_back({id, "record " + id, static_cast<int>(rng.index(2))});
    const auto lower = to_lower(trim(reply));
    if (lower.starts_with("yes")) {
      ++want_yes;
      want_label[id] = 1;
    } else if (lower == "no") {
      ++want_no;
      want_label[id] = 0;
    } else {
      ++want_un;
      want_label[id] = 0;
    }
  }
  MockCompletionServer server(script);
  HttpCompletionClient client(client_for(server));
  HarnessOptions opts;
  opts.max_in_flight = 4;
  const auto h = run_harness(records, PromptKind::P1, client, opts);
  EXPECT_EQ(h.tally.n_answered, want_yes + want_no);
  EXPECT_EQ(h.tally.n_unanswered, want_un);
  EXPECT_EQ(h.tally.n_answered + h.tally.n_unanswered, records.size());
  ASSERT_EQ(h.audit.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(h.audit[i].stay_id, records[i].stay_id);  // input order
    EXPECT_EQ(h.audit[i].label, want_label[records[i].stay_id]);
    EXPECT_EQ(h.audit[i].prompt_hash, sha256_hex(build_prompt(PromptKind::P1, records[i].text)));
  }
  EXPECT_EQ(server.request_count(), 100u);
}

TEST(Zeroshot, AllNoUnderP1) {
  MockCompletionServer server(MockScript{});
  HttpCompletionClient client(client_for(server));
  std::vector<HarnessInput> records;
  for (int i = 0; i < 20; ++i) records.push_back({std::to_string(i), "x", i % 3 == 0});
  const auto h = run_harness(records, PromptKind::P1, client);
  EXPECT_EQ(h.tally.n_unanswered, 0u);
  for (const auto& e : h.audit) EXPECT_EQ(e.label, 0);
  EXPECT_DOUBLE_EQ(h.metrics.auroc.value(), 0.5);
}

TEST(Zeroshot, HarnessIsDeterministicAcrossConcurrency) {
  MockScript script;
  for (int i = 0; i < 30; ++i) script.replies[std::to_string(i)] = {{200, i % 4 ? "Yes" : "maybe", false}};
  MockCompletionServer server(script);
  HttpCompletionClient client(client_for(server));
  std::vector<HarnessInput> records;
  for (int i = 0; i < 30; ++i) records.push_back({std::to_string(i), "text " + std::to_string(i), i % 2});
  HarnessOptions one, many;
  one.max_in_flight = 1;
  many.max_in_flight = 8;
  const auto a = run_harness(records, PromptKind::P2, client, one);
  const auto b = run_harness(records, PromptKind::P2, client, many);
  ASSERT_EQ(a.audit.size(), b.audit.size());
  for (std::size_t i = 0; i < a.audit.size(); ++i) {
    EXPECT_EQ(a.audit[i].stay_id, b.audit[i].stay_id);
    EXPECT_EQ(a.audit[i].label, b.audit[i].label);
    EXPECT_EQ(a.audit[i].raw, b.audit[i].raw);
  }
  EXPECT_EQ(a.tally.n_unanswered, 8u);
}

TEST(Zeroshot, AuditLogLines) {
  testutil::TempDir d("audit");
  std::vector<AuditEntry> audit{{"1", "h1", "Yes", AnswerStatus::Yes, 1, ""},
                                {"2", "h2", "", AnswerStatus::Unanswered, 0, "HTTP 500"}};
  write_audit_log(d / "a.jsonl", audit);
  std::istringstream in(testutil::slurp(d / "a.jsonl"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, R"({"stay_id":"1","prompt_hash":"h1","raw":"Yes","status":"YES","label":1})");
  std::getline(in, line);
  EXPECT_EQ(nlohmann::json::parse(line)["status"], "UNANSWERED");
}

TEST(Zeroshot, MockScriptFromJson) {
  const auto s = MockScript::from_json(nlohmann::json::parse(
      R"({"default": "Yes", "completions": {"a": "No", "b": [{"status": 500}, "Yes"], "c": {"malformed": true}}})"));
  EXPECT_EQ(s.fallback.completion, "Yes");
  EXPECT_EQ(s.replies.at("b").size(), 2u);
  EXPECT_EQ(s.replies.at("b")[0].status, 500);
  EXPECT_TRUE(s.replies.at("c")[0].malformed);
  EXPECT_THROW(MockScript::from_json(nlohmann::json::parse(R"({"completions": {"a": 3}})")), DataError);
}
