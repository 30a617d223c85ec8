#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mimictext/digest.hpp"
#include "mimictext/error.hpp"
#include "mimictext/evaluate.hpp"
#include "mimictext/text_util.hpp"

namespace mimictext {

// ---------------------------------------------------------------------------
// Token budget

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Default proxy: number of maximal non-whitespace runs.
inline std::size_t count_tokens(std::string_view text) noexcept {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

namespace detail {

// End offsets of every whitespace-delimited run in `text`.
inline std::vector<std::size_t> token_ends(std::string_view text) {
  std::vector<std::size_t> ends;
  for (std::size_t i = 0; i < text.size(); ++i)
    if (!is_space(text[i]) && (i + 1 == text.size() || is_space(text[i + 1]))) ends.push_back(i + 1);
  return ends;
}

// Largest k in [0, n] with fits(k) true, assuming fits is monotone and
// fits(0) holds.
template <class Fits>
std::size_t largest_fitting(std::size_t n, Fits&& fits) {
  std::size_t lo = 0, hi = n;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (fits(mid)) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

}  // namespace detail

// Longest prefix made of whole whitespace-delimited tokens whose count under
// `counter` is within budget. Text already within budget is returned as is.
inline std::string truncate_to_budget(std::string_view text, std::size_t budget, const TokenCounter& counter = {}) {
  if (budget < 1) throw DataError("token budget must be at least 1");
  const auto count = [&](std::string_view s) { return counter ? counter(s) : count_tokens(s); };
  if (count(text) <= budget) return std::string(text);
  const auto ends = detail::token_ends(text);
  const std::size_t k =
      detail::largest_fitting(ends.size(), [&](std::size_t m) { return m == 0 || count(text.substr(0, ends[m - 1])) <= budget; });
  return k == 0 ? std::string() : std::string(text.substr(0, ends[k - 1]));
}

// ---------------------------------------------------------------------------
// Prompts

enum class PromptKind : std::uint8_t { P1, P2 };

inline std::string_view prompt_name(PromptKind k) noexcept { return k == PromptKind::P1 ? "p1" : "p2"; }

inline std::optional<PromptKind> parse_prompt_kind(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "p1") return PromptKind::P1;
  if (l == "p2") return PromptKind::P2;
  return std::nullopt;
}

enum class AnswerToken : std::uint8_t { Yes, No };
enum class PredictedClass : std::uint8_t { Survival, Mortality };

inline constexpr std::string_view kEhrSlot = "[textual EHR]";

struct PromptTemplate {
  PromptKind kind;
  std::string_view scaffold;  // contains kEhrSlot exactly once
  PredictedClass yes_means;
  PredictedClass no_means;

  std::string_view prefix() const { return scaffold.substr(0, scaffold.find(kEhrSlot)); }
  std::string_view suffix() const { return scaffold.substr(scaffold.find(kEhrSlot) + kEhrSlot.size()); }

  PredictedClass meaning(AnswerToken t) const { return t == AnswerToken::Yes ? yes_means : no_means; }
};

inline constexpr std::string_view kPromptP1 =
    "You are an extremely helpful healthcare assistant. You answer the question using only 'yes' or 'no' and "
    "considering a patient hospital profile: '[textual EHR]'.\n"
    "Question: Is the patient dead?.\n"
    "Answer (only yes or no): ";

inline constexpr std::string_view kPromptP2 =
    "Analyze the provided ICU data for a patient. The data covers the first 48 hours of the ICU stay, including "
    "vital statistics, lab test results, and treatments administered. Answer only Yes for a prediction of "
    "survival or No for a prediction of mortality. The patient ICU data is: '[textual EHR]'. Based on this data, "
    "answer.\n"
    "Question: Will the patient survive in the next 24 hours?.\n"
    "Answer (use only yes or no): ";

inline const PromptTemplate& prompt_template(PromptKind k) {
  static const PromptTemplate p1{PromptKind::P1, kPromptP1, PredictedClass::Mortality, PredictedClass::Survival};
  static const PromptTemplate p2{PromptKind::P2, kPromptP2, PredictedClass::Survival, PredictedClass::Mortality};
  return k == PromptKind::P1 ? p1 : p2;
}

inline constexpr std::size_t kZeroShotBudget = 1024;

// Fills the EHR slot, truncating only the EHR text so the whole prompt stays
// within `budget` tokens. Throws when the scaffold alone does not fit.
inline std::string build_prompt(PromptKind kind, std::string_view ehr_text, std::size_t budget = kZeroShotBudget,
                                const TokenCounter& counter = {}) {
  const auto& t = prompt_template(kind);
  const auto count = [&](std::string_view s) { return counter ? counter(s) : count_tokens(s); };
  auto assemble = [&](std::string_view ehr) {
    std::string p(t.prefix());
    p += ehr;
    p += t.suffix();
    return p;
  };
  const std::string bare = assemble("");
  if (count(bare) >= budget)
    throw DataError("prompt scaffold " + std::string(prompt_name(kind)) + " alone uses " +
                    std::to_string(count(bare)) + " tokens; budget is " + std::to_string(budget));
  std::string full = assemble(ehr_text);
  if (count(full) <= budget) return full;
  const auto ends = detail::token_ends(ehr_text);
  const std::size_t k = detail::largest_fitting(ends.size(), [&](std::size_t m) {
    return m == 0 || count(assemble(ehr_text.substr(0, ends[m - 1]))) <= budget;
  });
  return assemble(k == 0 ? std::string_view{} : ehr_text.substr(0, ends[k - 1]));
}

// ---------------------------------------------------------------------------
// Answers

enum class AnswerStatus : std::uint8_t { Yes, No, Unanswered };

inline std::string_view status_name(AnswerStatus s) noexcept {
  switch (s) {
    case AnswerStatus::Yes: return "YES";
    case AnswerStatus::No: return "NO";
    case AnswerStatus::Unanswered: return "UNANSWERED";
  }
  return "?";
}

struct ParsedAnswer {
  AnswerStatus status = AnswerStatus::Unanswered;
  std::string raw;
};

// Lowercases, strips leading whitespace and punctuation, then matches a
// leading "yes" or "no" that is not the start of a longer word.
inline ParsedAnswer parse_answer(std::string_view raw) {
  ParsedAnswer out{AnswerStatus::Unanswered, std::string(raw)};
  std::size_t i = 0;
  while (i < raw.size()) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (!std::isspace(c) && !std::ispunct(c)) break;
    ++i;
  }
  const std::string norm = to_lower(raw.substr(i));
  auto starts_word = [&](std::string_view w) {
    if (!std::string_view(norm).starts_with(w)) return false;
    return norm.size() == w.size() || !std::isalpha(static_cast<unsigned char>(norm[w.size()]));
  };
  if (starts_word("yes")) {
    out.status = AnswerStatus::Yes;
  } else if (starts_word("no")) {
    out.status = AnswerStatus::No;
  }
  return out;
}

// Where the "No" default for unanswered completions is applied.
enum class DefaultMode : std::uint8_t {
  Token,  // substitute the token "No", then map through the prompt's meaning
  Class,  // predict survival directly
};

struct Resolution {
  int label = 0;  // 1 = mortality predicted
  bool was_unanswered = false;
};

inline Resolution resolve_prediction(const ParsedAnswer& a, PromptKind kind, DefaultMode mode = DefaultMode::Token) {
  const auto& t = prompt_template(kind);
  if (a.status == AnswerStatus::Unanswered) {
    if (mode == DefaultMode::Class) return {0, true};
    return {t.meaning(AnswerToken::No) == PredictedClass::Mortality ? 1 : 0, true};
  }
  const auto token = a.status == AnswerStatus::Yes ? AnswerToken::Yes : AnswerToken::No;
  return {t.meaning(token) == PredictedClass::Mortality ? 1 : 0, false};
}

// ---------------------------------------------------------------------------
// Endpoint client

struct ClientConfig {
  std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "llama-2-13b";
  std::string auth_token_env;  // name of the env var holding a bearer token
  int max_in_flight = 4;
  double timeout_seconds = 60;
  int max_attempts = 3;
  int backoff_initial_ms = 200;
  int max_tokens = 2;
  double temperature = 0.0;
};

inline nlohmann::json to_json(const ClientConfig& c) {
  return {{"endpoint", c.endpoint},
          {"model", c.model},
          {"auth_token_env", c.auth_token_env},
          {"max_in_flight", c.max_in_flight},
          {"timeout_seconds", c.timeout_seconds},
          {"max_attempts", c.max_attempts},
          {"backoff_initial_ms", c.backoff_initial_ms}};
}

inline ClientConfig client_config_from_json(const nlohmann::json& j) {
  ClientConfig c;
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.auth_token_env = j.value("auth_token_env", c.auth_token_env);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.backoff_initial_ms = j.value("backoff_initial_ms", c.backoff_initial_ms);
  if (c.max_in_flight < 1) throw UsageError("max_in_flight must be at least 1");
  if (c.max_attempts < 1) throw UsageError("max_attempts must be at least 1");
  return c;
}

struct QueryResult {
  std::optional<std::string> completion;  // nullopt on failure
  std::string error;
  int attempts = 0;
  int http_status = 0;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  // Must be safe to call from several threads at once.
  virtual QueryResult complete(const std::string& record_id, const std::string& prompt) = 0;
};

// Extracts the completion text from an OpenAI-style chat or text completion
// response body.
inline std::optional<std::string> extract_completion(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& c = (*choices)[0];
  if (!c.is_object()) return std::nullopt;
  if (auto m = c.find("message"); m != c.end() && m->is_object()) {
    auto content = m->find("content");
    if (content != m->end() && content->is_string()) return content->get<std::string>();
  }
  if (auto t = c.find("text"); t != c.end() && t->is_string()) return t->get<std::string>();
  return std::nullopt;
}

// POSTs one chat-completion request per record with max_tokens=2 and
// temperature=0. Connection failures, 429 and 5xx are retried with
// exponential backoff up to max_attempts.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(ClientConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw UsageError("endpoint must be an http(s) URL: " + cfg_.endpoint);
    const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
    base_ = cfg_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
    if (!cfg_.auth_token_env.empty())
      if (const char* tok = std::getenv(cfg_.auth_token_env.c_str())) token_ = tok;
  }

  nlohmann::json request_body(const std::string& prompt) const {
    return {{"model", cfg_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"max_tokens", cfg_.max_tokens},
            {"temperature", cfg_.temperature}};
  }

  QueryResult complete(const std::string& record_id, const std::string& prompt) override {
    QueryResult res;
    httplib::Client cli(base_);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers{{"X-Request-Id", record_id}};
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    const std::string body = request_body(prompt).dump();

    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      res.attempts = attempt;
      auto r = cli.Post(path_, headers, body, "application/json");
      bool transient = false;
      if (!r) {
        res.http_status = 0;
        res.error = "connection error: " + httplib::to_string(r.error());
        transient = true;
      } else {
        res.http_status = r->status;
        if (r->status >= 200 && r->status < 300) {
          if (auto text = extract_completion(r->body)) {
            res.completion = std::move(*text);
            res.error.clear();
          } else {
            res.error = "malformed response body";
          }
          return res;
        }
        res.error = "HTTP " + std::to_string(r->status);
        transient = r->status == 429 || r->status >= 500;
      }
      if (!transient || attempt == cfg_.max_attempts) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_initial_ms) * (1 << (attempt - 1)));
    }
    return res;
  }

 private:
  ClientConfig cfg_;
  std::string base_;
  std::string path_;
  std::string token_;
};

// ---------------------------------------------------------------------------
// Harness

struct HarnessInput {
  std::string stay_id;
  std::string text;
  int label = 0;
};

struct AuditEntry {
  std::string stay_id;
  std::string prompt_hash;
  std::string raw;
  AnswerStatus status = AnswerStatus::Unanswered;
  int label = 0;  // resolved prediction
  std::string error;
};

struct HarnessTally {
  std::size_t n_answered = 0;
  std::size_t n_unanswered = 0;
};

struct HarnessResult {
  HarnessTally tally;
  std::vector<AuditEntry> audit;  // input order
  MetricsReport metrics;          // from {0,1} predictions
};

struct HarnessOptions {
  std::size_t budget = kZeroShotBudget;
  int max_in_flight = 4;
  DefaultMode default_mode = DefaultMode::Token;
  TokenCounter counter;
};

// build -> query -> parse -> resolve for every record. Per-record failures are
// recorded as unanswered and never abort the batch. At most max_in_flight
// requests are outstanding; the audit log keeps input order.
inline HarnessResult run_harness(const std::vector<HarnessInput>& records, PromptKind kind, CompletionClient& client,
                                 const HarnessOptions& opts = {}) {
  HarnessResult out;
  out.audit.resize(records.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      const auto& r = records[i];
      AuditEntry& e = out.audit[i];
      e.stay_id = r.stay_id;
      try {
        const std::string prompt = build_prompt(kind, r.text, opts.budget, opts.counter);
        e.prompt_hash = sha256_hex(prompt);
        auto q = client.complete(r.stay_id, prompt);
        e.raw = q.completion.value_or("");
        e.error = q.error;
        const ParsedAnswer parsed = q.completion ? parse_answer(*q.completion) : ParsedAnswer{};
        e.status = parsed.status;
      } catch (const std::exception& ex) {
        e.status = AnswerStatus::Unanswered;
        e.error = ex.what();
      }
      e.label = resolve_prediction({e.status, e.raw}, kind, opts.default_mode).label;
    }
  };
  const auto n_threads =
      static_cast<std::size_t>(std::max(1, std::min<int>(opts.max_in_flight, static_cast<int>(records.size()))));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  ScoredSet s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& e = out.audit[i];
    (e.status == AnswerStatus::Unanswered ? out.tally.n_unanswered : out.tally.n_answered) += 1;
    s.scores.push_back(e.label);
    s.labels.push_back(records[i].label);
  }
  if (!records.empty()) out.metrics = evaluate_scores(s);
  return out;
}

inline void write_audit_log(const std::filesystem::path& path, const std::vector<AuditEntry>& audit) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  for (const auto& e : audit) {
    nlohmann::ordered_json j;
    j["stay_id"] = e.stay_id;
    j["prompt_hash"] = e.prompt_hash;
    j["raw"] = e.raw;
    j["status"] = status_name(e.status);
    j["label"] = e.label;
    if (!e.error.empty()) j["error"] = e.error;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Scripted endpoint for tests and offline runs

struct ScriptedReply {
  int status = 200;
  std::string completion;
  bool malformed = false;  // 200 with a body that has no completion
};

// Per-record reply sequences keyed by the X-Request-Id header; the last reply
// of a sequence repeats. Records without a script get `fallback`.
struct MockScript {
  std::map<std::string, std::vector<ScriptedReply>> replies;
  ScriptedReply fallback{200, "No", false};

  // {"default": "No", "completions": {"<stay_id>": "Yes" | {"status": 500} | [ ... ]}}
  static MockScript from_json(const nlohmann::json& j) {
    auto one = [](const nlohmann::json& v) {
      ScriptedReply r;
      if (v.is_string()) {
        r.completion = v.get<std::string>();
      } else if (v.is_object()) {
        r.status = v.value("status", 200);
        r.completion = v.value("completion", std::string());
        r.malformed = v.value("malformed", false);
      } else {
        throw DataError("mock fixture: reply must be a string or an object");
      }
      return r;
    };
    MockScript s;
    if (j.contains("default")) s.fallback = one(j.at("default"));
    if (j.contains("completions"))
      for (auto it = j.at("completions").begin(); it != j.at("completions").end(); ++it) {
        auto& seq = s.replies[it.key()];
        if (it->is_array()) {
          for (const auto& v : *it) seq.push_back(one(v));
        } else {
          seq.push_back(one(*it));
        }
      }
    return s;
  }
};

// In-process chat-completion server bound to 127.0.0.1 on an ephemeral port.
class MockCompletionServer {
 public:
  explicit MockCompletionServer(MockScript script) : script_(std::move(script)) {
    server_.Post(R"(/v1/chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.get_header_value("X-Request-Id");
      ScriptedReply reply;
      {
        std::lock_guard lock(mu_);
        requests_.push_back(req.body);
        const auto n = seen_[id]++;
        auto it = script_.replies.find(id);
        if (it == script_.replies.end() || it->second.empty()) {
          reply = script_.fallback;
        } else {
          reply = it->second[std::min<std::size_t>(n, it->second.size() - 1)];
        }
      }
      res.status = reply.status;
      if (reply.status < 200 || reply.status >= 300) {
        res.set_content(R"({"error":"scripted failure"})", "application/json");
      } else if (reply.malformed) {
        res.set_content(R"({"unexpected":true})", "application/json");
      } else {
        nlohmann::json body = {
            {"object", "chat.completion"},
            {"choices", nlohmann::json::array({{{"index", 0},
                                                {"message", {{"role", "assistant"}, {"content", reply.completion}}},
                                                {"finish_reason", "length"}}})}};
        res.set_content(body.dump(), "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw IoError("mock server could not bind a port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockCompletionServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockCompletionServer(const MockCompletionServer&) = delete;
  MockCompletionServer& operator=(const MockCompletionServer&) = delete;

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  std::vector<std::string> request_bodies() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

  std::size_t request_count() const {
    std::lock_guard lock(mu_);
    return requests_.size();
  }

 private:
  MockScript script_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::map<std::string, std::size_t> seen_;
  std::vector<std::string> requests_;
};

}  // namespace mimictext
