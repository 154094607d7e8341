#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "parley/error.hpp"
#include "parley/image.hpp"
#include "parley/protocol.hpp"
#include "parley/rng.hpp"

namespace parley {

enum class BackendKind { http_chat, scripted, replay };

inline const char* to_string(BackendKind k) {
  switch (k) {
    case BackendKind::http_chat: return "http_chat";
    case BackendKind::scripted: return "scripted";
    case BackendKind::replay: return "replay";
  }
  return "scripted";
}

inline Result<BackendKind> backend_kind_from_string(std::string_view s) {
  if (s == "http_chat") return BackendKind::http_chat;
  if (s == "scripted") return BackendKind::scripted;
  if (s == "replay") return BackendKind::replay;
  return make_error(ErrorKind::config, "unknown backend kind: " + std::string(s));
}

struct RetryPolicy {
  int max_attempts = 4;
  double backoff_base_s = 0.5;  // doubled per retry, plus jitter

  bool operator==(const RetryPolicy&) const = default;
};

// Deterministic stand-in for a hosted model. Decision order per round >= 2:
// stubbornness (repeat own previous answer), then adoption (copy a previous
// answer from another agent), then a fresh draw (gold with p_correct, else a
// uniformly chosen distractor). Round 1 is always a fresh draw.
struct ScriptedPolicy {
  double p_correct = 1.0;
  double q_adopt = 0.0;
  double stubbornness = 0.0;
  uint64_t seed = 0;  // policy salt, mixed into every cell seed

  bool operator==(const ScriptedPolicy&) const = default;
};

struct DecodingSettings {
  double temperature = 0.0;
  int max_output_tokens = 512;

  bool operator==(const DecodingSettings&) const = default;
};

struct BackendSpec {
  BackendKind kind = BackendKind::scripted;
  std::string model = "scripted";
  std::string endpoint;          // http_chat only
  std::string credentials_env;   // name of the env var holding the API key
  double rate_limit_rps = 0.0;   // 0 = unlimited
  RetryPolicy retry;
  ScriptedPolicy policy;         // scripted only
  std::string replay_source;     // replay only: run directory or transcripts file

  bool operator==(const BackendSpec&) const = default;
};

inline Status validate_backend_spec(const BackendSpec& spec) {
  switch (spec.kind) {
    case BackendKind::http_chat:
      if (spec.endpoint.empty())
        return make_error(ErrorKind::config, "http_chat backend requires an endpoint");
      if (spec.credentials_env.empty())
        return make_error(ErrorKind::config, "http_chat backend requires a credentials env name");
      break;
    case BackendKind::scripted:
      for (double p : {spec.policy.p_correct, spec.policy.q_adopt, spec.policy.stubbornness}) {
        if (p < 0.0 || p > 1.0)
          return make_error(ErrorKind::config, "scripted policy probabilities must be in [0,1]");
      }
      break;
    case BackendKind::replay:
      if (spec.replay_source.empty())
        return make_error(ErrorKind::config, "replay backend requires a transcript source");
      break;
  }
  if (spec.retry.max_attempts < 1)
    return make_error(ErrorKind::config, "retry max_attempts must be >= 1");
  if (spec.rate_limit_rps < 0)
    return make_error(ErrorKind::config, "rate limit must be >= 0");
  return Status::ok_status();
}

enum class SeedPolicy { pinned, per_run };

inline const char* to_string(SeedPolicy p) { return p == SeedPolicy::pinned ? "pinned" : "per_run"; }
inline Result<SeedPolicy> seed_policy_from_string(std::string_view s) {
  if (s == "pinned") return SeedPolicy::pinned;
  if (s == "per_run") return SeedPolicy::per_run;
  return make_error(ErrorKind::config, "unknown seed policy: " + std::string(s));
}

// Which backends debate, for how many rounds, under what budget.
struct Scenario {
  std::string id;
  std::string description;
  std::vector<BackendSpec> agents;  // one spec per agent slot, agent-index order
  int rounds = 1;
  DecodingSettings decoding;
  SeedPolicy seed_policy = SeedPolicy::per_run;
  std::optional<int> budget_cap;  // max model calls per sample
  bool early_stop = false;        // stop once a round changes zero answers

  int agent_count() const { return static_cast<int>(agents.size()); }
  int calls_per_sample() const { return agent_count() * rounds; }

  bool operator==(const Scenario&) const = default;
};

inline Status validate_scenario(const Scenario& s) {
  if (s.agents.empty()) return make_error(ErrorKind::config, "scenario has no agents");
  if (s.rounds < 1) return make_error(ErrorKind::config, "scenario rounds must be >= 1");
  if (s.agents.size() == 1 && s.rounds > 1)
    return make_error(ErrorKind::config,
                      "debate rounds need >= 2 agents (1 agent x 1 round is the single-inference baseline)");
  if (s.budget_cap && s.calls_per_sample() > *s.budget_cap)
    return make_error(ErrorKind::config,
                      "agents x rounds = " + std::to_string(s.calls_per_sample()) +
                          " exceeds budget cap " + std::to_string(*s.budget_cap));
  for (const auto& a : s.agents) {
    if (auto st = validate_backend_spec(a); !st.ok()) return st;
  }
  return Status::ok_status();
}

// ---------------------------------------------------------------------------
// Turn context: everything one cell's backend call may legitimately see.
// Previous-round data only — the engine never exposes current-round outputs.
// ---------------------------------------------------------------------------

struct TurnContext {
  const Sample* sample = nullptr;
  int agent_index = 0;
  int round = 1;
  std::string prompt;
  std::shared_ptr<const ImagePayload> image;  // null for backends that ignore it
  // Parsed previous-round answers (round - 1). nullopt = INVALID / failed.
  std::optional<std::string> prev_self;
  std::vector<std::optional<std::string>> prev_others;  // agent-index order, self excluded
  uint64_t cell_seed = 0;
  DecodingSettings decoding;
};

// ---------------------------------------------------------------------------
// HTTP chat-completions wire format (vendor-style gateway).
// ---------------------------------------------------------------------------

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string text;
  std::shared_ptr<const ImagePayload> image;  // optional image part
};

struct HttpChatResult {
  std::string text;
  long tokens_in = 0;
  long tokens_out = 0;
  int attempts = 1;
};

namespace detail {

inline nlohmann::json chat_request_body(const BackendSpec& spec, std::span<const ChatMessage> messages,
                                        const DecodingSettings& decoding) {
  nlohmann::json body;
  body["model"] = spec.model;
  body["temperature"] = decoding.temperature;
  body["max_tokens"] = decoding.max_output_tokens;
  auto& msgs = body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) {
    nlohmann::json parts = nlohmann::json::array();
    parts.push_back({{"type", "text"}, {"text", m.text}});
    if (m.image) {
      parts.push_back({{"type", "image_url"}, {"image_url", {{"url", m.image->data_url()}}}});
    }
    msgs.push_back({{"role", m.role}, {"content", std::move(parts)}});
  }
  return body;
}

struct UrlParts {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline Result<UrlParts> split_url(const std::string& url) {
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    return make_error(ErrorKind::config, "endpoint must be an absolute URL: " + url);
  size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return UrlParts{url, "/"};
  return UrlParts{url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// POSTs one chat-completions request, honoring the retry policy: transient
// failures (transport errors, 429, 5xx) back off exponentially with jitter;
// auth and other 4xx failures are immediate. The returned attempt count
// includes the successful one; `attempts_out` is also filled on failure.
inline Result<HttpChatResult> http_chat_call(const BackendSpec& spec, std::span<const ChatMessage> messages,
                                             const DecodingSettings& decoding, int* attempts_out = nullptr) {
  auto url = detail::split_url(spec.endpoint);
  if (!url.ok()) return url.error();

  httplib::Client client(url->base);
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(120, 0);

  httplib::Headers headers;
  if (!spec.credentials_env.empty()) {
    if (const char* key = std::getenv(spec.credentials_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const std::string body = detail::chat_request_body(spec, messages, decoding).dump();
  std::string last_failure;
  bool last_was_rate_limit = false;

  for (int attempt = 1; attempt <= spec.retry.max_attempts; ++attempt) {
    if (attempts_out) *attempts_out = attempt;
    auto res = client.Post(url->path, headers, body, "application/json");
    if (res) {
      int status = res->status;
      if (status == 200) {
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
          return make_error(ErrorKind::http, "malformed chat response body");
        HttpChatResult out;
        const auto& message = j["choices"][0]["message"];
        out.text = message.value("content", std::string());
        if (j.contains("usage")) {
          out.tokens_in = j["usage"].value("prompt_tokens", 0L);
          out.tokens_out = j["usage"].value("completion_tokens", 0L);
        }
        out.attempts = attempt;
        return out;
      }
      if (status == 401 || status == 403)
        return make_error(ErrorKind::auth, "authentication failed (HTTP " + std::to_string(status) + ")");
      bool retryable = status == 429 || status >= 500;
      if (!retryable)
        return make_error(ErrorKind::http, "non-retryable HTTP " + std::to_string(status));
      last_failure = "HTTP " + std::to_string(status);
      last_was_rate_limit = status == 429;
    } else {
      last_failure = httplib::to_string(res.error());
      last_was_rate_limit = false;
    }
    if (attempt < spec.retry.max_attempts) {
      double backoff = spec.retry.backoff_base_s * static_cast<double>(1 << (attempt - 1));
      // jitter in [0, 25%); keeps stampedes apart, never affects results
      backoff *= 1.0 + 0.25 * DetRng(splitmix64(static_cast<uint64_t>(attempt) ^
                                                std::chrono::steady_clock::now().time_since_epoch().count()))
                                .next_double();
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    }
  }
  return make_error(last_was_rate_limit ? ErrorKind::rate_limited : ErrorKind::network,
                    "exhausted " + std::to_string(spec.retry.max_attempts) + " attempts (" + last_failure + ")");
}

// ---------------------------------------------------------------------------
// Replay source: previously recorded raw outputs keyed by (sample id, agent,
// round). Lookup misses are typed errors so a run can skip-and-log.
// ---------------------------------------------------------------------------

class ReplaySource {
 public:
  void add(const Transcript& t) {
    for (const auto& round : t.rounds) {
      for (const auto& resp : round) {
        if (!resp.ok) continue;
        turns_[key(t.sample.id, resp.agent_index, resp.round)] = resp.raw_text;
      }
    }
  }

  void add_turn(const std::string& sample_id, int agent_index, int round, std::string raw_text) {
    turns_[key(sample_id, agent_index, round)] = std::move(raw_text);
  }

  Result<std::string> lookup(const std::string& sample_id, int agent_index, int round) const {
    auto it = turns_.find(key(sample_id, agent_index, round));
    if (it == turns_.end())
      return make_error(ErrorKind::replay_exhausted,
                        "no recorded turn for sample '" + sample_id + "' agent " +
                            std::to_string(agent_index) + " round " + std::to_string(round));
    return it->second;
  }

  size_t size() const { return turns_.size(); }

 private:
  static std::string key(const std::string& id, int agent, int round) {
    return id + '\x1f' + std::to_string(agent) + '\x1f' + std::to_string(round);
  }
  std::map<std::string, std::string> turns_;
};

// Simple shared interval limiter: at most rps requests/second across all
// concurrent callers of one backend.
class RateLimiter {
 public:
  explicit RateLimiter(double rps) : interval_(rps > 0 ? 1.0 / rps : 0.0) {}

  void acquire() {
    if (interval_ <= 0) return;
    std::chrono::steady_clock::time_point wake;
    {
      std::lock_guard lock(mu_);
      auto now = std::chrono::steady_clock::now();
      auto earliest = next_slot_ > now ? next_slot_ : now;
      next_slot_ = earliest + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(interval_));
      wake = earliest;
    }
    std::this_thread::sleep_until(wake);
  }

 private:
  double interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

// ---------------------------------------------------------------------------
// Backend: uniform runtime over the three kinds.
// ---------------------------------------------------------------------------

namespace detail {

// Scripted answer choice. Draw order is part of the contract (the test
// oracle mirrors the stream): rounds >= 2 always consume the stubbornness
// draw and then the adoption draw; a fresh draw consumes the correctness
// draw plus one pick only when the answer is wrong.
inline std::string scripted_choice(const ScriptedPolicy& policy, const Sample& sample,
                                   const std::optional<std::string>& prev_self,
                                   std::span<const std::optional<std::string>> prev_others, int round,
                                   DetRng& rng) {
  auto fresh = [&]() -> std::string {
    if (rng.chance(policy.p_correct) || sample.options.size() < 2) return sample.gold;
    std::vector<const std::string*> distractors;
    std::string gold_canon = canonicalize(sample.gold);
    for (const auto& o : sample.options) {
      if (canonicalize(o) != gold_canon) distractors.push_back(&o);
    }
    if (distractors.empty()) return sample.gold;
    return *distractors[rng.next_below(distractors.size())];
  };

  if (round <= 1) return fresh();

  bool stubborn = rng.chance(policy.stubbornness);
  bool adopt = rng.chance(policy.q_adopt);
  if (stubborn && prev_self) return *prev_self;
  if (adopt) {
    std::vector<const std::string*> candidates;
    for (const auto& other : prev_others) {
      if (other) candidates.push_back(&*other);
    }
    if (!candidates.empty()) return *candidates[rng.next_below(candidates.size())];
  }
  return fresh();
}

inline std::string scripted_raw_text(const std::string& chosen, uint64_t cell_seed) {
  static constexpr std::string_view flavors[] = {
      "The image supports this choice.",
      "The title points to this value.",
      "Both the image and the text support it.",
  };
  std::string out = "Answer: " + chosen + "\n";
  out += flavors[splitmix64(cell_seed ^ 0xF1A0Ull) % 3];
  return out;
}

}  // namespace detail

// One initialized agent slot. respond() is safe to call concurrently for
// different samples; rate limiting is shared across callers.
class Backend {
 public:
  explicit Backend(BackendSpec spec, std::shared_ptr<const ReplaySource> replay = nullptr)
      : spec_(std::move(spec)), replay_(std::move(replay)), limiter_(spec_.rate_limit_rps) {}

  const BackendSpec& spec() const { return spec_; }

  // `attempts_out` (optional) reports how many HTTP attempts the call used,
  // including failed ones; always 1 for scripted/replay.
  Result<AgentResponse> respond(const TurnContext& ctx, int* attempts_out = nullptr) {
    if (attempts_out) *attempts_out = 1;
    switch (spec_.kind) {
      case BackendKind::scripted: return respond_scripted(ctx);
      case BackendKind::replay: return respond_replay(ctx);
      case BackendKind::http_chat: return respond_http(ctx, attempts_out);
    }
    return make_error(ErrorKind::config, "uninitialized backend");
  }

 private:
  AgentResponse base_response(const TurnContext& ctx) const {
    AgentResponse r;
    r.agent_index = ctx.agent_index;
    r.round = ctx.round;
    return r;
  }

  void fill_parsed(AgentResponse& r, const TurnContext& ctx) const {
    ParsedAnswer parsed = parse_answer(r.raw_text, ctx.sample->options);
    r.parsed_option = parsed.option;
    r.reasoning = parsed.reasoning;
    r.modality_basis = parsed.basis;
  }

  Result<AgentResponse> respond_scripted(const TurnContext& ctx) {
    if (!ctx.sample) return make_error(ErrorKind::argument, "scripted backend needs the sample");
    AgentResponse r = base_response(ctx);
    uint64_t seed = mix_seed(ctx.cell_seed, spec_.policy.seed);
    DetRng rng(seed);
    std::string chosen =
        detail::scripted_choice(spec_.policy, *ctx.sample, ctx.prev_self, ctx.prev_others, ctx.round, rng);
    r.raw_text = detail::scripted_raw_text(chosen, seed);
    fill_parsed(r, ctx);
    r.latency_s = 0.0;
    r.tokens_in = static_cast<long>(count_words(ctx.prompt));
    r.tokens_out = static_cast<long>(count_words(r.raw_text));
    return r;
  }

  Result<AgentResponse> respond_replay(const TurnContext& ctx) {
    if (!replay_) return make_error(ErrorKind::config, "replay backend has no source attached");
    auto recorded = replay_->lookup(ctx.sample->id, ctx.agent_index, ctx.round);
    if (!recorded.ok()) return recorded.error();
    AgentResponse r = base_response(ctx);
    r.raw_text = std::move(*recorded);
    fill_parsed(r, ctx);
    r.latency_s = 0.0;
    r.tokens_in = static_cast<long>(count_words(ctx.prompt));
    r.tokens_out = static_cast<long>(count_words(r.raw_text));
    return r;
  }

  Result<AgentResponse> respond_http(const TurnContext& ctx, int* attempts_out) {
    limiter_.acquire();
    std::vector<ChatMessage> messages;
    messages.push_back({"system", std::string(kSystemPreamble), nullptr});
    messages.push_back({"user", ctx.prompt, ctx.image});
    auto started = std::chrono::steady_clock::now();
    auto result = http_chat_call(spec_, messages, ctx.decoding, attempts_out);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!result.ok()) return result.error();
    AgentResponse r = base_response(ctx);
    r.raw_text = result->text;
    fill_parsed(r, ctx);
    r.latency_s = elapsed;
    r.tokens_in = result->tokens_in;
    r.tokens_out = result->tokens_out;
    return r;
  }

  BackendSpec spec_;
  std::shared_ptr<const ReplaySource> replay_;
  RateLimiter limiter_;
};

}  // namespace parley
