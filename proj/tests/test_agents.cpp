#include <catch_amalgamated.hpp>

#include <cstdlib>

#include "parley/agents.hpp"

#include "support.hpp"

using namespace parley;
using testsupport::make_sample;

namespace {

TurnContext make_ctx(const Sample& sample, int agent_index, int round, uint64_t run_seed,
                     std::optional<std::string> prev_self = std::nullopt,
                     std::vector<std::optional<std::string>> prev_others = {}) {
  TurnContext ctx;
  ctx.sample = &sample;
  ctx.agent_index = agent_index;
  ctx.round = round;
  ctx.prompt = "What is the most appropriate " + sample.attribute + "?";
  ctx.prev_self = std::move(prev_self);
  ctx.prev_others = std::move(prev_others);
  ctx.cell_seed = derive_cell_seed(run_seed, sample.id, agent_index, round);
  return ctx;
}

// Straight-line reimplementation of the scripted decision order, written
// against the documented contract rather than the library code: rounds >= 2
// consume a stubbornness draw then an adoption draw; fresh draws consume a
// correctness draw plus a distractor pick only when wrong. Draws are raw
// mt19937_64 outputs mapped exactly as documented.
std::string oracle_choice(const ScriptedPolicy& policy, const Sample& sample,
                          const std::optional<std::string>& prev_self,
                          const std::vector<std::optional<std::string>>& prev_others, int round,
                          uint64_t cell_seed) {
  std::mt19937_64 gen(mix_seed(cell_seed, policy.seed));
  auto next_double = [&]() { return static_cast<double>(gen() >> 11) * (1.0 / 9007199254740992.0); };
  auto next_below = [&](size_t n) { return n <= 1 ? size_t(0) : static_cast<size_t>(gen() % n); };

  auto fresh = [&]() -> std::string {
    if (next_double() < policy.p_correct || sample.options.size() < 2) return sample.gold;
    std::vector<std::string> distractors;
    for (const auto& o : sample.options) {
      if (canonicalize(o) != canonicalize(sample.gold)) distractors.push_back(o);
    }
    if (distractors.empty()) return sample.gold;
    return distractors[next_below(distractors.size())];
  };

  if (round <= 1) return fresh();
  bool stubborn = next_double() < policy.stubbornness;
  bool adopt = next_double() < policy.q_adopt;
  if (stubborn && prev_self) return *prev_self;
  if (adopt) {
    std::vector<std::string> candidates;
    for (const auto& other : prev_others) {
      if (other) candidates.push_back(*other);
    }
    if (!candidates.empty()) return candidates[next_below(candidates.size())];
  }
  return fresh();
}

}  // namespace

TEST_CASE("scripted p_correct=1 always answers gold") {
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square", "Oval"}, "Square");
  Backend backend(testsupport::scripted_backend(1.0));
  for (uint64_t seed : {0ull, 1ull, 99ull}) {
    auto r = backend.respond(make_ctx(sample, 0, 1, seed));
    REQUIRE(r.ok());
    REQUIRE(r->parsed_option.has_value());
    CHECK(*r->parsed_option == "Square");
  }
}

TEST_CASE("scripted forced adoption copies the other agent's answer") {
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square"}, "Square");
  Backend backend(testsupport::scripted_backend(0.0, 1.0, 0.0));
  auto ctx = make_ctx(sample, 0, 2, 5, std::string("Round"), {std::string("Square")});
  auto r = backend.respond(ctx);
  REQUIRE(r.ok());
  REQUIRE(r->parsed_option.has_value());
  CHECK(*r->parsed_option == "Square");  // adopted gold from the other agent
}

TEST_CASE("scripted stubbornness wins over adoption") {
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square"}, "Square");
  Backend backend(testsupport::scripted_backend(0.0, 1.0, 1.0));
  auto ctx = make_ctx(sample, 0, 2, 5, std::string("Round"), {std::string("Square")});
  auto r = backend.respond(ctx);
  REQUIRE(r.ok());
  REQUIRE(r->parsed_option.has_value());
  CHECK(*r->parsed_option == "Round");  // repeated its own previous answer
}

TEST_CASE("scripted answers match the straight-line oracle across the fixture") {
  auto loaded = load_dataset(testsupport::fixture_path("dataset_clean.jsonl"));
  REQUIRE(loaded.ok());
  ScriptedPolicy policy{0.8, 0.4, 0.2, 3};
  BackendSpec spec = testsupport::scripted_backend(policy.p_correct, policy.q_adopt, policy.stubbornness,
                                                   policy.seed);
  Backend backend(spec);
  const uint64_t run_seed = 1234;

  for (const auto& sample : loaded->samples) {
    // round 1, then a synthetic round 2 fed with round-1 style answers
    auto ctx1 = make_ctx(sample, 0, 1, run_seed);
    auto r1 = backend.respond(ctx1);
    REQUIRE(r1.ok());
    std::string expect1 = oracle_choice(policy, sample, std::nullopt, {}, 1, ctx1.cell_seed);
    REQUIRE(r1->parsed_option.has_value());
    CHECK(*r1->parsed_option == expect1);

    auto ctx2 = make_ctx(sample, 0, 2, run_seed, r1->parsed_option, {std::string(sample.options[0])});
    auto r2 = backend.respond(ctx2);
    REQUIRE(r2.ok());
    std::string expect2 =
        oracle_choice(policy, sample, r1->parsed_option, {std::string(sample.options[0])}, 2, ctx2.cell_seed);
    REQUIRE(r2->parsed_option.has_value());
    CHECK(*r2->parsed_option == expect2);
  }
}

TEST_CASE("scripted responses are bit-deterministic and carry synthetic accounting") {
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square"}, "Square");
  Backend a(testsupport::scripted_backend(0.5, 0.0, 0.0, 9));
  Backend b(testsupport::scripted_backend(0.5, 0.0, 0.0, 9));
  auto ctx = make_ctx(sample, 0, 1, 77);
  auto ra = a.respond(ctx);
  auto rb = b.respond(ctx);
  REQUIRE(ra.ok());
  REQUIRE(rb.ok());
  CHECK(*ra == *rb);
  CHECK(ra->latency_s == 0.0);
  CHECK(ra->tokens_in == static_cast<long>(count_words(ctx.prompt)));
  CHECK(ra->tokens_out == static_cast<long>(count_words(ra->raw_text)));
  // the synthesized output must parse back to the chosen option
  auto reparsed = parse_answer(ra->raw_text, sample.options);
  CHECK(reparsed.option == ra->parsed_option);
}

TEST_CASE("http backend round-trips the stub server body and usage") {
  testsupport::StubChatServer server("Answer: Square\nBoth the image and the title agree.");
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square"}, "Square");
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.model = "stub-model";
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  spec.retry.backoff_base_s = 0.001;
  Backend backend(spec);
  auto r = backend.respond(make_ctx(sample, 0, 1, 1));
  REQUIRE(r.ok());
  CHECK(r->raw_text == "Answer: Square\nBoth the image and the title agree.");
  REQUIRE(r->parsed_option.has_value());
  CHECK(*r->parsed_option == "Square");
  CHECK(r->modality_basis == ModalityBasis::both);
  CHECK(r->tokens_in == 42);
  CHECK(r->tokens_out == 7);
  CHECK(r->latency_s >= 0.0);

  // wire format: model, temperature, max_tokens, system + user message
  auto requests = server.requests();
  REQUIRE(requests.size() == 1);
  auto body = nlohmann::json::parse(requests[0]);
  CHECK(body["model"] == "stub-model");
  CHECK(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["role"] == "user");
  CHECK(body["messages"][1]["content"][0]["type"] == "text");
}

TEST_CASE("http backend attaches base64 image parts") {
  testsupport::StubChatServer server;
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  Backend backend(spec);
  auto payload = std::make_shared<ImagePayload>();
  payload->bytes = testsupport::tiny_png();
  payload->media_type = "image/png";
  payload->base64 = base64_encode(payload->bytes);
  auto ctx = make_ctx(sample, 0, 1, 1);
  ctx.image = payload;
  REQUIRE(backend.respond(ctx).ok());
  auto body = nlohmann::json::parse(server.requests()[0]);
  REQUIRE(body["messages"][1]["content"].size() == 2);
  CHECK(body["messages"][1]["content"][1]["type"] == "image_url");
  std::string url = body["messages"][1]["content"][1]["image_url"]["url"];
  CHECK(url.rfind("data:image/png;base64,", 0) == 0);
}

TEST_CASE("http 429 twice then 200 succeeds on attempt 3") {
  testsupport::StubChatServer server("Answer: A");
  server.set_status_script({429, 429, 200});
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  spec.retry.max_attempts = 4;
  spec.retry.backoff_base_s = 0.001;
  Backend backend(spec);
  int attempts = 0;
  auto r = backend.respond(make_ctx(sample, 0, 1, 1), &attempts);
  REQUIRE(r.ok());
  CHECK(attempts == 3);
  CHECK(server.request_count() == 3);
}

TEST_CASE("http 401 is a non-retryable auth error after one attempt") {
  testsupport::StubChatServer server;
  server.set_status_script({401});
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  spec.retry.max_attempts = 4;
  spec.retry.backoff_base_s = 0.001;
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  Backend backend(spec);
  int attempts = 0;
  auto r = backend.respond(make_ctx(sample, 0, 1, 1), &attempts);
  REQUIRE_FALSE(r.ok());
  CHECK(r.error().kind == ErrorKind::auth);
  CHECK(attempts == 1);
  CHECK(server.request_count() == 1);
}

TEST_CASE("http 404 is a non-retryable http error") {
  testsupport::StubChatServer server;
  server.set_status_script({404});
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  spec.retry.backoff_base_s = 0.001;
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  Backend backend(spec);
  auto r = backend.respond(make_ctx(sample, 0, 1, 1));
  REQUIRE_FALSE(r.ok());
  CHECK(r.error().kind == ErrorKind::http);
  CHECK(server.request_count() == 1);
}

TEST_CASE("http exhausts retries on persistent 500s") {
  testsupport::StubChatServer server;
  server.set_status_script({500, 500, 500});
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY";
  spec.retry.max_attempts = 3;
  spec.retry.backoff_base_s = 0.001;
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  Backend backend(spec);
  int attempts = 0;
  auto r = backend.respond(make_ctx(sample, 0, 1, 1), &attempts);
  REQUIRE_FALSE(r.ok());
  CHECK(r.error().kind == ErrorKind::network);
  CHECK(attempts == 3);
  CHECK(server.request_count() == 3);
}

TEST_CASE("credentials env is forwarded as a bearer token when set") {
  testsupport::StubChatServer server("Answer: A");
  ::setenv("PARLEY_TEST_KEY_SET", "sekrit", 1);
  BackendSpec spec;
  spec.kind = BackendKind::http_chat;
  spec.endpoint = server.endpoint();
  spec.credentials_env = "PARLEY_TEST_KEY_SET";
  auto sample = make_sample("s1", "Home", "Shape", {"A", "B"}, "A");
  Backend backend(spec);
  REQUIRE(backend.respond(make_ctx(sample, 0, 1, 1)).ok());
  auto auth = server.auth_headers();
  REQUIRE(auth.size() == 1);
  CHECK(auth[0] == "Bearer sekrit");
  ::unsetenv("PARLEY_TEST_KEY_SET");
}

TEST_CASE("replay backend returns recorded turns and errors when exhausted") {
  auto sample = make_sample("s1", "Home", "Shape", {"Round", "Square"}, "Square");
  auto source = std::make_shared<ReplaySource>();
  source->add_turn("s1", 0, 1, "Answer: Round\nThe image looked circular.");
  BackendSpec spec;
  spec.kind = BackendKind::replay;
  spec.replay_source = "<memory>";
  Backend backend(spec, source);

  auto hit = backend.respond(make_ctx(sample, 0, 1, 1));
  REQUIRE(hit.ok());
  CHECK(*hit->parsed_option == "Round");
  CHECK(hit->latency_s == 0.0);

  auto miss = backend.respond(make_ctx(sample, 0, 2, 1));
  REQUIRE_FALSE(miss.ok());
  CHECK(miss.error().kind == ErrorKind::replay_exhausted);
}

TEST_CASE("backend spec validation") {
  BackendSpec http;
  http.kind = BackendKind::http_chat;
  CHECK_FALSE(validate_backend_spec(http).ok());  // no endpoint
  http.endpoint = "https://example.com/v1/chat/completions";
  CHECK_FALSE(validate_backend_spec(http).ok());  // no credentials env
  http.credentials_env = "KEY";
  CHECK(validate_backend_spec(http).ok());

  BackendSpec scripted = testsupport::scripted_backend(1.5);
  CHECK_FALSE(validate_backend_spec(scripted).ok());  // probability out of range

  BackendSpec replay;
  replay.kind = BackendKind::replay;
  CHECK_FALSE(validate_backend_spec(replay).ok());  // no source
  replay.replay_source = "run_dir";
  CHECK(validate_backend_spec(replay).ok());
}

TEST_CASE("scenario validation enforces the budget cap") {
  Scenario s = testsupport::scripted_scenario(
      {testsupport::scripted_backend(1.0), testsupport::scripted_backend(1.0)}, 5);
  s.budget_cap = 10;
  CHECK(validate_scenario(s).ok());
  s.budget_cap = 9;
  CHECK_FALSE(validate_scenario(s).ok());
  s.budget_cap.reset();
  s.rounds = 0;
  CHECK_FALSE(validate_scenario(s).ok());
}

TEST_CASE("rate limiter spaces acquisitions") {
  RateLimiter limiter(100.0);  // 10 ms interval
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) limiter.acquire();
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(elapsed >= 0.025);  // at least 3 full intervals beyond the first slot
}
