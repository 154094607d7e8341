#pragma once

// Shared fixtures for the unit and acceptance suites: temp dirs, sample and
// transcript builders, an offline stub chat server, and synthetic dataset
// writers.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "parley/agents.hpp"
#include "parley/dataset.hpp"
#include "parley/engine.hpp"
#include "parley/protocol.hpp"

namespace testsupport {

inline std::filesystem::path test_dir() { return std::filesystem::path(PARLEY_TEST_DIR); }
inline std::filesystem::path fixture_path(const std::string& name) { return test_dir() / "fixtures" / name; }
inline std::filesystem::path golden_path(const std::string& name) { return test_dir() / "golden" / name; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "parley") {
    static std::atomic<uint64_t> counter{0};
    auto base = std::filesystem::temp_directory_path();
    path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// A 1x1 red PNG, bytes checked in as fixtures/images/*.png were; enough for
// synthetic datasets that must pass image validation.
inline const std::string& tiny_png() {
  static const std::string bytes = [] {
    static const unsigned char raw[] = {
        0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
        0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90,
        0x77, 0x53, 0xDE, 0x00, 0x00, 0x00, 0x0C, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0xF8,
        0xCF, 0xC0, 0x00, 0x00, 0x00, 0x03, 0x00, 0x01, 0x5B, 0xF0, 0x2A, 0xC1, 0x00, 0x00, 0x00,
        0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82};
    return std::string(reinterpret_cast<const char*>(raw), sizeof(raw));
  }();
  return bytes;
}

inline parley::Sample make_sample(std::string id, std::string domain, std::string attribute,
                                  std::vector<std::string> options, std::string gold,
                                  std::string category = "Category", std::string title = "Title") {
  parley::Sample s;
  s.id = std::move(id);
  s.domain = std::move(domain);
  s.category = std::move(category);
  s.title = std::move(title);
  s.attribute = std::move(attribute);
  s.options = std::move(options);
  s.gold = std::move(gold);
  s.image = "images/p.png";
  s.media_type = "image/png";
  return s;
}

// N two-option samples, gold = "A". Handy for statistical checks.
inline std::vector<parley::Sample> synthetic_samples(size_t n, const std::string& domain = "Home",
                                                     const std::string& attribute = "Shape") {
  std::vector<parley::Sample> samples;
  samples.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    samples.push_back(make_sample("syn-" + std::to_string(i), domain, attribute, {"A", "B"}, "A"));
  }
  return samples;
}

// Builds a structurally valid transcript with planted parsed answers.
// answers[round-1][agent] must be an option of `sample` or "[INVALID]".
inline parley::Transcript planted_transcript(const parley::Sample& sample,
                                             const std::vector<std::vector<std::string>>& answers,
                                             const std::string& scenario_id = "planted") {
  parley::Transcript t;
  t.scenario_id = scenario_id;
  t.seed = 0;
  t.sample = sample;
  t.agent_count = answers.empty() ? 0 : static_cast<int>(answers[0].size());
  for (size_t r = 0; r < answers.size(); ++r) {
    std::vector<parley::AgentResponse> cells;
    std::vector<std::string> prompts;
    for (size_t a = 0; a < answers[r].size(); ++a) {
      parley::AgentResponse resp;
      resp.agent_index = static_cast<int>(a);
      resp.round = static_cast<int>(r + 1);
      if (answers[r][a] == "[INVALID]") {
        resp.raw_text = "no committed choice between the listed values";
      } else {
        resp.raw_text = "Answer: " + answers[r][a];
        resp.parsed_option = answers[r][a];
      }
      cells.push_back(std::move(resp));
      prompts.push_back("prompt a" + std::to_string(a) + " r" + std::to_string(r + 1));
    }
    t.rounds.push_back(std::move(cells));
    t.prompts.push_back(std::move(prompts));
  }
  return t;
}

inline parley::BackendSpec scripted_backend(double p_correct, double q_adopt = 0.0, double stubbornness = 0.0,
                                            uint64_t seed = 0) {
  parley::BackendSpec spec;
  spec.kind = parley::BackendKind::scripted;
  spec.model = "scripted";
  spec.policy = {p_correct, q_adopt, stubbornness, seed};
  return spec;
}

inline parley::Scenario scripted_scenario(std::vector<parley::BackendSpec> agents, int rounds,
                                          const std::string& id = "test") {
  parley::Scenario s;
  s.id = id;
  s.agents = std::move(agents);
  s.rounds = rounds;
  return s;
}

// In-memory debate run over a sample list.
inline std::vector<parley::Transcript> run_scripted(const std::vector<parley::Sample>& samples,
                                                    const parley::Scenario& scenario, uint64_t run_seed) {
  auto engine = parley::DebateEngine::create(scenario);
  std::vector<parley::Transcript> out;
  for (const auto& s : samples) {
    auto t = (*engine)->run_debate(s, run_seed);
    out.push_back(std::move(*t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Offline stub chat server.
// ---------------------------------------------------------------------------

// Minimal chat-completions endpoint with a programmable status sequence and
// a request log. Serves /v1/chat/completions and /image/*.
class StubChatServer {
 public:
  explicit StubChatServer(std::string reply_text = "Answer: A\nThe image shows it.")
      : reply_text_(std::move(reply_text)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      requests_.push_back(req.body);
      auth_headers_.push_back(req.get_header_value("Authorization"));
      int status = 200;
      if (!status_script_.empty()) {
        status = status_script_.front();
        status_script_.erase(status_script_.begin());
      }
      if (status != 200) {
        res.status = status;
        res.set_content("{}", "application/json");
        return;
      }
      nlohmann::json body = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", reply_text_}}}}}},
          {"usage", {{"prompt_tokens", 42}, {"completion_tokens", 7}}},
      };
      res.set_content(body.dump(), "application/json");
    });
    server_.Get("/image/ok.png", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(tiny_png(), "image/png");
    });
    server_.Get("/image/missing.png", [](const httplib::Request&, httplib::Response& res) {
      res.status = 404;
      res.set_content("not found", "text/plain");
    });

    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubChatServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }
  std::string image_url(const std::string& name) const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/image/" + name;
  }

  void set_status_script(std::vector<int> script) {
    std::lock_guard lock(mu_);
    status_script_ = std::move(script);
  }
  void set_reply_text(std::string text) {
    std::lock_guard lock(mu_);
    reply_text_ = std::move(text);
  }
  size_t request_count() {
    std::lock_guard lock(mu_);
    return requests_.size();
  }
  std::vector<std::string> requests() {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<std::string> auth_headers() {
    std::lock_guard lock(mu_);
    return auth_headers_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::string reply_text_;
  std::vector<int> status_script_;
  std::vector<std::string> requests_;
  std::vector<std::string> auth_headers_;
};

// Writes a synthetic dataset file with the given per-domain record counts;
// every record references one shared tiny PNG.
inline std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir,
                                                     const std::vector<std::pair<std::string, size_t>>& counts,
                                                     const std::string& filename = "dataset.jsonl") {
  std::filesystem::create_directories(dir / "images");
  write_file(dir / "images" / "p.png", tiny_png());
  std::ofstream out(dir / filename, std::ios::binary | std::ios::trunc);
  size_t serial = 0;
  for (const auto& [domain, n] : counts) {
    for (size_t i = 0; i < n; ++i) {
      nlohmann::json j = {{"id", domain.substr(0, 2) + "-" + std::to_string(serial++)},
                          {"domain", domain},
                          {"category", "Cat"},
                          {"title", "Title " + std::to_string(i)},
                          {"attribute", "Attr"},
                          {"options", {"A", "B"}},
                          {"gold", "A"},
                          {"image", "images/p.png"}};
      out << j.dump() << '\n';
    }
  }
  out.close();
  return dir / filename;
}

}  // namespace testsupport
