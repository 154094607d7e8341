#pragma once

#include <unistd.h>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "parley/agents.hpp"
#include "parley/dataset.hpp"
#include "parley/digest.hpp"
#include "parley/error.hpp"
#include "parley/protocol.hpp"
#include "parley/version.hpp"

namespace parley {

inline constexpr int kSchemaVersion = 1;

// All floats in persisted documents are quantized to 6 significant digits so
// reports are bit-comparable across platforms.
inline double quantize6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline std::string format_float6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string format_pct2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string iso8601_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// JSON codecs. The store owns every persisted schema.
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Sample& s) {
  return {{"id", s.id},       {"domain", s.domain},   {"category", s.category},
          {"title", s.title}, {"attribute", s.attribute}, {"options", s.options},
          {"gold", s.gold},   {"image", s.image},     {"media_type", s.media_type}};
}

inline Result<Sample> sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "sample: not an object");
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.domain = j.at("domain").get<std::string>();
    s.category = j.value("category", std::string());
    s.title = j.value("title", std::string());
    s.attribute = j.at("attribute").get<std::string>();
    s.options = j.at("options").get<std::vector<std::string>>();
    s.gold = j.at("gold").get<std::string>();
    s.image = j.value("image", std::string());
    s.media_type = j.value("media_type", std::string());
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("sample: ") + e.what());
  }
  return s;
}

inline nlohmann::json to_json(const AgentResponse& r) {
  nlohmann::json j{{"agent", r.agent_index},
                   {"round", r.round},
                   {"raw_text", r.raw_text},
                   {"reasoning", r.reasoning},
                   {"modality", to_string(r.modality_basis)},
                   {"latency_s", quantize6(r.latency_s)},
                   {"tokens_in", r.tokens_in},
                   {"tokens_out", r.tokens_out},
                   {"ok", r.ok},
                   {"error", r.error}};
  if (r.parsed_option) j["parsed_option"] = *r.parsed_option;
  else j["parsed_option"] = nullptr;
  return j;
}

inline Result<AgentResponse> agent_response_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "response: not an object");
  AgentResponse r;
  try {
    r.agent_index = j.at("agent").get<int>();
    r.round = j.at("round").get<int>();
    r.raw_text = j.at("raw_text").get<std::string>();
    if (!j.at("parsed_option").is_null()) r.parsed_option = j.at("parsed_option").get<std::string>();
    r.reasoning = j.value("reasoning", std::string());
    r.modality_basis = modality_from_string(j.value("modality", "unstated"));
    r.latency_s = j.value("latency_s", 0.0);
    r.tokens_in = j.value("tokens_in", 0L);
    r.tokens_out = j.value("tokens_out", 0L);
    r.ok = j.value("ok", true);
    r.error = j.value("error", std::string());
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("response: ") + e.what());
  }
  return r;
}

inline nlohmann::json to_json(const Transcript& t) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& round : t.rounds) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& r : round) cells.push_back(to_json(r));
    rounds.push_back(std::move(cells));
  }
  return {{"schema_version", kSchemaVersion},
          {"scenario_id", t.scenario_id},
          {"seed", t.seed},
          {"sample", to_json(t.sample)},
          {"agent_count", t.agent_count},
          {"rounds", std::move(rounds)},
          {"prompts", t.prompts}};
}

inline Result<Transcript> transcript_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "transcript: not an object");
  Transcript t;
  try {
    t.scenario_id = j.at("scenario_id").get<std::string>();
    t.seed = j.at("seed").get<uint64_t>();
    auto sample = sample_from_json(j.at("sample"));
    if (!sample.ok()) return sample.error();
    t.sample = std::move(*sample);
    t.agent_count = j.at("agent_count").get<int>();
    for (const auto& round : j.at("rounds")) {
      std::vector<AgentResponse> cells;
      for (const auto& cell : round) {
        auto r = agent_response_from_json(cell);
        if (!r.ok()) return r.error();
        cells.push_back(std::move(*r));
      }
      t.rounds.push_back(std::move(cells));
    }
    t.prompts = j.at("prompts").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("transcript: ") + e.what());
  }
  return t;
}

inline nlohmann::json to_json(const BackendSpec& b) {
  return {{"kind", to_string(b.kind)},
          {"model", b.model},
          {"endpoint", b.endpoint},
          {"credentials_env", b.credentials_env},
          {"rate_limit_rps", quantize6(b.rate_limit_rps)},
          {"retry", {{"max_attempts", b.retry.max_attempts}, {"backoff_base_s", quantize6(b.retry.backoff_base_s)}}},
          {"policy",
           {{"p_correct", quantize6(b.policy.p_correct)},
            {"q_adopt", quantize6(b.policy.q_adopt)},
            {"stubbornness", quantize6(b.policy.stubbornness)},
            {"seed", b.policy.seed}}},
          {"replay_source", b.replay_source}};
}

inline Result<BackendSpec> backend_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "backend: not an object");
  BackendSpec b;
  try {
    auto kind = backend_kind_from_string(j.value("kind", "scripted"));
    if (!kind.ok()) return kind.error();
    b.kind = *kind;
    b.model = j.value("model", std::string("scripted"));
    b.endpoint = j.value("endpoint", std::string());
    b.credentials_env = j.value("credentials_env", std::string());
    b.rate_limit_rps = j.value("rate_limit_rps", 0.0);
    if (j.contains("retry")) {
      b.retry.max_attempts = j["retry"].value("max_attempts", 4);
      b.retry.backoff_base_s = j["retry"].value("backoff_base_s", 0.5);
    }
    if (j.contains("policy")) {
      b.policy.p_correct = j["policy"].value("p_correct", 1.0);
      b.policy.q_adopt = j["policy"].value("q_adopt", 0.0);
      b.policy.stubbornness = j["policy"].value("stubbornness", 0.0);
      b.policy.seed = j["policy"].value("seed", uint64_t(0));
    }
    b.replay_source = j.value("replay_source", std::string());
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("backend: ") + e.what());
  }
  return b;
}

inline nlohmann::json to_json(const Scenario& s) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : s.agents) agents.push_back(to_json(a));
  nlohmann::json j{{"schema_version", kSchemaVersion},
                   {"id", s.id},
                   {"description", s.description},
                   {"rounds", s.rounds},
                   {"decoding",
                    {{"temperature", quantize6(s.decoding.temperature)},
                     {"max_output_tokens", s.decoding.max_output_tokens}}},
                   {"seed_policy", to_string(s.seed_policy)},
                   {"early_stop", s.early_stop},
                   {"agents", std::move(agents)}};
  if (s.budget_cap) j["budget_cap"] = *s.budget_cap;
  else j["budget_cap"] = nullptr;
  return j;
}

inline Result<Scenario> scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "scenario: not an object");
  Scenario s;
  try {
    s.id = j.value("id", std::string());
    s.description = j.value("description", std::string());
    s.rounds = j.value("rounds", 1);
    if (j.contains("decoding")) {
      s.decoding.temperature = j["decoding"].value("temperature", 0.0);
      s.decoding.max_output_tokens = j["decoding"].value("max_output_tokens", 512);
    }
    auto policy = seed_policy_from_string(j.value("seed_policy", "per_run"));
    if (!policy.ok()) return policy.error();
    s.seed_policy = *policy;
    if (j.contains("budget_cap") && !j["budget_cap"].is_null())
      s.budget_cap = j["budget_cap"].get<int>();
    s.early_stop = j.value("early_stop", false);
    if (!j.contains("agents") || !j["agents"].is_array() || j["agents"].empty())
      return make_error(ErrorKind::config, "scenario: needs a non-empty agents array");
    for (const auto& a : j["agents"]) {
      auto b = backend_spec_from_json(a);
      if (!b.ok()) return b.error();
      s.agents.push_back(std::move(*b));
    }
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("scenario: ") + e.what());
  }
  return s;
}

inline Result<Scenario> load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(ErrorKind::io, "cannot open scenario file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) return make_error(ErrorKind::config, "scenario file is not valid JSON: " + path.string());
  auto s = scenario_from_json(j);
  if (!s.ok()) return s.error();
  if (auto st = validate_scenario(*s); !st.ok()) return st.error();
  return s;
}

// ---------------------------------------------------------------------------
// Run directory: manifest.json + transcripts.jsonl + reports/.
// ---------------------------------------------------------------------------

struct RunTotals {
  size_t samples = 0;
  size_t calls = 0;
  size_t retries = 0;
  size_t failures = 0;  // failed samples (all round-1 cells failed) + failed cells
};

struct RunManifest {
  int schema_version = kSchemaVersion;
  std::string run_id;
  Scenario scenario;
  std::string dataset_digest;
  uint64_t master_seed = 0;
  std::string started_at;
  std::string finished_at;
  RunTotals totals;
  std::string tool_version = kVersion;
  std::string status = "running";  // running | complete
};

inline std::string derive_run_id(const Scenario& scenario, const std::string& dataset_digest,
                                 uint64_t master_seed) {
  std::string key = scenario.id + '\n' + dataset_digest + '\n' + std::to_string(master_seed);
  return sha256_hex(key).substr(0, 16);
}

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"schema_version", m.schema_version},
          {"run_id", m.run_id},
          {"scenario", to_json(m.scenario)},
          {"dataset_digest", m.dataset_digest},
          {"master_seed", m.master_seed},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"totals",
           {{"samples", m.totals.samples},
            {"calls", m.totals.calls},
            {"retries", m.totals.retries},
            {"failures", m.totals.failures}}},
          {"tool_version", m.tool_version},
          {"status", m.status}};
}

inline Result<RunManifest> run_manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) return make_error(ErrorKind::schema, "manifest: not an object");
  RunManifest m;
  try {
    m.schema_version = j.value("schema_version", kSchemaVersion);
    m.run_id = j.value("run_id", std::string());
    auto scenario = scenario_from_json(j.at("scenario"));
    if (!scenario.ok()) return scenario.error();
    m.scenario = std::move(*scenario);
    m.dataset_digest = j.value("dataset_digest", std::string());
    m.master_seed = j.value("master_seed", uint64_t(0));
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    if (j.contains("totals")) {
      m.totals.samples = j["totals"].value("samples", size_t(0));
      m.totals.calls = j["totals"].value("calls", size_t(0));
      m.totals.retries = j["totals"].value("retries", size_t(0));
      m.totals.failures = j["totals"].value("failures", size_t(0));
    }
    m.tool_version = j.value("tool_version", std::string());
    m.status = j.value("status", std::string());
  } catch (const nlohmann::json::exception& e) {
    return make_error(ErrorKind::schema, std::string("manifest: ") + e.what());
  }
  return m;
}

namespace detail {

// Append-only line file with fsync-on-append: a crash loses at most the
// in-flight record.
class AppendFile {
 public:
  AppendFile() = default;
  AppendFile(const AppendFile&) = delete;
  AppendFile& operator=(const AppendFile&) = delete;
  ~AppendFile() { close(); }

  Status open(const std::filesystem::path& path) {
    close();
    file_ = std::fopen(path.string().c_str(), "ab");
    if (!file_) return make_error(ErrorKind::io, "cannot open for append: " + path.string());
    return Status::ok_status();
  }

  Status append_line(std::string_view line) {
    if (!file_) return make_error(ErrorKind::io, "append on closed file");
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() ||
        std::fwrite("\n", 1, 1, file_) != 1)
      return make_error(ErrorKind::io, "write failed (disk full?)");
    if (std::fflush(file_) != 0) return make_error(ErrorKind::io, "flush failed");
    if (::fsync(::fileno(file_)) != 0) return make_error(ErrorKind::io, "fsync failed");
    return Status::ok_status();
  }

  void close() {
    if (file_) {
      std::fclose(file_);
      file_ = nullptr;
    }
  }

 private:
  std::FILE* file_ = nullptr;
};

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& run_dir) {
  return run_dir / "manifest.json";
}
inline std::filesystem::path transcripts_path(const std::filesystem::path& run_dir) {
  return run_dir / "transcripts.jsonl";
}
inline std::filesystem::path reports_dir(const std::filesystem::path& run_dir) {
  return run_dir / "reports";
}

// Single writer per run directory. Opening an existing directory resumes it:
// the original manifest is kept (a run id mismatch is refused — resuming with
// a different scenario/dataset/seed would mix incompatible records), complete
// trailing records are kept, and a torn trailing line is truncated away
// before appending.
class RunWriter {
 public:
  static Result<std::unique_ptr<RunWriter>> open(const std::filesystem::path& run_dir, RunManifest manifest) {
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) return make_error(ErrorKind::io, "cannot create run dir: " + run_dir.string());

    auto writer = std::unique_ptr<RunWriter>(new RunWriter());
    writer->dir_ = run_dir;
    writer->manifest_ = std::move(manifest);

    auto mpath = manifest_path(run_dir);
    if (std::filesystem::exists(mpath)) {
      std::ifstream min(mpath);
      nlohmann::json mj = nlohmann::json::parse(min, nullptr, false);
      if (!mj.is_discarded()) {
        auto existing = run_manifest_from_json(mj);
        if (existing.ok()) {
          if (existing->run_id != writer->manifest_.run_id)
            return make_error(ErrorKind::config,
                              "run dir " + run_dir.string() + " belongs to run " + existing->run_id +
                                  ", refusing to resume as " + writer->manifest_.run_id);
          writer->manifest_.started_at = existing->started_at;  // written once at start
        }
      }
    } else {
      // First open: write the partial manifest before any transcript.
      if (auto st = writer->write_manifest(); !st.ok()) return st.error();
    }

    auto tpath = transcripts_path(run_dir);
    if (std::filesystem::exists(tpath)) {
      if (auto st = writer->scan_existing(tpath); !st.ok()) return st.error();
    }
    if (auto st = writer->file_.open(tpath); !st.ok()) return st.error();
    return writer;
  }

  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  const std::set<std::string>& completed_ids() const { return completed_; }

  bool already_persisted(const std::string& sample_id) const { return completed_.count(sample_id) > 0; }

  // Exact call/failure accounting over everything persisted in this
  // directory, including records committed by earlier (crashed) attempts.
  size_t persisted_calls() const { return persisted_calls_; }
  size_t persisted_failed_cells() const { return persisted_failed_cells_; }

  Status append(const Transcript& t) {
    if (auto st = validate_transcript(t); !st.ok()) return st;
    if (completed_.count(t.sample.id))
      return make_error(ErrorKind::argument, "duplicate sample id in run: " + t.sample.id);
    std::string line = to_json(t).dump();
    if (auto st = file_.append_line(line); !st.ok()) return st;
    completed_.insert(t.sample.id);
    account(t);
    return Status::ok_status();
  }

  Status finalize(RunTotals totals) {
    manifest_.totals = totals;
    manifest_.finished_at = iso8601_utc_now();
    manifest_.status = "complete";
    file_.close();
    return write_manifest();
  }

 private:
  RunWriter() = default;

  void account(const Transcript& t) {
    persisted_calls_ += static_cast<size_t>(t.completed_rounds()) * static_cast<size_t>(t.agent_count);
    for (const auto& round : t.rounds) {
      for (const auto& cell : round) {
        if (!cell.ok) ++persisted_failed_cells_;
      }
    }
  }

  Status scan_existing(const std::filesystem::path& tpath) {
    std::ifstream in(tpath, std::ios::binary);
    if (!in) return make_error(ErrorKind::io, "cannot read existing transcripts: " + tpath.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    size_t keep = 0;
    size_t pos = 0;
    while (pos < content.size()) {
      size_t nl = content.find('\n', pos);
      if (nl == std::string::npos) break;  // torn trailing record: drop it
      std::string_view line(content.data() + pos, nl - pos);
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      bool good = false;
      if (!j.is_discarded()) {
        auto t = transcript_from_json(j);
        if (t.ok() && validate_transcript(*t).ok()) {
          completed_.insert(t->sample.id);
          account(*t);
          good = true;
        }
      }
      if (!good) break;  // first bad record: everything after is suspect
      keep = nl + 1;
      pos = nl + 1;
    }
    if (keep != content.size()) {
      std::error_code ec;
      std::filesystem::resize_file(tpath, keep, ec);
      if (ec) return make_error(ErrorKind::io, "cannot truncate torn transcripts file");
    }
    return Status::ok_status();
  }

  Status write_manifest() {
    auto path = manifest_path(dir_);
    auto tmp = path;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) return make_error(ErrorKind::io, "cannot write manifest: " + path.string());
    out << to_json(manifest_).dump(2) << '\n';
    out.close();
    if (!out) return make_error(ErrorKind::io, "manifest write failed: " + path.string());
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) return make_error(ErrorKind::io, "manifest rename failed: " + path.string());
    return Status::ok_status();
  }

  std::filesystem::path dir_;
  RunManifest manifest_;
  detail::AppendFile file_;
  std::set<std::string> completed_;
  size_t persisted_calls_ = 0;
  size_t persisted_failed_cells_ = 0;
};

struct CorruptionReport {
  size_t line = 0;
  std::string reason;
};

struct LoadedRun {
  RunManifest manifest;
  std::vector<Transcript> transcripts;  // write order
  std::vector<CorruptionReport> corruption;
};

// Streams a run back. Each record is validated against the transcript
// invariants; a corrupt trailing record is reported and skipped, everything
// before it is preserved.
inline Result<LoadedRun> load_run(const std::filesystem::path& run_dir) {
  auto mpath = manifest_path(run_dir);
  std::ifstream min(mpath);
  if (!min) return make_error(ErrorKind::io, "missing manifest: " + mpath.string());
  nlohmann::json mj = nlohmann::json::parse(min, nullptr, false);
  if (mj.is_discarded()) return make_error(ErrorKind::corrupt, "manifest is not valid JSON: " + mpath.string());
  auto manifest = run_manifest_from_json(mj);
  if (!manifest.ok()) return manifest.error();

  LoadedRun run;
  run.manifest = std::move(*manifest);

  auto tpath = transcripts_path(run_dir);
  std::ifstream in(tpath, std::ios::binary);
  if (!in) return run;  // empty run: manifest only
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      run.corruption.push_back({line_no, "invalid JSON"});
      continue;
    }
    auto t = transcript_from_json(j);
    if (!t.ok()) {
      run.corruption.push_back({line_no, t.error().message});
      continue;
    }
    if (auto st = validate_transcript(*t); !st.ok()) {
      run.corruption.push_back({line_no, st.error().message});
      continue;
    }
    run.transcripts.push_back(std::move(*t));
  }
  // A torn final line has no newline; getline still yields it and the JSON
  // parse above reports it.
  return run;
}

// Warning (not an error) when the dataset file changed since the run.
inline std::optional<std::string> dataset_digest_warning(const RunManifest& manifest,
                                                         const std::string& current_digest) {
  if (manifest.dataset_digest.empty() || current_digest.empty()) return std::nullopt;
  if (manifest.dataset_digest == current_digest) return std::nullopt;
  return "dataset digest mismatch: run recorded " + manifest.dataset_digest + ", current file is " +
         current_digest;
}

// ---------------------------------------------------------------------------
// Tabular report files (CSV with a header row).
// ---------------------------------------------------------------------------

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline Status write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return make_error(ErrorKind::io, "cannot write report: " + path.string());
  auto write_row = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_escape(row[i]);
    }
    out << '\n';
  };
  write_row(header);
  for (const auto& row : rows) write_row(row);
  out.close();
  if (!out) return make_error(ErrorKind::io, "report write failed: " + path.string());
  return Status::ok_status();
}

inline Status write_json_report(const std::filesystem::path& path, const nlohmann::json& j) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return make_error(ErrorKind::io, "cannot write report: " + path.string());
  out << j.dump(2) << '\n';
  out.close();
  if (!out) return make_error(ErrorKind::io, "report write failed: " + path.string());
  return Status::ok_status();
}

}  // namespace parley
