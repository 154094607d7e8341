#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "parley/agents.hpp"
#include "parley/protocol.hpp"
#include "parley/rng.hpp"
#include "parley/store.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Prompt construction from previous-round state. Shared between execution and
// transcript verification so there is exactly one embedding rule.
// ---------------------------------------------------------------------------

// The text a later round sees for one previous cell. Failed or empty cells
// are embedded as an explicit marker so the round structure stays intact.
inline std::string embedded_response_text(const AgentResponse& cell) {
  if (!cell.ok || cell.raw_text.empty()) return std::string(kNoResponseMarker);
  return cell.raw_text;
}

// Builds the context for (agent_index, round). `previous` is the full list of
// round-(r-1) cells, or empty for round 1.
inline PromptContext build_prompt_context(const Sample& sample, std::span<const AgentResponse> previous,
                                          int agent_index) {
  PromptContext ctx = prompt_context_for(sample);
  if (previous.empty()) return ctx;
  ctx.agent_num = agent_index + 1;
  ctx.previous_response_self = embedded_response_text(previous[static_cast<size_t>(agent_index)]);
  for (size_t other = 0; other < previous.size(); ++other) {
    if (static_cast<int>(other) == agent_index) continue;
    ctx.previous_responses_others.push_back(embedded_response_text(previous[other]));
  }
  return ctx;
}

// Re-renders the prompt for (agent_index, round) from transcript state alone.
// A correct engine run satisfies: reconstruct == stored prompt, byte for byte.
inline Result<std::string> reconstruct_prompt(const Transcript& t, int agent_index, int round) {
  if (round < 1 || round > t.completed_rounds())
    return make_error(ErrorKind::argument, "reconstruct_prompt: round out of range");
  if (round == 1) return render_initial_prompt(build_prompt_context(t.sample, {}, agent_index));
  const auto& previous = t.rounds[static_cast<size_t>(round - 2)];
  return render_debate_prompt(build_prompt_context(t.sample, previous, agent_index));
}

// ---------------------------------------------------------------------------
// Debate engine.
// ---------------------------------------------------------------------------

struct EngineStats {
  std::atomic<size_t> calls{0};
  std::atomic<size_t> retries{0};
  std::atomic<size_t> cell_failures{0};
  std::atomic<size_t> sample_failures{0};
};

class DebateEngine {
 public:
  // `replay` supplies recorded turns for replay backends; loaded from each
  // spec's replay_source when not injected.
  static Result<std::unique_ptr<DebateEngine>> create(Scenario scenario,
                                                      std::shared_ptr<ImageStore> images = nullptr,
                                                      std::shared_ptr<const ReplaySource> replay = nullptr) {
    if (auto st = validate_scenario(scenario); !st.ok()) return st.error();
    auto engine = std::unique_ptr<DebateEngine>(new DebateEngine());
    engine->scenario_ = std::move(scenario);
    engine->images_ = std::move(images);
    for (const auto& spec : engine->scenario_.agents) {
      std::shared_ptr<const ReplaySource> source;
      if (spec.kind == BackendKind::replay) {
        source = replay ? replay : engine->load_replay_source(spec.replay_source);
        if (!source)
          return make_error(ErrorKind::config, "cannot load replay source: " + spec.replay_source);
      }
      engine->backends_.push_back(std::make_unique<Backend>(spec, source));
      engine->needs_images_ |= spec.kind == BackendKind::http_chat;
    }
    return engine;
  }

  const Scenario& scenario() const { return scenario_; }
  EngineStats& stats() { return stats_; }

  // Runs the full protocol for one sample: an initial inference round, then
  // debate rounds in which every agent sees the verbatim previous-round
  // outputs (its own and the other agents'). Agents within a round never see
  // each other's current-round answers. Backend failures mark the cell failed
  // and the debate continues; a round 1 with zero surviving cells fails the
  // sample.
  Result<Transcript> run_debate(const Sample& sample, uint64_t run_seed) {
    Transcript t;
    t.scenario_id = scenario_.id;
    t.seed = run_seed;
    t.sample = sample;
    t.agent_count = scenario_.agent_count();

    std::shared_ptr<const ImagePayload> image;
    std::string image_error;
    if (needs_images_) {
      if (!images_) {
        image_error = "no image store configured";
      } else {
        auto payload = images_->get(resolve_image_location(sample));
        if (payload.ok()) image = *payload;
        else image_error = payload.error().describe();
      }
    }

    const int agents = scenario_.agent_count();
    size_t calls_this_sample = 0;
    for (int round = 1; round <= scenario_.rounds; ++round) {
      // Contexts are fully built from round - 1 before any round-r call.
      std::vector<TurnContext> contexts(static_cast<size_t>(agents));
      std::span<const AgentResponse> previous =
          round == 1 ? std::span<const AgentResponse>{} : std::span<const AgentResponse>(t.rounds[round - 2]);
      for (int a = 0; a < agents; ++a) {
        TurnContext& ctx = contexts[static_cast<size_t>(a)];
        ctx.sample = &sample;
        ctx.agent_index = a;
        ctx.round = round;
        ctx.image = image;
        ctx.decoding = scenario_.decoding;
        ctx.cell_seed = derive_cell_seed(run_seed, sample.id, a, round);
        PromptContext pctx = build_prompt_context(sample, previous, a);
        auto rendered = round == 1 ? render_initial_prompt(pctx) : render_debate_prompt(pctx);
        if (!rendered.ok()) return rendered.error();
        ctx.prompt = std::move(*rendered);
        if (round > 1) {
          ctx.prev_self = previous[static_cast<size_t>(a)].parsed_option;
          for (int other = 0; other < agents; ++other) {
            if (other == a) continue;
            ctx.prev_others.push_back(previous[static_cast<size_t>(other)].parsed_option);
          }
        }
      }

      std::vector<AgentResponse> cells(static_cast<size_t>(agents));
      std::vector<std::string> prompts(static_cast<size_t>(agents));
      for (int a = 0; a < agents; ++a) {
        prompts[static_cast<size_t>(a)] = contexts[static_cast<size_t>(a)].prompt;
        if (scenario_.budget_cap && calls_this_sample >= static_cast<size_t>(*scenario_.budget_cap)) {
          return make_error(ErrorKind::budget, "per-sample call budget " +
                                                   std::to_string(*scenario_.budget_cap) +
                                                   " exhausted at sample '" + sample.id + "'");
        }
        ++calls_this_sample;
        stats_.calls.fetch_add(1, std::memory_order_relaxed);
        cells[static_cast<size_t>(a)] =
            execute_cell(*backends_[static_cast<size_t>(a)], contexts[static_cast<size_t>(a)], image_error);
      }

      t.rounds.push_back(std::move(cells));
      t.prompts.push_back(std::move(prompts));

      if (round == 1) {
        bool any_ok = false;
        for (const auto& c : t.rounds[0]) any_ok |= c.ok;
        if (!any_ok) {
          stats_.sample_failures.fetch_add(1, std::memory_order_relaxed);
          return make_error(ErrorKind::network,
                            "all round-1 cells failed for sample '" + sample.id + "': " +
                                t.rounds[0][0].error);
        }
      }

      if (scenario_.early_stop && round >= 2 && round < scenario_.rounds) {
        if (count_changes(t, round) == 0) break;  // consensus plateau: stop early
      }
    }
    return t;
  }

 private:
  DebateEngine() = default;

  static std::string resolve_image_location(const Sample& sample) { return sample.image; }

  AgentResponse execute_cell(Backend& backend, const TurnContext& ctx, const std::string& image_error) {
    // An unresolvable image fails every cell of an http backend up front.
    if (backend.spec().kind == BackendKind::http_chat && !image_error.empty()) {
      stats_.cell_failures.fetch_add(1, std::memory_order_relaxed);
      AgentResponse failed;
      failed.agent_index = ctx.agent_index;
      failed.round = ctx.round;
      failed.ok = false;
      failed.error = image_error;
      return failed;
    }
    int attempts = 1;
    auto result = backend.respond(ctx, &attempts);
    if (attempts > 1) stats_.retries.fetch_add(static_cast<size_t>(attempts - 1), std::memory_order_relaxed);
    if (result.ok()) return std::move(*result);
    stats_.cell_failures.fetch_add(1, std::memory_order_relaxed);
    AgentResponse failed;
    failed.agent_index = ctx.agent_index;
    failed.round = ctx.round;
    failed.ok = false;
    failed.error = result.error().describe();
    return failed;
  }

  static size_t count_changes(const Transcript& t, int round) {
    size_t changes = 0;
    const auto& cur = t.rounds[static_cast<size_t>(round - 1)];
    const auto& prev = t.rounds[static_cast<size_t>(round - 2)];
    for (size_t a = 0; a < cur.size(); ++a) {
      if (cur[a].parsed_option != prev[a].parsed_option) ++changes;
    }
    return changes;
  }

  std::shared_ptr<const ReplaySource> load_replay_source(const std::string& location) {
    std::filesystem::path path(location);
    if (std::filesystem::is_directory(path)) {
      auto run = load_run(path);
      if (!run.ok()) return nullptr;
      auto source = std::make_shared<ReplaySource>();
      for (const auto& t : run->transcripts) source->add(t);
      return source;
    }
    // Bare transcripts.jsonl file.
    std::ifstream in(path, std::ios::binary);
    if (!in) return nullptr;
    auto source = std::make_shared<ReplaySource>();
    std::string line;
    while (std::getline(in, line)) {
      if (trim_view(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;
      auto t = transcript_from_json(j);
      if (t.ok()) source->add(*t);
    }
    return source;
  }

  Scenario scenario_;
  std::shared_ptr<ImageStore> images_;
  std::vector<std::unique_ptr<Backend>> backends_;
  bool needs_images_ = false;
  EngineStats stats_;
};

// ---------------------------------------------------------------------------
// Batch execution.
// ---------------------------------------------------------------------------

struct RunHandle {
  std::filesystem::path dir;
  RunManifest manifest;
};

struct BatchOptions {
  int parallelism = 1;
  uint64_t run_seed = 0;
  std::filesystem::path out_dir;
  bool resume = true;
  std::string dataset_digest;
  std::shared_ptr<ImageStore> images;
  std::shared_ptr<const ReplaySource> replay;  // optional injection for replay backends
  std::function<void(std::string_view)> progress;  // one line per completed sample
};

struct SampleFailure {
  std::string sample_id;
  std::string reason;
};

struct BatchResult {
  RunHandle handle;
  std::vector<SampleFailure> failures;
};

// Runs `samples` under bounded parallelism. Per-sample work is independent;
// transcripts are derived purely from (sample, scenario, run_seed), so worker
// scheduling cannot change their bytes. Commits happen strictly in input
// order, which makes the persisted file deterministic and makes resumption a
// prefix property: a crashed run re-executes nothing that was committed.
inline Result<BatchResult> run_batch(std::span<const Sample> samples, const Scenario& scenario,
                                     const BatchOptions& options) {
  if (options.parallelism < 1) return make_error(ErrorKind::argument, "parallelism must be >= 1");
  if (options.out_dir.empty()) return make_error(ErrorKind::argument, "run_batch needs an output directory");

  auto engine = DebateEngine::create(scenario, options.images, options.replay);
  if (!engine.ok()) return engine.error();

  RunManifest manifest;
  manifest.run_id = derive_run_id(scenario, options.dataset_digest, options.run_seed);
  manifest.scenario = scenario;
  manifest.dataset_digest = options.dataset_digest;
  manifest.master_seed = options.run_seed;
  manifest.started_at = iso8601_utc_now();

  auto writer = RunWriter::open(options.out_dir, manifest);
  if (!writer.ok()) return writer.error();

  // Work list: everything not already committed by a previous attempt.
  std::vector<size_t> work;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!(*writer)->already_persisted(samples[i].id)) work.push_back(i);
  }
  size_t resumed = samples.size() - work.size();

  struct Slot {
    bool done = false;
    std::optional<Transcript> transcript;
    std::string failure;
  };
  std::vector<Slot> slots(work.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<size_t> next_work{0};

  int workers = static_cast<int>(std::min<size_t>(static_cast<size_t>(options.parallelism),
                                                  std::max<size_t>(work.size(), 1)));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        size_t k = next_work.fetch_add(1);
        if (k >= work.size()) return;
        Slot result;
        auto transcript = (*engine)->run_debate(samples[work[k]], options.run_seed);
        if (transcript.ok()) result.transcript = std::move(*transcript);
        else result.failure = transcript.error().describe();
        result.done = true;
        {
          std::lock_guard lock(mu);
          slots[k] = std::move(result);
        }
        cv.notify_all();
      }
    });
  }

  BatchResult out;
  Status persist_status = Status::ok_status();
  {
    std::unique_lock lock(mu);
    for (size_t k = 0; k < work.size(); ++k) {
      cv.wait(lock, [&] { return slots[k].done; });
      if (!persist_status.ok()) continue;  // drain remaining work, keep first error
      Slot& slot = slots[k];
      if (slot.transcript) {
        persist_status = (*writer)->append(*slot.transcript);
        if (persist_status.ok() && options.progress) {
          options.progress("sample " + slot.transcript->sample.id + " done (" +
                           std::to_string((*writer)->completed_ids().size()) + "/" +
                           std::to_string(samples.size()) + ")");
        }
      } else {
        out.failures.push_back({samples[work[k]].id, slot.failure});
        if (options.progress)
          options.progress("sample " + samples[work[k]].id + " FAILED: " + slot.failure);
      }
      slot.transcript.reset();
    }
  }
  for (auto& th : pool) th.join();
  if (!persist_status.ok()) return persist_status.error();  // checkpoint: committed prefix stands

  // calls = sum over persisted transcripts of agents x completed rounds, so
  // the identity survives resumption; retries are this attempt's count.
  RunTotals totals;
  totals.samples = (*writer)->completed_ids().size();
  totals.calls = (*writer)->persisted_calls();
  totals.retries = (*engine)->stats().retries.load();
  totals.failures = (*writer)->persisted_failed_cells() + out.failures.size();
  if (auto st = (*writer)->finalize(totals); !st.ok()) return st.error();

  (void)resumed;
  out.handle.dir = options.out_dir;
  out.handle.manifest = (*writer)->manifest();
  return out;
}

// Independent repetitions for stability analysis. per_run seed policy derives
// a distinct seed per repetition; pinned reuses the master seed, making the
// repetitions bit-identical for deterministic backends.
inline Result<std::vector<BatchResult>> run_repeated(std::span<const Sample> samples, const Scenario& scenario,
                                                     int repetitions, uint64_t master_seed,
                                                     const std::filesystem::path& base_dir,
                                                     BatchOptions options = {}) {
  if (repetitions < 1) return make_error(ErrorKind::argument, "repetitions must be >= 1");
  std::vector<BatchResult> results;
  for (int rep = 0; rep < repetitions; ++rep) {
    BatchOptions rep_options = options;
    rep_options.run_seed = scenario.seed_policy == SeedPolicy::pinned
                               ? master_seed
                               : derive_run_seed(master_seed, static_cast<uint64_t>(rep));
    rep_options.out_dir = base_dir / ("rep_" + std::to_string(rep));
    auto result = run_batch(samples, scenario, rep_options);
    if (!result.ok()) return result.error();
    results.push_back(std::move(*result));
  }
  return results;
}

}  // namespace parley
