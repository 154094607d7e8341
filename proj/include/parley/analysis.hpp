#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parley/engine.hpp"
#include "parley/protocol.hpp"
#include "parley/text.hpp"

namespace parley {

// ---------------------------------------------------------------------------
// Accuracy tables.
// ---------------------------------------------------------------------------

struct Tally {
  size_t correct = 0;
  size_t total = 0;

  double accuracy_pct() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }

  bool operator==(const Tally&) const = default;
};

// Per-attribute -> per-domain -> overall accuracy for one round. Every
// (sample, agent) prediction counts once; failed or unparseable cells score
// incorrect. Under one prediction per sample with a single gold label,
// micro-precision == micro-recall == accuracy, so the "F1" column in the
// emitted tables carries the same number; a macro average over attributes is
// reported separately.
struct AccuracyReport {
  int round = 1;
  std::optional<int> agent;
  Tally overall;
  std::map<std::string, Tally> by_domain;
  std::map<std::pair<std::string, std::string>, Tally> by_attribute;  // (domain, attribute)

  double macro_over_attributes_pct() const {
    if (by_attribute.empty()) return 0.0;
    double sum = 0;
    for (const auto& [_, tally] : by_attribute) sum += tally.accuracy_pct();
    return sum / static_cast<double>(by_attribute.size());
  }

  bool operator==(const AccuracyReport&) const = default;
};

inline bool answer_is_correct(const AgentResponse& cell, const Sample& sample) {
  return cell.ok && cell.parsed_option && canonicalize(*cell.parsed_option) == canonicalize(sample.gold);
}

inline Result<AccuracyReport> score_round(std::span<const Transcript> transcripts, int round,
                                          std::optional<int> agent = std::nullopt) {
  if (transcripts.empty()) return make_error(ErrorKind::argument, "score_round: empty transcript set");
  if (round < 1) return make_error(ErrorKind::argument, "score_round: round must be >= 1");
  AccuracyReport report;
  report.round = round;
  report.agent = agent;
  for (const auto& t : transcripts) {
    if (round > t.completed_rounds())
      return make_error(ErrorKind::argument,
                        "score_round: round " + std::to_string(round) + " missing in sample '" + t.sample.id + "'");
    if (agent && (*agent < 0 || *agent >= t.agent_count))
      return make_error(ErrorKind::argument, "score_round: agent index out of range");
    const auto& cells = t.rounds[static_cast<size_t>(round - 1)];
    for (const auto& cell : cells) {
      if (agent && cell.agent_index != *agent) continue;
      bool correct = answer_is_correct(cell, t.sample);
      auto bump = [&](Tally& tally) {
        ++tally.total;
        if (correct) ++tally.correct;
      };
      bump(report.overall);
      bump(report.by_domain[t.sample.domain]);
      bump(report.by_attribute[{t.sample.domain, t.sample.attribute}]);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Convergence classification.
// ---------------------------------------------------------------------------

enum class ConvergenceKind { correct_convergence, incorrect_convergence, no_convergence };

inline const char* to_string(ConvergenceKind k) {
  switch (k) {
    case ConvergenceKind::correct_convergence: return "correct_convergence";
    case ConvergenceKind::incorrect_convergence: return "incorrect_convergence";
    case ConvergenceKind::no_convergence: return "no_convergence";
  }
  return "no_convergence";
}

struct ConvergenceOutcome {
  ConvergenceKind kind = ConvergenceKind::no_convergence;
  std::optional<int> stable_round;  // first round of the agreement window

  bool operator==(const ConvergenceOutcome&) const = default;
};

// An agreement is stable when every agent gives the same valid option in
// every round from some round r* through the final round. The outcome is
// correct/incorrect by that option against gold; anything else (including
// final-round disagreement, or agreement only on unparseable answers) is
// no_convergence.
inline Result<ConvergenceOutcome> classify_convergence(const Transcript& t) {
  if (t.agent_count < 2)
    return make_error(ErrorKind::argument, "classify_convergence: needs >= 2 agents");
  if (t.completed_rounds() < 2)
    return make_error(ErrorKind::argument, "classify_convergence: needs >= 2 rounds");

  const int final_round = t.completed_rounds();
  auto cell_answer = [&](int agent, int round) -> std::optional<std::string> {
    const AgentResponse& cell = t.response(agent, round);
    if (!cell.ok || !cell.parsed_option) return std::nullopt;
    return canonicalize(*cell.parsed_option);
  };

  auto consensus_of_round = [&](int round) -> std::optional<std::string> {
    auto first = cell_answer(0, round);
    if (!first) return std::nullopt;
    for (int a = 1; a < t.agent_count; ++a) {
      auto other = cell_answer(a, round);
      if (!other || *other != *first) return std::nullopt;
    }
    return first;
  };

  auto final_consensus = consensus_of_round(final_round);
  if (!final_consensus) return ConvergenceOutcome{ConvergenceKind::no_convergence, std::nullopt};

  int stable_from = final_round;
  for (int round = final_round - 1; round >= 1; --round) {
    auto consensus = consensus_of_round(round);
    if (!consensus || *consensus != *final_consensus) break;
    stable_from = round;
  }

  bool correct = *final_consensus == canonicalize(t.sample.gold);
  return ConvergenceOutcome{correct ? ConvergenceKind::correct_convergence : ConvergenceKind::incorrect_convergence,
                            stable_from};
}

// ---------------------------------------------------------------------------
// Per-round change statistics.
// ---------------------------------------------------------------------------

struct ChangeCell {
  size_t changed_improved = 0;    // wrong -> right
  size_t changed_worsened = 0;    // right -> wrong
  size_t changed_still_wrong = 0; // wrong -> different wrong
  size_t unchanged = 0;

  size_t scored() const { return changed_improved + changed_worsened + changed_still_wrong + unchanged; }

  bool operator==(const ChangeCell&) const = default;
};

struct ChangeStats {
  // (agent, round >= 2) -> partition of the samples scored for that cell.
  std::map<std::pair<int, int>, ChangeCell> by_agent_round;
  // round -> number of samples in which every agent changed its answer.
  std::map<int, size_t> all_changed_by_round;

  bool operator==(const ChangeStats&) const = default;
};

// An answer "changes" when the canonical parsed option differs from the
// previous round's, with INVALID (unparseable or failed) treated as a
// distinct wrong value: INVALID -> INVALID is unchanged, INVALID <-> option
// is a change.
inline ChangeStats change_stats(std::span<const Transcript> transcripts) {
  ChangeStats stats;
  for (const auto& t : transcripts) {
    std::string gold = canonicalize(t.sample.gold);
    for (int round = 2; round <= t.completed_rounds(); ++round) {
      bool everyone_changed = t.agent_count > 0;
      for (int a = 0; a < t.agent_count; ++a) {
        const AgentResponse& prev = t.response(a, round - 1);
        const AgentResponse& cur = t.response(a, round);
        auto value = [&](const AgentResponse& cell) -> std::optional<std::string> {
          if (!cell.ok || !cell.parsed_option) return std::nullopt;
          return canonicalize(*cell.parsed_option);
        };
        auto prev_v = value(prev);
        auto cur_v = value(cur);
        bool changed = prev_v != cur_v;
        bool prev_correct = prev_v && *prev_v == gold;
        bool cur_correct = cur_v && *cur_v == gold;
        ChangeCell& cell = stats.by_agent_round[{a, round}];
        if (!changed) {
          ++cell.unchanged;
          everyone_changed = false;
        } else if (!prev_correct && cur_correct) {
          ++cell.changed_improved;
        } else if (prev_correct && !cur_correct) {
          ++cell.changed_worsened;
        } else {
          ++cell.changed_still_wrong;
        }
      }
      if (everyone_changed) ++stats.all_changed_by_round[round];
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Majority vote control.
// ---------------------------------------------------------------------------

// Modal final answer over k independent single-agent runs covering identical
// sample sets. Ties break to the option whose first occurrence — scanning
// runs in order and each run's rounds in order — is earliest; an unparseable
// "answer" never wins a tie against a valid option.
inline Result<AccuracyReport> majority_vote(std::span<const std::vector<Transcript>> runs) {
  if (runs.empty()) return make_error(ErrorKind::argument, "majority_vote: needs >= 1 run");
  const auto& reference = runs[0];
  if (reference.empty()) return make_error(ErrorKind::argument, "majority_vote: empty runs");

  // Index every run by sample id and verify identical coverage.
  std::vector<std::map<std::string, const Transcript*>> by_id(runs.size());
  for (size_t k = 0; k < runs.size(); ++k) {
    for (const auto& t : runs[k]) {
      if (t.agent_count != 1)
        return make_error(ErrorKind::argument, "majority_vote: runs must be single-agent");
      by_id[k][t.sample.id] = &t;
    }
    if (by_id[k].size() != by_id[0].size())
      return make_error(ErrorKind::argument, "majority_vote: runs cover different sample sets");
    for (const auto& [id, _] : by_id[0]) {
      if (!by_id[k].count(id))
        return make_error(ErrorKind::argument, "majority_vote: sample '" + id + "' missing from run " + std::to_string(k));
    }
  }

  AccuracyReport report;
  report.round = reference[0].completed_rounds();
  for (const auto& t0 : reference) {
    const Sample& sample = t0.sample;
    // Final answer of each run + first-occurrence rank of every value.
    std::map<std::string, size_t> first_seen;  // canonical value -> occurrence rank
    size_t rank = 0;
    std::vector<std::optional<std::string>> votes;
    for (size_t k = 0; k < runs.size(); ++k) {
      const Transcript& t = *by_id[k].at(sample.id);
      for (int round = 1; round <= t.completed_rounds(); ++round) {
        const AgentResponse& cell = t.response(0, round);
        if (cell.ok && cell.parsed_option) {
          first_seen.emplace(canonicalize(*cell.parsed_option), rank);
        }
        ++rank;
      }
      const AgentResponse& final_cell = t.response(0, t.completed_rounds());
      if (final_cell.ok && final_cell.parsed_option) votes.push_back(canonicalize(*final_cell.parsed_option));
      else votes.push_back(std::nullopt);
    }

    std::map<std::string, size_t> counts;
    size_t invalid_votes = 0;
    for (const auto& v : votes) {
      if (v) ++counts[*v];
      else ++invalid_votes;
    }

    std::optional<std::string> winner;
    size_t best = 0;
    for (const auto& [value, n] : counts) {
      if (n > best) {
        best = n;
        winner = value;
      } else if (n == best && winner) {
        size_t incumbent = first_seen.count(*winner) ? first_seen[*winner] : SIZE_MAX;
        size_t challenger = first_seen.count(value) ? first_seen[value] : SIZE_MAX;
        if (challenger < incumbent) winner = value;
      }
    }
    // A valid option always beats INVALID on ties; INVALID wins only a
    // strict majority over every valid option.
    if (invalid_votes > best) winner.reset();

    bool correct = winner && *winner == canonicalize(sample.gold);
    auto bump = [&](Tally& tally) {
      ++tally.total;
      if (correct) ++tally.correct;
    };
    bump(report.overall);
    bump(report.by_domain[sample.domain]);
    bump(report.by_attribute[{sample.domain, sample.attribute}]);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Agents x rounds ablation under a fixed call budget.
// ---------------------------------------------------------------------------

struct AblationCell {
  int agents = 0;
  int rounds = 0;
  size_t calls_per_sample = 0;
  AccuracyReport report;  // final-round scores for this cell
};

// The published grid: every (agents, rounds) split of a 10-call budget.
inline std::vector<std::pair<int, int>> default_ablation_grid() {
  return {{5, 2}, {4, 2}, {3, 2}, {2, 2}, {2, 3}, {2, 4}, {2, 5}};
}

// One in-memory debate run per grid cell, all cells seeded identically, each
// scored at its final round. A cell that would exceed the budget is an error
// before anything runs.
inline Result<std::vector<AblationCell>> ablation_grid(std::span<const Sample> samples,
                                                       const BackendSpec& backend, int budget,
                                                       std::span<const std::pair<int, int>> grid,
                                                       uint64_t run_seed,
                                                       std::shared_ptr<ImageStore> images = nullptr,
                                                       std::shared_ptr<const ReplaySource> replay = nullptr) {
  if (samples.empty()) return make_error(ErrorKind::argument, "ablation_grid: no samples");
  if (grid.empty()) return make_error(ErrorKind::argument, "ablation_grid: empty grid");
  for (auto [agents, rounds] : grid) {
    if (agents < 1 || rounds < 1)
      return make_error(ErrorKind::argument, "ablation_grid: agents and rounds must be >= 1");
    if (agents * rounds > budget)
      return make_error(ErrorKind::budget, "ablation cell (" + std::to_string(agents) + " agents, " +
                                               std::to_string(rounds) + " rounds) exceeds budget " +
                                               std::to_string(budget));
  }

  std::vector<AblationCell> cells;
  for (auto [agents, rounds] : grid) {
    Scenario scenario;
    scenario.id = "ablation_a" + std::to_string(agents) + "_r" + std::to_string(rounds);
    scenario.agents.assign(static_cast<size_t>(agents), backend);
    scenario.rounds = rounds;
    scenario.budget_cap = budget;

    auto engine = DebateEngine::create(scenario, images, replay);
    if (!engine.ok()) return engine.error();

    std::vector<Transcript> transcripts;
    transcripts.reserve(samples.size());
    for (const auto& sample : samples) {
      auto t = (*engine)->run_debate(sample, run_seed);
      if (!t.ok()) return t.error();
      size_t calls = static_cast<size_t>(t->completed_rounds()) * static_cast<size_t>(t->agent_count);
      if (calls != static_cast<size_t>(agents) * static_cast<size_t>(rounds))
        return make_error(ErrorKind::budget, "ablation cell call-count mismatch for sample '" + sample.id + "'");
      transcripts.push_back(std::move(*t));
    }
    auto report = score_round(transcripts, rounds);
    if (!report.ok()) return report.error();
    AblationCell cell;
    cell.agents = agents;
    cell.rounds = rounds;
    cell.calls_per_sample = static_cast<size_t>(agents) * static_cast<size_t>(rounds);
    cell.report = std::move(*report);
    cells.push_back(std::move(cell));
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Efficiency (gain per added second).
// ---------------------------------------------------------------------------

struct RoundSummary {
  double latency_s = 0.0;   // mean per-sample wall time through this round
  double accuracy_pct = 0.0;
  double tokens = 0.0;      // mean output tokens of this round's responses
};

struct EfficiencyRecord {
  double r1_latency_s = 0.0;
  double r1_accuracy_pct = 0.0;
  double r2_latency_s = 0.0;
  double r2_accuracy_pct = 0.0;
  double delta_acc = 0.0;
  double latency_ratio = 0.0;
  std::optional<double> gain_per_second;  // absent when delta-t <= 0
  double init_tokens = 0.0;
  double r2_tokens = 0.0;
  double token_ratio = 0.0;
};

inline EfficiencyRecord efficiency(const RoundSummary& r1, const RoundSummary& r2) {
  EfficiencyRecord rec;
  rec.r1_latency_s = r1.latency_s;
  rec.r1_accuracy_pct = r1.accuracy_pct;
  rec.r2_latency_s = r2.latency_s;
  rec.r2_accuracy_pct = r2.accuracy_pct;
  rec.delta_acc = r2.accuracy_pct - r1.accuracy_pct;
  rec.latency_ratio = r1.latency_s > 0 ? r2.latency_s / r1.latency_s : 0.0;
  double dt = r2.latency_s - r1.latency_s;
  if (dt > 0) rec.gain_per_second = rec.delta_acc / dt;
  rec.init_tokens = r1.tokens;
  rec.r2_tokens = r2.tokens;
  rec.token_ratio = r1.tokens > 0 ? r2.tokens / r1.tokens : 0.0;
  return rec;
}

// Per-sample latency of a round-limited debate: rounds run sequentially, and
// a round is as slow as its slowest agent.
inline double sample_latency_through_round(const Transcript& t, int round) {
  double total = 0;
  for (int r = 1; r <= round && r <= t.completed_rounds(); ++r) {
    double slowest = 0;
    for (const auto& cell : t.rounds[static_cast<size_t>(r - 1)]) slowest = std::max(slowest, cell.latency_s);
    total += slowest;
  }
  return total;
}

inline Result<RoundSummary> round_summary(std::span<const Transcript> transcripts, int round) {
  auto report = score_round(transcripts, round);
  if (!report.ok()) return report.error();
  RoundSummary summary;
  summary.accuracy_pct = report->overall.accuracy_pct();
  double latency_sum = 0;
  double token_sum = 0;
  size_t token_cells = 0;
  for (const auto& t : transcripts) {
    latency_sum += sample_latency_through_round(t, round);
    for (const auto& cell : t.rounds[static_cast<size_t>(round - 1)]) {
      token_sum += static_cast<double>(cell.tokens_out);
      ++token_cells;
    }
  }
  summary.latency_s = transcripts.empty() ? 0.0 : latency_sum / static_cast<double>(transcripts.size());
  summary.tokens = token_cells == 0 ? 0.0 : token_sum / static_cast<double>(token_cells);
  return summary;
}

// ---------------------------------------------------------------------------
// Run-to-run stability.
// ---------------------------------------------------------------------------

struct StabilityRecord {
  double initial_mean = 0.0;
  double initial_sd = 0.0;
  double debate_mean = 0.0;
  double debate_sd = 0.0;
  double delta_mean = 0.0;  // debate - initial
  double delta_sd = 0.0;    // debate SD - initial SD
  double initial_cv_pct = 0.0;  // SD / mean, as a percentage
  double debate_cv_pct = 0.0;
};

inline double mean_of(std::span<const double> xs) {
  double sum = 0;
  for (double x : xs) sum += x;
  return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

// Unbiased (n-1) sample standard deviation.
inline double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs);
  double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline Result<StabilityRecord> stability(std::span<const double> initial_accuracies,
                                         std::span<const double> debate_accuracies) {
  if (initial_accuracies.size() < 2 || debate_accuracies.size() < 2)
    return make_error(ErrorKind::argument, "stability: needs >= 2 repetitions per condition");
  StabilityRecord rec;
  rec.initial_mean = mean_of(initial_accuracies);
  rec.initial_sd = sample_sd(initial_accuracies);
  rec.debate_mean = mean_of(debate_accuracies);
  rec.debate_sd = sample_sd(debate_accuracies);
  rec.delta_mean = rec.debate_mean - rec.initial_mean;
  rec.delta_sd = rec.debate_sd - rec.initial_sd;
  if (rec.initial_mean > 0) rec.initial_cv_pct = 100.0 * rec.initial_sd / rec.initial_mean;
  if (rec.debate_mean > 0) rec.debate_cv_pct = 100.0 * rec.debate_sd / rec.debate_mean;
  return rec;
}

// ---------------------------------------------------------------------------
// Plot-ready long-format rows.
// ---------------------------------------------------------------------------

struct HeatmapRow {
  int agent = 0;
  std::string domain;
  std::string attribute;
  int round = 1;
  double accuracy_pct = 0.0;
  double delta_vs_round1 = 0.0;
};

// (attribute, round, delta) rows per agent, for attribute-level heatmaps.
inline Result<std::vector<HeatmapRow>> attribute_round_deltas(std::span<const Transcript> transcripts) {
  if (transcripts.empty()) return make_error(ErrorKind::argument, "attribute_round_deltas: empty transcript set");
  int rounds = transcripts[0].completed_rounds();
  int agents = transcripts[0].agent_count;
  for (const auto& t : transcripts) {
    rounds = std::min(rounds, t.completed_rounds());
    if (t.agent_count != agents)
      return make_error(ErrorKind::argument, "attribute_round_deltas: mixed agent counts");
  }
  std::vector<HeatmapRow> rows;
  for (int agent = 0; agent < agents; ++agent) {
    std::map<std::pair<std::string, std::string>, double> round1;
    for (int round = 1; round <= rounds; ++round) {
      auto report = score_round(transcripts, round, agent);
      if (!report.ok()) return report.error();
      for (const auto& [key, tally] : report->by_attribute) {
        double pct = tally.accuracy_pct();
        if (round == 1) round1[key] = pct;
        rows.push_back({agent, key.first, key.second, round, pct, pct - round1[key]});
      }
    }
  }
  return rows;
}

}  // namespace parley
