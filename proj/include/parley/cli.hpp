#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "parley/analysis.hpp"
#include "parley/dataset.hpp"
#include "parley/engine.hpp"
#include "parley/store.hpp"

namespace parley::cli {

// Exit codes: 0 success, 1 validation/scoring failure, 2 configuration
// error, 3 backend/IO failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;

inline int exit_code_for(const Error& e) {
  switch (e.kind) {
    case ErrorKind::config:
    case ErrorKind::argument:
    case ErrorKind::budget:
      return kExitConfig;
    case ErrorKind::schema:
      return kExitValidation;
    default:
      return kExitBackend;
  }
}

inline constexpr std::string_view kTieBreakLabel =
    "earliest_occurrence_run_then_round_order_invalid_never_beats_valid";

// Domains printed in the canonical benchmark order first, then anything else
// alphabetically.
inline std::vector<std::string> domain_print_order(const DatasetManifest& manifest) {
  static const std::vector<std::string> known = {"Clothing", "Footwear", "Jewelry&GA", "Home", "Food"};
  std::vector<std::string> order;
  for (const auto& d : known) {
    if (manifest.domains.count(d)) order.push_back(d);
  }
  for (const auto& [name, _] : manifest.domains) {
    if (std::find(known.begin(), known.end(), name) == known.end()) order.push_back(name);
  }
  return order;
}

inline void print_manifest_table(const DatasetManifest& manifest, std::ostream& out) {
  out << "Domain       #Data  #Attribute  #Value  Attributes\n";
  char line[512];
  for (const auto& name : domain_print_order(manifest)) {
    const DomainStats& d = manifest.domains.at(name);
    std::string attrs;
    for (const auto& [attr, _] : d.attributes) {
      if (!attrs.empty()) attrs += ", ";
      attrs += attr;
    }
    std::snprintf(line, sizeof(line), "%-12s %5zu  %10zu  %6zu  ", name.c_str(), d.samples,
                  d.attributes.size(), d.value_count());
    out << line << attrs << '\n';
  }
  out << "Total        " << manifest.total << '\n';
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateArgs {
  std::filesystem::path dataset;
  std::optional<std::set<std::string>> domains;
  std::optional<size_t> limit;
  bool validate_images = true;
};

inline int cmd_validate(const ValidateArgs& args, std::ostream& out, std::ostream& err) {
  LoadOptions opts;
  opts.domains = args.domains;
  opts.limit = args.limit;
  opts.validate_images = args.validate_images;
  auto loaded = load_dataset(args.dataset, opts);
  if (!loaded.ok()) {
    err << "error: " << loaded.error().describe() << '\n';
    return exit_code_for(loaded.error());
  }
  print_manifest_table(loaded->manifest, out);
  out << "digest: " << loaded->manifest.source_digest << '\n';
  if (!loaded->rejections.empty()) {
    err << loaded->rejections.size() << " record(s) rejected:\n";
    for (const auto& r : loaded->rejections) {
      err << "  line " << r.line << (r.id.empty() ? "" : " (id " + r.id + ")") << ": " << r.reason << '\n';
    }
    return kExitValidation;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Shared helpers for run-style commands.
// ---------------------------------------------------------------------------

struct DatasetSelection {
  std::optional<std::set<std::string>> domains;
  std::optional<size_t> limit;
  bool validate_images = true;
};

inline Result<LoadResult> load_selected(const std::filesystem::path& dataset, const DatasetSelection& sel,
                                        std::ostream& err) {
  LoadOptions opts;
  opts.domains = sel.domains;
  opts.limit = sel.limit;
  opts.validate_images = sel.validate_images;
  auto loaded = load_dataset(dataset, opts);
  if (loaded.ok() && !loaded->rejections.empty()) {
    err << "warning: " << loaded->rejections.size() << " record(s) rejected during load\n";
  }
  return loaded;
}

inline bool scenario_uses_hosted_backends(const Scenario& s) {
  for (const auto& a : s.agents) {
    if (a.kind == BackendKind::http_chat) return true;
  }
  return false;
}

// Paid-API guard: print the call volume and insist on --yes.
inline bool confirm_hosted(const Scenario& scenario, size_t samples, bool yes, std::ostream& err) {
  if (!scenario_uses_hosted_backends(scenario)) return true;
  size_t calls = samples * static_cast<size_t>(scenario.calls_per_sample());
  err << "cost preview: " << samples << " samples x " << scenario.agent_count() << " agents x "
      << scenario.rounds << " rounds = " << calls << " hosted model calls\n";
  if (!yes) {
    err << "refusing to run hosted backends without --yes\n";
    return false;
  }
  return true;
}

// --agents N override: keep the first N slots, or replicate a homogeneous
// slot list out to N.
inline Status override_agents(Scenario& scenario, int agents) {
  if (agents < 1) return make_error(ErrorKind::config, "--agents must be >= 1");
  if (static_cast<size_t>(agents) <= scenario.agents.size()) {
    scenario.agents.resize(static_cast<size_t>(agents));
    return Status::ok_status();
  }
  for (const auto& a : scenario.agents) {
    if (!(a == scenario.agents.front()))
      return make_error(ErrorKind::config,
                        "--agents exceeds configured slots and the scenario mixes backends");
  }
  scenario.agents.assign(static_cast<size_t>(agents), scenario.agents.front());
  return Status::ok_status();
}

inline void print_per_round_accuracy(const std::vector<Transcript>& transcripts, std::ostream& out) {
  if (transcripts.empty()) return;
  int rounds = transcripts[0].completed_rounds();
  for (const auto& t : transcripts) rounds = std::min(rounds, t.completed_rounds());
  for (int round = 1; round <= rounds; ++round) {
    auto report = score_round(transcripts, round);
    if (!report.ok()) return;
    out << "round " << round << " overall accuracy: " << format_pct2(report->overall.accuracy_pct()) << "% ("
        << report->overall.correct << "/" << report->overall.total << ")\n";
  }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunArgs {
  std::filesystem::path scenario_file;
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  std::optional<int> rounds;
  std::optional<int> agents;
  int parallelism = 1;
  uint64_t seed = 0;
  DatasetSelection selection;
  bool yes = false;
  bool resume = true;
  bool quiet = false;
};

inline int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  auto scenario = load_scenario_file(args.scenario_file);
  if (!scenario.ok()) {
    err << "error: " << scenario.error().describe() << '\n';
    return exit_code_for(scenario.error());
  }
  if (args.rounds) scenario->rounds = *args.rounds;
  if (args.agents) {
    if (auto st = override_agents(*scenario, *args.agents); !st.ok()) {
      err << "error: " << st.error().describe() << '\n';
      return exit_code_for(st.error());
    }
  }
  if (auto st = validate_scenario(*scenario); !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }

  auto loaded = load_selected(args.dataset, args.selection, err);
  if (!loaded.ok()) {
    err << "error: " << loaded.error().describe() << '\n';
    return exit_code_for(loaded.error());
  }
  if (!confirm_hosted(*scenario, loaded->samples.size(), args.yes, err)) return kExitConfig;

  BatchOptions options;
  options.parallelism = args.parallelism;
  options.run_seed = args.seed;
  options.out_dir = args.out_dir;
  options.resume = args.resume;
  options.dataset_digest = loaded->manifest.source_digest;
  options.images = std::make_shared<ImageStore>(args.dataset.parent_path());
  if (!args.quiet) {
    options.progress = [&err](std::string_view line) { err << line << '\n'; };
  }

  auto result = run_batch(loaded->samples, *scenario, options);
  if (!result.ok()) {
    err << "error: " << result.error().describe() << '\n';
    return exit_code_for(result.error());
  }

  auto run = load_run(result->handle.dir);
  if (run.ok()) print_per_round_accuracy(run->transcripts, out);
  out << "run " << result->handle.manifest.run_id << " complete: " << result->handle.manifest.totals.samples
      << " samples, " << result->handle.manifest.totals.calls << " calls, "
      << result->handle.manifest.totals.failures << " failures -> " << args.out_dir.string() << '\n';
  return result->failures.empty() ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------------------
// majority
// ---------------------------------------------------------------------------

struct MajorityArgs {
  std::filesystem::path scenario_file;
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  int k = 10;
  uint64_t seed = 0;
  int parallelism = 1;
  DatasetSelection selection;
  bool yes = false;
};

inline std::vector<std::vector<std::string>> accuracy_rows(const AccuracyReport& report) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"overall", "", "", std::to_string(report.overall.correct),
                  std::to_string(report.overall.total), format_pct2(report.overall.accuracy_pct())});
  for (const auto& [domain, tally] : report.by_domain) {
    rows.push_back({"domain", domain, "", std::to_string(tally.correct), std::to_string(tally.total),
                    format_pct2(tally.accuracy_pct())});
  }
  for (const auto& [key, tally] : report.by_attribute) {
    rows.push_back({"attribute", key.first, key.second, std::to_string(tally.correct),
                    std::to_string(tally.total), format_pct2(tally.accuracy_pct())});
  }
  return rows;
}

inline nlohmann::json accuracy_report_json(const AccuracyReport& report) {
  nlohmann::json j;
  j["round"] = report.round;
  if (report.agent) j["agent"] = *report.agent;
  j["overall"] = {{"correct", report.overall.correct},
                  {"total", report.overall.total},
                  {"accuracy_pct", quantize6(report.overall.accuracy_pct())},
                  {"f1_pct", quantize6(report.overall.accuracy_pct())}};
  j["macro_over_attributes_pct"] = quantize6(report.macro_over_attributes_pct());
  auto& domains = j["domains"] = nlohmann::json::object();
  for (const auto& [domain, tally] : report.by_domain) {
    domains[domain] = {{"correct", tally.correct},
                       {"total", tally.total},
                       {"accuracy_pct", quantize6(tally.accuracy_pct())},
                       {"f1_pct", quantize6(tally.accuracy_pct())}};
  }
  auto& attrs = j["attributes"] = nlohmann::json::array();
  for (const auto& [key, tally] : report.by_attribute) {
    attrs.push_back({{"domain", key.first},
                     {"attribute", key.second},
                     {"correct", tally.correct},
                     {"total", tally.total},
                     {"accuracy_pct", quantize6(tally.accuracy_pct())}});
  }
  return j;
}

inline int cmd_majority(const MajorityArgs& args, std::ostream& out, std::ostream& err) {
  if (args.k < 1) {
    err << "error: config: -k must be >= 1\n";
    return kExitConfig;
  }
  auto scenario = load_scenario_file(args.scenario_file);
  if (!scenario.ok()) {
    err << "error: " << scenario.error().describe() << '\n';
    return exit_code_for(scenario.error());
  }
  // The control is k independent single-agent, single-round executions of
  // the scenario's first backend at the debate's call budget.
  Scenario single;
  single.id = scenario->id + "_single";
  single.description = "majority-vote control for " + scenario->id;
  single.agents = {scenario->agents.front()};
  single.rounds = 1;
  single.decoding = scenario->decoding;
  single.seed_policy = SeedPolicy::per_run;

  auto loaded = load_selected(args.dataset, args.selection, err);
  if (!loaded.ok()) {
    err << "error: " << loaded.error().describe() << '\n';
    return exit_code_for(loaded.error());
  }
  Scenario preview = single;
  preview.rounds = args.k;  // cost preview counts all k runs
  if (!confirm_hosted(preview, loaded->samples.size(), args.yes, err)) return kExitConfig;

  BatchOptions options;
  options.parallelism = args.parallelism;
  options.dataset_digest = loaded->manifest.source_digest;
  options.images = std::make_shared<ImageStore>(args.dataset.parent_path());
  auto runs = run_repeated(loaded->samples, single, args.k, args.seed, args.out_dir, options);
  if (!runs.ok()) {
    err << "error: " << runs.error().describe() << '\n';
    return exit_code_for(runs.error());
  }

  std::vector<std::vector<Transcript>> transcripts;
  for (const auto& handle : *runs) {
    auto run = load_run(handle.handle.dir);
    if (!run.ok()) {
      err << "error: " << run.error().describe() << '\n';
      return exit_code_for(run.error());
    }
    transcripts.push_back(std::move(run->transcripts));
  }
  auto report = majority_vote(transcripts);
  if (!report.ok()) {
    err << "error: " << report.error().describe() << '\n';
    return exit_code_for(report.error());
  }

  std::vector<std::string> header = {"level", "domain", "attribute", "correct", "total",
                                     "accuracy_pct_tie_break_" + std::string(kTieBreakLabel)};
  auto csv_path = args.out_dir / "reports" / "majority.csv";
  if (auto st = write_csv(csv_path, header, accuracy_rows(*report)); !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }
  nlohmann::json j = accuracy_report_json(*report);
  j["k"] = args.k;
  j["tie_break"] = std::string(kTieBreakLabel);
  if (auto st = write_json_report(args.out_dir / "reports" / "majority.json", j); !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }
  out << "majority vote over " << args.k << " runs (tie break: " << kTieBreakLabel
      << "): overall " << format_pct2(report->overall.accuracy_pct()) << "% ("
      << report->overall.correct << "/" << report->overall.total << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  std::filesystem::path backend_file;  // JSON holding one backend spec
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  int budget = 10;
  std::optional<std::filesystem::path> grid_file;
  uint64_t seed = 0;
  DatasetSelection selection;
  bool yes = false;
};

inline Result<std::vector<std::pair<int, int>>> load_grid_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(ErrorKind::io, "cannot open grid file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) return make_error(ErrorKind::config, "grid file is not valid JSON");
  const nlohmann::json* cells = &j;
  if (j.is_object()) {
    if (!j.contains("grid")) return make_error(ErrorKind::config, "grid file needs a 'grid' array");
    cells = &j["grid"];
  }
  if (!cells->is_array()) return make_error(ErrorKind::config, "grid must be an array of [agents, rounds]");
  std::vector<std::pair<int, int>> grid;
  for (const auto& cell : *cells) {
    if (!cell.is_array() || cell.size() != 2 || !cell[0].is_number_integer() || !cell[1].is_number_integer())
      return make_error(ErrorKind::config, "grid cells must be [agents, rounds] integer pairs");
    grid.emplace_back(cell[0].get<int>(), cell[1].get<int>());
  }
  if (grid.empty()) return make_error(ErrorKind::config, "grid file holds no cells");
  return grid;
}

inline int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
  std::ifstream in(args.backend_file);
  if (!in) {
    err << "error: io: cannot open backend file: " << args.backend_file.string() << '\n';
    return kExitBackend;
  }
  nlohmann::json bj = nlohmann::json::parse(in, nullptr, false);
  if (bj.is_discarded()) {
    err << "error: config: backend file is not valid JSON\n";
    return kExitConfig;
  }
  auto backend = backend_spec_from_json(bj);
  if (!backend.ok()) {
    err << "error: " << backend.error().describe() << '\n';
    return exit_code_for(backend.error());
  }
  if (auto st = validate_backend_spec(*backend); !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }

  std::vector<std::pair<int, int>> grid = default_ablation_grid();
  if (args.grid_file) {
    auto loaded_grid = load_grid_file(*args.grid_file);
    if (!loaded_grid.ok()) {
      err << "error: " << loaded_grid.error().describe() << '\n';
      return exit_code_for(loaded_grid.error());
    }
    grid = std::move(*loaded_grid);
  }

  auto loaded = load_selected(args.dataset, args.selection, err);
  if (!loaded.ok()) {
    err << "error: " << loaded.error().describe() << '\n';
    return exit_code_for(loaded.error());
  }
  if (backend->kind == BackendKind::http_chat) {
    size_t calls = 0;
    for (auto [a, r] : grid) calls += loaded->samples.size() * static_cast<size_t>(a) * static_cast<size_t>(r);
    err << "cost preview: " << calls << " hosted model calls across " << grid.size() << " grid cells\n";
    if (!args.yes) {
      err << "refusing to run hosted backends without --yes\n";
      return kExitConfig;
    }
  }

  auto images = std::make_shared<ImageStore>(args.dataset.parent_path());
  auto cells = ablation_grid(loaded->samples, *backend, args.budget, grid, args.seed, images);
  if (!cells.ok()) {
    err << "error: " << cells.error().describe() << '\n';
    return exit_code_for(cells.error());
  }

  std::vector<std::string> header = {"agents", "rounds", "calls_per_sample"};
  std::set<std::string> domains;
  for (const auto& cell : *cells) {
    for (const auto& [domain, _] : cell.report.by_domain) domains.insert(domain);
  }
  for (const auto& d : domains) header.push_back(d);
  header.push_back("overall");

  std::vector<std::vector<std::string>> rows;
  for (const auto& cell : *cells) {
    std::vector<std::string> row = {std::to_string(cell.agents), std::to_string(cell.rounds),
                                    std::to_string(cell.calls_per_sample)};
    for (const auto& d : domains) {
      auto it = cell.report.by_domain.find(d);
      row.push_back(it == cell.report.by_domain.end() ? "" : format_pct2(it->second.accuracy_pct()));
    }
    row.push_back(format_pct2(cell.report.overall.accuracy_pct()));
    rows.push_back(std::move(row));
    out << cell.agents << " agents x " << cell.rounds << " rounds (" << cell.calls_per_sample
        << " calls): overall " << format_pct2(cell.report.overall.accuracy_pct()) << "%\n";
  }
  if (auto st = write_csv(args.out_dir / "reports" / "ablation.csv", header, rows); !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& cell : *cells) {
    nlohmann::json cj = accuracy_report_json(cell.report);
    cj["agents"] = cell.agents;
    cj["rounds"] = cell.rounds;
    cj["calls_per_sample"] = cell.calls_per_sample;
    j.push_back(std::move(cj));
  }
  if (auto st = write_json_report(args.out_dir / "reports" / "ablation.json",
                                  {{"budget", args.budget}, {"cells", std::move(j)}});
      !st.ok()) {
    err << "error: " << st.error().describe() << '\n';
    return exit_code_for(st.error());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::filesystem::path> run_dirs;
  std::string emit;  // accuracy | convergence | changes | efficiency | stability | heatmap
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> dataset;  // digest check
  std::vector<std::filesystem::path> initial_dirs;  // explicit stability grouping
  std::vector<std::filesystem::path> debate_dirs;
};

namespace detail {

inline std::filesystem::path report_target(const ReportArgs& args, const std::filesystem::path& run_dir,
                                           const std::string& name) {
  return (args.out_dir ? *args.out_dir : reports_dir(run_dir)) / name;
}

inline Result<LoadedRun> load_checked(const std::filesystem::path& dir, const ReportArgs& args,
                                      std::ostream& err) {
  auto run = load_run(dir);
  if (!run.ok()) return run;
  for (const auto& c : run->corruption) {
    err << "warning: " << dir.string() << " line " << c.line << ": " << c.reason << '\n';
  }
  if (args.dataset) {
    std::ifstream in(*args.dataset, std::ios::binary);
    if (in) {
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (auto warn = dataset_digest_warning(run->manifest, sha256_hex(content))) {
        err << "warning: " << *warn << '\n';
      }
    }
  }
  return run;
}

}  // namespace detail

inline int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
  if (args.run_dirs.empty() && (args.initial_dirs.empty() || args.debate_dirs.empty())) {
    err << "error: config: no run directories given\n";
    return kExitConfig;
  }

  if (args.emit == "accuracy") {
    for (const auto& dir : args.run_dirs) {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) {
        err << "error: " << run.error().describe() << '\n';
        return exit_code_for(run.error());
      }
      std::vector<std::vector<std::string>> rows;
      int rounds = 0;
      for (const auto& t : run->transcripts) rounds = std::max(rounds, t.completed_rounds());
      nlohmann::json jrounds = nlohmann::json::array();
      for (int round = 1; round <= rounds; ++round) {
        auto report = score_round(run->transcripts, round);
        if (!report.ok()) {
          err << "error: " << report.error().describe() << '\n';
          return exit_code_for(report.error());
        }
        for (auto& row : accuracy_rows(*report)) {
          row.insert(row.begin(), std::to_string(round));
          rows.push_back(std::move(row));
        }
        jrounds.push_back(accuracy_report_json(*report));
        out << dir.string() << " round " << round << ": overall "
            << format_pct2(report->overall.accuracy_pct()) << "% (f1 "
            << format_pct2(report->overall.accuracy_pct()) << ", macro-attr "
            << format_pct2(report->macro_over_attributes_pct()) << ")\n";
      }
      std::vector<std::string> header = {"round", "level", "domain", "attribute",
                                         "correct", "total", "accuracy_pct"};
      if (auto st = write_csv(detail::report_target(args, dir, "accuracy.csv"), header, rows); !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
      if (auto st = write_json_report(detail::report_target(args, dir, "accuracy.json"),
                                      {{"rounds", std::move(jrounds)}});
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
    }
    return kExitOk;
  }

  if (args.emit == "convergence") {
    for (const auto& dir : args.run_dirs) {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) {
        err << "error: " << run.error().describe() << '\n';
        return exit_code_for(run.error());
      }
      std::map<ConvergenceKind, size_t> counts;
      std::map<int, size_t> stable_round_histogram;
      for (const auto& t : run->transcripts) {
        auto outcome = classify_convergence(t);
        if (!outcome.ok()) {
          err << "error: " << outcome.error().describe() << '\n';
          return exit_code_for(outcome.error());
        }
        ++counts[outcome->kind];
        if (outcome->stable_round) ++stable_round_histogram[*outcome->stable_round];
      }
      std::vector<std::vector<std::string>> rows;
      for (auto kind : {ConvergenceKind::correct_convergence, ConvergenceKind::incorrect_convergence,
                        ConvergenceKind::no_convergence}) {
        rows.push_back({to_string(kind), std::to_string(counts[kind])});
        out << dir.string() << " " << to_string(kind) << ": " << counts[kind] << '\n';
      }
      if (auto st = write_csv(detail::report_target(args, dir, "convergence.csv"), {"outcome", "count"}, rows);
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
      std::vector<std::vector<std::string>> hist_rows;
      for (const auto& [round, n] : stable_round_histogram) {
        hist_rows.push_back({std::to_string(round), std::to_string(n)});
      }
      if (auto st = write_csv(detail::report_target(args, dir, "convergence_stable_round.csv"),
                              {"stable_from_round", "count"}, hist_rows);
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
    }
    return kExitOk;
  }

  if (args.emit == "changes") {
    for (const auto& dir : args.run_dirs) {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) {
        err << "error: " << run.error().describe() << '\n';
        return exit_code_for(run.error());
      }
      ChangeStats stats = change_stats(run->transcripts);
      std::vector<std::vector<std::string>> rows;
      for (const auto& [key, cell] : stats.by_agent_round) {
        rows.push_back({std::to_string(key.first), std::to_string(key.second),
                        std::to_string(cell.changed_improved), std::to_string(cell.changed_worsened),
                        std::to_string(cell.changed_still_wrong), std::to_string(cell.unchanged),
                        std::to_string(cell.scored())});
      }
      if (auto st = write_csv(detail::report_target(args, dir, "changes.csv"),
                              {"agent", "round", "changed_improved", "changed_worsened",
                               "changed_still_wrong", "unchanged", "scored"},
                              rows);
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
      std::vector<std::vector<std::string>> all_rows;
      for (const auto& [round, n] : stats.all_changed_by_round) {
        all_rows.push_back({std::to_string(round), std::to_string(n)});
        out << dir.string() << " round " << round << ": all agents changed on " << n << " samples\n";
      }
      if (auto st = write_csv(detail::report_target(args, dir, "changes_all_agents.csv"),
                              {"round", "all_agents_changed"}, all_rows);
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
    }
    return kExitOk;
  }

  if (args.emit == "efficiency") {
    for (const auto& dir : args.run_dirs) {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) {
        err << "error: " << run.error().describe() << '\n';
        return exit_code_for(run.error());
      }
      auto r1 = round_summary(run->transcripts, 1);
      auto r2 = round_summary(run->transcripts, 2);
      if (!r1.ok() || !r2.ok()) {
        const Error& e = r1.ok() ? r2.error() : r1.error();
        err << "error: " << e.describe() << '\n';
        return exit_code_for(e);
      }
      EfficiencyRecord rec = efficiency(*r1, *r2);
      std::vector<std::string> header = {"r1_latency_s", "r1_accuracy_pct", "r2_latency_s", "r2_accuracy_pct",
                                         "delta_acc",    "latency_ratio",   "gain_per_second", "init_tokens",
                                         "r2_tokens",    "token_ratio"};
      std::vector<std::vector<std::string>> rows = {{
          format_float6(rec.r1_latency_s),
          format_pct2(rec.r1_accuracy_pct),
          format_float6(rec.r2_latency_s),
          format_pct2(rec.r2_accuracy_pct),
          format_pct2(rec.delta_acc),
          format_float6(rec.latency_ratio),
          rec.gain_per_second ? format_float6(*rec.gain_per_second) : "",
          format_float6(rec.init_tokens),
          format_float6(rec.r2_tokens),
          format_float6(rec.token_ratio),
      }};
      if (auto st = write_csv(detail::report_target(args, dir, "efficiency.csv"), header, rows); !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
      out << dir.string() << " efficiency: dAcc " << format_pct2(rec.delta_acc) << ", lat x"
          << format_float6(rec.latency_ratio) << ", gain/s "
          << (rec.gain_per_second ? format_float6(*rec.gain_per_second) : std::string("n/a")) << '\n';
    }
    return kExitOk;
  }

  if (args.emit == "stability") {
    std::vector<std::filesystem::path> initial = args.initial_dirs;
    std::vector<std::filesystem::path> debate = args.debate_dirs;
    std::vector<double> initial_accs, debate_accs;
    auto final_accuracy = [&](const std::filesystem::path& dir, bool& is_single) -> Result<double> {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) return run.error();
      int rounds = 0;
      for (const auto& t : run->transcripts) rounds = std::max(rounds, t.completed_rounds());
      if (rounds == 0) return make_error(ErrorKind::argument, "run has no transcripts: " + dir.string());
      is_single = run->manifest.scenario.rounds <= 1;
      auto report = score_round(run->transcripts, rounds);
      if (!report.ok()) return report.error();
      return report->overall.accuracy_pct();
    };
    if (initial.empty() && debate.empty()) {
      // Group by scenario rounds: single-round runs are the initial condition.
      for (const auto& dir : args.run_dirs) {
        bool is_single = false;
        auto acc = final_accuracy(dir, is_single);
        if (!acc.ok()) {
          err << "error: " << acc.error().describe() << '\n';
          return exit_code_for(acc.error());
        }
        (is_single ? initial_accs : debate_accs).push_back(*acc);
      }
    } else {
      for (const auto& dir : initial) {
        bool unused = false;
        auto acc = final_accuracy(dir, unused);
        if (!acc.ok()) {
          err << "error: " << acc.error().describe() << '\n';
          return exit_code_for(acc.error());
        }
        initial_accs.push_back(*acc);
      }
      for (const auto& dir : debate) {
        bool unused = false;
        auto acc = final_accuracy(dir, unused);
        if (!acc.ok()) {
          err << "error: " << acc.error().describe() << '\n';
          return exit_code_for(acc.error());
        }
        debate_accs.push_back(*acc);
      }
    }
    auto rec = stability(initial_accs, debate_accs);
    if (!rec.ok()) {
      err << "error: " << rec.error().describe() << '\n';
      return exit_code_for(rec.error());
    }
    std::filesystem::path target_dir = args.out_dir ? *args.out_dir
                                       : !args.run_dirs.empty() ? reports_dir(args.run_dirs.front())
                                                                : reports_dir(args.debate_dirs.front());
    std::vector<std::string> header = {"initial_mean", "initial_sd", "debate_mean", "debate_sd",
                                       "delta_mean",   "delta_sd",   "initial_cv_pct", "debate_cv_pct"};
    std::vector<std::vector<std::string>> rows = {{
        format_pct2(rec->initial_mean), format_pct2(rec->initial_sd), format_pct2(rec->debate_mean),
        format_pct2(rec->debate_sd), format_pct2(rec->delta_mean), format_pct2(rec->delta_sd),
        format_pct2(rec->initial_cv_pct), format_pct2(rec->debate_cv_pct),
    }};
    if (auto st = write_csv(target_dir / "stability.csv", header, rows); !st.ok()) {
      err << "error: " << st.error().describe() << '\n';
      return exit_code_for(st.error());
    }
    out << "stability: initial " << format_pct2(rec->initial_mean) << " +/- " << format_pct2(rec->initial_sd)
        << ", debate " << format_pct2(rec->debate_mean) << " +/- " << format_pct2(rec->debate_sd)
        << ", dMean " << format_pct2(rec->delta_mean) << ", dSD " << format_pct2(rec->delta_sd) << '\n';
    return kExitOk;
  }

  if (args.emit == "heatmap") {
    for (const auto& dir : args.run_dirs) {
      auto run = detail::load_checked(dir, args, err);
      if (!run.ok()) {
        err << "error: " << run.error().describe() << '\n';
        return exit_code_for(run.error());
      }
      auto rows = attribute_round_deltas(run->transcripts);
      if (!rows.ok()) {
        err << "error: " << rows.error().describe() << '\n';
        return exit_code_for(rows.error());
      }
      std::vector<std::vector<std::string>> csv_rows;
      for (const auto& r : *rows) {
        csv_rows.push_back({std::to_string(r.agent), r.domain, r.attribute, std::to_string(r.round),
                            format_pct2(r.accuracy_pct), format_pct2(r.delta_vs_round1)});
      }
      if (auto st = write_csv(detail::report_target(args, dir, "heatmap.csv"),
                              {"agent", "domain", "attribute", "round", "accuracy_pct", "delta_vs_round1"},
                              csv_rows);
          !st.ok()) {
        err << "error: " << st.error().describe() << '\n';
        return exit_code_for(st.error());
      }
      out << dir.string() << ": " << rows->size() << " heatmap rows\n";
    }
    return kExitOk;
  }

  err << "error: config: unknown --emit kind '" << args.emit << "'\n";
  return kExitConfig;
}

}  // namespace parley::cli
