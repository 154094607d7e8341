// parley: multi-round multi-agent debate runner for option-constrained
// product-attribute questions. See README.md for the data and report formats.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "parley/cli.hpp"
#include "parley/version.hpp"

namespace {

std::optional<std::set<std::string>> to_domain_set(const std::vector<std::string>& domains) {
  if (domains.empty()) return std::nullopt;
  return std::set<std::string>(domains.begin(), domains.end());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parley - multi-agent debate runner and analyzer"};
  app.set_version_flag("--version", parley::kVersion);
  app.require_subcommand(1);

  // validate
  auto* validate = app.add_subcommand("validate", "Validate a dataset file and print its manifest");
  parley::cli::ValidateArgs vargs;
  std::vector<std::string> vdomains;
  validate->add_option("dataset", vargs.dataset, "Line-delimited dataset file")->required();
  validate->add_option("--domain", vdomains, "Keep only these domains");
  validate->add_option("--limit", vargs.limit, "Keep at most N samples");
  validate->add_flag("!--no-image-check", vargs.validate_images, "Skip image decode checks");

  // run
  auto* run = app.add_subcommand("run", "Run a debate scenario over a dataset");
  parley::cli::RunArgs rargs;
  std::vector<std::string> rdomains;
  run->add_option("--scenario", rargs.scenario_file, "Scenario JSON file")->required();
  run->add_option("--dataset", rargs.dataset, "Dataset file")->required();
  run->add_option("--out", rargs.out_dir, "Run directory")->required();
  run->add_option("--rounds", rargs.rounds, "Override scenario rounds");
  run->add_option("--agents", rargs.agents, "Override scenario agent count");
  run->add_option("--parallelism", rargs.parallelism, "Concurrent samples")->check(CLI::PositiveNumber);
  run->add_option("--seed", rargs.seed, "Master seed");
  run->add_option("--limit", rargs.selection.limit, "Keep at most N samples");
  run->add_option("--domain", rdomains, "Keep only these domains");
  run->add_flag("--yes", rargs.yes, "Confirm hosted-backend cost");
  run->add_flag("!--no-resume", rargs.resume, "Do not resume an existing run directory");
  run->add_flag("--quiet", rargs.quiet, "Suppress per-sample progress lines");

  // majority
  auto* majority = app.add_subcommand("majority", "Majority-vote control at matched budget");
  parley::cli::MajorityArgs margs;
  std::vector<std::string> mdomains;
  majority->add_option("--scenario", margs.scenario_file, "Scenario JSON file")->required();
  majority->add_option("--dataset", margs.dataset, "Dataset file")->required();
  majority->add_option("--out", margs.out_dir, "Output directory")->required();
  majority->add_option("-k,--runs", margs.k, "Number of independent runs");
  majority->add_option("--seed", margs.seed, "Master seed");
  majority->add_option("--parallelism", margs.parallelism, "Concurrent samples")->check(CLI::PositiveNumber);
  majority->add_option("--limit", margs.selection.limit, "Keep at most N samples");
  majority->add_option("--domain", mdomains, "Keep only these domains");
  majority->add_flag("--yes", margs.yes, "Confirm hosted-backend cost");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Agents x rounds ablation at a fixed call budget");
  parley::cli::AblateArgs aargs;
  std::vector<std::string> adomains;
  ablate->add_option("--backend", aargs.backend_file, "Backend spec JSON file")->required();
  ablate->add_option("--dataset", aargs.dataset, "Dataset file")->required();
  ablate->add_option("--out", aargs.out_dir, "Output directory")->required();
  ablate->add_option("--budget", aargs.budget, "Total calls per sample budget");
  ablate->add_option("--grid", aargs.grid_file, "Grid JSON file ([[agents, rounds], ...])");
  ablate->add_option("--seed", aargs.seed, "Master seed");
  ablate->add_option("--limit", aargs.selection.limit, "Keep at most N samples");
  ablate->add_option("--domain", adomains, "Keep only these domains");
  ablate->add_flag("--yes", aargs.yes, "Confirm hosted-backend cost");

  // report
  auto* report = app.add_subcommand("report", "Emit reports and plot data from run directories");
  parley::cli::ReportArgs pargs;
  report->add_option("runs", pargs.run_dirs, "Run directories");
  report->add_option("--emit", pargs.emit,
                     "accuracy|convergence|changes|efficiency|stability|heatmap")
      ->required();
  report->add_option("--out", pargs.out_dir, "Write reports here instead of <run>/reports");
  report->add_option("--dataset", pargs.dataset, "Dataset file for digest verification");
  report->add_option("--initial", pargs.initial_dirs, "Stability: single-round run directories");
  report->add_option("--debate", pargs.debate_dirs, "Stability: debate run directories");

  CLI11_PARSE(app, argc, argv);

  vargs.domains = to_domain_set(vdomains);
  rargs.selection.domains = to_domain_set(rdomains);
  margs.selection.domains = to_domain_set(mdomains);
  aargs.selection.domains = to_domain_set(adomains);

  if (validate->parsed()) return parley::cli::cmd_validate(vargs, std::cout, std::cerr);
  if (run->parsed()) return parley::cli::cmd_run(rargs, std::cout, std::cerr);
  if (majority->parsed()) return parley::cli::cmd_majority(margs, std::cout, std::cerr);
  if (ablate->parsed()) return parley::cli::cmd_ablate(aargs, std::cout, std::cerr);
  if (report->parsed()) return parley::cli::cmd_report(pargs, std::cout, std::cerr);
  return parley::cli::kExitConfig;
}
