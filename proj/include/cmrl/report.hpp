#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmrl/config.hpp"
#include "cmrl/eval.hpp"

namespace cmrl::report {

// One finished (or partial) run directory: config.cfg plus metrics.csv.
struct RunSummary {
  std::filesystem::path dir;
  cli::ExperimentConfig config;
  eval::LearningCurve curve;
};

RunSummary load_run(const std::filesystem::path& dir);

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation, 0 for a single run
};

MeanStd mean_std(const std::vector<double>& xs);

// Runs sharing every resolved setting except the seed.
struct ModelRow {
  std::string model;  // agent/scheme/divergence label
  double lr = 0.0;
  double divergence_lambda = 0.0;
  std::vector<std::filesystem::path> runs;
  MeanStd auc;
  MeanStd final_success;  // percent
  MeanStd visited_goals;  // at the final checkpoint
  // First update where the seed-averaged curve reaches each threshold.
  std::vector<std::optional<std::int64_t>> updates_until;
};

struct Report {
  std::string env_fingerprint;
  std::vector<double> thresholds;  // fractions in (0, 1]
  std::vector<ModelRow> rows;
};

// Success thresholds reported for an environment: {25,50,75,95,100}% for
// Monty-Hall and {10,20,40,100}% otherwise.
std::vector<double> default_thresholds(envs::EnvKind kind);

// Throws if no run is given, a run lacks metrics, or the runs disagree on
// the environment.
Report build_report(const std::vector<RunSummary>& runs);
Report build_report(const std::vector<std::filesystem::path>& run_dirs);

std::string report_csv(const Report& r);
std::string report_text(const Report& r);

// Rows ranked by mean final success; ties go to the lower learning rate.
std::vector<ModelRow> rank_rows(const Report& r);
std::string sweep_summary_csv(const Report& r);

}  // namespace cmrl::report
