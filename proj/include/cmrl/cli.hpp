#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmrl/config.hpp"
#include "cmrl/eval.hpp"
#include "cmrl/report.hpp"

namespace cmrl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Bad invocation or configuration; maps to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // "key=value", applied in order
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> n;
  bool verbose = false;
};

// Config file (defaults when absent) with overrides and --seed applied.
ExperimentConfig load_experiment(const CommonOptions& opts);

// Trains one run into --out (default: output.dir) and writes config.cfg
// there. With `resume`, continues from that checkpoint directory.
std::filesystem::path cmd_train(const CommonOptions& opts,
                                const std::optional<std::filesystem::path>& resume = {});

// One run per (lr, divergence lambda, seed) under
// <out>/lr=<v>_div=<v>/seed=<s>, then sweep_summary.csv and report.csv in <out>.
std::vector<std::filesystem::path> cmd_sweep(const CommonOptions& opts);

// A policy source is a checkpoint directory or "scripted:<explore>[+<exploit>]";
// scripted sources take their environment from --config and overrides.
struct EvalOutcome {
  std::string source;
  std::int64_t update = 0;  // checkpoint update, 0 for scripted agents
  std::uint64_t seed = 0;
  eval::EvalResult result;
};

// n defaults to 1280. The seed defaults to the one the trainer used for the
// checkpoint's metrics row. Writes a one-row CSV to --out when given.
EvalOutcome cmd_eval(const std::string& source, const CommonOptions& opts);
std::string eval_csv(const EvalOutcome& e);

// Visitation maps of one or two sources on the same tasks (n defaults to
// 40000). Writes heatmap_a.csv, heatmap_b.csv and percent_change.csv
// (a relative to b) into --out (default "heatmap").
struct HeatmapOutcome {
  eval::VisitationMap a;
  std::optional<eval::VisitationMap> b;
};
HeatmapOutcome cmd_heatmap(const std::string& source_a, const std::optional<std::string>& source_b,
                           const CommonOptions& opts);

// Consolidated table over run directories; writes report.csv and report.txt
// into --out when given.
report::Report cmd_report(const std::vector<std::filesystem::path>& run_dirs, const CommonOptions& opts);

// Full command line entry point. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmrl::cli
