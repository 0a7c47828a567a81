#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trajq/agents.hpp"
#include "trajq/config.hpp"
#include "trajq/risk.hpp"

namespace trajq {

/// Fixed 9-significant-digit, locale-independent number formatting.
std::string format_number(double v);

/// Resolves a config's output directory against $TRAJQ_OUTPUT_ROOT (or the cwd).
std::filesystem::path resolve_output_dir(const std::string& output_dir);

// ---------------------------------------------------------------------------
// Three-state counterexample

/// Row order: (s0,a0), (s0,a1), (s1,a0), (s1,a1).
struct CounterexampleTables {
    RiskMeasure measure;
    std::array<double, 4> optimal_beta{};   // risk of Z under the trajectory-optimal policy
    std::array<double, 4> optimal_mean{};
    std::array<double, 4> greedy_beta{};    // risk after one Markov risk-greedy update of that Z
    std::array<double, 4> tie_before_1{};  // two-state tie construction, both copies equal
    std::array<double, 4> tie_after_1{};   // after the first update
    std::array<double, 4> tie_after_2{};   // after the second update on the same tie breaker
    double tie_gap_before = 0.0;
    double tie_gap_after = 0.0;
};

CounterexampleTables compute_counterexample(const RiskMeasure& measure);

/// Reference rows for cvar:0.1.
inline constexpr std::array<double, 4> kReferenceOptimalBeta = {7.9, -15.0, -10.0, -5.0};
inline constexpr std::array<double, 4> kReferenceGreedyBeta = {-15.0, -10.0, -10.0, -5.0};
inline constexpr double kCounterexampleTolerance = 1e-9;

/// Prints the tables. For cvar:0.1 also checks them against the reference
/// rows and the strict tie violation; returns 0 iff everything matches.
/// Other measures are reported without checks and return 0.
int run_counterexample(const RiskMeasure& measure, std::ostream& out);

// ---------------------------------------------------------------------------
// Exact pipeline

struct ExactRow {
    std::string method;
    std::optional<double> root_beta;  // empty when the method did not run
    std::string policy_fingerprint;
    bool converged = false;
    std::size_t sweeps = 0;
    std::string note;  // why the method did not run
};

/// HR policy iteration, brute force, mean value iteration and Markov
/// risk-greedy iteration on the configured environment.
std::vector<ExactRow> compute_exact(const ExperimentConfig& config);

/// Writes exact_summary.csv and the config snapshot into out_dir.
std::vector<ExactRow> run_exact(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    TrainingLog log;
    std::string run_id;
    std::uint64_t seed = 0;
};

/// Trains the configured agent; writes learning_curve.csv, histogram.csv,
/// policy_log.csv, tables.txt and the config snapshot into out_dir.
TrainResult run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct SweepRow {
    std::size_t step = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t n_seeds = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::uint64_t> succeeded;
    std::vector<std::pair<std::uint64_t, std::string>> failed;
};

/// One isolated run per seed in out_dir/seed_<n>, in parallel, then
/// sweep.csv with per-step statistics over the successful seeds.
SweepResult run_sweep(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir, std::size_t max_threads = 0);

/// Per-step mean/min/max of measure_value across runs.
std::vector<SweepRow> aggregate_curves(const std::vector<std::vector<EvalRecord>>& runs);

}  // namespace trajq
