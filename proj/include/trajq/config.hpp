#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajq/agents.hpp"
#include "trajq/mdp.hpp"
#include "trajq/operators.hpp"
#include "trajq/risk.hpp"

namespace trajq {

/// Every problem found while parsing or validating a config, one per line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class EnvName { ThreeState, Grid, MountainCar, Random };

std::string to_string(EnvName name);

struct EnvConfig {
    EnvName name = EnvName::ThreeState;
    std::optional<double> gamma;          // environment default when unset
    std::optional<std::size_t> horizon;

    GridLayout grid;
    std::string layout_file;  // resolved path, empty when rows are inline or default

    MountainCarParams mountain_car;

    std::size_t random_states = 6;
    std::size_t random_actions = 2;
    std::size_t random_reward_atoms = 3;
    std::optional<std::uint64_t> random_seed;  // falls back to the run seed
};

struct TrainConfig {
    std::size_t total_steps = 200'000;
    std::size_t eval_every = 20'000;
    std::size_t eval_episodes = 1'000;
};

struct ExactConfig {
    std::size_t max_iters = 1'000;
    std::size_t max_nodes = kDefaultNodeBudget;
    std::size_t max_candidates = kDefaultNodeBudget;
    std::size_t markov_sweeps = 500;
    std::size_t max_atoms = 0;  // 0 keeps Markov iterates exact
    TieRule tie_rule = TieRule::LowestIndex;
};

struct ExperimentConfig {
    EnvConfig env;
    RiskMeasure measure = RiskMeasure::cvar(0.1);
    AgentKind agent_kind = AgentKind::TQL;
    AgentConfig agent;
    bool agent_gamma_set = false;  // otherwise agent.gamma follows the environment
    TrainConfig train;
    ExactConfig exact;
    std::uint64_t seed = 0;
    std::string output_dir;
    std::string run_id = "run";

    std::string source_text;  // verbatim input, for snapshots

    /// Canonical key = value rendering of every resolved field.
    std::string canonical_text() const;
    /// FNV-1a 64 of canonical_text(), as 16 hex digits.
    std::string hash() const;
};

/// Parses flat dotted `key = value` lines; `#` starts a comment. Relative
/// layout files resolve against base_dir. Throws ConfigError listing every
/// problem with its line number.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});

ExperimentConfig load_config(const std::filesystem::path& path);

/// Builds the configured environment.
TabularMDP build_mdp(const ExperimentConfig& config);

/// Agent settings with gamma taken from the environment unless set explicitly.
AgentConfig resolved_agent_config(const ExperimentConfig& config, const TabularMDP& mdp);

}  // namespace trajq
