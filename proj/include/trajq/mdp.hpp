#pragma once

#include <cstddef>
#include <functional>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajq/distribution.hpp"

namespace trajq {

using StateId = std::size_t;
using ActionId = std::size_t;

/**
 * Finite episodic MDP with deterministic transitions and stochastic
 * rewards attached to the departing (state, action) pair.
 *
 * Terminal states loop to themselves with reward dirac(0). Episodes end on
 * reaching a terminal state or after `horizon` actions.
 */
struct TabularMDP {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<StateId> transition;          // [s * n_actions + a]
    std::vector<ReturnDistribution> reward;   // [s * n_actions + a]
    std::vector<char> terminal;               // [s]
    double gamma = 1.0;
    std::size_t horizon = 1;
    std::vector<std::pair<StateId, double>> initial;  // start-state support

    std::vector<std::string> state_names;   // optional
    std::vector<std::string> action_names;  // optional

    TabularMDP() = default;
    TabularMDP(std::size_t states, std::size_t actions, double discount, std::size_t episode_cap);

    StateId next(StateId s, ActionId a) const { return transition[s * n_actions + a]; }
    const ReturnDistribution& reward_dist(StateId s, ActionId a) const {
        return reward[s * n_actions + a];
    }
    bool is_terminal(StateId s) const { return terminal[s] != 0; }

    void set(StateId s, ActionId a, StateId to, ReturnDistribution r);
    /// Makes s absorbing with zero reward.
    void make_terminal(StateId s);

    std::string state_name(StateId s) const;
    std::string action_name(ActionId a) const;

    /// Throws std::invalid_argument describing the first broken invariant.
    void validate() const;
};

/// Two decision states plus a terminal; every action advances s0 -> s1 -> end.
TabularMDP three_state_mdp();

struct GridLayout {
    std::vector<std::string> rows = {"S...", "Y...", "YB..", "YBBG"};
    double bonus_prob = 0.75;
    double bonus_value = 100.0;
    double blue_value = 20.0;
    double orange_penalty = -100.0;
    double step_penalty = -2.0;
    bool four_actions = false;

    /// Rectangular, alphabet {S, G, Y, B, O, .}, exactly one S and one G.
    void validate() const;
};

/// One row per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> load_grid_rows(const std::filesystem::path& path);

/**
 * Grid world with collect-once bonus cells.
 *
 * State index = cell * 2^k + mask, where cells are numbered row-major and
 * bit i of mask marks the i-th Y/B cell (row-major) as collected. Actions
 * are {right, down}, or {up, down, left, right} when four_actions is set.
 */
TabularMDP risky_grid(const GridLayout& layout, double gamma, std::size_t horizon);

struct GridCell {
    std::size_t row = 0;
    std::size_t col = 0;
    unsigned mask = 0;
};
GridCell decode_grid_state(const GridLayout& layout, StateId s);

struct MountainCarParams {
    double risk_scale = 0.5;  // c in [0, 1]
    std::size_t position_bins = 64;
    std::size_t velocity_bins = 64;
    std::vector<double> action_values = {-1.0, -0.5, 0.0, 0.5, 1.0};
    std::size_t horizon = 200;
    double gamma = 0.99;
};

/// {-c(2-|a|) w.p. 1/(4-3|a|), 0 otherwise}.
ReturnDistribution mountain_car_penalty(double c, double a);

/**
 * Discretized continuous mountain car. Dynamics are evaluated at bin
 * centers and re-binned. Reaching x >= 0.45 pays +100 and ends the
 * episode; each step pays -0.1 a^2 plus the risky penalty. The terminal
 * state is the last index.
 */
TabularMDP risky_mountain_car(const MountainCarParams& params);

TabularMDP random_mdp(std::mt19937_64& rng, std::size_t n_states, std::size_t n_actions,
                      std::size_t max_reward_atoms, double gamma, std::size_t horizon);

struct Step {
    StateId state = 0;
    ActionId action = 0;
    double reward = 0.0;
};

struct Trajectory {
    StateId start = 0;
    std::vector<Step> steps;
    StateId final_state = 0;
    double episode_return = 0.0;
};

/// Chooses an action from the steps taken so far and the current state.
using RolloutPolicy = std::function<ActionId(StateId start, std::span<const Step> past, StateId state)>;

StateId sample_initial(const TabularMDP& mdp, std::mt19937_64& rng);

/// Simulates one episode; throws std::out_of_range if the policy returns an invalid action.
Trajectory rollout(const TabularMDP& mdp, const RolloutPolicy& policy, std::mt19937_64& rng);

}  // namespace trajq
