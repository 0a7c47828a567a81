#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trajq/distribution.hpp"
#include "trajq/mdp.hpp"
#include "trajq/risk.hpp"

namespace trajq {

// ---------------------------------------------------------------------------
// Quantile regression loss

/// |tau - 1{u < 0}| * Huber_kappa(u).
double quantile_huber(double u, double tau, double kappa);

/// Derivative of quantile_huber with respect to u (0 at u = 0).
double quantile_huber_grad(double u, double tau, double kappa);

/// Midpoint fraction (2i+1)/2N of the i-th stored quantile.
double quantile_fraction(std::size_t i, std::size_t n);

/**
 * One subgradient step of every stored quantile toward a target set.
 * Quantile i moves by learning_rate times the mean over targets of
 * -d/dtheta quantile_huber(target - theta_i, tau_i, kappa). The entry is
 * re-sorted afterwards. Targets need not be sorted.
 */
void qr_update(std::span<double> entry, std::span<const double> targets, double learning_rate,
               double kappa);

/// As above, with a weighted target distribution.
void qr_update(std::span<double> entry, const ReturnDistribution& target, double learning_rate,
               double kappa);

// ---------------------------------------------------------------------------
// Tables

/// Maps token sequences (windowed histories) to dense ids.
class KeyInterner {
public:
    using Tokens = std::vector<std::uint32_t>;

    std::size_t intern(const Tokens& tokens);
    std::optional<std::size_t> find(const Tokens& tokens) const;
    const Tokens& tokens(std::size_t id) const { return keys_.at(id); }
    std::size_t size() const { return keys_.size(); }

private:
    struct Hash {
        std::size_t operator()(const Tokens& t) const noexcept;
    };
    std::unordered_map<Tokens, std::size_t, Hash> ids_;
    std::vector<Tokens> keys_;
};

/**
 * N equally weighted quantiles per (key id, action). Keys are dense ids;
 * entries for ids never written read as N copies of default_value.
 */
class QuantileTable {
public:
    QuantileTable(std::size_t n_quantiles, std::size_t n_actions, double default_value = 0.0);

    std::size_t n_quantiles() const { return n_; }
    std::size_t n_actions() const { return n_actions_; }
    std::size_t n_keys() const { return n_keys_; }

    std::span<const double> values(std::size_t key, ActionId a) const;
    /// Grows the table to hold key when needed.
    std::span<double> entry(std::size_t key, ActionId a);

    /// "key action v0 v1 ..." per line, one line per stored entry.
    void write(std::ostream& out, const std::function<std::string(std::size_t)>& key_name) const;

    bool operator==(const QuantileTable&) const = default;

private:
    std::size_t n_;
    std::size_t n_actions_;
    double default_value_;
    std::size_t n_keys_ = 0;
    std::vector<double> data_;
    std::vector<double> defaults_;
};

// ---------------------------------------------------------------------------
// Replay

struct Transition {
    std::size_t history_key = 0;
    double prefix_return = 0.0;  // discounted realized rewards up to and including this step
    std::size_t depth = 0;
    StateId state = 0;
    ActionId action = 0;
    double reward = 0.0;
    StateId next_state = 0;
    std::size_t next_history_key = 0;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(const Transition& t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return data_[i]; }

    /// Uniform draws with replacement.
    std::vector<Transition> sample(std::size_t batch, std::mt19937_64& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> data_;
};

// ---------------------------------------------------------------------------
// Agents

inline constexpr std::size_t kFullHistory = std::numeric_limits<std::size_t>::max();

struct AgentConfig {
    std::size_t n_quantiles = 64;
    double learning_rate = 0.05;
    double gamma = 0.99;
    double epsilon_init = 0.25;
    double epsilon_final = 0.001;
    std::size_t epsilon_decay_steps = 100'000;
    std::size_t buffer_size = 300'000;
    std::size_t batch_size = 32;
    std::size_t start_timesteps = 5'000;
    std::size_t target_update_frequency = 500;
    std::size_t history_window = 10;  // kFullHistory keeps every step
    double huber_kappa = 1.0;
    std::size_t k_samples = 128;
    bool stochastic_fractions = false;
    double default_value = 0.0;

    void validate() const;
    /// Linear decay from epsilon_init to epsilon_final.
    double epsilon(std::size_t step) const;
};

enum class AgentKind { MarkovQR, TQL };

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);

/// Scores a quantile array under a risk measure, by midpoint or sampled fractions.
class RiskScorer {
public:
    RiskScorer(const RiskMeasure& beta, std::size_t n_quantiles, std::size_t k_samples, bool stochastic);

    double operator()(std::span<const double> quantiles, std::mt19937_64& rng) const;
    const RiskMeasure& measure() const { return beta_; }

private:
    RiskMeasure beta_;
    std::size_t k_samples_;
    bool stochastic_;
    SampledRiskEvaluator midpoint_;
};

/// Index of the highest-scoring action; ties go to the lowest index.
ActionId best_action(std::span<const double> scores);

/// r + gamma * target(s', a'), a' greedy on the online Markov table at s'.
std::vector<double> qr_target_markov(const Transition& t, const QuantileTable& online,
                                     const QuantileTable& target, const RiskScorer& score,
                                     double gamma, std::mt19937_64& rng);

/**
 * prefix_return + gamma^(t+1) * markov_target(s', a'), a' greedy on the
 * history table at the successor history. With markov_prefix the prefix
 * is the single reward and the exponent is 1.
 */
std::vector<double> qr_target_history(const Transition& t, const QuantileTable& history,
                                      const QuantileTable& markov_target, const RiskScorer& score,
                                      double gamma, bool markov_prefix, std::mt19937_64& rng);

struct EvalRecord {
    std::size_t step = 0;
    double measure_value = 0.0;
    double mean_return = 0.0;
    std::vector<ActionId> actions;  // greedy sequence of the first evaluation episode
};

struct TrainingLog {
    std::vector<EvalRecord> evals;
    std::vector<double> final_returns;
};

/**
 * Tabular quantile agent. MarkovQR learns only the Markov table and acts
 * on it; TQL also learns a history-keyed table, bootstrapped from the
 * Markov target table, and acts on the history table.
 */
class QuantileAgent {
public:
    QuantileAgent(AgentKind kind, const TabularMDP& mdp, const RiskMeasure& beta, AgentConfig config);

    AgentKind kind() const { return kind_; }
    const AgentConfig& config() const { return config_; }

    /// Window of (state, action) pairs before `state`, then `state`.
    KeyInterner::Tokens history_tokens(std::span<const Step> past, StateId state) const;

    /// Greedy risk score per action at the given key; read-only.
    std::vector<double> action_scores(StateId state, std::span<const Step> past, std::mt19937_64& rng) const;

    /// Epsilon-greedy action.
    ActionId act(StateId state, std::span<const Step> past, double epsilon, std::mt19937_64& rng) const;

    /// Gradient step on one batch: Markov table first, then the history table.
    void update(std::span<const Transition> batch, std::mt19937_64& rng);
    void sync_target();

    /// Greedy evaluation episodes; returns the realized discounted returns.
    std::vector<double> evaluate_returns(std::size_t episodes, std::mt19937_64& rng,
                                         std::vector<ActionId>* first_actions = nullptr) const;

    TrainingLog train(std::size_t total_steps, std::size_t eval_every, std::size_t eval_episodes,
                      std::uint64_t seed, const std::function<void(const EvalRecord&)>& on_eval = {});

    const QuantileTable& markov_table() const { return markov_; }
    const QuantileTable& markov_target_table() const { return markov_target_; }
    const QuantileTable& history_table() const { return history_; }
    KeyInterner& interner() { return interner_; }
    const KeyInterner& interner() const { return interner_; }
    const ReplayBuffer& buffer() const { return buffer_; }

    /// Flat text dump of both tables.
    void write_tables(std::ostream& out) const;

private:
    std::size_t intern_history(std::span<const Step> past, StateId state);

    AgentKind kind_;
    const TabularMDP& mdp_;
    RiskMeasure beta_;
    AgentConfig config_;
    RiskScorer scorer_;
    QuantileTable markov_;
    QuantileTable markov_target_;
    QuantileTable history_;
    KeyInterner interner_;
    ReplayBuffer buffer_;
};

}  // namespace trajq
