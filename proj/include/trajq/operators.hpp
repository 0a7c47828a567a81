#pragma once

#include <compare>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajq/distribution.hpp"
#include "trajq/mdp.hpp"
#include "trajq/risk.hpp"

namespace trajq {

/// Thrown when a history tree or policy enumeration would exceed its size limit.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Keys and policies

struct StateAction {
    StateId state = 0;
    ActionId action = 0;
    auto operator<=>(const StateAction&) const = default;
};
using MarkovValueMap = KeyedDistributionMap<StateAction>;

struct MarkovPolicy {
    std::vector<ActionId> action;  // per state
    ActionId operator()(StateId s) const { return s < action.size() ? action[s] : 0; }
    friend bool operator==(const MarkovPolicy&, const MarkovPolicy&) = default;
};

/// Start state plus the actions taken; states follow from the deterministic dynamics.
struct HistoryKey {
    StateId start = 0;
    std::vector<ActionId> actions;

    std::size_t depth() const { return actions.size(); }
    HistoryKey extended(ActionId a) const;
    std::string to_string() const;
    auto operator<=>(const HistoryKey&) const = default;
};

struct HistoryActionKey {
    HistoryKey history;
    ActionId action = 0;
    auto operator<=>(const HistoryActionKey&) const = default;
};
using HistoryValueMap = KeyedDistributionMap<HistoryActionKey>;

/// Deterministic history policy. Histories missing from the table use the
/// Markov fallback (or action 0 when the fallback is empty).
struct HistoryPolicy {
    std::map<HistoryKey, ActionId> table;
    MarkovPolicy fallback;

    ActionId operator()(const HistoryKey& h, StateId state) const;

    static HistoryPolicy from_markov(MarkovPolicy pi);
};

/// State reached by replaying h from its start state.
StateId history_state(const TabularMDP& mdp, const HistoryKey& h);

enum class TieRule { LowestIndex, Alternating };

/// Relative tolerance under which two risk values count as tied.
inline constexpr double kTieTolerance = 1e-12;

bool risk_tied(double a, double b);

/**
 * Picks an argmax among scores. Alternating cycles through the tied set by
 * call count per context (a state or history id), so consecutive calls for
 * the same context on the same tie return different actions.
 */
class TieBreaker {
public:
    explicit TieBreaker(TieRule rule = TieRule::LowestIndex) : rule_(rule) {}

    ActionId choose(std::span<const double> scores, std::size_t context = 0);
    TieRule rule() const { return rule_; }

private:
    TieRule rule_;
    std::map<std::size_t, std::size_t> calls_;
};

// ---------------------------------------------------------------------------
// Distribution plumbing

/// Distribution of R + gamma * tail.
ReturnDistribution bootstrap(const ReturnDistribution& reward, double gamma,
                             const ReturnDistribution& tail);

/// Distribution of prefix + gamma^depth * suffix.
ReturnDistribution attach(const ReturnDistribution& prefix, double gamma, std::size_t depth,
                          const ReturnDistribution& suffix);

double discount_power(double gamma, std::size_t t);

// ---------------------------------------------------------------------------
// Markov operators

struct MarkovEvaluation {
    MarkovValueMap z;
    double d1_error = 0.0;  // accumulated pruning error, 0 when nothing was pruned
};

/// Backward induction over the remaining-steps index up to the horizon.
/// max_atoms == 0 disables pruning.
MarkovEvaluation markov_policy_eval(const TabularMDP& mdp, const MarkovPolicy& pi,
                                    std::size_t max_atoms = 0);

/// Z = dirac(0) on every (s, a).
MarkovValueMap zero_markov_values(const TabularMDP& mdp);

struct MeanIterationResult {
    MarkovValueMap z;
    MarkovPolicy policy;
    std::vector<double> mean_change;  // L-infinity change of means per sweep
    double d1_error = 0.0;
};

MeanIterationResult mean_value_iteration(const TabularMDP& mdp, std::size_t sweeps,
                                         const MarkovValueMap* initial = nullptr,
                                         std::size_t max_atoms = 0);

/// Greedy Markov action per state under beta, ties by the breaker. One
/// breaker call per non-terminal state, in state order.
MarkovPolicy risk_greedy_policy(const TabularMDP& mdp, const MarkovValueMap& z,
                                const RiskMeasure& beta, TieBreaker& ties);

/// One synchronous application of the Markov risk-greedy optimality operator.
MarkovValueMap risk_bellman_step(const TabularMDP& mdp, const MarkovValueMap& z,
                                 const RiskMeasure& beta, TieBreaker& ties,
                                 std::size_t max_atoms = 0);

struct RiskIterationResult {
    MarkovValueMap z;
    MarkovPolicy policy;
    std::size_t sweeps = 0;
    bool converged = false;
    bool oscillating = false;
    std::vector<double> beta_change;  // L-infinity change of risk values per sweep
};

/// Repeats risk_bellman_step until the risk table and greedy policy are
/// stable, a previously seen greedy policy recurs after a change, or
/// max_sweeps is reached.
RiskIterationResult risk_bellman_iteration(const TabularMDP& mdp, const RiskMeasure& beta,
                                           std::size_t max_sweeps, TieRule tie_rule = TieRule::LowestIndex,
                                           std::size_t max_atoms = 0);

std::map<StateAction, double> risk_table(const MarkovValueMap& z, const RiskMeasure& beta);

// ---------------------------------------------------------------------------
// History trees

inline constexpr std::size_t kDefaultNodeBudget = 1'000'000;
inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct HistoryNode {
    std::size_t parent = kNoNode;
    ActionId via = 0;  // action taken at the parent
    StateId start = 0;
    StateId state = 0;
    std::size_t depth = 0;
    ReturnDistribution prefix;           // discounted reward sum before this node
    std::vector<std::size_t> children;  // per action; kNoNode when no decision follows
};

/**
 * Every decision history (non-terminal state, depth < horizon) reachable
 * from a set of roots, with exact prefix distributions. Node ids are
 * assigned in breadth-first order, so parents precede children.
 */
class HistoryTree {
public:
    HistoryTree() = default;

    /// Rooted at the support of the initial distribution.
    static HistoryTree from_initial(const TabularMDP& mdp, std::size_t max_nodes = kDefaultNodeBudget);
    /// Rooted at every non-terminal state; holds the depth-0 keys {s}.
    static HistoryTree forest(const TabularMDP& mdp, std::size_t max_nodes = kDefaultNodeBudget);

    const std::vector<HistoryNode>& nodes() const { return nodes_; }
    const HistoryNode& node(std::size_t i) const { return nodes_[i]; }
    std::size_t size() const { return nodes_.size(); }
    std::span<const std::size_t> roots() const { return roots_; }
    std::size_t n_actions() const { return n_actions_; }

    HistoryKey key(std::size_t i) const;
    /// kNoNode when the history is not a decision node of this tree.
    std::size_t find(const HistoryKey& h) const;
    std::size_t root_of(StateId s) const;

private:
    HistoryTree(const TabularMDP& mdp, std::vector<StateId> starts, std::size_t max_nodes);

    std::vector<HistoryNode> nodes_;
    std::vector<std::size_t> roots_;
    std::map<StateId, std::size_t> root_index_;
    std::size_t n_actions_ = 0;
};

// ---------------------------------------------------------------------------
// History-relied evaluation and control

struct HistoryEvaluation {
    HistoryTree tree;
    std::vector<ActionId> policy;                      // per node
    std::vector<ReturnDistribution> suffix;            // per node, discounted from the node on
    std::vector<std::vector<ReturnDistribution>> z;    // [node][action], whole-trajectory return

    HistoryValueMap to_map() const;
    /// Risk of Z(h, pi(h)) per node.
    std::vector<double> policy_beta(const RiskMeasure& beta) const;
};

/// Exact whole-trajectory return distributions Z^pi(h, a) on the tree.
HistoryEvaluation hr_evaluate(const TabularMDP& mdp, HistoryTree tree, const HistoryPolicy& pi);

HistoryValueMap hr_policy_eval(const TabularMDP& mdp, const HistoryPolicy& pi,
                               std::size_t max_nodes = kDefaultNodeBudget);

/// Argmax of beta over actions per history. With an incumbent, a tied
/// incumbent action is kept.
HistoryPolicy hr_greedy_improve(const HistoryValueMap& zh, const RiskMeasure& beta, TieBreaker& ties,
                                const HistoryPolicy* incumbent = nullptr);

struct HrIterationResult {
    HistoryPolicy policy;
    HistoryEvaluation evaluation;
    std::map<HistoryKey, double> beta_table;  // risk of Z(h, pi(h))
    std::vector<double> root_beta;            // objective after each evaluation
    std::vector<std::vector<double>> node_beta_trace;  // per evaluation, per node
    std::size_t iterations = 0;
    bool converged = false;
};

HrIterationResult hr_policy_iteration(const TabularMDP& mdp, const RiskMeasure& beta,
                                      const HistoryPolicy& init, std::size_t max_iters,
                                      std::size_t max_nodes = kDefaultNodeBudget);

/// Initial-distribution weighted risk of each start state's trajectory return.
double root_objective(const TabularMDP& mdp, const RiskMeasure& beta,
                      const std::map<StateId, ReturnDistribution>& per_start);

struct BruteForceResult {
    HistoryPolicy policy;
    double root_beta = 0.0;
    std::size_t candidates = 0;
};

/**
 * Global optimum by enumeration. Deterministic dynamics make every
 * deterministic history policy equivalent, from a given start, to the
 * action sequence it generates, so the candidates are those sequences.
 */
BruteForceResult brute_force_optimal(const TabularMDP& mdp, const RiskMeasure& beta,
                                     std::size_t max_candidates = kDefaultNodeBudget);

/// Exact return distribution from one start state, or mixed over the initial distribution.
ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const HistoryPolicy& pi, StateId start);
ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const HistoryPolicy& pi);
ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const MarkovPolicy& pi);

std::map<StateId, ReturnDistribution> per_start_return_dists(const TabularMDP& mdp,
                                                             const HistoryPolicy& pi);

/// Actions the policy takes from start until termination or the horizon.
std::vector<ActionId> greedy_path(const TabularMDP& mdp, const HistoryPolicy& pi, StateId start);

/// "a0;a0" per start state, starts joined by '|'.
std::string policy_fingerprint(const TabularMDP& mdp, const HistoryPolicy& pi);

// ---------------------------------------------------------------------------
// Operator probes

/// One application of the fixed-policy history operator on every key of z.
/// Keys (h, a) map to prefix(h) + gamma^t R(s, a) + gamma^{t+1} z({s'}, pi(h a)).
HistoryValueMap hr_apply(const TabularMDP& mdp, const HistoryTree& tree, const HistoryPolicy& pi,
                         const HistoryValueMap& z);

/// As hr_apply, with the successor action argmax_b beta[z(h a, b)].
HistoryValueMap hr_optimal_apply(const TabularMDP& mdp, const HistoryTree& tree,
                                 const RiskMeasure& beta, const HistoryValueMap& z,
                                 TieBreaker& ties);

/// Keys of the forest tree: every decision history with every action.
std::vector<HistoryActionKey> history_action_keys(const HistoryTree& tree);

/// Z(h, a) = prefix(h) + gamma^t base({s_t}, a) for every key of the tree.
HistoryValueMap history_consistent_values(const TabularMDP& mdp, const HistoryTree& tree,
                                          const std::map<StateAction, ReturnDistribution>& base);

struct ProbeResult {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// (max_p(T z1, T z2), gamma * max_p(z1, z2)).
ProbeResult contraction_probe(const TabularMDP& mdp, const HistoryTree& tree, const HistoryPolicy& pi,
                              const HistoryValueMap& z1, const HistoryValueMap& z2, double p);

/// (max |beta T* z1 - beta T* z2|, max |beta z1 - beta z2|) for the history optimality operator.
ProbeResult nonexpansion_probe(const TabularMDP& mdp, const HistoryTree& tree, const HistoryValueMap& z1,
                               const HistoryValueMap& z2, const RiskMeasure& beta);

/// Same two sides for the Markov risk-greedy operator; z1 and z2 are
/// updated by consecutive calls on one tie breaker.
ProbeResult markov_nonexpansion_probe(const TabularMDP& mdp, const MarkovValueMap& z1,
                                      const MarkovValueMap& z2, const RiskMeasure& beta,
                                      TieBreaker& ties);

double max_risk_gap(const MarkovValueMap& a, const MarkovValueMap& b, const RiskMeasure& beta);

// ---------------------------------------------------------------------------
// Counterexample fixtures

/// Initial estimate that is exact at s1 and zero at s0.
MarkovValueMap three_state_initial_values(const TabularMDP& three_state);

struct TieCounterexample {
    TabularMDP mdp;
    MarkovValueMap z;  // both actions at s1 tie under cvar:0.1
};

/// Two-state construction where the two tied actions at s1 carry different
/// distributions, so tie-breaking alone changes the update at (s0, a0).
TieCounterexample tie_counterexample();

}  // namespace trajq
