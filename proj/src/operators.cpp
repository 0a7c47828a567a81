#include "trajq/operators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace trajq {

// ---------------------------------------------------------------------------
// Keys, policies, ties

HistoryKey HistoryKey::extended(ActionId a) const {
    HistoryKey out = *this;
    out.actions.push_back(a);
    return out;
}

std::string HistoryKey::to_string() const {
    std::string out = "s" + std::to_string(start) + ":";
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(actions[i]);
    }
    return out;
}

ActionId HistoryPolicy::operator()(const HistoryKey& h, StateId state) const {
    if (auto it = table.find(h); it != table.end()) return it->second;
    return fallback(state);
}

HistoryPolicy HistoryPolicy::from_markov(MarkovPolicy pi) {
    HistoryPolicy out;
    out.fallback = std::move(pi);
    return out;
}

StateId history_state(const TabularMDP& mdp, const HistoryKey& h) {
    StateId s = h.start;
    for (ActionId a : h.actions) s = mdp.next(s, a);
    return s;
}

bool risk_tied(double a, double b) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= kTieTolerance * scale;
}

ActionId TieBreaker::choose(std::span<const double> scores, std::size_t context) {
    if (scores.empty()) {
        throw std::invalid_argument("TieBreaker: no actions to choose from");
    }
    const double best = *std::max_element(scores.begin(), scores.end());
    std::vector<ActionId> tied;
    for (ActionId a = 0; a < scores.size(); ++a) {
        if (risk_tied(scores[a], best)) tied.push_back(a);
    }
    if (rule_ == TieRule::LowestIndex) return tied.front();
    std::size_t& n = calls_[context];
    return tied[n++ % tied.size()];
}

// ---------------------------------------------------------------------------
// Distribution plumbing

double discount_power(double gamma, std::size_t t) {
    double g = 1.0;
    for (std::size_t i = 0; i < t; ++i) g *= gamma;
    return g;
}

ReturnDistribution bootstrap(const ReturnDistribution& reward, double gamma,
                             const ReturnDistribution& tail) {
    return convolve(reward, affine(tail, gamma, 0.0));
}

ReturnDistribution attach(const ReturnDistribution& prefix, double gamma, std::size_t depth,
                          const ReturnDistribution& suffix) {
    return convolve(prefix, affine(suffix, discount_power(gamma, depth), 0.0));
}

// ---------------------------------------------------------------------------
// Markov operators

namespace {

const ReturnDistribution& lookup(const MarkovValueMap& z, StateId s, ActionId a) {
    auto it = z.find({s, a});
    if (it == z.end()) {
        throw std::invalid_argument("value map is missing (s" + std::to_string(s) + ", a" +
                                    std::to_string(a) + ")");
    }
    return it->second;
}

ReturnDistribution maybe_prune(ReturnDistribution d, std::size_t max_atoms, double& err) {
    if (max_atoms == 0 || d.size() <= max_atoms) return d;
    auto pruned = prune(d, max_atoms);
    err = std::max(err, pruned.w1_error);
    return std::move(pruned.dist);
}

std::vector<double> action_scores(const MarkovValueMap& z, StateId s, std::size_t n_actions,
                                  const RiskMeasure& beta) {
    std::vector<double> scores(n_actions);
    for (ActionId a = 0; a < n_actions; ++a) scores[a] = evaluate(beta, lookup(z, s, a));
    return scores;
}

ActionId mean_greedy(const MarkovValueMap& z, StateId s, std::size_t n_actions) {
    std::vector<double> means(n_actions);
    for (ActionId a = 0; a < n_actions; ++a) means[a] = lookup(z, s, a).mean();
    TieBreaker lowest;
    return lowest.choose(means);
}

}  // namespace

MarkovValueMap zero_markov_values(const TabularMDP& mdp) {
    MarkovValueMap z;
    for (StateId s = 0; s < mdp.n_states; ++s) {
        for (ActionId a = 0; a < mdp.n_actions; ++a) z.emplace(StateAction{s, a}, dirac(0.0));
    }
    return z;
}

MarkovEvaluation markov_policy_eval(const TabularMDP& mdp, const MarkovPolicy& pi,
                                    std::size_t max_atoms) {
    if (mdp.horizon == 0) {
        throw std::invalid_argument("markov_policy_eval: horizon must be positive");
    }
    MarkovEvaluation out;
    out.z = zero_markov_values(mdp);
    for (std::size_t k = 1; k <= mdp.horizon; ++k) {
        MarkovValueMap next;
        double step_err = 0.0;
        for (StateId s = 0; s < mdp.n_states; ++s) {
            for (ActionId a = 0; a < mdp.n_actions; ++a) {
                if (mdp.is_terminal(s)) {
                    next.emplace(StateAction{s, a}, dirac(0.0));
                    continue;
                }
                const StateId to = mdp.next(s, a);
                auto d = bootstrap(mdp.reward_dist(s, a), mdp.gamma, lookup(out.z, to, pi(to)));
                next.emplace(StateAction{s, a}, maybe_prune(std::move(d), max_atoms, step_err));
            }
        }
        out.d1_error = mdp.gamma * out.d1_error + step_err;
        out.z = std::move(next);
    }
    return out;
}

MeanIterationResult mean_value_iteration(const TabularMDP& mdp, std::size_t sweeps,
                                         const MarkovValueMap* initial, std::size_t max_atoms) {
    if (sweeps < 1) {
        throw std::invalid_argument("mean_value_iteration: sweeps must be at least 1");
    }
    MeanIterationResult out;
    out.z = initial ? *initial : zero_markov_values(mdp);
    for (std::size_t it = 0; it < sweeps; ++it) {
        std::vector<ActionId> greedy(mdp.n_states);
        for (StateId s = 0; s < mdp.n_states; ++s) greedy[s] = mean_greedy(out.z, s, mdp.n_actions);
        MarkovValueMap next;
        double change = 0.0;
        double step_err = 0.0;
        for (StateId s = 0; s < mdp.n_states; ++s) {
            for (ActionId a = 0; a < mdp.n_actions; ++a) {
                const StateId to = mdp.next(s, a);
                auto d = maybe_prune(bootstrap(mdp.reward_dist(s, a), mdp.gamma,
                                               lookup(out.z, to, greedy[to])),
                                     max_atoms, step_err);
                change = std::max(change, std::abs(d.mean() - lookup(out.z, s, a).mean()));
                next.emplace(StateAction{s, a}, std::move(d));
            }
        }
        out.d1_error = mdp.gamma * out.d1_error + step_err;
        out.mean_change.push_back(change);
        out.z = std::move(next);
    }
    out.policy.action.resize(mdp.n_states);
    for (StateId s = 0; s < mdp.n_states; ++s) out.policy.action[s] = mean_greedy(out.z, s, mdp.n_actions);
    return out;
}

MarkovPolicy risk_greedy_policy(const TabularMDP& mdp, const MarkovValueMap& z,
                                const RiskMeasure& beta, TieBreaker& ties) {
    MarkovPolicy pi;
    pi.action.assign(mdp.n_states, 0);
    for (StateId s = 0; s < mdp.n_states; ++s) {
        if (mdp.is_terminal(s)) continue;
        pi.action[s] = ties.choose(action_scores(z, s, mdp.n_actions, beta), s);
    }
    return pi;
}

MarkovValueMap risk_bellman_step(const TabularMDP& mdp, const MarkovValueMap& z,
                                 const RiskMeasure& beta, TieBreaker& ties, std::size_t max_atoms) {
    const MarkovPolicy greedy = risk_greedy_policy(mdp, z, beta, ties);
    MarkovValueMap next;
    double err = 0.0;
    for (StateId s = 0; s < mdp.n_states; ++s) {
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            const StateId to = mdp.next(s, a);
            auto d = bootstrap(mdp.reward_dist(s, a), mdp.gamma, lookup(z, to, greedy(to)));
            next.emplace(StateAction{s, a}, maybe_prune(std::move(d), max_atoms, err));
        }
    }
    return next;
}

std::map<StateAction, double> risk_table(const MarkovValueMap& z, const RiskMeasure& beta) {
    std::map<StateAction, double> out;
    for (const auto& [key, d] : z) out.emplace(key, evaluate(beta, d));
    return out;
}

double max_risk_gap(const MarkovValueMap& a, const MarkovValueMap& b, const RiskMeasure& beta) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("max_risk_gap: key sets differ");
    }
    double gap = 0.0;
    for (const auto& [key, d] : a) {
        gap = std::max(gap, std::abs(evaluate(beta, d) - evaluate(beta, lookup(b, key.state, key.action))));
    }
    return gap;
}

RiskIterationResult risk_bellman_iteration(const TabularMDP& mdp, const RiskMeasure& beta,
                                           std::size_t max_sweeps, TieRule tie_rule,
                                           std::size_t max_atoms) {
    RiskIterationResult out;
    out.z = zero_markov_values(mdp);
    TieBreaker ties(tie_rule);
    std::vector<MarkovPolicy> seen;
    auto table = risk_table(out.z, beta);
    for (std::size_t it = 0; it < max_sweeps; ++it) {
        out.z = risk_bellman_step(mdp, out.z, beta, ties, max_atoms);
        ++out.sweeps;
        auto next_table = risk_table(out.z, beta);
        double change = 0.0;
        bool stable = true;
        for (const auto& [key, v] : next_table) {
            const double old = table.at(key);
            change = std::max(change, std::abs(v - old));
            stable = stable && risk_tied(v, old);
        }
        out.beta_change.push_back(change);
        table = std::move(next_table);

        TieBreaker lowest;
        MarkovPolicy pi = risk_greedy_policy(mdp, out.z, beta, lowest);
        if (stable && !seen.empty() && seen.back() == pi) {
            out.converged = true;
            out.policy = std::move(pi);
            break;
        }
        if (!seen.empty() && !(seen.back() == pi) &&
            std::find(seen.begin(), seen.end(), pi) != seen.end()) {
            out.oscillating = true;
            out.policy = std::move(pi);
            break;
        }
        seen.push_back(pi);
        out.policy = std::move(pi);
    }
    return out;
}

// ---------------------------------------------------------------------------
// History trees

HistoryTree::HistoryTree(const TabularMDP& mdp, std::vector<StateId> starts, std::size_t max_nodes)
    : n_actions_(mdp.n_actions) {
    auto add_node = [&](HistoryNode n) {
        if (nodes_.size() >= max_nodes) {
            throw BudgetExceeded("history tree exceeds the node budget of " + std::to_string(max_nodes));
        }
        n.children.assign(n_actions_, kNoNode);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    };
    for (StateId s : starts) {
        if (mdp.is_terminal(s) || mdp.horizon == 0 || root_index_.count(s)) continue;
        HistoryNode root;
        root.start = s;
        root.state = s;
        const std::size_t id = add_node(std::move(root));
        roots_.push_back(id);
        root_index_.emplace(s, id);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (ActionId a = 0; a < n_actions_; ++a) {
            const HistoryNode& cur = nodes_[i];
            const StateId to = mdp.next(cur.state, a);
            if (mdp.is_terminal(to) || cur.depth + 1 >= mdp.horizon) continue;
            HistoryNode child;
            child.parent = i;
            child.via = a;
            child.start = cur.start;
            child.state = to;
            child.depth = cur.depth + 1;
            child.prefix = attach(cur.prefix, mdp.gamma, cur.depth, mdp.reward_dist(cur.state, a));
            const std::size_t id = add_node(std::move(child));
            nodes_[i].children[a] = id;
        }
    }
}

HistoryTree HistoryTree::from_initial(const TabularMDP& mdp, std::size_t max_nodes) {
    std::vector<StateId> starts;
    for (const auto& [s, p] : mdp.initial) starts.push_back(s);
    return HistoryTree(mdp, std::move(starts), max_nodes);
}

HistoryTree HistoryTree::forest(const TabularMDP& mdp, std::size_t max_nodes) {
    std::vector<StateId> starts;
    for (StateId s = 0; s < mdp.n_states; ++s) {
        if (!mdp.is_terminal(s)) starts.push_back(s);
    }
    return HistoryTree(mdp, std::move(starts), max_nodes);
}

HistoryKey HistoryTree::key(std::size_t i) const {
    HistoryKey k;
    k.start = nodes_.at(i).start;
    for (std::size_t cur = i; nodes_[cur].parent != kNoNode; cur = nodes_[cur].parent) {
        k.actions.push_back(nodes_[cur].via);
    }
    std::reverse(k.actions.begin(), k.actions.end());
    return k;
}

std::size_t HistoryTree::root_of(StateId s) const {
    auto it = root_index_.find(s);
    return it == root_index_.end() ? kNoNode : it->second;
}

std::size_t HistoryTree::find(const HistoryKey& h) const {
    std::size_t cur = root_of(h.start);
    for (ActionId a : h.actions) {
        if (cur == kNoNode || a >= n_actions_) return kNoNode;
        cur = nodes_[cur].children[a];
    }
    return cur;
}

// ---------------------------------------------------------------------------
// History-relied evaluation and control

namespace {

std::vector<HistoryKey> all_keys(const HistoryTree& tree) {
    std::vector<HistoryKey> keys(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const auto& n = tree.node(i);
        keys[i] = (n.parent == kNoNode) ? HistoryKey{n.start, {}} : keys[n.parent].extended(n.via);
    }
    return keys;
}

void evaluate_nodes(const TabularMDP& mdp, const HistoryTree& tree, HistoryEvaluation& ev) {
    const std::size_t n = tree.size();
    ev.suffix.assign(n, dirac(0.0));
    ev.z.assign(n, {});
    const ReturnDistribution zero = dirac(0.0);
    for (std::size_t i = n; i-- > 0;) {
        const auto& node = tree.node(i);
        ev.z[i].reserve(mdp.n_actions);
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            const std::size_t c = node.children[a];
            const ReturnDistribution& tail = (c == kNoNode) ? zero : ev.suffix[c];
            auto future = bootstrap(mdp.reward_dist(node.state, a), mdp.gamma, tail);
            ev.z[i].push_back(attach(node.prefix, mdp.gamma, node.depth, future));
            if (a == ev.policy[i]) ev.suffix[i] = std::move(future);
        }
    }
}

double weighted_root_beta(const TabularMDP& mdp, const HistoryEvaluation& ev,
                          std::span<const double> node_beta) {
    double total = 0.0;
    for (const auto& [s, p] : mdp.initial) {
        const std::size_t r = ev.tree.root_of(s);
        total += p * (r == kNoNode ? 0.0 : node_beta[r]);
    }
    return total;
}

ActionId improve_action(std::span<const double> scores, TieBreaker& ties, std::size_t context,
                        std::size_t incumbent) {
    if (incumbent < scores.size()) {
        const double best = *std::max_element(scores.begin(), scores.end());
        if (scores[incumbent] >= best || risk_tied(scores[incumbent], best)) return incumbent;
    }
    return ties.choose(scores, context);
}

HistoryPolicy to_history_policy(const HistoryEvaluation& ev, const MarkovPolicy& fallback) {
    HistoryPolicy pi;
    pi.fallback = fallback;
    const auto keys = all_keys(ev.tree);
    for (std::size_t i = 0; i < keys.size(); ++i) pi.table.emplace(keys[i], ev.policy[i]);
    return pi;
}

}  // namespace

HistoryValueMap HistoryEvaluation::to_map() const {
    HistoryValueMap out;
    const auto keys = all_keys(tree);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        for (ActionId a = 0; a < z[i].size(); ++a) out.emplace(HistoryActionKey{keys[i], a}, z[i][a]);
    }
    return out;
}

std::vector<double> HistoryEvaluation::policy_beta(const RiskMeasure& beta) const {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = evaluate(beta, z[i][policy[i]]);
    return out;
}

HistoryEvaluation hr_evaluate(const TabularMDP& mdp, HistoryTree tree, const HistoryPolicy& pi) {
    HistoryEvaluation ev{std::move(tree), {}, {}, {}};
    const auto keys = all_keys(ev.tree);
    ev.policy.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        ev.policy[i] = pi(keys[i], ev.tree.node(i).state);
        if (ev.policy[i] >= mdp.n_actions) {
            throw std::out_of_range("history policy returned an invalid action at " + keys[i].to_string());
        }
    }
    evaluate_nodes(mdp, ev.tree, ev);
    return ev;
}

HistoryValueMap hr_policy_eval(const TabularMDP& mdp, const HistoryPolicy& pi, std::size_t max_nodes) {
    return hr_evaluate(mdp, HistoryTree::from_initial(mdp, max_nodes), pi).to_map();
}

HistoryPolicy hr_greedy_improve(const HistoryValueMap& zh, const RiskMeasure& beta, TieBreaker& ties,
                                const HistoryPolicy* incumbent) {
    HistoryPolicy out;
    if (incumbent) out.fallback = incumbent->fallback;
    std::size_t context = 0;
    for (auto it = zh.begin(); it != zh.end(); ++context) {
        const HistoryKey& h = it->first.history;
        std::vector<double> scores;
        std::vector<ActionId> actions;
        for (; it != zh.end() && it->first.history == h; ++it) {
            actions.push_back(it->first.action);
            scores.push_back(evaluate(beta, it->second));
        }
        std::size_t inc = scores.size();
        if (incumbent) {
            if (auto f = incumbent->table.find(h); f != incumbent->table.end()) {
                auto pos = std::find(actions.begin(), actions.end(), f->second);
                inc = static_cast<std::size_t>(pos - actions.begin());
            }
        }
        out.table.emplace(h, actions[improve_action(scores, ties, context, inc)]);
    }
    return out;
}

HrIterationResult hr_policy_iteration(const TabularMDP& mdp, const RiskMeasure& beta,
                                      const HistoryPolicy& init, std::size_t max_iters,
                                      std::size_t max_nodes) {
    HrIterationResult out;
    out.evaluation = hr_evaluate(mdp, HistoryTree::from_initial(mdp, max_nodes), init);
    HistoryEvaluation& ev = out.evaluation;
    TieBreaker lowest;
    while (true) {
        auto node_beta = ev.policy_beta(beta);
        out.root_beta.push_back(weighted_root_beta(mdp, ev, node_beta));
        out.node_beta_trace.push_back(std::move(node_beta));
        if (out.iterations >= max_iters) break;

        std::vector<ActionId> improved(ev.policy.size());
        std::vector<double> scores(mdp.n_actions);
        for (std::size_t i = 0; i < ev.policy.size(); ++i) {
            for (ActionId a = 0; a < mdp.n_actions; ++a) scores[a] = evaluate(beta, ev.z[i][a]);
            improved[i] = improve_action(scores, lowest, i, ev.policy[i]);
        }
        ++out.iterations;
        if (improved == ev.policy) {
            out.converged = true;
            break;
        }
        ev.policy = std::move(improved);
        evaluate_nodes(mdp, ev.tree, ev);
    }
    out.policy = to_history_policy(ev, init.fallback);
    const auto keys = all_keys(ev.tree);
    const auto& last = out.node_beta_trace.back();
    for (std::size_t i = 0; i < keys.size(); ++i) out.beta_table.emplace(keys[i], last[i]);
    return out;
}

double root_objective(const TabularMDP& mdp, const RiskMeasure& beta,
                      const std::map<StateId, ReturnDistribution>& per_start) {
    double total = 0.0;
    for (const auto& [s, p] : mdp.initial) total += p * evaluate(beta, per_start.at(s));
    return total;
}

// ---------------------------------------------------------------------------
// Trajectories and brute force

namespace {

ReturnDistribution fold_path(const TabularMDP& mdp, StateId start, std::span<const ActionId> actions) {
    std::vector<StateId> states;
    StateId s = start;
    for (ActionId a : actions) {
        states.push_back(s);
        s = mdp.next(s, a);
    }
    ReturnDistribution tail = dirac(0.0);
    for (std::size_t k = actions.size(); k-- > 0;) {
        tail = bootstrap(mdp.reward_dist(states[k], actions[k]), mdp.gamma, tail);
    }
    if (actions.empty()) return tail;
    return attach(dirac(0.0), mdp.gamma, 0, tail);
}

std::size_t count_sequences(const TabularMDP& mdp, StateId s, std::size_t depth, std::size_t cap) {
    if (mdp.is_terminal(s) || depth >= mdp.horizon) return 1;
    std::size_t total = 0;
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
        total += count_sequences(mdp, mdp.next(s, a), depth + 1, cap);
        if (total > cap) return total;
    }
    return total;
}

struct SequenceSearch {
    const TabularMDP& mdp;
    const RiskMeasure& beta;
    StateId start;
    std::vector<ActionId> current;
    std::vector<ActionId> best;
    double best_beta = -std::numeric_limits<double>::infinity();
    bool found = false;
    std::size_t visited = 0;

    void run(StateId s) {
        if (mdp.is_terminal(s) || current.size() >= mdp.horizon) {
            ++visited;
            const double b = evaluate(beta, fold_path(mdp, start, current));
            if (!found || b > best_beta) {
                best_beta = b;
                best = current;
                found = true;
            }
            return;
        }
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            current.push_back(a);
            run(mdp.next(s, a));
            current.pop_back();
        }
    }
};

}  // namespace

std::vector<ActionId> greedy_path(const TabularMDP& mdp, const HistoryPolicy& pi, StateId start) {
    std::vector<ActionId> path;
    HistoryKey h{start, {}};
    StateId s = start;
    while (path.size() < mdp.horizon && !mdp.is_terminal(s)) {
        const ActionId a = pi(h, s);
        if (a >= mdp.n_actions) {
            throw std::out_of_range("policy returned an invalid action at " + h.to_string());
        }
        path.push_back(a);
        h.actions.push_back(a);
        s = mdp.next(s, a);
    }
    return path;
}

ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const HistoryPolicy& pi, StateId start) {
    return fold_path(mdp, start, greedy_path(mdp, pi, start));
}

std::map<StateId, ReturnDistribution> per_start_return_dists(const TabularMDP& mdp,
                                                             const HistoryPolicy& pi) {
    std::map<StateId, ReturnDistribution> out;
    for (const auto& [s, p] : mdp.initial) out.emplace(s, trajectory_return_dist(mdp, pi, s));
    return out;
}

ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const HistoryPolicy& pi) {
    if (mdp.initial.size() == 1) return trajectory_return_dist(mdp, pi, mdp.initial.front().first);
    std::vector<std::pair<double, ReturnDistribution>> parts;
    for (const auto& [s, p] : mdp.initial) parts.emplace_back(p, trajectory_return_dist(mdp, pi, s));
    return mix(parts);
}

ReturnDistribution trajectory_return_dist(const TabularMDP& mdp, const MarkovPolicy& pi) {
    return trajectory_return_dist(mdp, HistoryPolicy::from_markov(pi));
}

std::string policy_fingerprint(const TabularMDP& mdp, const HistoryPolicy& pi) {
    std::string out;
    bool first_start = true;
    for (const auto& [s, p] : mdp.initial) {
        if (!first_start) out += '|';
        first_start = false;
        const auto path = greedy_path(mdp, pi, s);
        for (std::size_t i = 0; i < path.size(); ++i) {
            if (i) out += ';';
            out += mdp.action_name(path[i]);
        }
    }
    return out;
}

BruteForceResult brute_force_optimal(const TabularMDP& mdp, const RiskMeasure& beta,
                                     std::size_t max_candidates) {
    BruteForceResult out;
    std::size_t total = 0;
    for (const auto& [s, p] : mdp.initial) {
        total += count_sequences(mdp, s, 0, max_candidates);
        if (total > max_candidates) {
            throw BudgetExceeded("brute force needs more than " + std::to_string(max_candidates) +
                                 " candidate policies");
        }
    }
    for (const auto& [s, p] : mdp.initial) {
        SequenceSearch search{mdp, beta, s, {}, {}};
        search.run(s);
        out.candidates += search.visited;
        out.root_beta += p * search.best_beta;
        HistoryKey h{s, {}};
        for (ActionId a : search.best) {
            out.policy.table[h] = a;
            h.actions.push_back(a);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operator probes

namespace {

std::size_t require_node(const HistoryTree& tree, const HistoryKey& h) {
    const std::size_t i = tree.find(h);
    if (i == kNoNode) {
        throw std::invalid_argument("history " + h.to_string() + " is not a decision node of the tree");
    }
    return i;
}

const ReturnDistribution& lookup(const HistoryValueMap& z, const HistoryKey& h, ActionId a) {
    auto it = z.find(HistoryActionKey{h, a});
    if (it == z.end()) {
        throw std::invalid_argument("value map is missing (" + h.to_string() + ", a" + std::to_string(a) + ")");
    }
    return it->second;
}

// prefix(h) + gamma^t R(s_t, a), plus the successor when a decision follows.
template <class PickNext>
HistoryValueMap apply_history_operator(const TabularMDP& mdp, const HistoryTree& tree,
                                       const HistoryValueMap& z, PickNext pick_next) {
    HistoryValueMap out;
    for (const auto& [key, unused] : z) {
        const auto& node = tree.node(require_node(tree, key.history));
        const StateId to = mdp.next(node.state, key.action);
        auto base = attach(node.prefix, mdp.gamma, node.depth, mdp.reward_dist(node.state, key.action));
        if (mdp.is_terminal(to) || node.depth + 1 >= mdp.horizon) {
            out.emplace(key, std::move(base));
            continue;
        }
        const HistoryKey successor = key.history.extended(key.action);
        const ActionId next_action = pick_next(successor, to);
        const auto& tail = lookup(z, HistoryKey{to, {}}, next_action);
        out.emplace(key, convolve(base, affine(tail, discount_power(mdp.gamma, node.depth + 1), 0.0)));
    }
    return out;
}

}  // namespace

HistoryValueMap hr_apply(const TabularMDP& mdp, const HistoryTree& tree, const HistoryPolicy& pi,
                         const HistoryValueMap& z) {
    return apply_history_operator(mdp, tree, z,
                                  [&](const HistoryKey& h, StateId s) { return pi(h, s); });
}

HistoryValueMap hr_optimal_apply(const TabularMDP& mdp, const HistoryTree& tree, const RiskMeasure& beta,
                                 const HistoryValueMap& z, TieBreaker& ties) {
    std::map<HistoryKey, ActionId> chosen;
    return apply_history_operator(mdp, tree, z, [&](const HistoryKey& h, StateId) {
        if (auto it = chosen.find(h); it != chosen.end()) return it->second;
        std::vector<double> scores(mdp.n_actions);
        for (ActionId b = 0; b < mdp.n_actions; ++b) scores[b] = evaluate(beta, lookup(z, h, b));
        const ActionId a = ties.choose(scores, require_node(tree, h));
        chosen.emplace(h, a);
        return a;
    });
}

std::vector<HistoryActionKey> history_action_keys(const HistoryTree& tree) {
    std::vector<HistoryActionKey> out;
    for (const auto& h : all_keys(tree)) {
        for (ActionId a = 0; a < tree.n_actions(); ++a) out.push_back({h, a});
    }
    return out;
}

HistoryValueMap history_consistent_values(const TabularMDP& mdp, const HistoryTree& tree,
                                          const std::map<StateAction, ReturnDistribution>& base) {
    HistoryValueMap out;
    const auto keys = all_keys(tree);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto& node = tree.node(i);
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            out.emplace(HistoryActionKey{keys[i], a},
                        attach(node.prefix, mdp.gamma, node.depth, base.at({node.state, a})));
        }
    }
    return out;
}

ProbeResult contraction_probe(const TabularMDP& mdp, const HistoryTree& tree, const HistoryPolicy& pi,
                              const HistoryValueMap& z1, const HistoryValueMap& z2, double p) {
    const auto t1 = hr_apply(mdp, tree, pi, z1);
    const auto t2 = hr_apply(mdp, tree, pi, z2);
    return {max_wasserstein(t1, t2, p), mdp.gamma * max_wasserstein(z1, z2, p)};
}

namespace {

double history_risk_gap(const HistoryValueMap& a, const HistoryValueMap& b, const RiskMeasure& beta) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("risk gap: key sets differ");
    }
    double gap = 0.0;
    for (const auto& [key, d] : a) {
        gap = std::max(gap, std::abs(evaluate(beta, d) - evaluate(beta, lookup(b, key.history, key.action))));
    }
    return gap;
}

}  // namespace

ProbeResult nonexpansion_probe(const TabularMDP& mdp, const HistoryTree& tree, const HistoryValueMap& z1,
                               const HistoryValueMap& z2, const RiskMeasure& beta) {
    TieBreaker ties1;
    TieBreaker ties2;
    const auto t1 = hr_optimal_apply(mdp, tree, beta, z1, ties1);
    const auto t2 = hr_optimal_apply(mdp, tree, beta, z2, ties2);
    return {history_risk_gap(t1, t2, beta), history_risk_gap(z1, z2, beta)};
}

ProbeResult markov_nonexpansion_probe(const TabularMDP& mdp, const MarkovValueMap& z1,
                                      const MarkovValueMap& z2, const RiskMeasure& beta,
                                      TieBreaker& ties) {
    const auto t1 = risk_bellman_step(mdp, z1, beta, ties);
    const auto t2 = risk_bellman_step(mdp, z2, beta, ties);
    return {max_risk_gap(t1, t2, beta), max_risk_gap(z1, z2, beta)};
}

// ---------------------------------------------------------------------------
// Counterexample fixtures

MarkovValueMap three_state_initial_values(const TabularMDP& three_state) {
    MarkovValueMap z = zero_markov_values(three_state);
    z[{1, 0}] = three_state.reward_dist(1, 0);
    z[{1, 1}] = three_state.reward_dist(1, 1);
    return z;
}

TieCounterexample tie_counterexample() {
    TabularMDP mdp(3, 2, 1.0, 2);
    const auto coin = normalize({{100.0, 0.9}, {-10.0, 0.1}});
    mdp.set(0, 0, 1, coin);
    mdp.set(0, 1, 1, dirac(-10.0));
    mdp.set(1, 0, 2, coin);
    mdp.set(1, 1, 2, dirac(-10.0));
    mdp.make_terminal(2);
    mdp.initial = {{0, 1.0}};
    mdp.state_names = {"s0", "s1", "end"};
    mdp.action_names = {"a0", "a1"};
    mdp.validate();

    MarkovValueMap z = zero_markov_values(mdp);
    z[{0, 0}] = normalize({{90.0, 0.9}, {-20.0, 0.1}});
    z[{0, 1}] = dirac(-20.0);
    z[{1, 0}] = coin;
    z[{1, 1}] = dirac(-10.0);
    return {std::move(mdp), std::move(z)};
}

}  // namespace trajq
