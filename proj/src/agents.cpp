#include "trajq/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace trajq {

// ---------------------------------------------------------------------------
// Loss

namespace {

void check_kappa(double kappa) {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) {
        throw std::invalid_argument("quantile huber: kappa must be positive");
    }
}

double huber(double u, double kappa) {
    const double a = std::abs(u);
    return a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
}

}  // namespace

double quantile_huber(double u, double tau, double kappa) {
    check_kappa(kappa);
    return std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * huber(u, kappa);
}

double quantile_huber_grad(double u, double tau, double kappa) {
    check_kappa(kappa);
    const double w = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
    if (std::abs(u) <= kappa) return w * u;
    return w * (u > 0.0 ? kappa : -kappa);
}

double quantile_fraction(std::size_t i, std::size_t n) {
    return (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n));
}

namespace {

// Mean of w(u) * Huber'(u), u = x - theta, over a sorted weighted sample
// given by cumulative weights W and cumulative weighted values S.
double mean_pull(double theta, double tau, double kappa, std::span<const double> xs,
                 std::span<const double> W, std::span<const double> S) {
    const auto lo = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), theta - kappa) - xs.begin());
    const auto mid = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), theta) - xs.begin());
    const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), theta + kappa) - xs.begin());
    const std::size_t n = xs.size();
    const double below = W[lo];
    const double above = W[n] - W[hi];
    const double neg = (S[mid] - S[lo]) - (W[mid] - W[lo]) * theta;
    const double pos = (S[hi] - S[mid]) - (W[hi] - W[mid]) * theta;
    return (-(1.0 - tau) * kappa * below + (1.0 - tau) * neg + tau * pos + tau * kappa * above) / W[n];
}

void apply_pull(std::span<double> entry, std::span<const double> xs, std::span<const double> W,
                std::span<const double> S, double learning_rate, double kappa) {
    const std::size_t n = entry.size();
    for (std::size_t i = 0; i < n; ++i) {
        entry[i] += learning_rate * mean_pull(entry[i], quantile_fraction(i, n), kappa, xs, W, S);
    }
    std::sort(entry.begin(), entry.end());
}

}  // namespace

void qr_update(std::span<double> entry, std::span<const double> targets, double learning_rate,
               double kappa) {
    check_kappa(kappa);
    if (targets.empty() || entry.empty()) {
        throw std::invalid_argument("qr_update: empty entry or target set");
    }
    std::vector<double> xs(targets.begin(), targets.end());
    std::sort(xs.begin(), xs.end());
    std::vector<double> W(xs.size() + 1, 0.0);
    std::vector<double> S(xs.size() + 1, 0.0);
    for (std::size_t j = 0; j < xs.size(); ++j) {
        W[j + 1] = W[j] + 1.0;
        S[j + 1] = S[j] + xs[j];
    }
    apply_pull(entry, xs, W, S, learning_rate, kappa);
}

void qr_update(std::span<double> entry, const ReturnDistribution& target, double learning_rate,
               double kappa) {
    check_kappa(kappa);
    if (entry.empty()) {
        throw std::invalid_argument("qr_update: empty entry");
    }
    const auto atoms = target.atoms();
    std::vector<double> xs(atoms.size());
    std::vector<double> W(atoms.size() + 1, 0.0);
    std::vector<double> S(atoms.size() + 1, 0.0);
    for (std::size_t j = 0; j < atoms.size(); ++j) {
        xs[j] = atoms[j].value;
        W[j + 1] = W[j] + atoms[j].prob;
        S[j + 1] = S[j] + atoms[j].prob * atoms[j].value;
    }
    apply_pull(entry, xs, W, S, learning_rate, kappa);
}

// ---------------------------------------------------------------------------
// Tables

std::size_t KeyInterner::Hash::operator()(const Tokens& t) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto x : t) {
        h ^= x;
        h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
}

std::size_t KeyInterner::intern(const Tokens& tokens) {
    auto [it, inserted] = ids_.try_emplace(tokens, keys_.size());
    if (inserted) keys_.push_back(tokens);
    return it->second;
}

std::optional<std::size_t> KeyInterner::find(const Tokens& tokens) const {
    auto it = ids_.find(tokens);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

QuantileTable::QuantileTable(std::size_t n_quantiles, std::size_t n_actions, double default_value)
    : n_(n_quantiles), n_actions_(n_actions), default_value_(default_value), defaults_(n_quantiles, default_value) {
    if (n_quantiles == 0 || n_actions == 0) {
        throw std::invalid_argument("QuantileTable: sizes must be positive");
    }
}

std::span<const double> QuantileTable::values(std::size_t key, ActionId a) const {
    if (a >= n_actions_) throw std::out_of_range("QuantileTable: action out of range");
    if (key >= n_keys_) return defaults_;
    return {data_.data() + (key * n_actions_ + a) * n_, n_};
}

std::span<double> QuantileTable::entry(std::size_t key, ActionId a) {
    if (a >= n_actions_) throw std::out_of_range("QuantileTable: action out of range");
    if (key >= n_keys_) {
        n_keys_ = key + 1;
        data_.resize(n_keys_ * n_actions_ * n_, default_value_);
    }
    return {data_.data() + (key * n_actions_ + a) * n_, n_};
}

void QuantileTable::write(std::ostream& out, const std::function<std::string(std::size_t)>& key_name) const {
    const auto old_precision = out.precision(9);
    for (std::size_t k = 0; k < n_keys_; ++k) {
        for (ActionId a = 0; a < n_actions_; ++a) {
            out << key_name(k) << ' ' << a;
            for (double v : values(k, a)) out << ' ' << v;
            out << '\n';
        }
    }
    out.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
    if (data_.size() < capacity_) {
        data_.push_back(t);
    } else {
        data_[next_] = t;
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, std::mt19937_64& rng) const {
    if (data_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(data_[pick(rng)]);
    return out;
}

// ---------------------------------------------------------------------------
// Config

void AgentConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("agent config: " + what); };
    if (n_quantiles == 0) fail("n_quantiles must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
    if (!(epsilon_final >= 0.0 && epsilon_final <= epsilon_init && epsilon_init <= 1.0)) {
        fail("need 0 <= epsilon_final <= epsilon_init <= 1");
    }
    if (epsilon_decay_steps == 0) fail("epsilon_decay_steps must be positive");
    if (buffer_size == 0 || batch_size == 0) fail("buffer_size and batch_size must be positive");
    if (target_update_frequency == 0) fail("target_update_frequency must be positive");
    if (!(huber_kappa > 0.0)) fail("huber_kappa must be positive");
    if (k_samples == 0) fail("k_samples must be positive");
}

double AgentConfig::epsilon(std::size_t step) const {
    if (step >= epsilon_decay_steps) return epsilon_final;
    const double frac = static_cast<double>(step) / static_cast<double>(epsilon_decay_steps);
    return epsilon_init + frac * (epsilon_final - epsilon_init);
}

AgentKind parse_agent_kind(const std::string& name) {
    if (name == "markov_qr") return AgentKind::MarkovQR;
    if (name == "tql") return AgentKind::TQL;
    throw std::invalid_argument("unknown agent kind '" + name + "' (expected markov_qr or tql)");
}

std::string to_string(AgentKind kind) { return kind == AgentKind::TQL ? "tql" : "markov_qr"; }

// ---------------------------------------------------------------------------
// Targets

RiskScorer::RiskScorer(const RiskMeasure& beta, std::size_t n_quantiles, std::size_t k_samples, bool stochastic)
    : beta_(beta), k_samples_(k_samples), stochastic_(stochastic), midpoint_(beta, n_quantiles, k_samples) {}

double RiskScorer::operator()(std::span<const double> quantiles, std::mt19937_64& rng) const {
    if (stochastic_) return evaluate_sampled(beta_, quantiles, k_samples_, rng);
    return midpoint_(quantiles);
}

ActionId best_action(std::span<const double> scores) {
    ActionId best = 0;
    for (ActionId a = 1; a < scores.size(); ++a) {
        if (scores[a] > scores[best]) best = a;
    }
    return best;
}

namespace {

ActionId greedy_on(const QuantileTable& table, std::size_t key, const RiskScorer& score, std::mt19937_64& rng) {
    std::vector<double> scores(table.n_actions());
    for (ActionId a = 0; a < table.n_actions(); ++a) scores[a] = score(table.values(key, a), rng);
    return best_action(scores);
}

}  // namespace

std::vector<double> qr_target_markov(const Transition& t, const QuantileTable& online,
                                     const QuantileTable& target, const RiskScorer& score,
                                     double gamma, std::mt19937_64& rng) {
    std::vector<double> out(online.n_quantiles(), t.reward);
    if (t.done || gamma == 0.0) return out;
    const ActionId next = greedy_on(online, t.next_state, score, rng);
    const auto tail = target.values(t.next_state, next);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += gamma * tail[j];
    return out;
}

std::vector<double> qr_target_history(const Transition& t, const QuantileTable& history,
                                      const QuantileTable& markov_target, const RiskScorer& score,
                                      double gamma, bool markov_prefix, std::mt19937_64& rng) {
    const double base = markov_prefix ? t.reward : t.prefix_return;
    std::vector<double> out(history.n_quantiles(), base);
    if (t.done || gamma == 0.0) return out;
    const double discount = markov_prefix ? gamma : std::pow(gamma, static_cast<double>(t.depth + 1));
    const ActionId next = greedy_on(history, t.next_history_key, score, rng);
    const auto tail = markov_target.values(t.next_state, next);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += discount * tail[j];
    return out;
}

// ---------------------------------------------------------------------------
// Agent

QuantileAgent::QuantileAgent(AgentKind kind, const TabularMDP& mdp, const RiskMeasure& beta, AgentConfig config)
    : kind_(kind),
      mdp_(mdp),
      beta_(beta),
      config_(config),
      scorer_((config.validate(), beta), config.n_quantiles, config.k_samples, config.stochastic_fractions),
      markov_(config.n_quantiles, mdp.n_actions, config.default_value),
      markov_target_(config.n_quantiles, mdp.n_actions, config.default_value),
      history_(config.n_quantiles, mdp.n_actions, config.default_value),
      buffer_(config.buffer_size) {
    mdp.validate();
    // Markov entries use the state index directly.
    markov_.entry(mdp.n_states - 1, 0);
    markov_target_ = markov_;
}

KeyInterner::Tokens QuantileAgent::history_tokens(std::span<const Step> past, StateId state) const {
    const std::size_t window = std::min(config_.history_window, past.size());
    KeyInterner::Tokens tokens;
    tokens.reserve(2 * window + 1);
    for (std::size_t i = past.size() - window; i < past.size(); ++i) {
        tokens.push_back(static_cast<std::uint32_t>(past[i].state));
        tokens.push_back(static_cast<std::uint32_t>(past[i].action));
    }
    tokens.push_back(static_cast<std::uint32_t>(state));
    return tokens;
}

std::size_t QuantileAgent::intern_history(std::span<const Step> past, StateId state) {
    return interner_.intern(history_tokens(past, state));
}

std::vector<double> QuantileAgent::action_scores(StateId state, std::span<const Step> past,
                                                 std::mt19937_64& rng) const {
    std::vector<double> scores(mdp_.n_actions);
    if (kind_ == AgentKind::MarkovQR) {
        for (ActionId a = 0; a < mdp_.n_actions; ++a) scores[a] = scorer_(markov_.values(state, a), rng);
        return scores;
    }
    const auto id = interner_.find(history_tokens(past, state));
    const std::size_t key = id ? *id : history_.n_keys();
    for (ActionId a = 0; a < mdp_.n_actions; ++a) scores[a] = scorer_(history_.values(key, a), rng);
    return scores;
}

ActionId QuantileAgent::act(StateId state, std::span<const Step> past, double epsilon, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (epsilon > 0.0 && unif(rng) < epsilon) {
        std::uniform_int_distribution<ActionId> pick(0, mdp_.n_actions - 1);
        return pick(rng);
    }
    return best_action(action_scores(state, past, rng));
}

void QuantileAgent::update(std::span<const Transition> batch, std::mt19937_64& rng) {
    const double lr = config_.learning_rate;
    const double kappa = config_.huber_kappa;
    for (const auto& t : batch) {
        const auto targets = qr_target_markov(t, markov_, markov_target_, scorer_, config_.gamma, rng);
        qr_update(markov_.entry(t.state, t.action), targets, lr, kappa);
    }
    if (kind_ != AgentKind::TQL) return;
    const bool markov_prefix = config_.history_window == 0;
    for (const auto& t : batch) {
        const auto targets =
            qr_target_history(t, history_, markov_target_, scorer_, config_.gamma, markov_prefix, rng);
        qr_update(history_.entry(t.history_key, t.action), targets, lr, kappa);
    }
}

void QuantileAgent::sync_target() { markov_target_ = markov_; }

std::vector<double> QuantileAgent::evaluate_returns(std::size_t episodes, std::mt19937_64& rng,
                                                    std::vector<ActionId>* first_actions) const {
    std::vector<double> returns;
    returns.reserve(episodes);
    RolloutPolicy greedy = [&](StateId, std::span<const Step> past, StateId s) {
        return act(s, past, 0.0, rng);
    };
    for (std::size_t e = 0; e < episodes; ++e) {
        const auto traj = rollout(mdp_, greedy, rng);
        if (e == 0 && first_actions) {
            first_actions->clear();
            for (const auto& st : traj.steps) first_actions->push_back(st.action);
        }
        returns.push_back(traj.episode_return);
    }
    return returns;
}

TrainingLog QuantileAgent::train(std::size_t total_steps, std::size_t eval_every, std::size_t eval_episodes,
                                 std::uint64_t seed, const std::function<void(const EvalRecord&)>& on_eval) {
    std::mt19937_64 rng(seed);
    std::mt19937_64 eval_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    TrainingLog log;
    if (eval_episodes == 0) {
        throw std::invalid_argument("train: eval_episodes must be positive");
    }

    auto run_eval = [&](std::size_t step) {
        EvalRecord rec;
        rec.step = step;
        const auto returns = evaluate_returns(eval_episodes, eval_rng, &rec.actions);
        rec.measure_value = evaluate(beta_, empirical(returns));
        rec.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
        if (on_eval) on_eval(rec);
        log.evals.push_back(std::move(rec));
        return returns;
    };

    std::size_t step = 0;
    std::vector<Step> past;
    std::uniform_int_distribution<ActionId> random_action(0, mdp_.n_actions - 1);
    while (step < total_steps) {
        past.clear();
        StateId s = sample_initial(mdp_, rng);
        double prefix = 0.0;
        double discount = 1.0;
        for (std::size_t t = 0; t < mdp_.horizon && !mdp_.is_terminal(s) && step < total_steps; ++t) {
            const std::size_t key = intern_history(past, s);
            const ActionId a = step < config_.start_timesteps ? random_action(rng)
                                                              : act(s, past, config_.epsilon(step), rng);
            const double r = sample(mdp_.reward_dist(s, a), rng);
            const StateId next = mdp_.next(s, a);
            prefix += discount * r;
            past.push_back({s, a, r});
            Transition tr;
            tr.history_key = key;
            tr.prefix_return = prefix;
            tr.depth = t;
            tr.state = s;
            tr.action = a;
            tr.reward = r;
            tr.next_state = next;
            tr.done = mdp_.is_terminal(next) || t + 1 >= mdp_.horizon;
            tr.next_history_key = tr.done ? key : intern_history(past, next);
            buffer_.push(tr);
            ++step;

            if (step >= config_.start_timesteps && buffer_.size() >= config_.batch_size) {
                const auto batch = buffer_.sample(config_.batch_size, rng);
                update(batch, rng);
            }
            if (step % config_.target_update_frequency == 0) sync_target();
            if (eval_every > 0 && step % eval_every == 0) run_eval(step);

            s = next;
            discount *= mdp_.gamma;
        }
    }
    if (log.evals.empty() || log.evals.back().step != step) {
        log.final_returns = run_eval(step);
    } else {
        log.final_returns = evaluate_returns(eval_episodes, eval_rng);
    }
    return log;
}

void QuantileAgent::write_tables(std::ostream& out) const {
    out << "# markov\n";
    markov_.write(out, [](std::size_t k) { return "s" + std::to_string(k); });
    if (kind_ != AgentKind::TQL) return;
    out << "# history\n";
    history_.write(out, [this](std::size_t k) {
        std::string name;
        for (auto t : interner_.tokens(k)) {
            if (!name.empty()) name += '.';
            name += std::to_string(t);
        }
        return name;
    });
}

}  // namespace trajq
