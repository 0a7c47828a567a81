#include "trajq/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <stdexcept>

namespace trajq {

TabularMDP::TabularMDP(std::size_t states, std::size_t actions, double discount,
                       std::size_t episode_cap)
    : n_states(states),
      n_actions(actions),
      transition(states * actions, 0),
      reward(states * actions),
      terminal(states, 0),
      gamma(discount),
      horizon(episode_cap) {
    if (states == 0 || actions == 0) {
        throw std::invalid_argument("TabularMDP: need at least one state and one action");
    }
    for (StateId s = 0; s < states; ++s) {
        for (ActionId a = 0; a < actions; ++a) {
            transition[s * actions + a] = s;
        }
    }
}

void TabularMDP::set(StateId s, ActionId a, StateId to, ReturnDistribution r) {
    if (s >= n_states || to >= n_states || a >= n_actions) {
        throw std::out_of_range("TabularMDP::set: index out of range");
    }
    transition[s * n_actions + a] = to;
    reward[s * n_actions + a] = std::move(r);
}

void TabularMDP::make_terminal(StateId s) {
    terminal.at(s) = 1;
    for (ActionId a = 0; a < n_actions; ++a) {
        set(s, a, s, dirac(0.0));
    }
}

std::string TabularMDP::state_name(StateId s) const {
    if (s < state_names.size()) return state_names[s];
    return "s" + std::to_string(s);
}

std::string TabularMDP::action_name(ActionId a) const {
    if (a < action_names.size()) return action_names[a];
    return "a" + std::to_string(a);
}

void TabularMDP::validate() const {
    if (n_states == 0 || n_actions == 0) {
        throw std::invalid_argument("mdp: empty state or action set");
    }
    if (transition.size() != n_states * n_actions || reward.size() != n_states * n_actions ||
        terminal.size() != n_states) {
        throw std::invalid_argument("mdp: table sizes do not match state/action counts");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw std::invalid_argument("mdp: gamma must lie in [0, 1]");
    }
    if (horizon < 1) {
        throw std::invalid_argument("mdp: horizon must be at least 1");
    }
    for (StateId s = 0; s < n_states; ++s) {
        for (ActionId a = 0; a < n_actions; ++a) {
            if (next(s, a) >= n_states) {
                throw std::invalid_argument("mdp: transition target out of range");
            }
            if (is_terminal(s) && (next(s, a) != s || !(reward_dist(s, a) == dirac(0.0)))) {
                throw std::invalid_argument("mdp: terminal state " + state_name(s) +
                                            " must be absorbing with zero reward");
            }
        }
    }
    if (initial.empty()) {
        throw std::invalid_argument("mdp: empty initial distribution");
    }
    double total = 0.0;
    for (const auto& [s, p] : initial) {
        if (s >= n_states || !(p > 0.0)) {
            throw std::invalid_argument("mdp: bad initial-state entry");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("mdp: initial probabilities must sum to one");
    }
}

TabularMDP three_state_mdp() {
    TabularMDP mdp(3, 2, 1.0, 2);
    const auto coin = normalize({{100.0, 0.9}, {-10.0, 0.1}});
    mdp.set(0, 0, 1, coin);
    mdp.set(0, 1, 1, dirac(-5.0));
    mdp.set(1, 0, 2, coin);
    mdp.set(1, 1, 2, dirac(-5.0));
    mdp.make_terminal(2);
    mdp.initial = {{0, 1.0}};
    mdp.state_names = {"s0", "s1", "end"};
    mdp.action_names = {"a0", "a1"};
    mdp.validate();
    return mdp;
}

// ---------------------------------------------------------------------------
// Grid

namespace {

struct GridGeometry {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> bonus_bit;  // per cell, -1 if not Y/B
    std::size_t n_bits = 0;
};

GridGeometry geometry(const GridLayout& layout) {
    GridGeometry g;
    g.rows = layout.rows.size();
    g.cols = layout.rows.front().size();
    g.bonus_bit.assign(g.rows * g.cols, -1);
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            const char ch = layout.rows[r][c];
            if (ch == 'Y' || ch == 'B') {
                g.bonus_bit[r * g.cols + c] = static_cast<int>(g.n_bits++);
            }
        }
    }
    return g;
}

}  // namespace

void GridLayout::validate() const {
    if (rows.empty() || rows.front().empty()) {
        throw std::invalid_argument("grid: empty layout");
    }
    std::size_t starts = 0;
    std::size_t goals = 0;
    std::size_t bonus = 0;
    for (const auto& row : rows) {
        if (row.size() != rows.front().size()) {
            throw std::invalid_argument("grid: rows have different lengths");
        }
        for (char ch : row) {
            switch (ch) {
                case 'S': ++starts; break;
                case 'G': ++goals; break;
                case 'Y':
                case 'B': ++bonus; break;
                case 'O':
                case '.': break;
                default:
                    throw std::invalid_argument(std::string("grid: unknown cell '") + ch + "'");
            }
        }
    }
    if (starts != 1 || goals != 1) {
        throw std::invalid_argument("grid: need exactly one S and one G");
    }
    if (bonus > 16) {
        throw std::invalid_argument("grid: at most 16 Y/B cells are supported");
    }
    if (!(bonus_prob >= 0.0 && bonus_prob <= 1.0)) {
        throw std::invalid_argument("grid: bonus_prob must lie in [0, 1]");
    }
}

std::vector<std::string> load_grid_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open grid layout " + path.string());
    }
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        rows.push_back(line);
    }
    return rows;
}

GridCell decode_grid_state(const GridLayout& layout, StateId s) {
    const auto g = geometry(layout);
    const std::size_t masks = std::size_t{1} << g.n_bits;
    const std::size_t cell = s / masks;
    return {cell / g.cols, cell % g.cols, static_cast<unsigned>(s % masks)};
}

TabularMDP risky_grid(const GridLayout& layout, double gamma, std::size_t horizon) {
    layout.validate();
    const auto g = geometry(layout);
    const std::size_t masks = std::size_t{1} << g.n_bits;
    const std::size_t n_actions = layout.four_actions ? 4 : 2;
    TabularMDP mdp(g.rows * g.cols * masks, n_actions, gamma, horizon);
    mdp.action_names = layout.four_actions
                           ? std::vector<std::string>{"up", "down", "left", "right"}
                           : std::vector<std::string>{"right", "down"};

    // (drow, dcol) per action
    std::vector<std::pair<int, int>> moves =
        layout.four_actions ? std::vector<std::pair<int, int>>{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}
                            : std::vector<std::pair<int, int>>{{0, 1}, {1, 0}};

    const auto step_only = dirac(layout.step_penalty);
    const auto yellow = normalize({{layout.step_penalty + layout.bonus_value, layout.bonus_prob},
                                   {layout.step_penalty, 1.0 - layout.bonus_prob}});
    const auto blue = dirac(layout.step_penalty + layout.blue_value);
    const auto orange = dirac(layout.step_penalty + layout.orange_penalty);

    mdp.state_names.resize(mdp.n_states);
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t cell = r * g.cols + c;
            for (std::size_t mask = 0; mask < masks; ++mask) {
                const StateId s = cell * masks + mask;
                mdp.state_names[s] = "(" + std::to_string(r) + "," + std::to_string(c) + ")|" +
                                     std::to_string(mask);
                if (layout.rows[r][c] == 'G') {
                    mdp.make_terminal(s);
                    continue;
                }
                for (ActionId a = 0; a < n_actions; ++a) {
                    const long nr = static_cast<long>(r) + moves[a].first;
                    const long nc = static_cast<long>(c) + moves[a].second;
                    if (nr < 0 || nc < 0 || nr >= static_cast<long>(g.rows) ||
                        nc >= static_cast<long>(g.cols)) {
                        mdp.set(s, a, s, step_only);
                        continue;
                    }
                    const std::size_t ncell = static_cast<std::size_t>(nr) * g.cols +
                                              static_cast<std::size_t>(nc);
                    const char ch = layout.rows[static_cast<std::size_t>(nr)][static_cast<std::size_t>(nc)];
                    std::size_t nmask = mask;
                    ReturnDistribution r_dist = step_only;
                    const int bit = g.bonus_bit[ncell];
                    if (bit >= 0 && !((mask >> bit) & 1U)) {
                        nmask |= std::size_t{1} << bit;
                        r_dist = (ch == 'Y') ? yellow : blue;
                    } else if (ch == 'O') {
                        r_dist = orange;
                    }
                    mdp.set(s, a, ncell * masks + nmask, r_dist);
                }
            }
        }
    }
    for (std::size_t r = 0; r < g.rows; ++r) {
        const auto c = layout.rows[r].find('S');
        if (c != std::string::npos) {
            mdp.initial = {{(r * g.cols + c) * masks, 1.0}};
        }
    }
    mdp.validate();
    return mdp;
}

// ---------------------------------------------------------------------------
// Mountain car

ReturnDistribution mountain_car_penalty(double c, double a) {
    if (!(c >= 0.0 && c <= 1.0)) {
        throw std::invalid_argument("mountain car: risk scale c must lie in [0, 1]");
    }
    if (!(a >= -1.0 && a <= 1.0)) {
        throw std::invalid_argument("mountain car: action must lie in [-1, 1]");
    }
    const double mag = std::abs(a);
    const double p = 1.0 / (4.0 - 3.0 * mag);
    if (c == 0.0) return dirac(0.0);
    return normalize({{-c * (2.0 - mag), p}, {0.0, 1.0 - p}});
}

TabularMDP risky_mountain_car(const MountainCarParams& params) {
    constexpr double x_min = -1.2;
    constexpr double x_max = 0.6;
    constexpr double v_max = 0.07;
    constexpr double goal = 0.45;
    constexpr double power = 0.0015;

    if (params.position_bins < 2 || params.velocity_bins < 2) {
        throw std::invalid_argument("mountain car: need at least 2 bins per axis");
    }
    if (params.action_values.empty()) {
        throw std::invalid_argument("mountain car: empty action set");
    }
    const std::size_t np = params.position_bins;
    const std::size_t nv = params.velocity_bins;
    const double dx = (x_max - x_min) / static_cast<double>(np);
    const double dv = 2.0 * v_max / static_cast<double>(nv);
    auto bin = [](double x, double lo, double width, std::size_t n) {
        const double k = std::floor((x - lo) / width);
        return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n - 1)));
    };

    const std::size_t n_actions = params.action_values.size();
    const StateId end = np * nv;
    TabularMDP mdp(np * nv + 1, n_actions, params.gamma, params.horizon);
    for (double a : params.action_values) {
        mdp.action_names.push_back(std::to_string(a));
    }
    std::vector<ReturnDistribution> penalty;
    for (double a : params.action_values) {
        penalty.push_back(mountain_car_penalty(params.risk_scale, a));
    }

    for (std::size_t i = 0; i < np; ++i) {
        for (std::size_t j = 0; j < nv; ++j) {
            const double x = x_min + (static_cast<double>(i) + 0.5) * dx;
            const double v = -v_max + (static_cast<double>(j) + 0.5) * dv;
            const StateId s = i * nv + j;
            for (ActionId k = 0; k < n_actions; ++k) {
                const double a = params.action_values[k];
                double nv_ = std::clamp(v + a * power - 0.0025 * std::cos(3.0 * x), -v_max, v_max);
                double nx = std::clamp(x + nv_, x_min, x_max);
                if (nx <= x_min && nv_ < 0.0) nv_ = 0.0;
                const bool reached = nx >= goal;
                const double base = -0.1 * a * a + (reached ? 100.0 : 0.0);
                const StateId to = reached ? end : bin(nx, x_min, dx, np) * nv + bin(nv_, -v_max, dv, nv);
                mdp.set(s, k, to, affine(penalty[k], 1.0, base));
            }
        }
    }
    mdp.make_terminal(end);

    std::vector<StateId> starts;
    const std::size_t v0 = bin(0.0, -v_max, dv, nv);
    for (std::size_t i = 0; i < np; ++i) {
        const double x = x_min + (static_cast<double>(i) + 0.5) * dx;
        if (x >= -0.6 && x <= -0.4) starts.push_back(i * nv + v0);
    }
    if (starts.empty()) {
        starts.push_back(bin(-0.5, x_min, dx, np) * nv + v0);
    }
    for (StateId s : starts) {
        mdp.initial.emplace_back(s, 1.0 / static_cast<double>(starts.size()));
    }
    mdp.validate();
    return mdp;
}

// ---------------------------------------------------------------------------
// Random MDPs

namespace {

bool terminal_reachable(const TabularMDP& mdp, StateId from, std::size_t steps) {
    std::vector<std::size_t> depth(mdp.n_states, steps + 1);
    std::queue<StateId> q;
    depth[from] = 0;
    q.push(from);
    while (!q.empty()) {
        const StateId s = q.front();
        q.pop();
        if (mdp.is_terminal(s)) return true;
        if (depth[s] == steps) continue;
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            const StateId t = mdp.next(s, a);
            if (depth[t] > depth[s] + 1) {
                depth[t] = depth[s] + 1;
                q.push(t);
            }
        }
    }
    return false;
}

}  // namespace

TabularMDP random_mdp(std::mt19937_64& rng, std::size_t n_states, std::size_t n_actions,
                      std::size_t max_reward_atoms, double gamma, std::size_t horizon) {
    if (n_states < 1 || n_actions < 1 || max_reward_atoms < 1) {
        throw std::invalid_argument("random_mdp: sizes must be at least 1");
    }
    const StateId end = n_states - 1;
    std::uniform_int_distribution<StateId> pick_state(0, n_states - 1);
    std::uniform_int_distribution<std::size_t> pick_atoms(1, max_reward_atoms);
    std::uniform_real_distribution<double> pick_value(-10.0, 10.0);
    std::uniform_real_distribution<double> pick_weight(0.05, 1.0);

    for (;;) {
        TabularMDP mdp(n_states, n_actions, gamma, horizon);
        for (StateId s = 0; s < end; ++s) {
            for (ActionId a = 0; a < n_actions; ++a) {
                std::vector<Atom> atoms(pick_atoms(rng));
                for (auto& atom : atoms) {
                    atom.value = pick_value(rng);
                    atom.prob = pick_weight(rng);
                }
                const StateId to = pick_state(rng);
                mdp.set(s, a, to, normalize(std::move(atoms)));
            }
        }
        mdp.make_terminal(end);
        mdp.initial = {{0, 1.0}};
        if (terminal_reachable(mdp, 0, horizon)) {
            mdp.validate();
            return mdp;
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation

StateId sample_initial(const TabularMDP& mdp, std::mt19937_64& rng) {
    if (mdp.initial.size() == 1) return mdp.initial.front().first;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    for (const auto& [s, p] : mdp.initial) {
        acc += p;
        if (u < acc) return s;
    }
    return mdp.initial.back().first;
}

Trajectory rollout(const TabularMDP& mdp, const RolloutPolicy& policy, std::mt19937_64& rng) {
    Trajectory traj;
    traj.start = sample_initial(mdp, rng);
    StateId s = traj.start;
    double discount = 1.0;
    for (std::size_t t = 0; t < mdp.horizon && !mdp.is_terminal(s); ++t) {
        const ActionId a = policy(traj.start, traj.steps, s);
        if (a >= mdp.n_actions) {
            throw std::out_of_range("rollout: policy returned invalid action " + std::to_string(a));
        }
        const double r = sample(mdp.reward_dist(s, a), rng);
        traj.steps.push_back({s, a, r});
        traj.episode_return += discount * r;
        discount *= mdp.gamma;
        s = mdp.next(s, a);
    }
    traj.final_state = s;
    return traj;
}

}  // namespace trajq
