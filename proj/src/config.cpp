#include "trajq/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace trajq {

namespace {

constexpr double kGridGamma = 0.99;
constexpr std::size_t kGridHorizon = 12;
constexpr double kRandomGamma = 0.9;
constexpr std::size_t kRandomHorizon = 4;

std::string join_problems(const std::vector<std::string>& problems) {
    std::string out = "invalid config:";
    for (const auto& p : problems) out += "\n  " + p;
    return out;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<std::uint64_t> to_uint(std::string_view s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<bool> to_bool(std::string_view s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    return std::nullopt;
}

// Applies one key to the config; returns an error message or empty.
using Setter = std::function<std::string(ExperimentConfig&, std::string_view)>;

struct KeySpec {
    Setter set;
    std::vector<EnvName> envs;  // empty: applies to every environment
};

Setter real(std::function<void(ExperimentConfig&, double)> f) {
    return [f](ExperimentConfig& c, std::string_view v) -> std::string {
        auto x = to_double(v);
        if (!x) return "expected a real number, got '" + std::string(v) + "'";
        f(c, *x);
        return {};
    };
}

Setter count(std::function<void(ExperimentConfig&, std::uint64_t)> f) {
    return [f](ExperimentConfig& c, std::string_view v) -> std::string {
        auto x = to_uint(v);
        if (!x) return "expected a non-negative integer, got '" + std::string(v) + "'";
        f(c, *x);
        return {};
    };
}

Setter flag(std::function<void(ExperimentConfig&, bool)> f) {
    return [f](ExperimentConfig& c, std::string_view v) -> std::string {
        auto x = to_bool(v);
        if (!x) return "expected true or false, got '" + std::string(v) + "'";
        f(c, *x);
        return {};
    };
}

Setter text(std::function<void(ExperimentConfig&, std::string)> f) {
    return [f](ExperimentConfig& c, std::string_view v) -> std::string {
        if (v.empty()) return "empty value";
        f(c, std::string(v));
        return {};
    };
}

const std::map<std::string, KeySpec, std::less<>>& key_table() {
    using E = EnvName;
    static const std::map<std::string, KeySpec, std::less<>> table = {
        {"env.gamma", {real([](auto& c, double v) { c.env.gamma = v; }), {}}},
        {"env.horizon", {count([](auto& c, auto v) { c.env.horizon = v; }), {}}},

        {"env.layout",
         {text([](auto& c, std::string v) {
              std::vector<std::string> rows;
              std::stringstream ss(v);
              for (std::string row; std::getline(ss, row, '/');) rows.emplace_back(trim(row));
              c.env.grid.rows = rows;
          }),
          {E::Grid}}},
        {"env.layout_file", {text([](auto& c, std::string v) { c.env.layout_file = v; }), {E::Grid}}},
        {"env.bonus_prob", {real([](auto& c, double v) { c.env.grid.bonus_prob = v; }), {E::Grid}}},
        {"env.bonus_value", {real([](auto& c, double v) { c.env.grid.bonus_value = v; }), {E::Grid}}},
        {"env.blue_value", {real([](auto& c, double v) { c.env.grid.blue_value = v; }), {E::Grid}}},
        {"env.orange_penalty", {real([](auto& c, double v) { c.env.grid.orange_penalty = v; }), {E::Grid}}},
        {"env.step_penalty", {real([](auto& c, double v) { c.env.grid.step_penalty = v; }), {E::Grid}}},
        {"env.four_actions", {flag([](auto& c, bool v) { c.env.grid.four_actions = v; }), {E::Grid}}},

        {"env.risk_scale", {real([](auto& c, double v) { c.env.mountain_car.risk_scale = v; }), {E::MountainCar}}},
        {"env.position_bins",
         {count([](auto& c, auto v) { c.env.mountain_car.position_bins = v; }), {E::MountainCar}}},
        {"env.velocity_bins",
         {count([](auto& c, auto v) { c.env.mountain_car.velocity_bins = v; }), {E::MountainCar}}},
        {"env.action_values",
         {[](ExperimentConfig& c, std::string_view v) -> std::string {
              std::vector<double> values;
              std::string s(v);
              std::stringstream ss(s);
              for (std::string item; std::getline(ss, item, ',');) {
                  auto x = to_double(trim(item));
                  if (!x) return "expected comma-separated reals, got '" + s + "'";
                  values.push_back(*x);
              }
              if (values.empty()) return "empty action list";
              c.env.mountain_car.action_values = values;
              return {};
          },
          {E::MountainCar}}},

        {"env.n_states", {count([](auto& c, auto v) { c.env.random_states = v; }), {E::Random}}},
        {"env.n_actions", {count([](auto& c, auto v) { c.env.random_actions = v; }), {E::Random}}},
        {"env.max_reward_atoms", {count([](auto& c, auto v) { c.env.random_reward_atoms = v; }), {E::Random}}},
        {"env.seed", {count([](auto& c, auto v) { c.env.random_seed = v; }), {E::Random}}},

        {"measure",
         {[](ExperimentConfig& c, std::string_view v) -> std::string {
              try {
                  c.measure = parse_measure(v);
                  c.measure.validate();
              } catch (const std::exception& e) {
                  return e.what();
              }
              return {};
          },
          {}}},

        {"agent.kind",
         {[](ExperimentConfig& c, std::string_view v) -> std::string {
              try {
                  c.agent_kind = parse_agent_kind(std::string(v));
              } catch (const std::exception& e) {
                  return e.what();
              }
              return {};
          },
          {}}},
        {"agent.n_quantiles", {count([](auto& c, auto v) { c.agent.n_quantiles = v; }), {}}},
        {"agent.learning_rate", {real([](auto& c, double v) { c.agent.learning_rate = v; }), {}}},
        {"agent.gamma",
         {real([](auto& c, double v) {
              c.agent.gamma = v;
              c.agent_gamma_set = true;
          }),
          {}}},
        {"agent.epsilon_init", {real([](auto& c, double v) { c.agent.epsilon_init = v; }), {}}},
        {"agent.epsilon_final", {real([](auto& c, double v) { c.agent.epsilon_final = v; }), {}}},
        {"agent.epsilon_decay_steps", {count([](auto& c, auto v) { c.agent.epsilon_decay_steps = v; }), {}}},
        {"agent.buffer_size", {count([](auto& c, auto v) { c.agent.buffer_size = v; }), {}}},
        {"agent.batch_size", {count([](auto& c, auto v) { c.agent.batch_size = v; }), {}}},
        {"agent.start_timesteps", {count([](auto& c, auto v) { c.agent.start_timesteps = v; }), {}}},
        {"agent.target_update_frequency",
         {count([](auto& c, auto v) { c.agent.target_update_frequency = v; }), {}}},
        {"agent.history_window",
         {[](ExperimentConfig& c, std::string_view v) -> std::string {
              if (v == "full") {
                  c.agent.history_window = kFullHistory;
                  return {};
              }
              auto x = to_uint(v);
              if (!x) return "expected a non-negative integer or 'full', got '" + std::string(v) + "'";
              c.agent.history_window = *x;
              return {};
          },
          {}}},
        {"agent.huber_kappa", {real([](auto& c, double v) { c.agent.huber_kappa = v; }), {}}},
        {"agent.k_samples", {count([](auto& c, auto v) { c.agent.k_samples = v; }), {}}},
        {"agent.stochastic_fractions", {flag([](auto& c, bool v) { c.agent.stochastic_fractions = v; }), {}}},
        {"agent.default_value", {real([](auto& c, double v) { c.agent.default_value = v; }), {}}},

        {"train.total_steps", {count([](auto& c, auto v) { c.train.total_steps = v; }), {}}},
        {"train.eval_every", {count([](auto& c, auto v) { c.train.eval_every = v; }), {}}},
        {"train.eval_episodes", {count([](auto& c, auto v) { c.train.eval_episodes = v; }), {}}},

        {"exact.max_iters", {count([](auto& c, auto v) { c.exact.max_iters = v; }), {}}},
        {"exact.max_nodes", {count([](auto& c, auto v) { c.exact.max_nodes = v; }), {}}},
        {"exact.max_candidates", {count([](auto& c, auto v) { c.exact.max_candidates = v; }), {}}},
        {"exact.markov_sweeps", {count([](auto& c, auto v) { c.exact.markov_sweeps = v; }), {}}},
        {"exact.max_atoms", {count([](auto& c, auto v) { c.exact.max_atoms = v; }), {}}},
        {"exact.tie_rule",
         {[](ExperimentConfig& c, std::string_view v) -> std::string {
              if (v == "lowest") {
                  c.exact.tie_rule = TieRule::LowestIndex;
              } else if (v == "alternating") {
                  c.exact.tie_rule = TieRule::Alternating;
              } else {
                  return "expected lowest or alternating, got '" + std::string(v) + "'";
              }
              return {};
          },
          {}}},

        {"output_dir", {text([](auto& c, std::string v) { c.output_dir = v; }), {}}},
        {"run_id", {text([](auto& c, std::string v) { c.run_id = v; }), {}}},
    };
    return table;
}

std::optional<EnvName> parse_env_name(std::string_view v) {
    if (v == "three_state") return EnvName::ThreeState;
    if (v == "grid") return EnvName::Grid;
    if (v == "mountain_car") return EnvName::MountainCar;
    if (v == "random") return EnvName::Random;
    return std::nullopt;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::string to_string(EnvName name) {
    switch (name) {
        case EnvName::ThreeState: return "three_state";
        case EnvName::Grid: return "grid";
        case EnvName::MountainCar: return "mountain_car";
        case EnvName::Random: return "random";
    }
    return "?";
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    struct Entry {
        std::size_t line;
        std::string key;
        std::string value;
    };
    std::vector<std::string> problems;
    std::vector<Entry> entries;
    std::map<std::string, std::size_t> first_line;

    std::stringstream in(text);
    std::size_t line_no = 0;
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            problems.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
            continue;
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) {
            problems.push_back("line " + std::to_string(line_no) + ": missing key");
            continue;
        }
        if (auto [it, fresh] = first_line.try_emplace(key, line_no); !fresh) {
            problems.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key +
                               "' (first set on line " + std::to_string(it->second) + ")");
            continue;
        }
        entries.push_back({line_no, std::move(key), std::move(value)});
    }

    ExperimentConfig config;
    config.source_text = text;
    auto where = [](std::size_t line) { return "line " + std::to_string(line) + ": "; };

    // The environment name decides which env.* keys are legal, so read it first.
    bool have_env = false;
    bool have_seed = false;
    for (const auto& e : entries) {
        if (e.key == "env.name") {
            have_env = true;
            if (auto name = parse_env_name(e.value)) {
                config.env.name = *name;
            } else {
                problems.push_back(where(e.line) + "unknown env.name '" + e.value +
                                   "' (expected three_state, grid, mountain_car or random)");
            }
        } else if (e.key == "seed") {
            if (auto s = to_uint(e.value)) {
                config.seed = *s;
                have_seed = true;
            } else {
                problems.push_back(where(e.line) + "seed: expected a non-negative integer, got '" + e.value + "'");
                have_seed = true;
            }
        }
    }
    if (!have_env) problems.push_back("missing required key 'env.name'");
    if (!have_seed) problems.push_back("missing required key 'seed'");

    const auto& table = key_table();
    for (const auto& e : entries) {
        if (e.key == "env.name" || e.key == "seed") continue;
        auto it = table.find(e.key);
        if (it == table.end()) {
            problems.push_back(where(e.line) + "unknown key '" + e.key + "'");
            continue;
        }
        const auto& envs = it->second.envs;
        if (!envs.empty() && std::find(envs.begin(), envs.end(), config.env.name) == envs.end()) {
            problems.push_back(where(e.line) + "key '" + e.key + "' does not apply to env " +
                               to_string(config.env.name));
            continue;
        }
        if (auto msg = it->second.set(config, e.value); !msg.empty()) {
            problems.push_back(where(e.line) + e.key + ": " + msg);
        }
    }

    if (!config.env.layout_file.empty()) {
        if (first_line.contains("env.layout")) {
            problems.push_back("env.layout and env.layout_file are mutually exclusive");
        } else {
            std::filesystem::path p = config.env.layout_file;
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            config.env.layout_file = p.string();
            try {
                config.env.grid.rows = load_grid_rows(p);
            } catch (const std::exception& e) {
                problems.push_back("env.layout_file: " + std::string(e.what()));
            }
        }
    }

    // Semantic checks on the assembled config.
    auto check = [&](const std::string& what, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            problems.push_back(what + ": " + e.what());
        }
    };
    // Prefix naming the line that set a key, if it was set explicitly.
    auto at = [&](std::string_view key) {
        auto it = first_line.find(std::string(key));
        return it == first_line.end() ? std::string() : where(it->second);
    };
    if (config.env.gamma && !(*config.env.gamma >= 0.0 && *config.env.gamma <= 1.0)) {
        problems.push_back(at("env.gamma") + "env.gamma must lie in [0, 1]");
    }
    if (config.env.horizon && *config.env.horizon == 0) {
        problems.push_back(at("env.horizon") + "env.horizon must be at least 1");
    }
    if (config.env.name == EnvName::Grid) {
        const auto key = first_line.contains("env.layout_file") ? "env.layout_file" : "env.layout";
        check(at(key) + "env (grid layout)", [&] { config.env.grid.validate(); });
    }
    if (config.env.name == EnvName::MountainCar) {
        const auto& mc = config.env.mountain_car;
        if (!(mc.risk_scale >= 0.0 && mc.risk_scale <= 1.0)) {
            problems.push_back(at("env.risk_scale") + "env.risk_scale must lie in [0, 1]");
        }
        if (mc.position_bins < 2) problems.push_back(at("env.position_bins") + "env.position_bins must be at least 2");
        if (mc.velocity_bins < 2) problems.push_back(at("env.velocity_bins") + "env.velocity_bins must be at least 2");
        for (double a : mc.action_values) {
            if (!(a >= -1.0 && a <= 1.0)) {
                problems.push_back(at("env.action_values") + "env.action_values must lie in [-1, 1]");
                break;
            }
        }
    }
    if (config.env.name == EnvName::Random) {
        if (config.env.random_states < 2) problems.push_back("env.n_states must be at least 2");
        if (config.env.random_actions < 1) problems.push_back("env.n_actions must be at least 1");
        if (config.env.random_reward_atoms < 1) problems.push_back("env.max_reward_atoms must be at least 1");
    }
    check("agent", [&] { config.agent.validate(); });
    if (config.train.eval_episodes == 0) problems.push_back("train.eval_episodes must be positive");
    if (config.exact.max_iters == 0) problems.push_back("exact.max_iters must be positive");
    if (config.exact.markov_sweeps == 0) problems.push_back("exact.markov_sweeps must be positive");
    if (config.exact.max_atoms == 1) problems.push_back("exact.max_atoms must be 0 (exact) or at least 2");
    if (config.run_id.find_first_of("/\\,\n") != std::string::npos) {
        problems.push_back("run_id must not contain '/', '\\' or ','");
    }

    if (!problems.empty()) throw ConfigError(std::move(problems));
    if (config.output_dir.empty()) config.output_dir = "runs/" + config.run_id;
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file '" + path.string() + "'"});
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.parent_path());
}

std::string ExperimentConfig::canonical_text() const {
    std::ostringstream out;
    auto opt_real = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("default"); };
    out << "env.name = " << to_string(env.name) << '\n';
    out << "env.gamma = " << opt_real(env.gamma) << '\n';
    out << "env.horizon = " << (env.horizon ? std::to_string(*env.horizon) : "default") << '\n';
    switch (env.name) {
        case EnvName::Grid: {
            out << "env.layout = ";
            for (std::size_t i = 0; i < env.grid.rows.size(); ++i) out << (i ? "/" : "") << env.grid.rows[i];
            out << '\n';
            out << "env.bonus_prob = " << format_double(env.grid.bonus_prob) << '\n';
            out << "env.bonus_value = " << format_double(env.grid.bonus_value) << '\n';
            out << "env.blue_value = " << format_double(env.grid.blue_value) << '\n';
            out << "env.orange_penalty = " << format_double(env.grid.orange_penalty) << '\n';
            out << "env.step_penalty = " << format_double(env.grid.step_penalty) << '\n';
            out << "env.four_actions = " << (env.grid.four_actions ? "true" : "false") << '\n';
            break;
        }
        case EnvName::MountainCar: {
            const auto& mc = env.mountain_car;
            out << "env.risk_scale = " << format_double(mc.risk_scale) << '\n';
            out << "env.position_bins = " << mc.position_bins << '\n';
            out << "env.velocity_bins = " << mc.velocity_bins << '\n';
            out << "env.action_values = ";
            for (std::size_t i = 0; i < mc.action_values.size(); ++i) {
                out << (i ? "," : "") << format_double(mc.action_values[i]);
            }
            out << '\n';
            break;
        }
        case EnvName::Random:
            out << "env.n_states = " << env.random_states << '\n';
            out << "env.n_actions = " << env.random_actions << '\n';
            out << "env.max_reward_atoms = " << env.random_reward_atoms << '\n';
            out << "env.seed = " << (env.random_seed ? *env.random_seed : seed) << '\n';
            break;
        case EnvName::ThreeState:
            break;
    }
    out << "measure = " << measure.to_string() << '\n';
    out << "agent.kind = " << to_string(agent_kind) << '\n';
    out << "agent.n_quantiles = " << agent.n_quantiles << '\n';
    out << "agent.learning_rate = " << format_double(agent.learning_rate) << '\n';
    out << "agent.gamma = " << (agent_gamma_set ? format_double(agent.gamma) : "env") << '\n';
    out << "agent.epsilon_init = " << format_double(agent.epsilon_init) << '\n';
    out << "agent.epsilon_final = " << format_double(agent.epsilon_final) << '\n';
    out << "agent.epsilon_decay_steps = " << agent.epsilon_decay_steps << '\n';
    out << "agent.buffer_size = " << agent.buffer_size << '\n';
    out << "agent.batch_size = " << agent.batch_size << '\n';
    out << "agent.start_timesteps = " << agent.start_timesteps << '\n';
    out << "agent.target_update_frequency = " << agent.target_update_frequency << '\n';
    out << "agent.history_window = "
        << (agent.history_window == kFullHistory ? std::string("full") : std::to_string(agent.history_window))
        << '\n';
    out << "agent.huber_kappa = " << format_double(agent.huber_kappa) << '\n';
    out << "agent.k_samples = " << agent.k_samples << '\n';
    out << "agent.stochastic_fractions = " << (agent.stochastic_fractions ? "true" : "false") << '\n';
    out << "agent.default_value = " << format_double(agent.default_value) << '\n';
    out << "train.total_steps = " << train.total_steps << '\n';
    out << "train.eval_every = " << train.eval_every << '\n';
    out << "train.eval_episodes = " << train.eval_episodes << '\n';
    out << "exact.max_iters = " << exact.max_iters << '\n';
    out << "exact.max_nodes = " << exact.max_nodes << '\n';
    out << "exact.max_candidates = " << exact.max_candidates << '\n';
    out << "exact.markov_sweeps = " << exact.markov_sweeps << '\n';
    out << "exact.max_atoms = " << exact.max_atoms << '\n';
    out << "exact.tie_rule = " << (exact.tie_rule == TieRule::Alternating ? "alternating" : "lowest") << '\n';
    out << "seed = " << seed << '\n';
    out << "run_id = " << run_id << '\n';
    return out.str();
}

std::string ExperimentConfig::hash() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : canonical_text()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

TabularMDP build_mdp(const ExperimentConfig& config) {
    const auto& env = config.env;
    TabularMDP mdp;
    switch (env.name) {
        case EnvName::ThreeState:
            mdp = three_state_mdp();
            if (env.gamma) mdp.gamma = *env.gamma;
            if (env.horizon) mdp.horizon = *env.horizon;
            break;
        case EnvName::Grid:
            mdp = risky_grid(env.grid, env.gamma.value_or(kGridGamma), env.horizon.value_or(kGridHorizon));
            break;
        case EnvName::MountainCar: {
            auto params = env.mountain_car;
            if (env.gamma) params.gamma = *env.gamma;
            if (env.horizon) params.horizon = *env.horizon;
            mdp = risky_mountain_car(params);
            break;
        }
        case EnvName::Random: {
            std::mt19937_64 rng(env.random_seed.value_or(config.seed));
            mdp = random_mdp(rng, env.random_states, env.random_actions, env.random_reward_atoms,
                             env.gamma.value_or(kRandomGamma), env.horizon.value_or(kRandomHorizon));
            break;
        }
    }
    mdp.validate();
    return mdp;
}

AgentConfig resolved_agent_config(const ExperimentConfig& config, const TabularMDP& mdp) {
    AgentConfig agent = config.agent;
    if (!config.agent_gamma_set) agent.gamma = mdp.gamma;
    return agent;
}

}  // namespace trajq
