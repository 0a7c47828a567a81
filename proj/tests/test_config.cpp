#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "trajq/config.hpp"

using namespace trajq;

namespace {

std::string problems_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        std::string all;
        for (const auto& p : e.problems()) all += p + "\n";
        return all;
    }
    return {};
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_SUITE("config") {

TEST_CASE("agent block defaults") {
    const auto c = parse_config("env.name = three_state\nseed = 1\n");
    CHECK(c.agent.batch_size == 32);
    CHECK(c.agent.buffer_size == 300000);
    CHECK(c.agent.epsilon_init == 0.25);
    CHECK(c.agent.epsilon_final == 0.001);
    CHECK(c.agent.epsilon_decay_steps == 100000);
    CHECK(c.agent.start_timesteps == 5000);
    CHECK(c.agent.target_update_frequency == 500);
    CHECK(c.agent.history_window == 10);
    CHECK(c.agent.n_quantiles == 64);
    CHECK(c.agent.huber_kappa == 1.0);
    CHECK(c.agent_kind == AgentKind::TQL);
    CHECK(c.measure == RiskMeasure::cvar(0.1));
    CHECK(c.train.total_steps == 200000);
    CHECK(c.train.eval_every == 20000);
    CHECK(c.train.eval_episodes == 1000);
    CHECK(c.seed == 1);
    CHECK(c.output_dir == "runs/run");
}

TEST_CASE("measures and agent keys parse") {
    const auto c = parse_config(
        "env.name = grid   # trailing comment\n"
        "seed = 3\n"
        "measure = wang:-0.75\n"
        "agent.kind = markov_qr\n"
        "agent.history_window = full\n"
        "agent.learning_rate = 0.001\n"
        "agent.gamma = 0.5\n"
        "exact.tie_rule = alternating\n"
        "env.layout = S.Y/..G\n"
        "env.four_actions = true\n"
        "run_id = abc\n");
    CHECK(c.measure == RiskMeasure::wang(-0.75));
    CHECK(c.agent_kind == AgentKind::MarkovQR);
    CHECK(c.agent.history_window == kFullHistory);
    CHECK(c.agent.learning_rate == 0.001);
    CHECK(c.agent_gamma_set);
    CHECK(c.exact.tie_rule == TieRule::Alternating);
    CHECK(c.env.grid.rows == std::vector<std::string>{"S.Y", "..G"});
    CHECK(c.env.grid.four_actions);
    CHECK(c.output_dir == "runs/abc");
    CHECK(parse_config("env.name = three_state\nseed = 0\nmeasure = cvar:0.1\n").measure == RiskMeasure::cvar(0.1));
}

TEST_CASE("every problem is reported with its line") {
    const auto p = problems_of(
        "env.name = three_state\n"
        "measure = cvar:1.5\n"
        "agent.bogus = 1\n"
        "agent.batch_size = -4\n"
        "no equals sign\n"
        "env.bonus_prob = 0.5\n");
    CHECK(contains(p, "line 2"));
    CHECK(contains(p, "line 3"));
    CHECK(contains(p, "agent.bogus"));
    CHECK(contains(p, "line 4"));
    CHECK(contains(p, "line 5"));
    CHECK(contains(p, "line 6"));  // grid key on a non-grid env
    CHECK(contains(p, "seed"));    // missing seed
}

TEST_CASE("required and malformed values") {
    CHECK(contains(problems_of("seed = 1\n"), "env.name"));
    CHECK(contains(problems_of("env.name = three_state\n"), "seed"));
    CHECK(contains(problems_of("env.name = lunar\nseed = 1\n"), "lunar"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nseed = 2\n"), "duplicate"));
    CHECK(contains(problems_of("env.name = grid\nseed = x\n"), "line 2"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nagent.kind = iqn\n"), "line 3"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nenv.layout = S.Y/G\n"), "line 3"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nenv.gamma = 2\n"), "line 3"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nagent.epsilon_final = 0.9\n"), "epsilon"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nexact.tie_rule = random\n"), "line 3"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nenv.four_actions = maybe\n"), "line 3"));
    CHECK(contains(problems_of("env.name = mountain_car\nseed = 1\nenv.risk_scale = 3\n"), "line 3"));
    CHECK(contains(problems_of("env.name = grid\nseed = 1\nenv.layout_file = /no/such/file.txt\n"), "file"));
}

TEST_CASE("layout files resolve relative to the config") {
    const auto dir = std::filesystem::temp_directory_path() / "trajq_config_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "layout.txt") << "SY\n.G\n";
        std::ofstream(dir / "run.cfg") << "env.name = grid\nseed = 4\nenv.layout_file = layout.txt\n";
    }
    const auto c = load_config(dir / "run.cfg");
    CHECK(c.env.grid.rows == std::vector<std::string>{"SY", ".G"});
    CHECK(std::filesystem::path(c.env.layout_file).is_absolute());
    CHECK(c.source_text == "env.name = grid\nseed = 4\nenv.layout_file = layout.txt\n");
    std::filesystem::remove_all(dir);
    CHECK_THROWS(load_config(dir / "run.cfg"));
}

TEST_CASE("environment defaults and construction") {
    auto c = parse_config("env.name = grid\nseed = 0\n");
    auto mdp = build_mdp(c);
    CHECK(mdp.gamma == 0.99);
    CHECK(mdp.horizon == 12);
    CHECK(resolved_agent_config(c, mdp).gamma == 0.99);

    c = parse_config("env.name = three_state\nseed = 0\n");
    mdp = build_mdp(c);
    CHECK(mdp.gamma == 1.0);
    CHECK(mdp.horizon == 2);
    CHECK(resolved_agent_config(c, mdp).gamma == 1.0);

    c = parse_config("env.name = three_state\nseed = 0\nagent.gamma = 0.7\n");
    CHECK(resolved_agent_config(c, build_mdp(c)).gamma == 0.7);

    c = parse_config("env.name = random\nseed = 5\nenv.n_states = 4\n");
    mdp = build_mdp(c);
    CHECK(mdp.n_states == 4);
    CHECK(mdp.gamma == 0.9);
    CHECK(mdp.horizon == 4);
    const auto again = build_mdp(parse_config("env.name = random\nseed = 5\nenv.n_states = 4\n"));
    CHECK(again.reward == mdp.reward);
    const auto pinned = build_mdp(parse_config("env.name = random\nseed = 6\nenv.n_states = 4\nenv.seed = 5\n"));
    CHECK(pinned.reward == mdp.reward);

    c = parse_config("env.name = mountain_car\nseed = 0\nenv.position_bins = 8\nenv.velocity_bins = 8\nenv.action_values = -1,0,1\n");
    mdp = build_mdp(c);
    CHECK(mdp.n_states == 65);
    CHECK(mdp.n_actions == 3);
}

TEST_CASE("config hash tracks resolved content") {
    const auto a = parse_config("env.name = grid\nseed = 0\n");
    const auto b = parse_config("# comment\nseed = 0\n\nenv.name =   grid\n");
    const auto c = parse_config("env.name = grid\nseed = 1\n");
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.hash().size() == 16);
    CHECK(contains(a.canonical_text(), "seed = 0"));
}

}  // TEST_SUITE
