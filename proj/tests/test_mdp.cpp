#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "trajq/mdp.hpp"
#include "trajq/operators.hpp"

using namespace trajq;

namespace {

// Kolmogorov distance between an empirical sample and an exact mixture.
double ks_distance(std::vector<double> xs, const ReturnDistribution& d) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double worst = 0.0;
    for (const auto& a : d.atoms()) {
        const auto hi = std::upper_bound(xs.begin(), xs.end(), a.value + 1e-9) - xs.begin();
        const auto lo = std::lower_bound(xs.begin(), xs.end(), a.value - 1e-9) - xs.begin();
        worst = std::max(worst, std::abs(static_cast<double>(hi) / n - cdf(d, a.value)));
        worst = std::max(worst, std::abs(static_cast<double>(lo) / n - cdf(d, a.value - 1e-6)));
    }
    return worst;
}

// DKW band at confidence 1 - alpha.
double dkw(std::size_t n, double alpha = 1e-3) {
    return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(n)));
}

RolloutPolicy open_loop(std::vector<ActionId> seq) {
    return [seq](StateId, std::span<const Step> past, StateId) { return seq[std::min(past.size(), seq.size() - 1)]; };
}

}  // namespace

TEST_SUITE("mdp") {

TEST_CASE("three-state MDP matches its definition") {
    const auto mdp = three_state_mdp();
    CHECK(mdp.n_states == 3);
    CHECK(mdp.n_actions == 2);
    CHECK(mdp.gamma == 1.0);
    CHECK(mdp.horizon == 2);
    const auto coin = normalize({{-10, 0.1}, {100, 0.9}});
    CHECK(mdp.reward_dist(0, 0) == coin);
    CHECK(mdp.reward_dist(1, 0) == coin);
    CHECK(mdp.reward_dist(0, 1) == dirac(-5));
    CHECK(mdp.reward_dist(1, 1) == dirac(-5));
    CHECK(mdp.next(0, 0) == 1);
    CHECK(mdp.next(0, 1) == 1);
    CHECK(mdp.next(1, 0) == 2);
    CHECK(mdp.next(1, 1) == 2);
    CHECK(mdp.is_terminal(2));
    CHECK(mdp.next(2, 0) == 2);
    CHECK(mdp.reward_dist(2, 1) == dirac(0));
    CHECK_NOTHROW(mdp.validate());
}

TEST_CASE("validate rejects broken invariants") {
    auto base = three_state_mdp();
    {
        auto m = base;
        m.transition[0] = 7;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    {
        auto m = base;
        m.initial = {{0, 0.5}};
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    {
        auto m = base;
        m.horizon = 0;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    {
        auto m = base;
        m.reward[2 * 2] = dirac(1.0);  // terminal must pay nothing
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    {
        auto m = base;
        m.transition[2 * 2 + 1] = 0;  // terminal must be absorbing
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
    {
        auto m = base;
        m.gamma = 1.5;
        CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    }
}

TEST_CASE("grid layout validation") {
    GridLayout ok;
    CHECK_NOTHROW(ok.validate());
    for (std::vector<std::string> rows : std::vector<std::vector<std::string>>{
             {"S..", "..."},          // no goal
             {"S.G", "S.."},          // two starts
             {"S.G", ".."},           // ragged
             {"S.X", "..G"},          // bad symbol
             {},                      // empty
             {"SG", "GG"}}) {
        GridLayout bad;
        bad.rows = rows;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        CHECK_THROWS_AS(risky_grid(bad, 0.99, 10), std::invalid_argument);
    }
}

TEST_CASE("grid rewards per cell type") {
    GridLayout layout;
    layout.rows = {"SYB", "O.G"};
    const auto mdp = risky_grid(layout, 1.0, 10);
    // Y and B give one bit each.
    CHECK(mdp.n_states == 6 * 4);
    const StateId start = mdp.initial.front().first;
    CHECK(decode_grid_state(layout, start).row == 0);
    CHECK(decode_grid_state(layout, start).col == 0);
    CHECK(decode_grid_state(layout, start).mask == 0);
    // right into Y: {-2 + 100 w.p. .75, -2 w.p. .25}
    CHECK(mdp.reward_dist(start, 0) == normalize({{98, 0.75}, {-2, 0.25}}));
    // down into O
    CHECK(mdp.reward_dist(start, 1) == dirac(-102));
    const StateId on_y = mdp.next(start, 0);
    CHECK(decode_grid_state(layout, on_y).col == 1);
    CHECK(decode_grid_state(layout, on_y).mask != 0);
    // right into B
    CHECK(mdp.reward_dist(on_y, 0) == dirac(18));
    const StateId on_b = mdp.next(on_y, 0);
    // off-grid move stays in place with the bare step penalty
    CHECK(mdp.next(on_b, 0) == on_b);
    CHECK(mdp.reward_dist(on_b, 0) == dirac(-2));
    // empty cell
    const StateId on_o = mdp.next(start, 1);
    CHECK(mdp.reward_dist(on_o, 0) == dirac(-2));
    // goal is terminal
    CHECK(mdp.is_terminal(mdp.next(on_b, 1)));
}

TEST_CASE("collected bonuses pay once") {
    GridLayout layout;
    layout.rows = {"SB.", "..G"};
    layout.four_actions = true;
    const auto mdp = risky_grid(layout, 1.0, 10);
    const StateId start = mdp.initial.front().first;
    const ActionId up = 0, left = 2, right = 3;
    (void)up;
    const StateId on_b = mdp.next(start, right);
    CHECK(mdp.reward_dist(start, right) == dirac(18));
    const StateId back = mdp.next(on_b, left);
    CHECK(decode_grid_state(layout, back).col == 0);
    CHECK(decode_grid_state(layout, back).mask == 1);
    CHECK(mdp.reward_dist(back, right) == dirac(-2));
}

TEST_CASE("grid state count and monotone masks") {
    const GridLayout layout;
    const auto mdp = risky_grid(layout, 0.99, 12);
    std::size_t bonus = 0;
    for (const auto& r : layout.rows) bonus += static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](char c) { return c == 'Y' || c == 'B'; }));
    CHECK(mdp.n_states == 16 * (std::size_t{1} << bonus));
    for (StateId s = 0; s < mdp.n_states; ++s) {
        const unsigned m = decode_grid_state(layout, s).mask;
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            const unsigned m2 = decode_grid_state(layout, mdp.next(s, a)).mask;
            CHECK((m & m2) == m);
        }
    }
    CHECK_NOTHROW(mdp.validate());
}

TEST_CASE("grid rows load from a text file") {
    const auto path = std::filesystem::temp_directory_path() / "trajq_layout_test.txt";
    {
        std::ofstream f(path);
        f << "# comment\n\nS.Y\n..G\n";
    }
    CHECK(load_grid_rows(path) == std::vector<std::string>{"S.Y", "..G"});
    std::filesystem::remove(path);
    CHECK_THROWS(load_grid_rows(path));
}

TEST_CASE("mountain car penalty") {
    CHECK(mountain_car_penalty(0.5, 1.0) == dirac(-0.5));
    CHECK(mountain_car_penalty(0.5, -1.0) == dirac(-0.5));
    CHECK(mountain_car_penalty(0.4, 0.0) == normalize({{-0.8, 0.25}, {0.0, 0.75}}));
    CHECK(mountain_car_penalty(0.0, 0.0) == dirac(0.0));
    CHECK(mountain_car_penalty(0.0, 0.5) == dirac(0.0));
    const auto half = mountain_car_penalty(1.0, 0.5);
    CHECK(half.atoms()[0].value == doctest::Approx(-1.5));
    CHECK(half.atoms()[0].prob == doctest::Approx(1.0 / 2.5));
    CHECK_THROWS_AS(mountain_car_penalty(1.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(mountain_car_penalty(-0.1, 0.0), std::invalid_argument);
}

TEST_CASE("mountain car MDP") {
    MountainCarParams p;
    p.position_bins = 8;
    p.velocity_bins = 6;
    const auto mdp = risky_mountain_car(p);
    CHECK(mdp.n_states == 8 * 6 + 1);
    CHECK(mdp.n_actions == 5);
    CHECK(mdp.is_terminal(mdp.n_states - 1));
    CHECK_NOTHROW(mdp.validate());
    // Every non-terminal reward is the control cost plus the penalty, with +100 on reaching the goal.
    for (StateId s = 0; s + 1 < mdp.n_states; ++s) {
        for (ActionId a = 0; a < mdp.n_actions; ++a) {
            const double av = p.action_values[a];
            const double bonus = mdp.is_terminal(mdp.next(s, a)) ? 100.0 : 0.0;
            const auto expect = affine(mountain_car_penalty(p.risk_scale, av), 1.0, -0.1 * av * av + bonus);
            CHECK(mdp.reward_dist(s, a) == expect);
        }
    }
    MountainCarParams bad = p;
    bad.risk_scale = 2.0;
    CHECK_THROWS_AS(risky_mountain_car(bad), std::invalid_argument);
    bad = p;
    bad.position_bins = 1;
    CHECK_THROWS_AS(risky_mountain_car(bad), std::invalid_argument);
    bad = p;
    bad.action_values.clear();
    CHECK_THROWS_AS(risky_mountain_car(bad), std::invalid_argument);
}

TEST_CASE("mountain car penalty frequency") {
    std::mt19937_64 rng(2024);
    const std::size_t n = 100000;
    for (double a : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        const auto d = mountain_car_penalty(0.5, a);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) hits += sample(d, rng) < 0.0 ? 1 : 0;
        const double p = 1.0 / (4.0 - 3.0 * std::abs(a));
        const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / static_cast<double>(n));
        CHECK(std::abs(static_cast<double>(hits) / n - p) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("random MDPs are valid and reproducible") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::mt19937_64 a(seed), b(seed);
        const auto m1 = random_mdp(a, 5, 2, 3, 0.9, 4);
        const auto m2 = random_mdp(b, 5, 2, 3, 0.9, 4);
        CHECK_NOTHROW(m1.validate());
        CHECK(m1.transition == m2.transition);
        CHECK(m1.reward == m2.reward);
        for (const auto& r : m1.reward) {
            CHECK(r.size() <= 3);
            CHECK(r.min_value() >= -10.0);
            CHECK(r.max_value() <= 10.0);
        }
    }
    std::mt19937_64 rng(1);
    const auto single = random_mdp(rng, 1, 3, 2, 0.9, 3);
    CHECK(single.is_terminal(0));
    for (ActionId a = 0; a < 3; ++a) {
        CHECK(trajectory_return_dist(single, MarkovPolicy{{a}}) == dirac(0.0));
    }
    CHECK_THROWS_AS(random_mdp(rng, 0, 2, 2, 0.9, 3), std::invalid_argument);
}

TEST_CASE("rollouts") {
    const auto mdp = three_state_mdp();
    std::mt19937_64 rng(7);
    for (int i = 0; i < 100; ++i) {
        const auto t = rollout(mdp, open_loop({1, 1}), rng);
        CHECK(t.episode_return == -10.0);
        CHECK(t.steps.size() == 2);
        CHECK(t.final_state == 2);
    }
    auto bad = [](StateId, std::span<const Step>, StateId) -> ActionId { return 5; };
    CHECK_THROWS_AS(rollout(mdp, bad, rng), std::out_of_range);
}

TEST_CASE("rollout return distribution matches the exact convolution") {
    const auto mdp = three_state_mdp();
    std::mt19937_64 rng(31);
    const std::size_t n = 100000;
    std::vector<double> xs;
    for (std::size_t i = 0; i < n; ++i) xs.push_back(rollout(mdp, open_loop({0, 1}), rng).episode_return);
    const auto exact = convolve(normalize({{100, 0.9}, {-10, 0.1}}), dirac(-5));
    CHECK(ks_distance(xs, exact) <= dkw(n));
}

TEST_CASE("horizon caps the episode") {
    GridLayout layout;
    layout.rows = {"S....", "....G"};
    const auto mdp = risky_grid(layout, 0.9, 3);
    std::mt19937_64 rng(1);
    const auto t = rollout(mdp, open_loop({0}), rng);
    CHECK(t.steps.size() == 3);
    CHECK(t.episode_return == doctest::Approx(-2 - 1.8 - 1.62));
}

TEST_CASE("grid rollouts match the exact trajectory distribution") {
    const GridLayout layout;
    const auto mdp = risky_grid(layout, 0.99, 12);
    std::mt19937_64 rng(5);
    const std::size_t n = 100000;
    for (const std::vector<ActionId>& seq : {std::vector<ActionId>{1, 1, 1, 0, 0, 0}, std::vector<ActionId>{1, 0, 1, 0, 1, 0}}) {
        std::vector<double> xs;
        for (std::size_t i = 0; i < n; ++i) xs.push_back(rollout(mdp, open_loop(seq), rng).episode_return);
        const auto exact = oracle::to_dist(oracle::sequence_return(mdp, mdp.initial.front().first, seq));
        CHECK(ks_distance(xs, exact) <= dkw(n));
        HistoryPolicy pi;
        HistoryKey h{mdp.initial.front().first, {}};
        for (ActionId a : seq) {
            pi.table[h] = a;
            h = h.extended(a);
        }
        CHECK(wasserstein(trajectory_return_dist(mdp, pi), exact, 1.0) <= 1e-9);
    }
}

}  // TEST_SUITE
