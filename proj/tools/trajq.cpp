// Command-line front end: counterexample, exact, train, sweep.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <sstream>

#include "trajq/config.hpp"
#include "trajq/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument("bad seed '" + item + "'");
        seeds.push_back(v);
    }
    if (seeds.empty()) throw std::invalid_argument("--seeds needs at least one seed");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trajectory-level risk-sensitive RL: exact operators and tabular agents"};
    app.require_subcommand(1);

    std::string measure_text = "cvar:0.1";
    auto* counter = app.add_subcommand("counterexample", "Print the three-state counterexample tables");
    counter->add_option("--measure", measure_text, "Risk measure, e.g. cvar:0.1, mean, wang:-0.75");

    std::string config_path;
    auto* exact = app.add_subcommand("exact", "Run the exact planners and write exact_summary.csv");
    exact->add_option("--config", config_path, "Config file")->required();

    auto* train = app.add_subcommand("train", "Train one agent and write learning curves");
    train->add_option("--config", config_path, "Config file")->required();

    std::string seeds_text;
    std::size_t threads = 0;
    auto* sweep = app.add_subcommand("sweep", "Train one run per seed in parallel and aggregate");
    sweep->add_option("--config", config_path, "Config file")->required();
    sweep->add_option("--seeds", seeds_text, "Comma-separated seeds, e.g. 0,1,2")->required();
    sweep->add_option("--threads", threads, "Worker threads (0: hardware concurrency)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*counter) {
            const auto measure = trajq::parse_measure(measure_text);
            measure.validate();
            return trajq::run_counterexample(measure, std::cout);
        }

        const auto config = trajq::load_config(config_path);
        const auto out_dir = trajq::resolve_output_dir(config.output_dir);
        const auto t0 = std::chrono::steady_clock::now();
        auto elapsed = [&] {
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };

        if (*exact) {
            const auto rows = trajq::run_exact(config, out_dir);
            for (const auto& r : rows) {
                std::cout << r.method << ": ";
                if (r.root_beta) {
                    std::cout << "root beta " << trajq::format_number(*r.root_beta) << ", policy "
                              << r.policy_fingerprint << ", converged " << (r.converged ? "yes" : "no") << ", "
                              << r.sweeps << " sweeps";
                } else {
                    std::cout << "not run (" << r.note << ")";
                }
                if (r.root_beta && !r.note.empty()) std::cout << " (" << r.note << ")";
                std::cout << '\n';
            }
            std::cout << "wrote " << (out_dir / "exact_summary.csv").string() << '\n';
            return 0;
        }

        if (*train) {
            const auto res = trajq::run_train(config, out_dir);
            const auto& last = res.log.evals.back();
            std::cout << "step " << last.step << ": " << config.measure.to_string() << " "
                      << trajq::format_number(last.measure_value) << ", mean return "
                      << trajq::format_number(last.mean_return) << " (" << trajq::format_number(elapsed())
                      << " s)\n";
            std::cout << "wrote " << out_dir.string() << '\n';
            return 0;
        }

        if (*sweep) {
            const auto res = trajq::run_sweep(config, parse_seeds(seeds_text), out_dir, threads);
            for (const auto& [seed, msg] : res.failed) std::cerr << "seed " << seed << " failed: " << msg << '\n';
            if (!res.rows.empty()) {
                const auto& r = res.rows.back();
                std::cout << "step " << r.step << ": mean " << trajq::format_number(r.mean) << ", min "
                          << trajq::format_number(r.min) << ", max " << trajq::format_number(r.max) << " over "
                          << r.n_seeds << " seeds (" << trajq::format_number(elapsed()) << " s)\n";
            }
            std::cout << "wrote " << (out_dir / "sweep.csv").string() << '\n';
            return res.failed.empty() ? 0 : 3;
        }
    } catch (const trajq::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
