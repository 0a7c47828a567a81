#include "trajq/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "trajq/operators.hpp"

namespace trajq {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (v == 0.0) v = 0.0;  // drop the sign of negative zero
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
    return std::string(buf, res.ptr);
}

std::filesystem::path resolve_output_dir(const std::string& output_dir) {
    std::filesystem::path p = output_dir;
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("TRAJQ_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
    return p;
}

namespace {

constexpr std::array<StateAction, 4> kCounterexampleKeys = {
    StateAction{0, 0}, StateAction{0, 1}, StateAction{1, 0}, StateAction{1, 1}};

std::array<double, 4> risk_row(const MarkovValueMap& z, const RiskMeasure& beta) {
    std::array<double, 4> row{};
    for (std::size_t i = 0; i < 4; ++i) row[i] = evaluate(beta, z.at(kCounterexampleKeys[i]));
    return row;
}

void print_row(std::ostream& out, const std::string& label, const std::array<double, 4>& row) {
    out << "  " << label;
    for (std::size_t pad = label.size(); pad < 24; ++pad) out << ' ';
    for (double v : row) {
        std::string cell = format_number(v);
        out << ' ';
        for (std::size_t pad = cell.size(); pad < 12; ++pad) out << ' ';
        out << cell;
    }
    out << '\n';
}

void print_header(std::ostream& out) {
    out << "  " << std::string(24, ' ');
    for (const char* k : {"(s0,a0)", "(s0,a1)", "(s1,a0)", "(s1,a1)"}) {
        std::string cell = k;
        out << ' ' << std::string(12 - cell.size(), ' ') << cell;
    }
    out << '\n';
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& hash, const std::string& header) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# config_hash=" << hash << '\n' << header << '\n';
    return out;
}

void write_snapshot(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    std::ofstream out(out_dir / "config.txt", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "config.txt").string());
    out << "# config_hash=" << config.hash() << '\n' << config.source_text;
    if (!config.source_text.empty() && config.source_text.back() != '\n') out << '\n';
}

std::string join_actions(const TabularMDP& mdp, const std::vector<ActionId>& actions) {
    std::string s;
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (i) s += ';';
        s += mdp.action_name(actions[i]);
    }
    return s;
}

double markov_root_beta(const TabularMDP& mdp, const MarkovPolicy& pi, const RiskMeasure& beta) {
    return root_objective(mdp, beta, per_start_return_dists(mdp, HistoryPolicy::from_markov(pi)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Counterexample

CounterexampleTables compute_counterexample(const RiskMeasure& measure) {
    measure.validate();
    CounterexampleTables t;
    t.measure = measure;

    const TabularMDP mdp = three_state_mdp();
    const MarkovPolicy optimal{{0, 0, 0}};
    const auto z = markov_policy_eval(mdp, optimal).z;
    t.optimal_beta = risk_row(z, measure);
    for (std::size_t i = 0; i < 4; ++i) t.optimal_mean[i] = z.at(kCounterexampleKeys[i]).mean();

    TieBreaker lowest;
    t.greedy_beta = risk_row(risk_bellman_step(mdp, z, measure, lowest), measure);

    const auto tie = tie_counterexample();
    TieBreaker alternating(TieRule::Alternating);
    const auto z1 = risk_bellman_step(tie.mdp, tie.z, measure, alternating);
    const auto z2 = risk_bellman_step(tie.mdp, tie.z, measure, alternating);
    t.tie_before_1 = risk_row(tie.z, measure);
    t.tie_after_1 = risk_row(z1, measure);
    t.tie_after_2 = risk_row(z2, measure);
    t.tie_gap_before = max_risk_gap(tie.z, tie.z, measure);
    t.tie_gap_after = max_risk_gap(z1, z2, measure);
    return t;
}

int run_counterexample(const RiskMeasure& measure, std::ostream& out) {
    const auto t = compute_counterexample(measure);
    const std::string name = measure.to_string();

    out << "three-state MDP, measure " << name << "\n";
    print_header(out);
    print_row(out, "mean(Z*)", t.optimal_mean);
    print_row(out, "beta(Z*)", t.optimal_beta);
    print_row(out, "beta(T*_beta Z*)", t.greedy_beta);
    out << "\ntwo-state tie construction, alternating tie-break\n";
    print_header(out);
    print_row(out, "beta(Z1) = beta(Z2)", t.tie_before_1);
    print_row(out, "beta(T*_beta Z1)", t.tie_after_1);
    print_row(out, "beta(T*_beta Z2)", t.tie_after_2);
    out << "  sup gap before " << format_number(t.tie_gap_before) << ", after " << format_number(t.tie_gap_after)
        << "\n";

    if (!(measure == RiskMeasure::cvar(0.1))) {
        out << "\nnon-default measure " << name << ": reference checks skipped\n";
        return 0;
    }

    std::vector<std::string> diffs;
    auto compare = [&](const char* row, const std::array<double, 4>& got, const std::array<double, 4>& want) {
        static constexpr const char* keys[] = {"(s0,a0)", "(s0,a1)", "(s1,a0)", "(s1,a1)"};
        for (std::size_t i = 0; i < 4; ++i) {
            if (std::abs(got[i] - want[i]) > kCounterexampleTolerance) {
                diffs.push_back(std::string(row) + " " + keys[i] + ": computed " + format_number(got[i]) +
                                ", reference " + format_number(want[i]) + ", diff " +
                                format_number(got[i] - want[i]));
            }
        }
    };
    compare("beta(Z*)", t.optimal_beta, kReferenceOptimalBeta);
    compare("beta(T*_beta Z*)", t.greedy_beta, kReferenceGreedyBeta);
    if (!(t.tie_gap_before == 0.0 && t.tie_gap_after > 0.0)) {
        diffs.push_back("tie construction: expected gap 0 before and > 0 after, got " +
                        format_number(t.tie_gap_before) + " and " + format_number(t.tie_gap_after));
    }

    if (diffs.empty()) {
        out << "\nall reference values match within " << format_number(kCounterexampleTolerance) << "\n";
        return 0;
    }
    out << "\nMISMATCH against reference values:\n";
    for (const auto& d : diffs) out << "  " << d << "\n";
    return 1;
}

// ---------------------------------------------------------------------------
// Exact pipeline

std::vector<ExactRow> compute_exact(const ExperimentConfig& config) {
    const TabularMDP mdp = build_mdp(config);
    const RiskMeasure& beta = config.measure;
    const auto& ex = config.exact;
    std::vector<ExactRow> rows;

    {
        ExactRow row;
        row.method = "hr_policy_iteration";
        try {
            const auto res = hr_policy_iteration(mdp, beta, HistoryPolicy{}, ex.max_iters, ex.max_nodes);
            row.root_beta = res.root_beta.back();
            row.policy_fingerprint = policy_fingerprint(mdp, res.policy);
            row.converged = res.converged;
            row.sweeps = res.iterations;
        } catch (const BudgetExceeded& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }
    {
        ExactRow row;
        row.method = "brute_force";
        try {
            const auto res = brute_force_optimal(mdp, beta, ex.max_candidates);
            row.root_beta = res.root_beta;
            row.policy_fingerprint = policy_fingerprint(mdp, res.policy);
            row.converged = true;
            row.sweeps = res.candidates;
        } catch (const BudgetExceeded& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }
    {
        ExactRow row;
        row.method = "mean_value_iteration";
        MarkovValueMap z = zero_markov_values(mdp);
        MeanIterationResult res;
        for (std::size_t sweep = 0; sweep < ex.markov_sweeps; ++sweep) {
            res = mean_value_iteration(mdp, 1, &z, ex.max_atoms);
            z = std::move(res.z);
            ++row.sweeps;
            if (res.mean_change.back() <= 1e-9) {
                row.converged = true;
                break;
            }
        }
        row.root_beta = markov_root_beta(mdp, res.policy, beta);
        row.policy_fingerprint = policy_fingerprint(mdp, HistoryPolicy::from_markov(res.policy));
        rows.push_back(std::move(row));
    }
    {
        ExactRow row;
        row.method = "risk_bellman_iteration";
        const auto res = risk_bellman_iteration(mdp, beta, ex.markov_sweeps, ex.tie_rule, ex.max_atoms);
        row.root_beta = markov_root_beta(mdp, res.policy, beta);
        row.policy_fingerprint = policy_fingerprint(mdp, HistoryPolicy::from_markov(res.policy));
        row.converged = res.converged;
        row.sweeps = res.sweeps;
        if (res.oscillating) row.note = "greedy policy oscillates";
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<ExactRow> run_exact(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    auto rows = compute_exact(config);
    std::filesystem::create_directories(out_dir);
    write_snapshot(config, out_dir);
    auto csv = open_csv(out_dir / "exact_summary.csv", config.hash(),
                        "method,root_beta,policy_fingerprint,converged,sweeps");
    for (const auto& r : rows) {
        csv << r.method << ',' << (r.root_beta ? format_number(*r.root_beta) : std::string("nan")) << ','
            << (r.root_beta ? r.policy_fingerprint : std::string("budget_exceeded")) << ','
            << (r.converged ? 1 : 0) << ',' << r.sweeps << '\n';
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Training

TrainResult run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const TabularMDP mdp = build_mdp(config);
    const AgentConfig agent_config = resolved_agent_config(config, mdp);
    QuantileAgent agent(config.agent_kind, mdp, config.measure, agent_config);

    TrainResult result;
    result.run_id = config.run_id;
    result.seed = config.seed;
    result.log = agent.train(config.train.total_steps, config.train.eval_every, config.train.eval_episodes,
                             config.seed);

    std::filesystem::create_directories(out_dir);
    write_snapshot(config, out_dir);
    const std::string hash = config.hash();
    const std::string measure_name = config.measure.to_string();

    {
        auto csv = open_csv(out_dir / "learning_curve.csv", hash,
                            "run_id,seed,step,measure_name,measure_value,mean_return");
        for (const auto& e : result.log.evals) {
            csv << config.run_id << ',' << config.seed << ',' << e.step << ',' << measure_name << ','
                << format_number(e.measure_value) << ',' << format_number(e.mean_return) << '\n';
        }
    }
    {
        auto csv = open_csv(out_dir / "histogram.csv", hash, "run_id,return_value,count");
        auto returns = result.log.final_returns;
        std::sort(returns.begin(), returns.end());
        std::vector<std::pair<std::string, std::size_t>> bins;
        for (double r : returns) {
            std::string v = format_number(r);
            if (!bins.empty() && bins.back().first == v) {
                ++bins.back().second;
            } else {
                bins.emplace_back(std::move(v), 1);
            }
        }
        for (const auto& [v, n] : bins) csv << config.run_id << ',' << v << ',' << n << '\n';
    }
    {
        auto csv = open_csv(out_dir / "policy_log.csv", hash, "step,actions");
        for (const auto& e : result.log.evals) csv << e.step << ',' << join_actions(mdp, e.actions) << '\n';
    }
    {
        std::ofstream tables(out_dir / "tables.txt", std::ios::binary);
        tables << "# config_hash=" << hash << '\n';
        agent.write_tables(tables);
    }
    return result;
}

std::vector<SweepRow> aggregate_curves(const std::vector<std::vector<EvalRecord>>& runs) {
    std::map<std::size_t, std::vector<double>> by_step;
    for (const auto& run : runs) {
        for (const auto& e : run) by_step[e.step].push_back(e.measure_value);
    }
    std::vector<SweepRow> rows;
    for (const auto& [step, values] : by_step) {
        SweepRow row;
        row.step = step;
        row.n_seeds = values.size();
        double sum = 0.0;
        for (double v : values) sum += v;
        row.mean = sum / static_cast<double>(values.size());
        row.min = *std::min_element(values.begin(), values.end());
        row.max = *std::max_element(values.begin(), values.end());
        rows.push_back(row);
    }
    return rows;
}

SweepResult run_sweep(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                      const std::filesystem::path& out_dir, std::size_t max_threads) {
    if (seeds.empty()) throw std::invalid_argument("sweep: at least one seed is required");
    if (max_threads == 0) max_threads = std::max(1u, std::thread::hardware_concurrency());

    std::vector<std::optional<TrainResult>> results(seeds.size());
    std::vector<std::string> errors(seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) {
            ExperimentConfig run = config;
            run.seed = seeds[i];
            run.run_id = config.run_id + "_seed" + std::to_string(seeds[i]);
            try {
                results[i] = run_train(run, out_dir / ("seed_" + std::to_string(seeds[i])));
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(max_threads, seeds.size()); ++t) pool.emplace_back(worker);
    }

    SweepResult out;
    std::vector<std::vector<EvalRecord>> curves;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (results[i]) {
            out.succeeded.push_back(seeds[i]);
            curves.push_back(results[i]->log.evals);
        } else {
            out.failed.emplace_back(seeds[i], errors[i]);
        }
    }
    out.rows = aggregate_curves(curves);

    std::filesystem::create_directories(out_dir);
    write_snapshot(config, out_dir);
    auto csv = open_csv(out_dir / "sweep.csv", config.hash(), "step,measure_name,mean,min,max,n_seeds");
    const std::string measure_name = config.measure.to_string();
    for (const auto& r : out.rows) {
        csv << r.step << ',' << measure_name << ',' << format_number(r.mean) << ',' << format_number(r.min) << ','
            << format_number(r.max) << ',' << r.n_seeds << '\n';
    }
    return out;
}

}  // namespace trajq
