// Command-line front end: pricing, tensor banks, benchmarks, training and evaluation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "autohedge/analytics.hpp"
#include "autohedge/cheb_tensor.hpp"
#include "autohedge/comparison.hpp"
#include "autohedge/config.hpp"
#include "autohedge/drl_agent.hpp"
#include "autohedge/hedge_env.hpp"
#include "autohedge/market_sim.hpp"
#include "autohedge/mc_pricer.hpp"
#include "autohedge/strategies.hpp"

namespace fs = std::filesystem;
using namespace autohedge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ExperimentConfig read_config(const std::string& path) {
    return path.empty() ? ExperimentConfig{} : load_config(path);
}

std::string hint_build(const std::string& config, const std::string& bank) {
    std::string cmd = "autohedge build-tensor";
    if (!config.empty()) cmd += " --config " + config;
    return cmd + " --out " + bank;
}

std::shared_ptr<const ChebTensorBank> open_bank(const std::string& path, const std::string& config) {
    if (!fs::exists(path))
        throw ValidationError("bank file '" + path + "' not found; build it first with: " + hint_build(config, path));
    return std::make_shared<const ChebTensorBank>(load_bank(path));
}

/// Environment factory for the configured pricing mode (loads the bank once).
EnvFactory env_factory(const ExperimentConfig& cfg, const std::string& bank_path, const std::string& config_path) {
    const EnvConfig ec = cfg.env_config();
    std::shared_ptr<const ChebTensorBank> bank;
    if (ec.pricing_mode == PricingMode::tensor) bank = open_bank(bank_path, config_path);
    return [ec, bank] { return HedgeEnv(ec, bank); };
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ValidationError("cannot parse number '" + tok + "'");
        }
    }
    return out;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + p.string() + "' for writing");
    return os;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Worst-of autocallable note pricing and hedging lab"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("-c,--config", config_path, "Experiment config (JSON); built-in defaults when omitted")
        ->check(CLI::ExistingFile);

    // price
    auto* price = app.add_subcommand("price", "Price the note at a date and spot vector");
    double p_date = 0.0;
    std::string p_spots;
    bool p_fast = false;
    std::string p_bank;
    std::size_t p_paths = 0;
    std::uint64_t p_seed = 0;
    price->add_option("--date", p_date, "Valuation time in years")->default_val(0.0);
    price->add_option("--spots", p_spots, "Comma-separated spots (default: initial prices)");
    price->add_flag("--fast", p_fast, "Evaluate the Chebyshev tensor bank instead of Monte Carlo");
    price->add_option("--bank", p_bank, "Bank file for --fast (default: grid.bank_path)");
    auto* p_paths_opt = price->add_option("--paths", p_paths, "MC paths (default: pricing.n_paths)");
    auto* p_seed_opt = price->add_option("--seed", p_seed, "MC seed (default: pricing.seed)");

    // build-tensor
    auto* build = app.add_subcommand("build-tensor", "Build and save the per-day Chebyshev tensor bank");
    std::string b_out;
    std::string b_days;
    build->add_option("--out", b_out, "Output bank file (default: grid.bank_path)");
    build->add_option("--days", b_days, "Comma-separated days in years (default: every rebalancing date)");

    // bench
    auto* bench = app.add_subcommand("bench", "Time tensor evaluation against Monte Carlo pricing");
    std::string bn_bank, bn_out;
    std::size_t bn_queries = 200, bn_mc = 5, bn_paths = 100000;
    bench->add_option("--bank", bn_bank, "Bank file (default: grid.bank_path)");
    bench->add_option("--queries", bn_queries, "Tensor queries")->default_val(200);
    bench->add_option("--mc-queries", bn_mc, "Monte Carlo pricings")->default_val(5);
    bench->add_option("--mc-paths", bn_paths, "Paths per Monte Carlo pricing")->default_val(100000);
    bench->add_option("--out", bn_out, "Write the report as CSV here");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the distributional actor-critic hedger");
    std::string t_out, t_log, t_bank;
    std::size_t t_episodes = 0;
    std::uint64_t t_seed = 0;
    train_cmd->add_option("--out", t_out, "Checkpoint file (default: evaluation.checkpoint)");
    train_cmd->add_option("--log", t_log, "Training log CSV")->default_val("train_log.csv");
    train_cmd->add_option("--bank", t_bank, "Bank file (default: grid.bank_path)");
    auto* t_ep_opt = train_cmd->add_option("--episodes", t_episodes, "Override training.episodes");
    auto* t_seed_opt = train_cmd->add_option("--seed", t_seed, "Override training.seed");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Compare hedging strategies on common evaluation paths");
    std::vector<std::string> e_strategies;
    std::size_t e_episodes = 5000;
    std::uint64_t e_seed = 0;
    std::string e_trace, e_ckpt, e_bank, e_out = "eval";
    eval->add_option("--strategy", e_strategies, "delta, delta-gamma, rl or none (repeatable)")
        ->check(CLI::IsMember({"delta", "delta-gamma", "rl", "none"}))
        ->delimiter(',');
    auto* e_ep_opt = eval->add_option("--episodes", e_episodes, "Evaluation episodes (default: evaluation.episodes)");
    auto* e_seed_opt = eval->add_option("--seed", e_seed, "Evaluation seed (default: evaluation.seed)");
    eval->add_option("--trace", e_trace, "Write per-step traces of the first evaluation.trace_episodes episodes");
    eval->add_option("--checkpoint", e_ckpt, "Checkpoint for the rl strategy (default: evaluation.checkpoint)");
    eval->add_option("--bank", e_bank, "Bank file (default: grid.bank_path)");
    eval->add_option("--out-dir", e_out, "Directory for pnl_report.csv and pnl_histogram.jsonl")->default_val("eval");

    // init-config
    auto* init = app.add_subcommand("init-config", "Print the effective configuration as JSON");
    std::string i_out;
    init->add_option("--out", i_out, "Write to this file instead of stdout");

    // paths
    auto* paths = app.add_subcommand("paths", "Export simulated paths on the rebalancing grid as CSV");
    std::size_t pa_n = 10;
    std::uint64_t pa_seed = 1;
    std::string pa_out, pa_measure;
    paths->add_option("--paths", pa_n, "Number of paths")->default_val(10);
    paths->add_option("--seed", pa_seed, "Seed")->default_val(1);
    paths->add_option("--measure", pa_measure, "risk-neutral or real-world (default: env.measure)");
    paths->add_option("--out", pa_out, "CSV file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        const ExperimentConfig cfg = read_config(config_path);

        if (*init) {
            if (i_out.empty()) {
                std::cout << serialize_config(cfg);
            } else {
                auto os = open_out(i_out);
                os << serialize_config(cfg);
            }
            return kExitOk;
        }

        if (*price) {
            std::vector<double> spots = p_spots.empty() ? cfg.note.initial_prices : parse_list(p_spots);
            require(spots.size() == cfg.note.n_assets(), "--spots needs one value per asset");
            const auto t0 = Clock::now();
            std::printf("date=%s spots=", fmt_num(p_date).c_str());
            for (std::size_t i = 0; i < spots.size(); ++i) std::printf("%s%s", i ? "," : "", fmt_num(spots[i]).c_str());
            std::printf("\n");
            if (p_fast) {
                const std::string path = p_bank.empty() ? cfg.bank.path : p_bank;
                const auto bank = open_bank(path, config_path);
                const auto& day = bank->at(p_date);
                const double cont = eval_tensor(day, spots);
                const double v = day.continuation ? note_value_with_today(cfg.note, p_date, spots, cont) : cont;
                std::printf("method=tensor price=%s\n", fmt_num(v).c_str());
            } else {
                const auto r = price_note_mc(cfg.note, cfg.market, p_date, spots,
                                             p_paths_opt->count() ? p_paths : cfg.pricing.n_paths,
                                             p_seed_opt->count() ? p_seed : cfg.pricing.seed);
                std::printf("method=mc price=%s std_error=%s n_paths=%zu\n", fmt_num(r.price).c_str(),
                            fmt_num(r.std_error).c_str(), r.n_paths);
            }
            std::fflush(stdout);
            std::fprintf(stderr, "elapsed_seconds=%.6g\n", seconds_since(t0));
            return kExitOk;
        }

        if (*build) {
            const std::string out = b_out.empty() ? cfg.bank.path : b_out;
            const auto days = b_days.empty() ? cfg.env_config().rebalance_days() : parse_list(b_days);
            std::size_t nodes = 1;
            for (auto n : cfg.bank.grid.nodes_per_axis) nodes *= n;
            std::printf("building %zu days x %zu nodes, %zu paths per node\n", days.size(), nodes, cfg.bank.n_paths);
            std::fflush(stdout);
            auto sorted = days;
            std::sort(sorted.begin(), sorted.end());
            const auto bank = build_bank(cfg.note, cfg.market, days, cfg.bank.grid, cfg.bank.n_paths, cfg.bank.seed,
                                         [&](std::size_t i, double secs) {
                                             std::printf("day %s: %zu nodes in %.2fs\n", fmt_num(sorted[i]).c_str(),
                                                         nodes, secs);
                                             std::fflush(stdout);
                                         });
            if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
            save_bank(bank, out);
            std::printf("wrote %s\n", out.c_str());
            return kExitOk;
        }

        if (*bench) {
            const auto bank = open_bank(bn_bank.empty() ? cfg.bank.path : bn_bank, config_path);
            const auto r = bench_speedup(*bank, cfg.note, cfg.market, bn_queries, bn_mc, bn_paths);
            write_bench_text(std::cout, {r});
            if (!bn_out.empty()) {
                auto os = open_out(bn_out);
                write_bench_csv(os, {r});
            }
            return kExitOk;
        }

        if (*train_cmd) {
            TrainConfig tc = cfg.training;
            if (t_ep_opt->count()) tc.episodes = t_episodes;
            if (t_seed_opt->count()) tc.seed = t_seed;
            const auto make_env = env_factory(cfg, t_bank.empty() ? cfg.bank.path : t_bank, config_path);
            auto log = open_out(t_log);
            write_train_log_header(log);
            const auto t0 = Clock::now();
            auto res = train(make_env, tc, [&](const TrainLogRow& r) {
                write_train_log_row(log, r);
                if (r.eval_var95)
                    std::printf("episode %zu: eval VaR95 %s (%zu updates, %.0fs)\n", r.episode + 1,
                                fmt_num(*r.eval_var95).c_str(), r.updates, seconds_since(t0));
                std::fflush(stdout);
            });
            const std::string out = t_out.empty() ? cfg.evaluation.checkpoint : t_out;
            if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
            save_checkpoint(res.agent, out);
            HedgeEnv env = make_env();
            const double v = holdout_var95(env, res.agent, std::max<std::size_t>(tc.eval_episodes, 1), tc.seed);
            std::printf("trained %zu episodes; held-out VaR95 %s; checkpoint %s\n", tc.episodes, fmt_num(v).c_str(),
                        out.c_str());
            return kExitOk;
        }

        if (*eval) {
            const std::size_t n = e_ep_opt->count() ? e_episodes : cfg.evaluation.episodes;
            const std::uint64_t seed = e_seed_opt->count() ? e_seed : cfg.evaluation.seed;
            if (e_strategies.empty()) e_strategies = {"delta", "delta-gamma", "none"};
            std::unique_ptr<Checkpoint> ckpt;
            for (const auto& s : e_strategies) {
                if (s == "rl" && !ckpt) {
                    const std::string path = e_ckpt.empty() ? cfg.evaluation.checkpoint : e_ckpt;
                    if (!fs::exists(path))
                        throw ValidationError("checkpoint '" + path + "' not found; train one with: autohedge train" +
                                              (config_path.empty() ? "" : " --config " + config_path) + " --out " + path);
                    ckpt = std::make_unique<Checkpoint>(load_checkpoint(path));
                }
            }
            std::vector<std::unique_ptr<Policy>> owned;
            std::vector<const Policy*> policies;
            for (const auto& s : e_strategies) {
                owned.push_back(make_policy(s, ckpt.get()));
                policies.push_back(owned.back().get());
            }
            std::vector<TraceRow> trace;
            std::vector<PnLReport> rows;
            if (n > 0) {
                const auto make_env = env_factory(cfg, e_bank.empty() ? cfg.bank.path : e_bank, config_path);
                rows = compare_strategies(make_env, policies, n, seed, e_trace.empty() ? nullptr : &trace,
                                          cfg.evaluation.trace_episodes);
            }
            const fs::path dir(e_out);
            {
                auto os = open_out(dir / "pnl_report.csv");
                write_report_csv(os, rows);
            }
            {
                auto os = open_out(dir / "pnl_histogram.jsonl");
                write_histograms_jsonl(os, rows, cfg.evaluation.histogram_bins);
            }
            if (!e_trace.empty()) {
                auto os = open_out(e_trace);
                write_trace_csv(os, trace, cfg.note.n_assets());
            }
            write_report_csv(std::cout, rows);
            return kExitOk;
        }

        if (*paths) {
            const auto ec = cfg.env_config();
            std::vector<double> times(ec.n_steps() + 1);
            for (std::size_t i = 0; i < times.size(); ++i) times[i] = ec.time_at(i);
            const Measure m = pa_measure.empty() ? ec.measure : parse_measure(pa_measure);
            const auto ps = simulate_paths(cfg.market, times, pa_n, pa_seed, m);
            if (pa_out.empty()) {
                write_paths_csv(std::cout, ps);
            } else {
                auto os = open_out(pa_out);
                write_paths_csv(os, ps);
            }
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::fflush(stdout);
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
