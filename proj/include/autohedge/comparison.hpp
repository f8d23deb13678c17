#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "autohedge/analytics.hpp"
#include "autohedge/hedge_env.hpp"
#include "autohedge/parallel.hpp"
#include "autohedge/rng.hpp"
#include "autohedge/strategies.hpp"

namespace autohedge {

/// One rebalancing step of a traced episode.
struct TraceRow {
    std::string strategy;
    std::size_t episode = 0;
    std::size_t step = 0;
    double time = 0.0;
    std::vector<double> spots;
    double action = std::numeric_limits<double>::quiet_NaN();  ///< RL action, blank for baselines
    double pair_units = 0.0;
    double txn_cost = 0.0;
    double reward = 0.0;
    double portfolio_value = 0.0;  ///< after the step
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, std::size_t n_assets) {
    os << "strategy,episode,step,time";
    for (std::size_t i = 0; i < n_assets; ++i) os << ",spot_" << i;
    os << ",action,pair_units,txn_cost,reward,portfolio_value\n";
    for (const auto& r : rows) {
        os << r.strategy << ',' << r.episode << ',' << r.step << ',' << fmt_num(r.time);
        for (double s : r.spots) os << ',' << fmt_num(s);
        os << ',' << fmt_num(r.action) << ',' << fmt_num(r.pair_units) << ',' << fmt_num(r.txn_cost) << ','
           << fmt_num(r.reward) << ',' << fmt_num(r.portfolio_value) << '\n';
    }
}

/// Evaluation path seed of episode e: disjoint from the training and hold-out families.
inline std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t e) {
    return substream_seed(seed, e, stream_tag::eval_episode);
}

/// Runs one episode and returns its PnL (sum of rewards).
inline double run_episode(HedgeEnv& env, const Policy& policy, std::uint64_t episode_seed,
                          std::vector<TraceRow>* trace = nullptr, std::size_t episode = 0) {
    env.reset(episode_seed);
    while (!env.done()) {
        const auto tr = apply_decision(env, policy.decide(env));
        if (trace) {
            TraceRow r;
            r.strategy = policy.name();
            r.episode = episode;
            r.step = tr.state.step_index;
            r.time = tr.state.time;
            r.spots = tr.state.spots;
            if (tr.action) r.action = *tr.action;
            r.pair_units = tr.info.pair_units;
            r.txn_cost = tr.info.txn_cost;
            r.reward = tr.reward;
            r.portfolio_value = tr.info.value_after;
            trace->push_back(std::move(r));
        }
    }
    return env.cumulative_reward();
}

/// Every strategy sees the same evaluation paths (common random numbers). Episodes are
/// spread over workers, each with its own environment; results are stored by episode
/// index so the output does not depend on scheduling. The first `trace_episodes`
/// episodes of each strategy are recorded in `trace` when given.
inline std::vector<PnLReport> compare_strategies(const EnvFactory& make_env,
                                                 const std::vector<const Policy*>& policies, std::size_t n_episodes,
                                                 std::uint64_t seed, std::vector<TraceRow>* trace = nullptr,
                                                 std::size_t trace_episodes = 0) {
    std::vector<PnLReport> out;
    if (n_episodes == 0) return out;
    const std::size_t chunks = std::min(n_episodes, std::max<std::size_t>(1, worker_count()) * 4);
    for (const Policy* p : policies) {
        require(p != nullptr, "compare_strategies: null policy");
        std::vector<double> pnl(n_episodes);
        std::vector<std::vector<TraceRow>> traces(chunks);
        parallel_for(chunks, [&](std::size_t c) {
            HedgeEnv env = make_env();
            const std::size_t lo = c * n_episodes / chunks, hi = (c + 1) * n_episodes / chunks;
            for (std::size_t e = lo; e < hi; ++e) {
                auto* tr = (trace && e < trace_episodes) ? &traces[c] : nullptr;
                pnl[e] = run_episode(env, *p, evaluation_seed(seed, e), tr, e);
            }
        });
        if (trace)
            for (auto& t : traces) trace->insert(trace->end(), t.begin(), t.end());
        out.push_back(make_report(p->name(), std::move(pnl)));
    }
    return out;
}

}  // namespace autohedge
