#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "autohedge/hedge_env.hpp"

using namespace autohedge;

namespace {

EnvConfig small_config(PricingMode mode = PricingMode::oracle) {
    EnvConfig cfg;
    cfg.note.maturity = 1.0;
    cfg.model = MarketModel::flat(cfg.note.initial_prices, 0.2, 0.5, 0.03);
    cfg.model.drift = {0.05, 0.05, 0.05};
    cfg.pricing_mode = mode;
    cfg.oracle_paths = 200;
    cfg.tree_steps = 20;
    return cfg;
}

std::shared_ptr<const ChebTensorBank> small_bank(const EnvConfig& cfg, double lo = 0.4, double hi = 2.0) {
    GridConfig grid;
    grid.nodes_per_axis = {3, 3, 3};
    grid.lo_rel = lo;
    grid.hi_rel = hi;
    return std::make_shared<const ChebTensorBank>(
        build_bank(cfg.note, cfg.model, cfg.rebalance_days(), grid, 200, 5));
}

double silent_run(HedgeEnv& env, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0.0;
    while (!env.done()) {
        const double a = u(rng);
        if (a < 0.3) {
            total += env.step(Orders{1, 0.5 - a, {0.2, -0.1, a}}).reward;
        } else {
            total += env.step_action(a).reward;
        }
    }
    return total;
}

}  // namespace

TEST(HedgeEnv, InitialStateIsFlatWithTauToFirstCall) {
    HedgeEnv env(small_config());
    const auto& s = env.state();
    EXPECT_EQ(s.step_index, 0u);
    EXPECT_NEAR(s.tau, 0.25, 1e-12);
    EXPECT_EQ(s.spots, env.config().note.initial_prices);
    EXPECT_NEAR(env.initial_value(), 0.0, 1e-12);
    EXPECT_NEAR(env.portfolio_value(), 0.0, 1e-12);
    EXPECT_EQ(env.config().n_steps(), 12u);
    // short the note: the portfolio's gamma is minus the note's cash gamma
    const auto g = env.note_greeks();
    EXPECT_NEAR(s.portfolio_gamma, -g.cash_gamma(env.spots()), 1e-9);
}

TEST(HedgeEnv, RewardsTelescopeToValueChangeLessCosts) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        HedgeEnv env(small_config());
        env.reset(seed);
        std::mt19937_64 rng(seed);
        const double total = silent_run(env, rng);
        EXPECT_TRUE(env.done());
        EXPECT_NEAR(total, env.cumulative_reward(), 1e-9);
        EXPECT_NEAR(total, env.portfolio_value() - env.initial_value() - env.costs_paid(), 1e-8);
        EXPECT_GT(env.costs_paid(), 0.0);
    }
}

TEST(HedgeEnv, SameSeedSameEpisode) {
    HedgeEnv a(small_config()), b(small_config());
    a.reset(42);
    b.reset(42);
    while (!a.done()) {
        const auto ta = a.step_action(0.5);
        const auto tb = b.step_action(0.5);
        EXPECT_EQ(ta.reward, tb.reward);
        EXPECT_EQ(ta.next_state.spots, tb.next_state.spots);
    }
    EXPECT_TRUE(b.done());
    HedgeEnv c(small_config());
    c.reset(43);
    c.step_action(0.5);
    EXPECT_NE(c.state().spots, a.config().note.initial_prices);
}

TEST(HedgeEnv, TransactionCostIsProportionalToTradedValue) {
    HedgeEnv env(small_config());
    env.reset(7);
    const auto [c, p] = env.straddle(2);
    const double v = env.option_value(c, 0.0, env.spots()[2]) + env.option_value(p, 0.0, env.spots()[2]);
    const double cost = env.trade(Orders{2, -1.5, {}});
    EXPECT_NEAR(cost, 0.02 * std::abs(-1.5 * v), 1e-12);
    const double stock = env.trade(Orders{0, 0.0, {2.0, 0.0, -1.0}});
    EXPECT_NEAR(stock, 0.02 * (2.0 * 382.0 + 142.0), 1e-12);
    const auto tr = env.step(Orders{});
    EXPECT_NEAR(tr.info.txn_cost, cost + stock, 1e-12);
    EXPECT_NEAR(tr.reward, tr.info.value_after - tr.info.value_before - cost - stock, 1e-12);
}

TEST(HedgeEnv, ZeroActionEqualsNoHedge) {
    HedgeEnv a(small_config()), b(small_config());
    a.reset(11);
    b.reset(11);
    while (!a.done()) {
        const auto ta = a.step_action(0.0);
        const auto tb = b.step(Orders{});
        EXPECT_EQ(ta.reward, tb.reward);
        EXPECT_EQ(ta.info.pair_units, 0.0);
    }
    EXPECT_EQ(a.costs_paid(), 0.0);
}

TEST(HedgeEnv, UnhedgedPnLIsAccruedPremiumLessNoteCashflows) {
    for (std::uint64_t seed : {3u, 8u, 21u, 34u}) {
        auto cfg = small_config();
        HedgeEnv env(cfg);
        env.reset(seed);
        const auto& note = cfg.note;
        std::vector<std::vector<double>> obs_path;
        double t_end = 0.0;
        while (!env.done()) {
            const auto tr = env.step(Orders{});
            t_end = tr.next_state.time;
            if (note.observation_index(t_end)) obs_path.push_back(tr.next_state.spots);
        }
        while (obs_path.size() < note.n_observations()) obs_path.push_back(obs_path.back());
        const auto life = note_cashflows(note, note.observation_dates(), obs_path);
        const double premium = env.note_value(0.0, note.initial_prices);
        double expected = premium * std::exp(cfg.model.rate * t_end);
        for (const auto& cf : life.cashflows) expected -= cf.amount * std::exp(cfg.model.rate * (t_end - cf.time));
        EXPECT_NEAR(env.portfolio_value(), expected, 1e-9) << "seed " << seed;
    }
}

TEST(HedgeEnv, ActionMapsToCappedGammaOffsettingPairs) {
    HedgeEnv env(small_config());
    env.reset(5);
    EXPECT_THROW(env.orders_for_action(1.5), ValidationError);
    EXPECT_THROW(env.orders_for_action(-0.1), ValidationError);
    const auto q = env.pair_quote();
    ASSERT_GT(q.cash_gamma, 0.0);
    EXPECT_EQ(q.asset, worst_asset(env.config().note, env.spots()));
    const auto full = env.orders_for_action(1.0);
    const auto half = env.orders_for_action(0.5);
    // pairs are traded against the sign of the portfolio gamma
    const double g = env.state().portfolio_gamma;
    ASSERT_NE(g, 0.0);
    const double dir = g > 0.0 ? -1.0 : 1.0;
    EXPECT_GT(dir * full.pair_units, 0.0);
    EXPECT_LE(std::abs(full.pair_units), env.config().max_pairs + 1e-12);
    EXPECT_NEAR(full.pair_units, env.round_to_lot(dir * env.max_hedge_units(q)), 1e-12);
    EXPECT_NEAR(half.pair_units, env.round_to_lot(dir * 0.5 * env.max_hedge_units(q)), 1e-12);
    EXPECT_NEAR(std::remainder(half.pair_units, 1e-4), 0.0, 1e-12);
}

TEST(HedgeEnv, StraddlesSettleAtExpiry) {
    HedgeEnv env(small_config());
    env.reset(9);
    env.step(Orders{2, 1.0, {}});
    EXPECT_EQ(env.book().positions.size(), 2u);
    env.step(Orders{});
    if (!env.done()) env.step(Orders{});
    EXPECT_TRUE(env.book().positions.empty());
}

TEST(HedgeEnv, TerminatedEpisodeRejectsSteps) {
    auto cfg = small_config();
    cfg.model.vol = {0.0, 0.0, 0.0};
    HedgeEnv env(cfg);
    env.reset(1);
    // zero vol with positive drift: called at the first observation
    std::size_t steps = 0;
    Transition last;
    while (!env.done()) {
        last = env.step(Orders{});
        ++steps;
    }
    EXPECT_EQ(steps, 3u);
    EXPECT_TRUE(last.terminal);
    EXPECT_TRUE(last.info.called);
    EXPECT_NEAR(last.info.note_cashflow, 102.275, 1e-12);
    EXPECT_EQ(last.next_state.tau, 0.0);
    EXPECT_THROW(env.step(Orders{}), ValidationError);
    EXPECT_THROW(env.step_action(0.5), ValidationError);
}

TEST(HedgeEnv, TensorModeValidatesTheBank) {
    auto cfg = small_config(PricingMode::tensor);
    EXPECT_THROW(HedgeEnv{cfg}, ValidationError);
    auto other = cfg;
    other.model.vol[0] = 0.3;
    EXPECT_THROW(HedgeEnv(cfg, small_bank(other)), ValidationError);
    auto partial = std::make_shared<const ChebTensorBank>(
        build_bank(cfg.note, cfg.model, {0.0}, GridConfig{{2, 2, 2}, 0.4, 2.0, BaryWeights::first_kind}, 50, 1));
    EXPECT_THROW(HedgeEnv(cfg, partial), ValidationError);
}

TEST(HedgeEnv, TensorModeAgreesWithOracleInsideDomain) {
    auto cfg = small_config(PricingMode::tensor);
    const auto bank = small_bank(cfg);
    HedgeEnv env(cfg, bank);
    env.reset(2);
    EXPECT_EQ(env.note_value(0.0, cfg.note.initial_prices), bank->eval(0.0, cfg.note.initial_prices));
    EXPECT_EQ(env.fallback_count(), 0u);
    std::mt19937_64 rng(2);
    const double total = silent_run(env, rng);
    EXPECT_NEAR(total, env.portfolio_value() - env.initial_value() - env.costs_paid(), 1e-8);
}

TEST(HedgeEnv, OutOfDomainFallsBackWithOneWarning) {
    auto cfg = small_config(PricingMode::tensor);
    cfg.model.vol = {0.6, 0.6, 0.6};
    const auto bank = small_bank(cfg, 0.97, 1.03);
    HedgeEnv env(cfg, bank);
    int warnings = 0;
    env.on_warning = [&](const std::string&) { ++warnings; };
    env.reset(4);
    while (!env.done()) env.step(Orders{});
    EXPECT_GT(env.fallback_count(), 0u);
    EXPECT_EQ(warnings, 1);
}

TEST(HedgeEnv, RejectsBadConfig) {
    auto cfg = small_config();
    cfg.rebalance_dt = 0.1;
    EXPECT_THROW(HedgeEnv{cfg}, ValidationError);
    cfg = small_config();
    cfg.txn_cost = -0.01;
    EXPECT_THROW(HedgeEnv{cfg}, ValidationError);
    cfg = small_config();
    cfg.model = MarketModel::flat({1.0, 2.0}, 0.2, 0.0, 0.0);
    EXPECT_THROW(HedgeEnv{cfg}, ValidationError);
    EXPECT_EQ(parse_pricing_mode("oracle"), PricingMode::oracle);
    EXPECT_THROW(parse_pricing_mode("exact"), ValidationError);
}
