#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "autohedge/instruments.hpp"

using namespace autohedge;

namespace {

/// Path on every observation date with the worst asset (C) pinned at return r.
std::vector<std::vector<double>> pinned_path(const NoteSpec& spec, double r) {
    std::vector<std::vector<double>> p(spec.n_observations());
    for (auto& row : p) row = {spec.initial_prices[0] * 1.1, spec.initial_prices[1] * 1.2, spec.initial_prices[2] * (1.0 + r)};
    return p;
}

}  // namespace

TEST(Instruments, ReferenceReturnIsWorstPerformance) {
    const auto spec = NoteSpec::reference();
    const std::vector<double> init{382.0, 494.0, 142.0};
    EXPECT_EQ(reference_return(spec, init), 0.0);
    EXPECT_DOUBLE_EQ(reference_return(spec, std::vector<double>{382.0, 494.0, 71.0}), 71.0 / 142.0 - 1.0);
    EXPECT_EQ(worst_asset(spec, std::vector<double>{382.0, 494.0, 71.0}), 2u);
    NoteSpec single;
    single.initial_prices = {50.0};
    EXPECT_DOUBLE_EQ(reference_return(single, std::vector<double>{100.0}), 1.0);
    EXPECT_THROW(reference_return(spec, std::vector<double>{1.0, 2.0}), ValidationError);
}

TEST(Instruments, ObservationScheduleIsQuarterlyEndingAtMaturity) {
    const auto spec = NoteSpec::reference();
    const auto d = spec.observation_dates();
    ASSERT_EQ(d.size(), 16u);
    EXPECT_DOUBLE_EQ(d.front(), 0.25);
    EXPECT_DOUBLE_EQ(d.back(), 4.0);
    EXPECT_TRUE(spec.is_call_observation(0));
    EXPECT_FALSE(spec.is_call_observation(15));  // maturity applies protection logic only
    EXPECT_EQ(spec.observation_index(1.0), std::optional<std::size_t>(3));
    EXPECT_FALSE(spec.observation_index(1.0 / 12.0).has_value());
    EXPECT_FALSE(spec.observation_index(0.0).has_value());
}

TEST(Instruments, SemiannualCallsOnQuarterlyCoupons) {
    auto spec = NoteSpec::reference();
    spec.call_freq = 2.0;
    spec.validate();
    EXPECT_FALSE(spec.is_call_observation(0));
    EXPECT_TRUE(spec.is_call_observation(1));
    spec.call_freq = 3.0;
    EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Instruments, RejectsBadBarrierOrdering) {
    auto spec = NoteSpec::reference();
    spec.protection_barrier = -0.2;  // above the coupon barrier
    EXPECT_THROW(spec.validate(), ValidationError);
    spec = NoteSpec::reference();
    spec.maturity = 4.1;
    EXPECT_THROW(spec.validate(), ValidationError);
    spec = NoteSpec::reference();
    spec.initial_prices = {};
    EXPECT_THROW(spec.validate(), ValidationError);
}

TEST(Instruments, FrozenSpotsCallAtFirstDate) {
    const auto spec = NoteSpec::reference();
    std::vector<std::vector<double>> path(spec.n_observations(), spec.initial_prices);
    const auto life = note_cashflows(spec, spec.observation_dates(), path);
    ASSERT_TRUE(life.called);
    EXPECT_DOUBLE_EQ(*life.call_time, 0.25);
    ASSERT_EQ(life.cashflows.size(), 2u);
    EXPECT_DOUBLE_EQ(life.cashflows[0].amount, 2.275);
    EXPECT_DOUBLE_EQ(life.cashflows[1].amount, 100.0);
    EXPECT_DOUBLE_EQ(life.total(), 102.275);
    EXPECT_DOUBLE_EQ(note_payoff_pv(spec, spec.observation_dates(), path, 0.0), 102.275);
}

TEST(Instruments, BetweenCouponAndProtectionBarriers) {
    const auto spec = NoteSpec::reference();
    const auto life = note_cashflows(spec, spec.observation_dates(), pinned_path(spec, -0.27));
    EXPECT_FALSE(life.called);
    ASSERT_EQ(life.cashflows.size(), 1u);
    EXPECT_EQ(life.cashflows[0].kind, Cashflow::Kind::redemption);
    EXPECT_NEAR(life.cashflows[0].amount, 100.0, 1e-12);
    EXPECT_DOUBLE_EQ(life.cashflows[0].time, 4.0);
}

TEST(Instruments, BelowProtectionLosesOneForOne) {
    const auto spec = NoteSpec::reference();
    const auto life = note_cashflows(spec, spec.observation_dates(), pinned_path(spec, -0.40));
    ASSERT_EQ(life.cashflows.size(), 1u);
    EXPECT_NEAR(life.cashflows[0].amount, 60.0, 1e-9);
}

TEST(Instruments, CouponsPaidWithoutCallAboveCouponBarrier) {
    const auto spec = NoteSpec::reference();
    const auto life = note_cashflows(spec, spec.observation_dates(), pinned_path(spec, -0.10));
    // 16 coupons + par at maturity.
    EXPECT_EQ(life.cashflows.size(), 17u);
    EXPECT_NEAR(life.total(), 16 * 2.275 + 100.0, 1e-9);
}

TEST(Instruments, BarrierComparisonsAreInclusive) {
    const auto spec = NoteSpec::reference();
    auto o = observe(spec, 0, 0.0);
    EXPECT_TRUE(o.called);
    o = observe(spec, 0, -0.25);
    EXPECT_DOUBLE_EQ(o.coupon, 2.275);
    EXPECT_FALSE(o.terminates);
    o = observe(spec, 15, -0.30);
    EXPECT_DOUBLE_EQ(o.redemption, 100.0);
}

TEST(Instruments, PresentValueCases) {
    auto spec = NoteSpec::reference();
    const double r = 0.03;
    // principal only, protection held
    const double pv = note_payoff_pv(spec, spec.observation_dates(), pinned_path(spec, -0.27), r);
    EXPECT_NEAR(pv, 100.0 * std::exp(-r * 4.0), 1e-9);
    spec.coupon_rate = 0.0;
    const double pv50 = note_payoff_pv(spec, spec.observation_dates(), pinned_path(spec, -0.5), r);
    EXPECT_NEAR(pv50, 50.0 * std::exp(-r * 4.0), 1e-9);
}

TEST(Instruments, AlwaysCallingNotePaysAtFirstDate) {
    auto spec = NoteSpec::reference();
    const double lo = -std::numeric_limits<double>::infinity();
    spec.coupon_barrier = spec.call_barrier = spec.protection_barrier = lo;
    const auto pv = note_payoff_pv(spec, spec.observation_dates(), pinned_path(spec, -0.9), 0.05);
    EXPECT_NEAR(pv, (100.0 + 2.275) * std::exp(-0.05 * 0.25), 1e-9);
}

TEST(Instruments, RejectsMisalignedPath) {
    const auto spec = NoteSpec::reference();
    auto dates = spec.observation_dates();
    auto path = pinned_path(spec, 0.0);
    dates[3] += 0.01;
    EXPECT_THROW(note_cashflows(spec, dates, path), ValidationError);
    path.pop_back();
    EXPECT_THROW(note_cashflows(spec, spec.observation_dates(), path), ValidationError);
}

TEST(Instruments, RaisingSpotsNeverLowersCashflows) {
    const auto spec = NoteSpec::reference();
    std::mt19937_64 rng(5);
    std::lognormal_distribution<double> move(0.0, 0.3);
    std::uniform_real_distribution<double> lift(1.0, 1.3);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::vector<double>> path(spec.n_observations(), std::vector<double>(3));
        for (auto& row : path)
            for (std::size_t i = 0; i < 3; ++i) row[i] = spec.initial_prices[i] * move(rng);
        auto higher = path;
        for (auto& row : higher)
            for (auto& s : row) s *= lift(rng);
        const auto a = note_cashflows(spec, spec.observation_dates(), path);
        const auto b = note_cashflows(spec, spec.observation_dates(), higher);
        // an earlier call can forfeit later coupons, so compare uncalled paths only
        if (!b.called) EXPECT_GE(b.total(), a.total() - 1e-12);
        // nothing after the call
        if (a.called)
            for (const auto& c : a.cashflows) EXPECT_LE(c.time, *a.call_time);
    }
}

TEST(Instruments, VanillaSpec) {
    VanillaOptionSpec c{0, 100.0, 1.0, OptionKind::call, Exercise::american};
    EXPECT_EQ(c.intrinsic(120.0), 20.0);
    EXPECT_EQ(c.intrinsic(80.0), 0.0);
    VanillaOptionSpec p{0, 100.0, 1.0, OptionKind::put, Exercise::european};
    EXPECT_EQ(p.intrinsic(80.0), 20.0);
    p.strike = 0.0;
    EXPECT_THROW(p.validate(), ValidationError);
    c.expiry = 0.0;
    EXPECT_THROW(c.validate(), ValidationError);
}
