#include "vmpower/capping.hpp"
#include "vmpower/sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace vmpower;
using namespace vmpower::capping;

namespace {

// Independent power arithmetic: idle + (peak - idle)/cores * sum(u f^k).
double ref_power(const Blade& b)
{
    const double k = std::log(57.0 / 198.0) / std::log(0.5);
    double dyn = 0.0;
    for (int i = 0; i < b.core_count(); ++i) {
        const double f = 0.5 + 0.05 * b.effective_pstate(i);
        dyn += b.core(i).utilization * std::pow(f, k);
    }
    return 112.0 + (310.0 - 112.0) / 40.0 * dyn;
}

// Assigns cores [first, first + n) to VM `owner` in tier `t`.
void own(Blade& b, int first, int n, Tier t, double u, std::int64_t owner)
{
    for (int i = first; i < first + n; ++i) {
        Core& c = b.core(i);
        c.owner = owner;
        c.tier = t;
        c.utilization = u;
        c.owner_true_uf = t == Tier::Protected;
    }
}

void host_cores(Blade& b)
{
    for (int i = 0; i < 2; ++i) {
        b.core(i).owner = kHostCore;
        b.core(i).tier = Tier::Protected;
        b.core(i).owner_true_uf = true;
        b.core(i).utilization = 0.1;
    }
}

std::vector<Blade> uniform_blades(const PowerContext& ctx, int n, double u, Tier t)
{
    std::vector<Blade> v;
    for (int i = 0; i < n; ++i) {
        Blade b(ctx);
        host_cores(b);
        own(b, 2, 38, t, u, 100 + i);
        v.push_back(std::move(b));
    }
    return v;
}

} // namespace

TEST(Tiers, AssignmentFollowsLabelAndPriority)
{
    EXPECT_EQ(tier_for(WorkloadLabel::UserFacing, false), Tier::Protected);
    EXPECT_EQ(tier_for(WorkloadLabel::UserFacing, true), Tier::Protected);
    EXPECT_EQ(tier_for(WorkloadLabel::NonUserFacing, false), Tier::ProductionNuf);
    EXPECT_EQ(tier_for(WorkloadLabel::NonUserFacing, true), Tier::LowPriority);
    EXPECT_LT(static_cast<int>(Tier::LowPriority), static_cast<int>(Tier::ProductionNuf));
    EXPECT_LT(static_cast<int>(Tier::ProductionNuf), static_cast<int>(Tier::Protected));
}

TEST(Config, ValidationRejectsBadValues)
{
    ChassisManagerConfig m;
    m.alert_threshold_fraction = 1.0;
    EXPECT_THROW(m.validate(), InvalidArgument);
    m.alert_threshold_fraction = 0.0;
    EXPECT_THROW(m.validate(), InvalidArgument);
    ControllerConfig c;
    c.step_cores = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    EXPECT_NEAR(ControllerConfig{}.server_target_fraction, 0.978, 1e-3);
}

TEST(Blade, PowerMatchesIndependentArithmetic)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 10, Tier::Protected, 0.7, 1);
    own(b, 12, 20, Tier::ProductionNuf, 0.9, 2);
    EXPECT_NEAR(b.power(), ref_power(b), 1e-9);
    for (int i = 12; i < 32; ++i) b.core(i).pstate = 3;
    EXPECT_NEAR(b.power(), ref_power(b), 1e-9);
    b.set_rapl_ceiling(2);
    EXPECT_NEAR(b.power(), ref_power(b), 1e-9);
}

TEST(Poll, NoAlertBelowThreshold)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.5, Tier::ProductionNuf);
    const double draw = ChassisCapping::chassis_draw(blades);
    ChassisCapping cap(0, 12, {200, 0.98, draw / 0.97}, {});
    const TickReport r = cap.tick(0, blades);
    EXPECT_FALSE(r.alert);
    EXPECT_FALSE(cap.active());
    for (int b = 0; b < 12; ++b) EXPECT_EQ(cap.controller(b).state(), ServerController::State::Idle);
}

TEST(Poll, AlertReachesEveryServer)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.5, Tier::ProductionNuf);
    const double draw = ChassisCapping::chassis_draw(blades);
    ChassisCapping cap(0, 12, {200, 0.98, draw / 0.99}, {});
    const TickReport r = cap.tick(0, blades);
    EXPECT_TRUE(r.alert);
    EXPECT_FALSE(r.psu_alert);
    for (int b = 0; b < 12; ++b) {
        EXPECT_EQ(cap.controller(b).state(), ServerController::State::Feedback) << b;
        EXPECT_EQ(blades[static_cast<std::size_t>(b)].core(5).pstate, 0);
    }
}

TEST(Poll, OnlyPollInstantsAreSensed)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.5, Tier::ProductionNuf);
    const double budget = ChassisCapping::chassis_draw(blades) / 0.95;
    ChassisCapping cap(0, 12, {200, 0.98, budget}, {});
    for (SimMillis t = 0; t < 4000; t += 200) {
        // A spike that lives entirely between two polls.
        for (auto& b : blades) own(b, 2, 38, Tier::ProductionNuf, 1.0, 1);
        for (auto& b : blades) own(b, 2, 38, Tier::ProductionNuf, 0.5, 1);
        EXPECT_FALSE(cap.tick(t, blades).alert);
    }
    // The same spike present at a poll is seen.
    for (auto& b : blades) own(b, 2, 38, Tier::ProductionNuf, 1.0, 1);
    EXPECT_TRUE(cap.tick(4000, blades).alert);
}

TEST(OnAlert, BelowShareDoesNothing)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 20, Tier::ProductionNuf, 0.3, 1);
    ServerController c;
    EXPECT_EQ(c.on_alert(b, 0, b.power() + 1.0), AlertAction::None);
    EXPECT_EQ(c.state(), ServerController::State::Idle);
    EXPECT_TRUE(b.all_at_max());
}

TEST(OnAlert, TwentyNufCoresDropToHalfFrequency)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 18, Tier::Protected, 0.7, 1);
    own(b, 20, 20, Tier::ProductionNuf, 1.0, 2);
    ServerController c;
    EXPECT_EQ(c.on_alert(b, 1000, 200.0), AlertAction::DroppedTier);
    EXPECT_EQ(c.state(), ServerController::State::Feedback);
    EXPECT_EQ(c.cap_start(), 1000);
    for (int i = 20; i < 40; ++i) EXPECT_DOUBLE_EQ(b.effective_frequency(i), 0.5);
    for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(b.effective_frequency(i), 1.0);
}

TEST(OnAlert, NoThrottleableCoresLeavesItToRapl)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 38, Tier::Protected, 0.9, 1);
    ServerController c;
    EXPECT_EQ(c.on_alert(b, 0, 150.0), AlertAction::NoThrottleableCores);
    EXPECT_TRUE(b.all_at_max());
}

TEST(OnAlert, LowestTierGoesFirst)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 10, Tier::Protected, 0.9, 1);
    own(b, 12, 14, Tier::ProductionNuf, 0.9, 2);
    own(b, 26, 14, Tier::LowPriority, 0.9, 3);
    ServerController c;
    ASSERT_EQ(c.on_alert(b, 0, 150.0), AlertAction::DroppedTier);
    for (int i = 26; i < 40; ++i) EXPECT_EQ(b.core(i).pstate, 0);
    for (int i = 0; i < 26; ++i) EXPECT_EQ(b.core(i).pstate, b.max_pstate());
    EXPECT_FALSE(b.protection_violated());
    ASSERT_EQ(c.on_alert(b, 200, 150.0), AlertAction::DroppedTier);
    for (int i = 12; i < 26; ++i) EXPECT_EQ(b.core(i).pstate, 0);
    for (int i = 0; i < 12; ++i) EXPECT_EQ(b.core(i).pstate, b.max_pstate());
    EXPECT_EQ(c.on_alert(b, 400, 150.0), AlertAction::NoThrottleableCores);
    EXPECT_EQ(c.cap_start(), 0);
}

TEST(Feedback, RecoversFourCoreStepsPerIteration)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 20, Tier::ProductionNuf, 0.2, 1);
    ServerController c;
    ASSERT_EQ(c.on_alert(b, 0, 0.0), AlertAction::DroppedTier);
    std::vector<int> prev(40);
    for (int i = 0; i < 40; ++i) prev[static_cast<std::size_t>(i)] = b.core(i).pstate;
    for (int k = 1; k <= 40; ++k) {
        c.feedback_step(b, k * 200, 1e9);
        int recovered = 0;
        for (int i = 2; i < 22; ++i) {
            recovered += b.core(i).pstate;
            EXPECT_GE(b.core(i).pstate, prev[static_cast<std::size_t>(i)]);
            EXPECT_LE(b.core(i).pstate, b.max_pstate());
            prev[static_cast<std::size_t>(i)] = b.core(i).pstate;
        }
        EXPECT_EQ(recovered, std::min(4 * k, 20 * b.max_pstate())) << k;
    }
}

TEST(Feedback, HoldsWhenRaisingWouldExceedTarget)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 20, Tier::ProductionNuf, 0.8, 1);
    ServerController c;
    ASSERT_EQ(c.on_alert(b, 0, 0.0), AlertAction::DroppedTier);
    // Raising 4 cores from 0.50 to 0.55 adds 4 * 4.95 * 0.8 * (0.55^k - 0.5^k).
    const double k = std::log(57.0 / 198.0) / std::log(0.5);
    const double delta = 4 * (198.0 / 40.0) * 0.8 * (std::pow(0.55, k) - std::pow(0.5, k));
    const double before = ref_power(b);
    c.feedback_step(b, 200, before + 0.9 * delta);
    for (int i = 2; i < 22; ++i) EXPECT_EQ(b.core(i).pstate, 0);
    c.feedback_step(b, 400, before + 1.1 * delta);
    int raised = 0;
    for (int i = 2; i < 22; ++i) raised += b.core(i).pstate;
    EXPECT_EQ(raised, 4);
    EXPECT_NEAR(b.power(), before + delta, 1e-9);
}

TEST(Feedback, StepsDownWhileAboveTarget)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 20, Tier::ProductionNuf, 0.8, 1);
    own(b, 22, 18, Tier::LowPriority, 0.8, 2);
    ServerController c;
    ASSERT_EQ(c.on_alert(b, 0, 0.0), AlertAction::DroppedTier);
    c.feedback_step(b, 200, 0.0);
    int lowered = 0;
    for (int i = 2; i < 22; ++i) lowered += b.max_pstate() - b.core(i).pstate;
    EXPECT_EQ(lowered, 4);
    EXPECT_FALSE(b.protection_violated());
}

TEST(Feedback, CapLiftsAfterDuration)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 20, Tier::ProductionNuf, 0.8, 1);
    ServerController c;
    ASSERT_EQ(c.on_alert(b, 5000, 0.0), AlertAction::DroppedTier);
    c.feedback_step(b, 5000 + 29800, 0.0);
    EXPECT_FALSE(b.all_at_max());
    c.feedback_step(b, 5000 + 30000, 0.0);
    EXPECT_TRUE(b.all_at_max());
    EXPECT_EQ(c.state(), ServerController::State::Idle);
}

TEST(Rapl, HotServerReachesShareWithinTwoSeconds)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.4626, Tier::Protected);
    own(blades[0], 2, 38, Tier::Protected, 0.6, 1);
    const double draw = ChassisCapping::chassis_draw(blades);
    const double budget = draw / 1.01;
    ChassisCapping cap(0, 12, {200, 0.98, budget}, {});
    ASSERT_GT(blades[0].power(), cap.even_share_w());
    for (std::size_t i = 1; i < blades.size(); ++i) ASSERT_LT(blades[i].power(), cap.even_share_w());

    const TickReport first = cap.tick(0, blades);
    ASSERT_TRUE(first.psu_alert);
    SimMillis compliant_at = -1;
    for (SimMillis t = 200; t <= 10000; t += 200) {
        const TickReport r = cap.tick(t, blades);
        if (compliant_at < 0 && !r.over_budget) compliant_at = t;
        // All cores of the hot blade move together.
        for (int i = 1; i < 40; ++i) EXPECT_EQ(blades[0].effective_pstate(i), blades[0].effective_pstate(0));
    }
    ASSERT_GE(compliant_at, 0);
    EXPECT_LE(compliant_at, 2000);
    EXPECT_LE(blades[0].power(), cap.even_share_w() + 1e-9);
    for (std::size_t i = 1; i < blades.size(); ++i) EXPECT_EQ(blades[i].rapl_ceiling(), blades[i].max_pstate());
}

TEST(Rapl, EnforceStepsTwoStatesPerCall)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    own(b, 2, 38, Tier::Protected, 1.0, 1);
    EXPECT_EQ(rapl_enforce(b, 200.0), RaplStatus::Stepping);
    EXPECT_EQ(b.rapl_ceiling(), b.max_pstate() - 2);
    RaplStatus st = RaplStatus::Stepping;
    int calls = 1;
    while (st == RaplStatus::Stepping && calls < 20) {
        st = rapl_enforce(b, 200.0);
        ++calls;
    }
    EXPECT_EQ(st, RaplStatus::Compliant);
    EXPECT_LE(b.power(), 200.0);
    EXPECT_LE(calls, 10);
}

TEST(Rapl, BudgetAboveDrawNeverFires)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.9, Tier::ProductionNuf);
    ChassisCapping cap(0, 12, {200, 0.98, 2.0 * ChassisCapping::chassis_draw(blades)}, {});
    for (SimMillis t = 0; t < 60000; t += 200) {
        const TickReport r = cap.tick(t, blades);
        EXPECT_FALSE(r.alert);
        EXPECT_FALSE(r.rapl_active);
    }
    for (int b = 0; b < 12; ++b) EXPECT_FALSE(cap.rapl_armed(b));
    cap.flush(60000);
    EXPECT_TRUE(cap.take_finished().empty());
}

TEST(Rapl, CapBelowIdleIsInfeasible)
{
    PowerContext ctx;
    Blade b(ctx);
    host_cores(b);
    EXPECT_EQ(rapl_enforce(b, 100.0), RaplStatus::Infeasible);
    EXPECT_EQ(b.rapl_ceiling(), 0);
    EXPECT_THROW(check_budget_feasible(ctx.spec, 1200.0, 12, 3), InfeasibleBudget);
    EXPECT_NO_THROW(check_budget_feasible(ctx.spec, 2450.0, 12, 3));
    try {
        check_budget_feasible(ctx.spec, 1200.0, 12, 3);
    } catch (const InfeasibleBudget& e) {
        EXPECT_NE(std::string(e.what()).find("chassis 3"), std::string::npos);
    }
}

TEST(Events, LivenessAfterLastAlert)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.9, Tier::ProductionNuf);
    const double budget = ChassisCapping::chassis_draw(blades) * 0.97;
    ChassisCapping cap(0, 12, {200, 0.98, budget}, {});
    SimMillis last_alert = -1;
    SimMillis t = 0;
    for (; t < 10000; t += 200)
        if (cap.tick(t, blades).alert) last_alert = t;
    for (auto& b : blades) own(b, 2, 38, Tier::ProductionNuf, 0.2, 1);
    std::vector<CappingEvent> done;
    for (; t < 120000; t += 200) {
        if (cap.tick(t, blades).alert) last_alert = t;
        for (auto& e : cap.take_finished()) done.push_back(e);
    }
    ASSERT_EQ(done.size(), 1u);
    const CappingEvent& e = done.front();
    EXPECT_GE(e.end_ms, e.start_ms);
    EXPECT_LE(e.end_ms, last_alert + 30000 + 200);
    EXPECT_TRUE(e.psu_alert);
    EXPECT_TRUE(e.nuf_affected);
    EXPECT_FALSE(e.uf_affected);
    EXPECT_DOUBLE_EQ(e.min_frequency[static_cast<std::size_t>(Tier::Protected)], 1.0);
    EXPECT_LT(e.min_frequency[static_cast<std::size_t>(Tier::ProductionNuf)], 1.0);
    EXPECT_GT(e.nuf_throttled_core_seconds, 0.0);
    for (const auto& b : blades) EXPECT_TRUE(b.all_at_max());
}

TEST(Events, InBandOnlyEventsNeverEngageRapl)
{
    PowerContext ctx;
    auto blades = uniform_blades(ctx, 12, 0.9, Tier::ProductionNuf);
    // Alert but no PSU alert: draw between 98% and 100% of the budget.
    const double budget = ChassisCapping::chassis_draw(blades) / 0.99;
    ChassisCapping cap(0, 12, {200, 0.98, budget}, {});
    for (SimMillis t = 0; t < 90000; t += 200) cap.tick(t, blades);
    cap.flush(90000);
    const auto events = cap.take_finished();
    ASSERT_FALSE(events.empty());
    for (const auto& e : events) {
        EXPECT_FALSE(e.psu_alert);
        EXPECT_FALSE(e.rapl_engaged);
        EXPECT_EQ(e.over_budget_ms, 0);
    }
}

TEST(Scenario, BalancedPlacementProtectsUserFacing)
{
    const sim::ScenarioReport r = sim::run_chassis_scenario(sim::balanced_scenario());
    EXPECT_TRUE(r.nuf_throttling_suffices);
    EXPECT_GT(r.alert_ticks, 0);
    EXPECT_LE(r.max_consecutive_over_ms, 2000);
    EXPECT_DOUBLE_EQ(r.uf_at_max_fraction(), 1.0);
    EXPECT_EQ(r.protection_violations, 0);
    EXPECT_EQ(r.rapl_ticks_on_uf_only_blades, 0);
    for (const auto& e : r.events) EXPECT_GE(e.end_ms, e.start_ms);
}

TEST(Scenario, ImbalancedPlacementThrottlesUserFacing)
{
    const sim::ScenarioReport r = sim::run_chassis_scenario(sim::imbalanced_scenario());
    EXPECT_FALSE(r.nuf_throttling_suffices);
    EXPECT_GT(r.rapl_ticks_on_uf_only_blades, 0);
    EXPECT_LT(r.uf_at_max_fraction(), 1.0);
    EXPECT_LE(r.max_consecutive_over_ms, 2000);
}

TEST(Scenario, BudgetBelowIdleRejected)
{
    auto sc = sim::balanced_scenario();
    sc.manager.chassis_budget_w = 1000.0;
    EXPECT_THROW(sim::run_chassis_scenario(sc), InfeasibleBudget);
}
