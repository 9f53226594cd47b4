#include "properties.hpp"

#include <gtest/gtest.h>

namespace {

constexpr int kCases = 1000;

void expect_holds(const props::Result& r)
{
    EXPECT_EQ(r.cases, kCases);
    EXPECT_EQ(r.failures, 0) << r.name << ": " << r.first_failure;
}

} // namespace

TEST(SchedulerProperties, ScoreRangeAndSymmetry) { expect_holds(props::score_range_and_symmetry(kCases)); }
TEST(SchedulerProperties, RelabelingInvariance) { expect_holds(props::scores_invariant_under_relabeling(kCases)); }
TEST(SchedulerProperties, PlaceRemoveInversion) { expect_holds(props::place_remove_restores_loads(kCases)); }
TEST(SchedulerProperties, NoPowerRuleIsPackingOnly) { expect_holds(props::no_power_rule_is_packing_only(kCases)); }
TEST(CriticalityProperties, ScaleInvariance) { expect_holds(props::classify_scale_invariant(kCases)); }
TEST(CriticalityProperties, ThresholdMonotone) { expect_holds(props::classify_threshold_monotone(kCases)); }
TEST(CriticalityProperties, TrimmedMeanRobustness) { expect_holds(props::trimmed_mean_ignores_minority_outliers(kCases)); }
TEST(PowerProperties, MonotoneSymmetricBounded) { expect_holds(props::server_power_properties(kCases)); }
TEST(OversubProperties, MinBudgetMonotoneInPolicy) { expect_holds(props::min_budget_monotone_in_policy(kCases)); }
TEST(OversubProperties, AuditMatchesBruteForce) { expect_holds(props::budget_audit_consistent(kCases)); }
TEST(SimProperties, RunDeterminism) { expect_holds(props::run_deterministic(kCases)); }

TEST(PropertyHarness, ReportsFailures)
{
    const auto r = props::check("always fails on odd cases", 10, 1, [](std::mt19937_64&, int i) {
        return i % 2 ? std::string("odd") : std::string();
    });
    EXPECT_EQ(r.failures, 5);
    EXPECT_EQ(r.first_failure, "case 1: odd");
    EXPECT_FALSE(r.ok());
}
