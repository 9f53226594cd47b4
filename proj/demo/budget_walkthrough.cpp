// Chassis budget for a synthetic draw history under four operating policies.
// With a thin Gaussian tail, a small UF allowance buys almost nothing over
// NUF-only throttling; fleet histories with correlated bursts separate them.

#include "vmpower/oversub.hpp"

#include <cstdio>
#include <random>
#include <vector>

int main()
{
    using namespace vmpower;

    std::mt19937_64 rng(7);
    std::normal_distribution<double> load(2350.0, 120.0);
    std::vector<double> draws;
    for (int i = 0; i < 20000; ++i) draws.push_back(std::max(1500.0, load(rng)));

    const oversub::HistoryEstimates est{0.4, 0.65, 0.44};
    const oversub::PowerCurves curves = oversub::make_curves(power::ServerPowerSpec{}, est);
    const oversub::ChassisComposition comp;
    oversub::SearchOptions opts;
    opts.shave_list_limit = 0;

    struct Named {
        const char* name;
        oversub::OversubPolicy policy;
    };
    const Named policies[] = {
        {"no capping events", {0.0, 0.0, 1.0, 1.0, 0.1, false}},
        {"full-server capping", {0.0, 0.001, 0.75, 0.75, 0.1, true}},
        {"NUF only, 1% events", {0.0, 0.01, 1.0, 0.5, 0.1, false}},
        {"UF 0.1%, NUF 0.9%", {0.001, 0.009, 0.75, 0.5, 0.1, false}},
    };
    std::printf("%-22s %10s %10s %8s\n", "policy", "p_min W", "budget W", "delta");
    for (const Named& n : policies) {
        const oversub::BudgetResult r = oversub::find_min_budget(draws, n.policy, est, curves, comp, opts);
        std::printf("%-22s %10.1f %10.1f %7.2f%%\n", n.name, r.p_min, r.final_budget, 100.0 * r.oversubscription_delta());
    }
}
