#pragma once

// Chassis budget search for power oversubscription.
//
//  1. Estimate the UF core share (beta) and per-class P95 utilizations from
//     the allocation history.
//  2. Build frequency/power curves at those utilizations.
//  3-4. Walk candidate budgets down the sorted historical chassis draws and
//     keep the lowest one whose capping-event rates stay within policy and
//     whose deficits can be shaved by throttling.
//  5. Add a buffer, clamped to the provisioned budget.

#include "vmpower/common.hpp"
#include "vmpower/power_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vmpower::oversub {

class EmptyLog : public Error {
public:
    using Error::Error;
};

class NoFeasibleBudget : public Error {
public:
    using Error::Error;
};

struct OversubPolicy {
    double emax_uf = 0.0;
    double emax_nuf = 0.01;
    double fmin_uf = 1.0;
    double fmin_nuf = 0.5;
    double buffer = 0.10;
    // Full-server capping: every core slows together to fmin, so every event
    // affects both classes and the total rate is bounded by emax_uf + emax_nuf.
    bool full_server = false;

    void validate() const
    {
        for (double v : {emax_uf, emax_nuf})
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("emax must be in [0,1]");
        for (double v : {fmin_uf, fmin_nuf})
            if (!(v >= 0.5 && v <= 1.0)) throw InvalidArgument("fmin must be in [0.5,1]");
        if (!(buffer >= 0.0)) throw InvalidArgument("buffer must be nonnegative");
    }
};

struct HistoryEstimates {
    double beta = 0.4;
    double util_uf = 0.65;
    double util_nuf = 0.44;

    void validate() const
    {
        for (double v : {beta, util_uf, util_nuf})
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("history estimates must be in [0,1]");
    }
};

struct AllocationRecord {
    int cores = 1;
    double hours = 0.0;
    WorkloadLabel label = WorkloadLabel::UserFacing;
    double p95 = 0.0;
};

/// Core-hour weighted class share and P95 averages.
inline HistoryEstimates estimate_history(std::span<const AllocationRecord> log)
{
    if (log.empty()) throw EmptyLog("allocation log is empty");
    double uf_w = 0.0, nuf_w = 0.0, uf_p = 0.0, nuf_p = 0.0;
    for (const AllocationRecord& r : log) {
        if (r.cores < 0 || r.hours < 0.0) throw InvalidArgument("negative cores or hours in allocation log");
        const double w = r.cores * r.hours;
        if (is_uf(r.label)) {
            uf_w += w;
            uf_p += w * r.p95;
        } else {
            nuf_w += w;
            nuf_p += w * r.p95;
        }
    }
    if (uf_w + nuf_w <= 0.0) throw EmptyLog("allocation log has no core-hours");
    HistoryEstimates e;
    e.beta = uf_w / (uf_w + nuf_w);
    e.util_uf = uf_w > 0.0 ? uf_p / uf_w : 0.0;
    e.util_nuf = nuf_w > 0.0 ? nuf_p / nuf_w : 0.0;
    return e;
}

struct ChassisComposition {
    int servers = 12;
    int cores_per_server = 40;
    // Average allocated (VM) cores per chassis.
    double allocated_cores = 12 * 40 * 0.75;
    // Nameplate blade power; the default provisioned budget is servers x this.
    double server_peak_w = 310.0;
};

struct PowerCurves {
    power::FreqPowerCurve uf;
    power::FreqPowerCurve nuf;
    int cores_per_server = 40;
};

inline PowerCurves make_curves(const power::ServerPowerSpec& spec, const HistoryEstimates& est)
{
    return PowerCurves{power::freq_power_curve(spec, est.util_uf), power::freq_power_curve(spec, est.util_nuf),
                       spec.cores};
}

struct ShaveCapacity {
    double nuf_w = 0.0;
    double uf_w = 0.0;
};

/// Watts recoverable by throttling each class down to its frequency floor.
inline ShaveCapacity shave_capacity(const ChassisComposition& comp, const HistoryEstimates& est,
                                    const OversubPolicy& policy, const PowerCurves& curves)
{
    const double per_core_nuf = curves.nuf.reduction_to(policy.fmin_nuf) / curves.cores_per_server;
    const double per_core_uf = curves.uf.reduction_to(policy.fmin_uf) / curves.cores_per_server;
    return ShaveCapacity{comp.allocated_cores * (1.0 - est.beta) * per_core_nuf,
                         comp.allocated_cores * est.beta * per_core_uf};
}

enum class Shave { NufOnly, NufAndUf, Infeasible };

constexpr std::string_view to_string(Shave s) noexcept
{
    switch (s) {
    case Shave::NufOnly: return "nuf_only";
    case Shave::NufAndUf: return "nuf_and_uf";
    case Shave::Infeasible: return "infeasible";
    }
    return "?";
}

inline Shave classify_deficit(double deficit_w, const ShaveCapacity& cap, bool full_server)
{
    if (deficit_w < 0.0) throw InvalidArgument("deficit must be nonnegative");
    if (deficit_w == 0.0) return Shave::NufOnly;
    if (full_server) return deficit_w <= cap.nuf_w + cap.uf_w ? Shave::NufAndUf : Shave::Infeasible;
    if (deficit_w <= cap.nuf_w) return Shave::NufOnly;
    if (deficit_w <= cap.nuf_w + cap.uf_w) return Shave::NufAndUf;
    return Shave::Infeasible;
}

inline Shave shaveable_power(double deficit_w, const ChassisComposition& comp, const HistoryEstimates& est,
                             const OversubPolicy& policy, const PowerCurves& curves)
{
    return classify_deficit(deficit_w, shave_capacity(comp, est, policy, curves), policy.full_server);
}

struct CandidateAudit {
    double budget_w = 0.0;
    long events = 0;
    long uf_events = 0;
    long nuf_events = 0;
    long infeasible_events = 0;
    double uf_rate = 0.0;
    double nuf_rate = 0.0;
    double max_shave_w = 0.0;
    bool accepted = false;
    std::vector<double> shaves; // empty when above the listing limit
    bool shaves_listed = false;
};

struct BudgetResult {
    double p_min = 0.0;
    double final_budget = 0.0;
    double uf_event_rate = 0.0;
    double nuf_event_rate = 0.0;
    double worst_shave_w = 0.0;
    double provisioned_w = 0.0;
    long readings = 0;
    ShaveCapacity capacity;
    std::vector<CandidateAudit> audit;

    double oversubscription_delta() const
    {
        return provisioned_w > 0.0 ? (provisioned_w - final_budget) / provisioned_w : 0.0;
    }
};

struct SearchOptions {
    double delta_w = 10.0;
    std::optional<double> provisioned_w;
    std::size_t shave_list_limit = 1000;
};

/// Step 5. Oversubscription never goes negative.
inline double final_budget(double p_min, const OversubPolicy& policy, double provisioned_w)
{
    if (!(p_min > 0.0)) throw InvalidArgument("p_min must be positive");
    return std::min(p_min * (1.0 + policy.buffer), provisioned_w);
}

/// Steps 3-4. The first candidate sits `delta_w` above the highest reading
/// and has no events; after it come candidates `delta_w` below each distinct
/// reading, walked downward until one violates the policy.
///
/// An event needing UF throttling counts against both classes; every feasible
/// event throttles NUF cores.
inline BudgetResult find_min_budget(std::span<const double> draws, const OversubPolicy& policy,
                                    const HistoryEstimates& est, const PowerCurves& curves,
                                    const ChassisComposition& comp, const SearchOptions& opts = {})
{
    policy.validate();
    est.validate();
    if (draws.empty()) throw InvalidArgument("no historical draws");
    std::vector<double> sorted(draws.begin(), draws.end());
    for (double d : sorted)
        if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument("draws must be positive and finite");
    std::sort(sorted.begin(), sorted.end(), std::greater<>());

    const ShaveCapacity cap = shave_capacity(comp, est, policy, curves);
    const double n = static_cast<double>(sorted.size());
    const double provisioned = opts.provisioned_w.value_or(comp.servers * comp.server_peak_w);

    // Readings strictly above `x`, relying on descending order.
    auto above = [&](double x) -> long {
        return static_cast<long>(std::lower_bound(sorted.begin(), sorted.end(), x, std::greater<>()) - sorted.begin());
    };

    auto evaluate = [&](double budget) {
        CandidateAudit a;
        a.budget_w = budget;
        a.events = above(budget);
        if (policy.full_server) {
            a.infeasible_events = above(budget + cap.nuf_w + cap.uf_w);
            a.uf_events = a.events - a.infeasible_events;
        } else {
            a.infeasible_events = above(budget + cap.nuf_w + cap.uf_w);
            a.uf_events = above(budget + cap.nuf_w) - a.infeasible_events;
        }
        a.nuf_events = a.events - a.infeasible_events;
        a.uf_rate = a.uf_events / n;
        a.nuf_rate = a.nuf_events / n;
        a.max_shave_w = a.events > 0 ? sorted.front() - budget : 0.0;
        if (static_cast<std::size_t>(a.events) <= opts.shave_list_limit) {
            a.shaves_listed = true;
            a.shaves.reserve(static_cast<std::size_t>(a.events));
            for (long i = 0; i < a.events; ++i) a.shaves.push_back(sorted[static_cast<std::size_t>(i)] - budget);
        }
        if (policy.full_server)
            a.accepted = a.infeasible_events == 0 && a.events / n <= policy.emax_uf + policy.emax_nuf;
        else
            a.accepted = a.infeasible_events == 0 && a.uf_rate <= policy.emax_uf && a.nuf_rate <= policy.emax_nuf;
        return a;
    };

    BudgetResult res;
    res.readings = static_cast<long>(sorted.size());
    res.capacity = cap;
    res.provisioned_w = provisioned;

    const double baseline = sorted.front() + opts.delta_w;
    if (baseline > provisioned)
        throw NoFeasibleBudget("highest historical draw " + std::to_string(sorted.front()) +
                               " W already exceeds the provisioned budget " + std::to_string(provisioned) + " W");
    res.audit.push_back(evaluate(baseline));
    std::size_t best = 0;

    for (std::size_t i = 0; i < sorted.size();) {
        const double draw = sorted[i];
        const double candidate = draw - opts.delta_w;
        if (!(candidate > 0.0)) break;
        res.audit.push_back(evaluate(candidate));
        if (!res.audit.back().accepted) break;
        best = res.audit.size() - 1;
        while (i < sorted.size() && sorted[i] == draw) ++i;
    }

    const CandidateAudit& chosen = res.audit[best];
    res.p_min = chosen.budget_w;
    res.uf_event_rate = chosen.uf_rate;
    res.nuf_event_rate = chosen.nuf_rate;
    res.worst_shave_w = chosen.max_shave_w;
    res.final_budget = final_budget(res.p_min, policy, provisioned);
    return res;
}

} // namespace vmpower::oversub
