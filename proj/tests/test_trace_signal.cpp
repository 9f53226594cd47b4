#include "vmpower/criticality.hpp"
#include "vmpower/signal.hpp"
#include "vmpower/trace.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

using namespace vmpower;
using namespace vmpower::trace;

namespace {

// First `n` VMs of a trace long enough to contain them.
std::vector<TraceVm> sample_vms(std::size_t n, std::uint64_t seed)
{
    TraceSpec s;
    s.seed = seed;
    s.warmup_days = 0.0;
    s.horizon_days = 365.0;
    Trace tr = generate_trace(s);
    if (tr.vms.size() < n) throw std::runtime_error("trace too short");
    tr.vms.resize(n);
    return tr.vms;
}

double quantile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

} // namespace

TEST(TraceSpec, DefaultsValidate) { EXPECT_NO_THROW(TraceSpec{}.validate()); }

TEST(TraceSpec, MassesMustSumToOne)
{
    TraceSpec s;
    s.vm_cores = point_masses({{1, 0.5}, {2, 0.4}});
    EXPECT_THROW(s.validate(), InvalidDistribution);
    s = {};
    s.uf_p95_buckets = {0.5, 0.5, 0.5, -0.5};
    EXPECT_THROW(s.validate(), InvalidDistribution);
    s = {};
    s.nuf_p95_buckets = {1.0};
    EXPECT_THROW(s.validate(), InvalidDistribution);
    EXPECT_THROW(generate_trace(s), InvalidDistribution);
}

TEST(GenerateTrace, OneCoreShare)
{
    const auto vms = sample_vms(100000, 11);
    const auto ones = std::count_if(vms.begin(), vms.end(), [](const TraceVm& v) { return v.cores == 1; });
    EXPECT_NEAR(static_cast<double>(ones) / vms.size(), 0.33, 0.01);
}

TEST(GenerateTrace, OneHourLifetimeShare)
{
    const auto vms = sample_vms(100000, 11);
    const auto hour = std::count_if(vms.begin(), vms.end(),
                                    [](const TraceVm& v) { return v.lifetime_ms == kMillisPerHour; });
    EXPECT_NEAR(static_cast<double>(hour) / vms.size(), 0.52, 0.01);
}

TEST(GenerateTrace, MarginalsConvergeAtDeploymentLevel)
{
    TraceSpec s;
    s.seed = 5;
    s.warmup_days = 0.0;
    s.horizon_days = 365.0;
    const Trace tr = generate_trace(s);
    std::map<std::uint64_t, const TraceVm*> first;
    std::map<std::uint64_t, int> size;
    for (const TraceVm& v : tr.vms) {
        first.emplace(v.deployment_id, &v);
        ++size[v.deployment_id];
    }
    ASSERT_GT(first.size(), 20000u);
    const double n = static_cast<double>(first.size());
    double singles = 0, two_core = 0, uf = 0;
    for (const auto& [id, v] : first) {
        singles += size[id] == 1;
        two_core += v->cores == 2;
        uf += is_uf(v->label);
    }
    EXPECT_NEAR(singles / n, 0.39, 0.01);
    EXPECT_NEAR(two_core / n, 0.27, 0.01);
    EXPECT_NEAR(uf / n, 0.40, 0.02);
}

TEST(GenerateTrace, VmsOfADeploymentShareShapeAndArrival)
{
    const auto vms = sample_vms(5000, 3);
    std::map<std::uint64_t, const TraceVm*> first;
    for (const TraceVm& v : vms) {
        auto [it, fresh] = first.emplace(v.deployment_id, &v);
        if (fresh) continue;
        EXPECT_EQ(v.cores, it->second->cores);
        EXPECT_EQ(v.arrival_ms, it->second->arrival_ms);
        EXPECT_EQ(v.lifetime_ms, it->second->lifetime_ms);
        EXPECT_EQ(v.label, it->second->label);
    }
}

TEST(GenerateTrace, TimesAreQuantizedAndOrdered)
{
    TraceSpec s;
    s.warmup_days = 5.0;
    s.horizon_days = 5.0;
    const Trace tr = generate_trace(s);
    ASSERT_FALSE(tr.vms.empty());
    EXPECT_EQ(tr.start_ms, -5 * kMillisPerDay);
    SimMillis prev = tr.start_ms;
    for (const TraceVm& v : tr.vms) {
        EXPECT_EQ(v.arrival_ms % 200, 0);
        EXPECT_EQ(v.lifetime_ms % 200, 0);
        EXPECT_GE(v.arrival_ms, prev);
        EXPECT_LT(v.arrival_ms, tr.horizon_ms);
        EXPECT_GT(v.p95, 0.0);
        EXPECT_LE(v.p95, 1.0);
        prev = v.arrival_ms;
    }
}

TEST(GenerateTrace, SameSeedSameTrace)
{
    TraceSpec s;
    s.warmup_days = 2.0;
    s.horizon_days = 3.0;
    std::ostringstream a, b, c;
    write_trace_csv(a, generate_trace(s));
    write_trace_csv(b, generate_trace(s));
    s.seed = 2;
    write_trace_csv(c, generate_trace(s));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str(), c.str());
}

TEST(TraceCsv, RoundTrip)
{
    TraceSpec s;
    s.warmup_days = 1.0;
    s.horizon_days = 2.0;
    const Trace tr = generate_trace(s);
    std::stringstream ss;
    write_trace_csv(ss, tr);
    const Trace back = read_trace_csv(ss);
    EXPECT_EQ(back.start_ms, tr.start_ms);
    EXPECT_EQ(back.horizon_ms, tr.horizon_ms);
    ASSERT_EQ(back.vms.size(), tr.vms.size());
    for (std::size_t i = 0; i < tr.vms.size(); ++i) {
        EXPECT_EQ(back.vms[i].vm_id, tr.vms[i].vm_id);
        EXPECT_EQ(back.vms[i].arrival_ms, tr.vms[i].arrival_ms);
        EXPECT_EQ(back.vms[i].cores, tr.vms[i].cores);
        EXPECT_EQ(back.vms[i].label, tr.vms[i].label);
        EXPECT_DOUBLE_EQ(back.vms[i].p95, tr.vms[i].p95);
    }
}

TEST(TraceCsv, MalformedRowReportsLine)
{
    std::istringstream is(std::string(kTraceCsvHeader) + "\n1,1,0,3600000,2,8,1,0.5,UserFacing,0.5\n1,2,oops\n");
    try {
        read_trace_csv(is);
        FAIL() << "expected a parse error";
    } catch (const TraceParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Signal, UserFacingP95MatchesTarget)
{
    const signal::SignalModel m;
    for (std::uint64_t id : {1u, 2u, 3u, 4u}) {
        const signal::SignalVm vm{id, id, WorkloadLabel::UserFacing, 0.65};
        std::vector<double> u;
        for (SimMillis t = 0; t < 30 * kMillisPerDay; t += m.config().slot_ms) u.push_back(m.utilization(vm, t));
        EXPECT_NEAR(quantile(u, 0.95), 0.65, 0.03) << id;
    }
}

TEST(Signal, NonUserFacingP95MatchesTarget)
{
    const signal::SignalModel m;
    std::vector<double> u;
    for (std::uint64_t id = 1; id <= 20; ++id) {
        const signal::SignalVm vm{id, id, WorkloadLabel::NonUserFacing, 0.44};
        for (SimMillis t = 0; t < 30 * kMillisPerDay; t += m.config().slot_ms) u.push_back(m.utilization(vm, t));
    }
    EXPECT_NEAR(quantile(u, 0.95), 0.44, 0.03);
}

TEST(Signal, UserFacingPeaksInTheAfternoon)
{
    signal::SignalConfig c;
    c.uf_noise = 0.0;
    c.uf_phase_jitter_hours = 0.0;
    const signal::SignalModel m(c);
    const signal::SignalVm vm{9, 9, WorkloadLabel::UserFacing, 0.5};
    const double peak = m.utilization(vm, 14 * kMillisPerHour);
    const double trough = m.utilization(vm, 2 * kMillisPerHour);
    EXPECT_GT(peak, trough + 0.3);
    EXPECT_GE(peak, m.utilization(vm, 10 * kMillisPerHour));
}

TEST(Signal, ZeroNoiseNonUserFacingIsConstant)
{
    signal::SignalConfig c;
    c.nuf_noise = 0.0;
    c.nuf_burst_probability = 0.0;
    const signal::SignalModel m(c);
    const signal::SignalVm vm{3, 3, WorkloadLabel::NonUserFacing, 0.37};
    for (SimMillis t = 0; t < 3 * kMillisPerDay; t += 7 * 60 * kMillisPerSecond)
        EXPECT_DOUBLE_EQ(m.utilization(vm, t), 0.37);
}

TEST(Signal, AlwaysInUnitInterval)
{
    signal::SignalConfig c;
    c.uf_noise = 0.3;
    c.nuf_noise = 0.4;
    const signal::SignalModel m(c);
    long samples = 0;
    for (std::uint64_t id = 1; id <= 200; ++id) {
        const double p95 = static_cast<double>(id) / 200.0;
        const signal::SignalVm vm{id, id / 4, id % 2 ? WorkloadLabel::UserFacing : WorkloadLabel::NonUserFacing, p95};
        for (SimMillis t = -kMillisPerDay; t < 2 * kMillisPerDay; t += 600 * kMillisPerSecond) {
            const double u = m.utilization(vm, t);
            ASSERT_GE(u, 0.0);
            ASSERT_LE(u, 1.0);
            ++samples;
        }
    }
    EXPECT_GT(samples, 1000);
}

TEST(Signal, ConstantWithinSlotAndDeterministic)
{
    const signal::SignalModel a, b;
    const signal::SignalVm vm{5, 2, WorkloadLabel::UserFacing, 0.6};
    const SimMillis slot = a.config().slot_ms;
    EXPECT_DOUBLE_EQ(a.utilization(vm, 3 * slot), a.utilization(vm, 3 * slot + slot - 1));
    EXPECT_DOUBLE_EQ(a.utilization(vm, 17 * slot), b.utilization(vm, 17 * slot));
    EXPECT_EQ(a.slot_of(-1), -1);
    EXPECT_EQ(a.slot_of(-slot), -1);
    EXPECT_EQ(a.slot_of(-slot - 1), -2);
}

TEST(Signal, BurstsAreDeploymentWide)
{
    const signal::SignalModel m;
    const signal::SignalVm a{1, 42, WorkloadLabel::NonUserFacing, 0.3};
    const signal::SignalVm b{2, 42, WorkloadLabel::NonUserFacing, 0.3};
    int bursts = 0;
    const int slots = 20000;
    for (SimMillis s = 0; s < slots; ++s) {
        const SimMillis t = s * m.config().slot_ms;
        if (m.bursting(42, s)) {
            ++bursts;
            EXPECT_DOUBLE_EQ(m.utilization(a, t), m.config().nuf_burst_level);
            EXPECT_DOUBLE_EQ(m.utilization(b, t), m.config().nuf_burst_level);
        }
    }
    EXPECT_NEAR(static_cast<double>(bursts) / slots, m.config().nuf_burst_probability, 0.01);
}

TEST(Signal, ClassifierRecoversSimulatedLabels)
{
    // Half-hour averages of five simulated days per VM.
    const signal::SignalModel m;
    const SimMillis slot = m.config().slot_ms;
    const SimMillis cadence = 30 * 60 * kMillisPerSecond;
    int correct = 0, total = 0;
    for (std::uint64_t id = 1; id <= 100; ++id) {
        const WorkloadLabel truth = id % 2 ? WorkloadLabel::UserFacing : WorkloadLabel::NonUserFacing;
        const signal::SignalVm vm{id, id, truth, 0.3 + 0.6 * static_cast<double>(id % 7) / 7.0};
        std::vector<double> series;
        for (SimMillis t = 0; t < 5 * kMillisPerDay; t += cadence) {
            double acc = 0.0;
            int n = 0;
            for (SimMillis s = t; s < t + cadence; s += slot, ++n) acc += m.utilization(vm, s);
            series.push_back(acc / n);
        }
        const auto c = criticality::classify(criticality::UtilizationSeries{series, 30});
        correct += c.label == truth;
        ++total;
    }
    EXPECT_GE(correct, 95) << correct << "/" << total;
}
