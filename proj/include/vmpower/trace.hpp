#pragma once

// Synthetic VM arrival traces.
//
// Deployments arrive as a Poisson process. All VMs in a deployment share
// size, lifetime, subscription and workload type; each VM draws its own P95
// utilization. The arrival rate is calibrated so that the expected number of
// allocated cores equals a target fraction of the cluster's schedulable cores.

#include "vmpower/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace vmpower::trace {

class InvalidDistribution : public Error {
public:
    using Error::Error;
};

/// Mass on the closed range [lo, hi]. Integer ranges draw integers uniformly;
/// real ranges draw reals uniformly.
struct RangeMass {
    double lo = 1;
    double hi = 1;
    double mass = 0;
};

struct RangeDistribution {
    std::vector<RangeMass> bins;
    bool integer = true;

    void validate(const std::string& what) const
    {
        if (bins.empty()) throw InvalidDistribution(what + ": no bins");
        double sum = 0.0;
        for (const RangeMass& b : bins) {
            if (!(b.mass >= 0.0)) throw InvalidDistribution(what + ": negative mass");
            if (!(b.lo <= b.hi) || !(b.lo >= 0.0)) throw InvalidDistribution(what + ": bad range");
            sum += b.mass;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw InvalidDistribution(what + ": masses sum to " + std::to_string(sum));
    }

    double mean() const
    {
        double m = 0.0;
        for (const RangeMass& b : bins) m += b.mass * (b.lo + b.hi) / 2.0;
        return m;
    }
};

inline RangeDistribution point_masses(std::initializer_list<std::pair<double, double>> pts)
{
    RangeDistribution d;
    for (auto [v, m] : pts) d.bins.push_back({v, v, m});
    return d;
}

struct TraceSpec {
    // Cores per VM.
    RangeDistribution vm_cores = point_masses(
        {{1, 0.33}, {2, 0.27}, {4, 0.21}, {8, 0.10}, {16, 0.05}, {24, 0.03}, {32, 0.01}});
    // VMs per deployment.
    RangeDistribution deployment_size{
        {{1, 1, 0.39}, {2, 2, 0.14}, {3, 5, 0.16}, {6, 10, 0.09}, {11, 15, 0.08}, {16, 25, 0.05}, {26, 50, 0.09}},
        true};
    // Hours.
    RangeDistribution lifetime_hours{{{1, 1, 0.52},
                                      {2, 2, 0.05},
                                      {3, 5, 0.10},
                                      {6, 10, 0.09},
                                      {11, 25, 0.07},
                                      {26, 720, 0.08},
                                      {721, 2160, 0.09}},
                                     false};
    double uf_fraction = 0.4;
    // P95 bucket masses per class; buckets are quarters of [0, 1].
    std::vector<double> uf_p95_buckets{0.05, 0.15, 0.45, 0.35};
    std::vector<double> nuf_p95_buckets{0.25, 0.39, 0.21, 0.15};

    // Subscriptions: a share of them are mostly user-facing, the rest mostly
    // not; the low propensity is solved so the overall UF share matches.
    int subscriptions = 400;
    double uf_heavy_subscription_share = 0.4;
    double uf_heavy_propensity = 0.9;

    double memory_gb_per_core = 4.0;

    // Arrival rate: explicit when > 0, else calibrated from the occupancy.
    double deployments_per_hour = 0.0;
    double target_occupancy = 0.75;
    int schedulable_cores = 720 * 38;

    double warmup_days = 90.0;
    double horizon_days = 30.0;
    // Simulated times are multiples of this.
    SimMillis time_quantum_ms = 200;
    std::uint64_t seed = 1;

    double low_uf_propensity() const
    {
        const double s = uf_heavy_subscription_share;
        if (s >= 1.0) return uf_heavy_propensity;
        return (uf_fraction - s * uf_heavy_propensity) / (1.0 - s);
    }

    double mean_cores_per_deployment() const { return vm_cores.mean() * deployment_size.mean(); }

    double arrival_rate_per_hour() const
    {
        if (deployments_per_hour > 0.0) return deployments_per_hour;
        return target_occupancy * schedulable_cores / (mean_cores_per_deployment() * lifetime_hours.mean());
    }

    void validate() const
    {
        vm_cores.validate("vm_cores");
        deployment_size.validate("deployment_size");
        lifetime_hours.validate("lifetime_hours");
        auto check_buckets = [](const std::vector<double>& b, const char* what) {
            if (b.size() != 4) throw InvalidDistribution(std::string(what) + ": need 4 buckets");
            double s = 0.0;
            for (double v : b) {
                if (!(v >= 0.0)) throw InvalidDistribution(std::string(what) + ": negative mass");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-6) throw InvalidDistribution(std::string(what) + ": masses do not sum to 1");
        };
        check_buckets(uf_p95_buckets, "uf_p95_buckets");
        check_buckets(nuf_p95_buckets, "nuf_p95_buckets");
        if (!(uf_fraction >= 0.0 && uf_fraction <= 1.0)) throw InvalidDistribution("uf_fraction outside [0,1]");
        if (subscriptions < 1) throw InvalidArgument("subscriptions must be >= 1");
        const double low = low_uf_propensity();
        if (!(low >= -1e-12 && low <= 1.0 + 1e-12))
            throw InvalidDistribution("subscription propensities cannot reach the requested uf_fraction");
        if (!(memory_gb_per_core >= 0.0)) throw InvalidArgument("memory_gb_per_core must be nonnegative");
        if (deployments_per_hour < 0.0) throw InvalidArgument("deployments_per_hour must be nonnegative");
        if (deployments_per_hour == 0.0 && !(target_occupancy > 0.0 && target_occupancy <= 1.0))
            throw InvalidArgument("target_occupancy must be in (0,1]");
        if (schedulable_cores < 1) throw InvalidArgument("schedulable_cores must be positive");
        if (!(warmup_days >= 0.0) || !(horizon_days > 0.0)) throw InvalidArgument("bad warmup/horizon");
        if (time_quantum_ms < 1) throw InvalidArgument("time_quantum_ms must be positive");
    }
};

struct TraceVm {
    std::uint64_t vm_id = 0;
    std::uint64_t deployment_id = 0;
    SimMillis arrival_ms = 0; // may be negative during warmup
    SimMillis lifetime_ms = 0;
    int cores = 1;
    double memory_gb = 4.0;
    std::uint64_t subscription_id = 0;
    double subscription_uf_share = 0.0;
    WorkloadLabel label = WorkloadLabel::UserFacing;
    double p95 = 0.5;
};

/// VMs ordered by arrival; each deployment's VMs are contiguous.
struct Trace {
    std::vector<TraceVm> vms;
    SimMillis start_ms = 0; // warmup start (<= 0)
    SimMillis horizon_ms = 0;
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Portable uniform in [0, 1).
    double unit() { return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0); }
    std::uint64_t next() { return eng_(); }

    double exponential(double rate) { return -std::log1p(-unit()) / rate; }

    std::size_t index(std::size_t n) { return std::min(static_cast<std::size_t>(unit() * static_cast<double>(n)), n - 1); }

    std::size_t pick(const std::vector<double>& masses)
    {
        double u = unit();
        for (std::size_t i = 0; i < masses.size(); ++i) {
            u -= masses[i];
            if (u < 0.0) return i;
        }
        return masses.size() - 1;
    }

    double draw(const RangeDistribution& d)
    {
        double u = unit();
        const RangeMass* bin = &d.bins.back();
        for (const RangeMass& b : d.bins) {
            u -= b.mass;
            if (u < 0.0) {
                bin = &b;
                break;
            }
        }
        if (bin->lo == bin->hi) return bin->lo;
        if (d.integer) {
            const auto n = static_cast<std::size_t>(bin->hi - bin->lo + 1);
            return bin->lo + static_cast<double>(index(n));
        }
        return bin->lo + (bin->hi - bin->lo) * unit();
    }

private:
    std::mt19937_64 eng_;
};

inline SimMillis quantize(double ms, SimMillis quantum)
{
    const auto q = static_cast<SimMillis>(std::llround(ms / static_cast<double>(quantum)));
    return std::max<SimMillis>(q, 0) * quantum;
}

inline Trace generate_trace(const TraceSpec& spec)
{
    spec.validate();
    Rng rng(spec.seed);

    std::vector<double> propensity(static_cast<std::size_t>(spec.subscriptions));
    const int heavy = static_cast<int>(std::lround(spec.uf_heavy_subscription_share * spec.subscriptions));
    const double low = std::clamp(spec.low_uf_propensity(), 0.0, 1.0);
    for (int s = 0; s < spec.subscriptions; ++s)
        propensity[static_cast<std::size_t>(s)] = s < heavy ? spec.uf_heavy_propensity : low;
    // Deployments pick subscriptions uniformly; with a rounded heavy count the
    // realized share is heavy / subscriptions.

    Trace tr;
    const SimMillis q = spec.time_quantum_ms;
    tr.start_ms = -quantize(spec.warmup_days * kMillisPerDay, q);
    tr.horizon_ms = quantize(spec.horizon_days * kMillisPerDay, q);
    const double rate_per_ms = spec.arrival_rate_per_hour() / static_cast<double>(kMillisPerHour);

    double t = static_cast<double>(tr.start_ms);
    std::uint64_t dep_id = 0, vm_id = 0;
    for (;;) {
        t += rng.exponential(rate_per_ms);
        const SimMillis arrival = tr.start_ms + quantize(t - static_cast<double>(tr.start_ms), q);
        if (arrival >= tr.horizon_ms) break;
        const auto sub = rng.index(propensity.size());
        const double prop = propensity[sub];
        const WorkloadLabel label = rng.unit() < prop ? WorkloadLabel::UserFacing : WorkloadLabel::NonUserFacing;
        const int cores = static_cast<int>(rng.draw(spec.vm_cores));
        const int count = static_cast<int>(rng.draw(spec.deployment_size));
        const double hours = rng.draw(spec.lifetime_hours);
        const SimMillis life = std::max(q, quantize(hours * static_cast<double>(kMillisPerHour), q));
        const auto& buckets = is_uf(label) ? spec.uf_p95_buckets : spec.nuf_p95_buckets;
        ++dep_id;
        for (int i = 0; i < count; ++i) {
            TraceVm vm;
            vm.vm_id = ++vm_id;
            vm.deployment_id = dep_id;
            vm.arrival_ms = arrival;
            vm.lifetime_ms = life;
            vm.cores = cores;
            vm.memory_gb = cores * spec.memory_gb_per_core;
            vm.subscription_id = sub + 1;
            vm.subscription_uf_share = prop;
            vm.label = label;
            const auto b = static_cast<double>(rng.pick(buckets));
            // Uniform inside the bucket, kept off the lower edge so bucket_of
            // maps it back.
            vm.p95 = std::clamp((b + rng.unit()) / 4.0, b / 4.0 + 1e-9, (b + 1.0) / 4.0);
            tr.vms.push_back(vm);
        }
    }
    return tr;
}

inline constexpr const char* kTraceCsvHeader =
    "vm_id,deployment_id,arrival_ms,lifetime_ms,cores,memory_gb,subscription_id,subscription_uf_share,label,p95";

inline void write_trace_csv(std::ostream& os, const Trace& tr)
{
    os << "# start_ms=" << tr.start_ms << " horizon_ms=" << tr.horizon_ms << "\n" << kTraceCsvHeader << "\n";
    os.precision(17);
    for (const TraceVm& v : tr.vms)
        os << v.vm_id << ',' << v.deployment_id << ',' << v.arrival_ms << ',' << v.lifetime_ms << ',' << v.cores << ','
           << v.memory_gb << ',' << v.subscription_id << ',' << v.subscription_uf_share << ',' << to_string(v.label)
           << ',' << v.p95 << "\n";
}

class TraceParseError : public Error {
public:
    using Error::Error;
};

inline Trace read_trace_csv(std::istream& is)
{
    Trace tr;
    std::string line;
    int lineno = 0;
    bool header = false;
    auto fail = [&](const std::string& msg) { throw TraceParseError("line " + std::to_string(lineno) + ": " + msg); };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string kv;
            while (ss >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                const std::string k = kv.substr(0, eq);
                const long long v = std::stoll(kv.substr(eq + 1));
                if (k == "start_ms") tr.start_ms = v;
                if (k == "horizon_ms") tr.horizon_ms = v;
            }
            continue;
        }
        if (!header) {
            if (line != kTraceCsvHeader) fail("expected header '" + std::string(kTraceCsvHeader) + "'");
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 10) fail("expected 10 fields, got " + std::to_string(f.size()));
        try {
            TraceVm v;
            v.vm_id = std::stoull(f[0]);
            v.deployment_id = std::stoull(f[1]);
            v.arrival_ms = std::stoll(f[2]);
            v.lifetime_ms = std::stoll(f[3]);
            v.cores = std::stoi(f[4]);
            v.memory_gb = std::stod(f[5]);
            v.subscription_id = std::stoull(f[6]);
            v.subscription_uf_share = std::stod(f[7]);
            v.label = parse_label(f[8]);
            v.p95 = std::stod(f[9]);
            if (v.cores < 1 || v.lifetime_ms <= 0 || !(v.p95 >= 0.0 && v.p95 <= 1.0) || v.memory_gb < 0.0)
                fail("field out of range");
            if (!tr.vms.empty() && v.arrival_ms < tr.vms.back().arrival_ms) fail("arrivals out of order");
            tr.vms.push_back(v);
        } catch (const TraceParseError&) {
            throw;
        } catch (const std::exception& e) {
            fail(std::string("bad field: ") + e.what());
        }
    }
    if (!header) throw TraceParseError("missing header");
    if (tr.horizon_ms <= 0) {
        for (const TraceVm& v : tr.vms) tr.horizon_ms = std::max(tr.horizon_ms, v.arrival_ms + v.lifetime_ms);
    }
    if (!tr.vms.empty()) tr.start_ms = std::min(tr.start_ms, tr.vms.front().arrival_ms);
    return tr;
}

} // namespace vmpower::trace
