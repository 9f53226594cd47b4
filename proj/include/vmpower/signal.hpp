#pragma once

// Per-VM CPU utilization signals for the simulator.
//
// User-facing VMs follow a daily sinusoid plus Gaussian noise, shifted so
// that the 95th percentile of the unclamped signal equals the VM's P95.
// Non-user-facing VMs hold a noisy level with the same property, interrupted
// by short bursts at a high level shared by every VM of the deployment (a
// batch job ramping up together). Bursts cover less than 5% of slots, so the
// level is set from the noise quantile that leaves the burst mass on top.
// Values are stateless functions of (seed, vm, slot), so any slot can be
// evaluated in any order.

#include "vmpower/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace vmpower::signal {

struct SignalConfig {
    SimMillis slot_ms = 300 * kMillisPerSecond;
    // Fractions of the VM's P95.
    double uf_amplitude = 0.4;
    double uf_noise = 0.05;
    double nuf_noise = 0.10;
    double nuf_burst_probability = 0.04;
    int nuf_burst_slots = 3;
    double nuf_burst_level = 0.8;
    // Hour of day at which user-facing load peaks, and per-VM jitter (+/-).
    double uf_peak_hour = 14.0;
    double uf_phase_jitter_hours = 2.0;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (slot_ms <= 0) throw InvalidArgument("signal slot must be positive");
        if (!(uf_amplitude >= 0.0) || !(uf_noise >= 0.0) || !(nuf_noise >= 0.0))
            throw InvalidArgument("signal amplitudes must be nonnegative");
        if (nuf_noise * 2.5 > 1.0) throw InvalidArgument("nuf_noise too large");
        if (!(nuf_burst_probability >= 0.0 && nuf_burst_probability < 0.05))
            throw InvalidArgument("nuf_burst_probability must be in [0,0.05)");
        if (nuf_burst_slots < 1) throw InvalidArgument("nuf_burst_slots must be >= 1");
        if (!(nuf_burst_level >= 0.0 && nuf_burst_level <= 1.0))
            throw InvalidArgument("nuf_burst_level must be in [0,1]");
        if (!(uf_phase_jitter_hours >= 0.0 && uf_phase_jitter_hours <= 12.0))
            throw InvalidArgument("uf_phase_jitter_hours must be in [0,12]");
    }
};

struct SignalVm {
    std::uint64_t id = 0;
    std::uint64_t deployment_id = 0;
    WorkloadLabel label = WorkloadLabel::UserFacing;
    double p95 = 0.5;
};

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double standard_normal_quantile(double p)
{
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile level must be in (0,1)");
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        (standard_normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// 95th percentile of a*sin(theta) + s*Z for uniform theta and standard
/// normal Z, by bisection on a phase-averaged CDF.
inline double sine_noise_p95(double a, double s)
{
    constexpr int kPhases = 4096;
    std::vector<double> sines(kPhases);
    for (int i = 0; i < kPhases; ++i) sines[static_cast<std::size_t>(i)] = a * std::sin(2.0 * std::numbers::pi * (i + 0.5) / kPhases);
    auto cdf = [&](double x) {
        double acc = 0.0;
        for (double v : sines) acc += s > 0.0 ? standard_normal_cdf((x - v) / s) : (v <= x ? 1.0 : 0.0);
        return acc / kPhases;
    };
    double lo = -a - 8.0 * s - 1e-12, hi = a + 8.0 * s + 1e-12;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < 0.95 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

class SignalModel {
public:
    explicit SignalModel(SignalConfig cfg = {}) : cfg_(cfg)
    {
        cfg_.validate();
        uf_q95_ = sine_noise_p95(cfg_.uf_amplitude, cfg_.uf_noise);
        nuf_z_ = standard_normal_quantile(0.95 / (1.0 - cfg_.nuf_burst_probability));
    }

    const SignalConfig& config() const noexcept { return cfg_; }

    SimMillis slot_of(SimMillis t) const
    {
        return t >= 0 ? t / cfg_.slot_ms : -((-t + cfg_.slot_ms - 1) / cfg_.slot_ms);
    }

    /// Utilization in [0,1], constant within a slot.
    double utilization(const SignalVm& vm, SimMillis t) const
    {
        const SimMillis slot = slot_of(t);
        const double p = vm.p95;
        const double z = normal(vm.id, slot);
        double u;
        if (is_uf(vm.label)) {
            const double jitter = (2.0 * unit_from_hash(mix64(cfg_.seed ^ mix64(vm.id * 2 + 1))) - 1.0) *
                                  cfg_.uf_phase_jitter_hours;
            const double mid_ms = (static_cast<double>(slot) + 0.5) * static_cast<double>(cfg_.slot_ms);
            const double hours = mid_ms / static_cast<double>(kMillisPerHour);
            // Peak of sin at phase pi/2.
            const double phase = 2.0 * std::numbers::pi * (hours - cfg_.uf_peak_hour - jitter) / 24.0 + std::numbers::pi / 2.0;
            u = p * (1.0 - uf_q95_ + cfg_.uf_amplitude * std::sin(phase) + cfg_.uf_noise * z);
        } else {
            if (bursting(vm.deployment_id, slot)) return std::max(cfg_.nuf_burst_level, p);
            const double sigma = cfg_.nuf_noise * p;
            u = p - nuf_z_ * sigma + sigma * z;
        }
        return std::clamp(u, 0.0, 1.0);
    }

    bool bursting(std::uint64_t deployment, SimMillis slot) const
    {
        if (cfg_.nuf_burst_probability <= 0.0) return false;
        const SimMillis block = slot >= 0 ? slot / cfg_.nuf_burst_slots
                                          : -((-slot + cfg_.nuf_burst_slots - 1) / cfg_.nuf_burst_slots);
        const std::uint64_t h =
            mix64(cfg_.seed ^ mix64(~deployment * 0xd1b54a32d192ed03ULL ^ static_cast<std::uint64_t>(block)));
        return unit_from_hash(h) < cfg_.nuf_burst_probability;
    }

private:
    // Box-Muller on two counter-based uniforms.
    double normal(std::uint64_t vm, SimMillis slot) const
    {
        const std::uint64_t h = mix64(cfg_.seed ^ mix64(vm * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(slot)));
        const double u1 = unit_from_hash(h);
        const double u2 = unit_from_hash(mix64(h));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    SignalConfig cfg_;
    double uf_q95_ = 0.0;
    double nuf_z_ = 1.6448536269514722;
};

} // namespace vmpower::signal
