#pragma once

// Blade power as a function of per-core utilization and DVFS frequency.
//
//   P = idle + sum_core (peak - idle) / cores * u * f^k
//
// k is fitted so that a fully loaded blade at half frequency lands on the
// measured half-frequency peak.

#include "vmpower/common.hpp"

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vmpower::power {

/// Exponent that maps (f = f_low, u = 1) onto `peak_at_low_w`.
inline double fit_dyn_exponent(double idle_w, double peak_w, double peak_at_low_w, double f_low = 0.5)
{
    if (!(idle_w < peak_at_low_w && peak_at_low_w < peak_w) || !(f_low > 0.0 && f_low < 1.0))
        throw InvalidArgument("cannot fit exponent: need idle < low-frequency peak < peak and 0 < f_low < 1");
    return std::log((peak_at_low_w - idle_w) / (peak_w - idle_w)) / std::log(f_low);
}

struct ServerPowerSpec {
    double idle_w = 112.0;
    double peak_w = 310.0;
    int cores = 40;
    double f_max = 1.0;
    double f_min = 0.5;
    double dyn_exponent = fit_dyn_exponent(112.0, 310.0, 169.0, 0.5);

    double dynamic_per_core_w() const noexcept { return (peak_w - idle_w) / static_cast<double>(cores); }

    void validate() const
    {
        if (!(idle_w < peak_w)) throw InvalidArgument("idle_w must be below peak_w");
        if (cores <= 0) throw InvalidArgument("cores must be positive");
        if (!(f_min > 0.0 && f_min <= f_max && f_max == 1.0))
            throw InvalidArgument("frequencies must satisfy 0 < f_min <= f_max = 1");
        if (!(dyn_exponent > 0.0)) throw InvalidArgument("dyn_exponent must be positive");
    }
};

/// Discrete p-state ladder from f_min to f_max, evenly spaced, ascending.
class PStateLadder {
public:
    static constexpr int kDefaultStates = 11;

    PStateLadder() : PStateLadder(ServerPowerSpec{}) {}

    explicit PStateLadder(const ServerPowerSpec& spec, int states = kDefaultStates)
    {
        if (states < 2) throw InvalidArgument("p-state ladder needs at least two states");
        freqs_.resize(static_cast<std::size_t>(states));
        factors_.resize(freqs_.size());
        for (int i = 0; i < states; ++i) {
            double f = spec.f_min + (spec.f_max - spec.f_min) * i / (states - 1);
            if (i == states - 1) f = spec.f_max;
            freqs_[static_cast<std::size_t>(i)] = f;
            factors_[static_cast<std::size_t>(i)] = std::pow(f, spec.dyn_exponent);
        }
    }

    int size() const noexcept { return static_cast<int>(freqs_.size()); }
    int max_index() const noexcept { return size() - 1; }
    double frequency(int idx) const { return freqs_.at(static_cast<std::size_t>(idx)); }
    // f^k at this state.
    double factor(int idx) const { return factors_[static_cast<std::size_t>(idx)]; }
    std::span<const double> frequencies() const noexcept { return freqs_; }

    /// Index of `f` on the ladder, or -1 if it is not a ladder frequency.
    int index_of(double f) const noexcept
    {
        for (int i = 0; i < size(); ++i)
            if (std::abs(freqs_[static_cast<std::size_t>(i)] - f) < 1e-9) return i;
        return -1;
    }

private:
    std::vector<double> freqs_;
    std::vector<double> factors_;
};

struct CoreState {
    double utilization = 0.0;
    double frequency = 1.0;
};

/// Blade power for an explicit set of per-core states.
inline double server_power(const ServerPowerSpec& spec, std::span<const CoreState> cores)
{
    if (static_cast<int>(cores.size()) != spec.cores)
        throw InvalidArgument("expected " + std::to_string(spec.cores) + " core states, got " +
                              std::to_string(cores.size()));
    double dyn = 0.0;
    for (const CoreState& c : cores) dyn += c.utilization * std::pow(c.frequency, spec.dyn_exponent);
    return spec.idle_w + spec.dynamic_per_core_w() * dyn;
}

/// Power with every core at the same utilization and frequency.
inline double uniform_server_power(const ServerPowerSpec& spec, double utilization, double frequency)
{
    return spec.idle_w + spec.dynamic_per_core_w() * spec.cores * utilization * std::pow(frequency, spec.dyn_exponent);
}

struct FreqPowerCurve {
    double utilization = 0.0;
    std::vector<std::pair<double, double>> points; // (frequency, watts), ascending frequency

    /// Linear interpolation between ladder points; clamps outside the range.
    double watts_at(double f) const
    {
        if (points.empty()) throw InvalidArgument("empty curve");
        if (f <= points.front().first) return points.front().second;
        if (f >= points.back().first) return points.back().second;
        for (std::size_t i = 1; i < points.size(); ++i) {
            if (f <= points[i].first) {
                const auto [f0, w0] = points[i - 1];
                const auto [f1, w1] = points[i];
                return w0 + (w1 - w0) * (f - f0) / (f1 - f0);
            }
        }
        return points.back().second;
    }

    /// Server watts saved by moving every core from f_max to `f`.
    double reduction_to(double f) const { return points.back().second - watts_at(f); }
};

inline FreqPowerCurve freq_power_curve(const ServerPowerSpec& spec, double utilization,
                                       const PStateLadder& ladder)
{
    if (!(utilization >= 0.0 && utilization <= 1.0)) throw InvalidArgument("utilization outside [0,1]");
    FreqPowerCurve c;
    c.utilization = utilization;
    c.points.reserve(static_cast<std::size_t>(ladder.size()));
    for (double f : ladder.frequencies()) c.points.emplace_back(f, uniform_server_power(spec, utilization, f));
    return c;
}

inline FreqPowerCurve freq_power_curve(const ServerPowerSpec& spec, double utilization)
{
    return freq_power_curve(spec, utilization, PStateLadder(spec));
}

} // namespace vmpower::power
