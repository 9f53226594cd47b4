#pragma once

// Criticality detection: decides from a VM's CPU-utilization history whether
// its workload follows a daily (user-facing) pattern.
//
// The series is de-trended against the trailing 24 h mean, normalized by its
// standard deviation, and then matched against robust (median) templates for
// 24, 12 and 8 hour periods. A daily workload is one whose 24 h template fits
// much better than the shorter templates.

#include "vmpower/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vmpower::criticality {

class SeriesTooShort : public Error {
public:
    using Error::Error;
};

constexpr int kMinutesPerDay = 24 * 60;
constexpr int kDefaultSlotMinutes = 30;
constexpr int kClassifiableDays = 5;
constexpr double kDivisorEpsilon = 1e-6;
constexpr double kRatioEpsilon = 1e-6;
constexpr double kZeroVarianceTolerance = 1e-9;

/// Fixed-cadence utilization samples covering a whole number of days.
class UtilizationSeries {
public:
    UtilizationSeries() = default;

    explicit UtilizationSeries(std::vector<double> values, int slot_minutes = kDefaultSlotMinutes)
        : values_(std::move(values)), slot_minutes_(slot_minutes)
    {
        if (slot_minutes_ <= 0 || kMinutesPerDay % slot_minutes_ != 0)
            throw InvalidArgument("slot_minutes must divide 1440, got " + std::to_string(slot_minutes_));
        for (std::size_t i = 0; i < values_.size(); ++i) {
            double v = values_[i];
            if (!(v >= 0.0 && v <= 1.0))
                throw InvalidArgument("utilization at slot " + std::to_string(i) + " outside [0,1]");
        }
        if (values_.size() % static_cast<std::size_t>(slots_per_day()) != 0)
            throw InvalidArgument("series length " + std::to_string(values_.size()) +
                                  " is not a whole number of days");
    }

    std::span<const double> values() const noexcept { return values_; }
    int slot_minutes() const noexcept { return slot_minutes_; }
    int slots_per_day() const noexcept { return kMinutesPerDay / slot_minutes_; }
    int span_days() const noexcept { return static_cast<int>(values_.size()) / slots_per_day(); }
    std::size_t size() const noexcept { return values_.size(); }

    /// Multiplies every value by `factor`; the result must stay in [0,1].
    UtilizationSeries scaled(double factor) const
    {
        std::vector<double> v(values_);
        for (double& x : v) x *= factor;
        return UtilizationSeries(std::move(v), slot_minutes_);
    }

private:
    std::vector<double> values_;
    int slot_minutes_ = kDefaultSlotMinutes;
};

/// De-trended and normalized series. Values are unbounded.
struct PreprocessedSeries {
    std::vector<double> values;
    int slots_per_day = kMinutesPerDay / kDefaultSlotMinutes;
    bool zero_variance = false;
};

struct Template {
    int period_slots = 0;
    std::vector<double> slot_values;
};

enum class TrimScope { Global, PerDay };

struct DeviationOptions {
    double trim_fraction = 0.2;
    TrimScope scope = TrimScope::Global;
    int slots_per_day = kMinutesPerDay / kDefaultSlotMinutes; // used by PerDay only
};

struct CriticalityScores {
    double compare8 = std::numeric_limits<double>::quiet_NaN();
    double compare12 = std::numeric_limits<double>::quiet_NaN();
    double dev24 = std::numeric_limits<double>::quiet_NaN();
    double dev12 = std::numeric_limits<double>::quiet_NaN();
    double dev8 = std::numeric_limits<double>::quiet_NaN();
    bool too_short = false;
    bool zero_variance = false;
    // 24 h template fits perfectly and so does a shorter one.
    bool degenerate = false;
};

struct ClassifierOptions {
    double threshold = 0.72;
    // Rejects 6 h / 12 h machine periods, which Compare8 alone cannot see.
    bool gate_compare12 = true;
    double compare12_threshold = 0.72;
    TrimScope trim = TrimScope::Global;
    int min_days = kClassifiableDays;
};

struct Classification {
    WorkloadLabel label = WorkloadLabel::UserFacing;
    CriticalityScores scores;
};

inline double median_of(std::vector<double>& v)
{
    if (v.empty()) throw InvalidArgument("median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

/// Divides each slot by the mean of the preceding 24 h (the first day uses
/// its own mean), then divides the result by its population standard
/// deviation. Needs at least two days.
inline PreprocessedSeries preprocess(const UtilizationSeries& series)
{
    const auto in = series.values();
    const std::size_t day = static_cast<std::size_t>(series.slots_per_day());
    if (in.size() < 2 * day)
        throw SeriesTooShort("preprocess needs at least 2 days, got " + std::to_string(in.size()) + " slots");

    PreprocessedSeries out;
    out.slots_per_day = series.slots_per_day();
    out.values.resize(in.size());

    const double first_day_mean = std::accumulate(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(day), 0.0) /
                                  static_cast<double>(day);
    for (std::size_t i = 0; i < in.size(); ++i) {
        double divisor = first_day_mean;
        if (i >= day) {
            divisor = std::accumulate(in.begin() + static_cast<std::ptrdiff_t>(i - day),
                                      in.begin() + static_cast<std::ptrdiff_t>(i), 0.0) /
                      static_cast<double>(day);
        }
        out.values[i] = in[i] / std::max(divisor, kDivisorEpsilon);
    }

    const double n = static_cast<double>(out.values.size());
    const double mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : out.values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (sd <= kZeroVarianceTolerance * std::max(1.0, std::abs(mean))) {
        out.zero_variance = true;
        return out;
    }
    for (double& v : out.values) v /= sd;
    return out;
}

/// Phase-wise median over every repetition of `period_slots`.
inline Template extract_template(std::span<const double> pre, int period_slots)
{
    if (period_slots <= 0 || pre.empty() || pre.size() % static_cast<std::size_t>(period_slots) != 0)
        throw InvalidArgument("period " + std::to_string(period_slots) + " does not tile a series of " +
                              std::to_string(pre.size()) + " slots");
    const std::size_t period = static_cast<std::size_t>(period_slots);
    const std::size_t reps = pre.size() / period;
    Template t;
    t.period_slots = period_slots;
    t.slot_values.resize(period);
    std::vector<double> column(reps);
    for (std::size_t phase = 0; phase < period; ++phase) {
        for (std::size_t r = 0; r < reps; ++r) column[r] = pre[r * period + phase];
        t.slot_values[phase] = median_of(column);
    }
    return t;
}

namespace detail {

inline double trimmed_mean(std::vector<double>& d, double trim_fraction)
{
    std::sort(d.begin(), d.end());
    const auto drop = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(d.size())));
    const std::size_t keep = d.size() - drop;
    if (keep == 0) return 0.0;
    return std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(keep), 0.0) /
           static_cast<double>(keep);
}

} // namespace detail

/// Mean absolute deviation from the tiled template after discarding the
/// largest `trim_fraction` of deviations (by count, floored).
inline double mean_deviation(std::span<const double> pre, const Template& tmpl, const DeviationOptions& opts = {})
{
    const std::size_t period = static_cast<std::size_t>(tmpl.period_slots);
    if (period == 0 || tmpl.slot_values.size() != period || pre.size() % period != 0)
        throw InvalidArgument("template does not tile the series");

    std::vector<double> dev(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) dev[i] = std::abs(pre[i] - tmpl.slot_values[i % period]);

    if (opts.scope == TrimScope::Global) return detail::trimmed_mean(dev, opts.trim_fraction);

    const std::size_t day = static_cast<std::size_t>(opts.slots_per_day);
    if (day == 0 || pre.size() % day != 0) throw InvalidArgument("per-day trimming needs whole days");
    // Equal-sized days, so the mean of per-day means is the mean of all kept slots.
    double total = 0.0;
    std::vector<double> chunk(day);
    for (std::size_t start = 0; start < dev.size(); start += day) {
        std::copy_n(dev.begin() + static_cast<std::ptrdiff_t>(start), day, chunk.begin());
        total += detail::trimmed_mean(chunk, opts.trim_fraction);
    }
    return total / static_cast<double>(dev.size() / day);
}

/// Runs the full pipeline. Throws SeriesTooShort below `opts.min_days`.
inline CriticalityScores compare_scores(const UtilizationSeries& series, const ClassifierOptions& opts = {})
{
    if (series.span_days() < std::max(opts.min_days, 2))
        throw SeriesTooShort("need " + std::to_string(opts.min_days) + " days, got " +
                             std::to_string(series.span_days()));
    if (series.slots_per_day() % 3 != 0 || series.slots_per_day() % 2 != 0)
        throw InvalidArgument("slots per day must be divisible by 6 for 8 h and 12 h templates");

    CriticalityScores s;
    const PreprocessedSeries pre = preprocess(series);
    if (pre.zero_variance) {
        s.zero_variance = true;
        return s;
    }

    const int day = pre.slots_per_day;
    DeviationOptions dopts;
    dopts.scope = opts.trim;
    dopts.slots_per_day = day;
    s.dev24 = mean_deviation(pre.values, extract_template(pre.values, day), dopts);
    s.dev12 = mean_deviation(pre.values, extract_template(pre.values, day / 2), dopts);
    s.dev8 = mean_deviation(pre.values, extract_template(pre.values, day / 3), dopts);
    s.compare8 = s.dev24 / std::max(s.dev8, kRatioEpsilon);
    s.compare12 = s.dev24 / std::max(s.dev12, kRatioEpsilon);
    s.degenerate = s.dev24 < kRatioEpsilon && (s.dev8 < kRatioEpsilon || s.dev12 < kRatioEpsilon);
    return s;
}

/// Label decision for already-computed scores.
inline WorkloadLabel label_for(const CriticalityScores& s, const ClassifierOptions& opts = {})
{
    if (s.too_short) return WorkloadLabel::UserFacing;
    if (s.zero_variance || s.degenerate) return WorkloadLabel::NonUserFacing;
    if (!(s.compare8 < opts.threshold)) return WorkloadLabel::NonUserFacing;
    if (opts.gate_compare12 && !(s.compare12 < opts.compare12_threshold)) return WorkloadLabel::NonUserFacing;
    return WorkloadLabel::UserFacing;
}

/// Total: never throws on short input; a series that cannot be classified is
/// treated as user-facing.
inline Classification classify(const UtilizationSeries& series, const ClassifierOptions& opts = {})
{
    Classification c;
    if (series.span_days() < std::max(opts.min_days, 2)) {
        c.scores.too_short = true;
        c.label = WorkloadLabel::UserFacing;
        return c;
    }
    c.scores = compare_scores(series, opts);
    c.label = label_for(c.scores, opts);
    return c;
}

} // namespace vmpower::criticality
