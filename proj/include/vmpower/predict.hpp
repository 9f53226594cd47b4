#pragma once

// Arrival-time predictions of workload type and P95-utilization bucket.
//
// Providers stand in for trained models: an oracle, a noisy oracle tuned to a
// measured operating point, and a subscription-history majority vote.
// resolve() applies the scheduler's conservative fallback for low-confidence
// predictions.

#include "vmpower/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>

namespace vmpower::predict {

class UnknownProvider : public Error {
public:
    using Error::Error;
};

constexpr int kBuckets = 4;
constexpr double kDefaultMinConfidence = 0.6;

/// 1-based utilization bucket: (0,25%], (25,50%], (50,75%], (75,100%].
inline int bucket_of(double p95)
{
    if (p95 <= 0.25) return 1;
    if (p95 <= 0.50) return 2;
    if (p95 <= 0.75) return 3;
    return 4;
}

inline double bucket_midpoint(int bucket)
{
    if (bucket < 1 || bucket > kBuckets) throw InvalidArgument("bucket must be in 1..4");
    return (2.0 * bucket - 1.0) / 8.0;
}

struct VmFeatures {
    std::uint64_t subscription_id = 0;
    double pct_uf_in_subscription = 0.0;
    double pct_vms_alive_7d = 0.0;
    int subscription_vm_count = 0;
    std::array<double, kBuckets> pct_vms_per_util_bucket{0.25, 0.25, 0.25, 0.25};
    double avg_of_avg_util = 0.0;
    double avg_of_p95_util = 0.0;
    int vm_cores = 1;
    double vm_memory_gb = 0.0;
    std::string vm_type;

    void validate() const
    {
        auto frac = [](double v, const char* what) {
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(what) + " outside [0,1]");
        };
        frac(pct_uf_in_subscription, "pct_uf_in_subscription");
        frac(pct_vms_alive_7d, "pct_vms_alive_7d");
        frac(avg_of_avg_util, "avg_of_avg_util");
        frac(avg_of_p95_util, "avg_of_p95_util");
        double sum = 0.0;
        for (double b : pct_vms_per_util_bucket) {
            frac(b, "pct_vms_per_util_bucket");
            sum += b;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("bucket fractions must sum to 1");
        if (subscription_vm_count < 0 || vm_cores < 1) throw InvalidArgument("bad VM counts");
    }
};

/// Hidden ground truth; only the oracle-style providers may look at it.
struct GroundTruth {
    WorkloadLabel label = WorkloadLabel::UserFacing;
    int p95_bucket = 4;
};

struct Prediction {
    std::optional<WorkloadLabel> label;
    std::optional<int> p95_bucket;
    double confidence_label = 0.0;
    double confidence_bucket = 0.0;
};

struct EffectiveAttributes {
    WorkloadLabel label = WorkloadLabel::UserFacing;
    double p95_util = 1.0;
};

/// Low-confidence or missing predictions fall back to user-facing and 100% P95.
inline EffectiveAttributes resolve(const Prediction& p, double min_confidence = kDefaultMinConfidence)
{
    EffectiveAttributes e;
    if (p.label && p.confidence_label >= min_confidence) e.label = *p.label;
    if (p.p95_bucket && p.confidence_bucket >= min_confidence) e.p95_util = bucket_midpoint(*p.p95_bucket);
    return e;
}

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string_view name() const noexcept = 0;
    virtual Prediction predict(const VmFeatures& features, const GroundTruth& truth) = 0;
};

class OracleProvider final : public Provider {
public:
    std::string_view name() const noexcept override { return "oracle"; }
    Prediction predict(const VmFeatures&, const GroundTruth& truth) override
    {
        return Prediction{truth.label, truth.p95_bucket, 1.0, 1.0};
    }
};

struct NoisyOracleConfig {
    double uf_recall = 0.99;
    double nuf_recall = 0.69;
    double label_high_conf_fraction = 0.99;
    double bucket_high_conf_fraction = 0.73;
    double bucket_accuracy = 0.84;
    // Row = true bucket, column = predicted bucket. Overrides bucket_accuracy.
    std::optional<std::array<std::array<double, kBuckets>, kBuckets>> confusion;
    double high_conf_floor = kDefaultMinConfidence;
    double low_conf_floor = 0.3;

    void validate() const
    {
        for (double v : {uf_recall, nuf_recall, label_high_conf_fraction, bucket_high_conf_fraction, bucket_accuracy})
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("noisy oracle rates must be in [0,1]");
        if (!(low_conf_floor >= 0.0 && low_conf_floor <= high_conf_floor && high_conf_floor <= 1.0))
            throw InvalidArgument("noisy oracle confidence floors out of order");
        if (confusion) {
            for (const auto& row : *confusion) {
                double s = 0.0;
                for (double v : row) {
                    if (v < 0.0) throw InvalidArgument("negative confusion entry");
                    s += v;
                }
                if (std::abs(s - 1.0) > 1e-6) throw InvalidArgument("confusion rows must sum to 1");
            }
        }
    }

    /// Confusion matrix actually used: explicit, or accuracy on the diagonal
    /// with errors split between adjacent buckets.
    std::array<std::array<double, kBuckets>, kBuckets> effective_confusion() const
    {
        if (confusion) return *confusion;
        std::array<std::array<double, kBuckets>, kBuckets> m{};
        for (int t = 0; t < kBuckets; ++t) {
            m[t][t] = bucket_accuracy;
            const double err = 1.0 - bucket_accuracy;
            if (t == 0) m[t][1] = err;
            else if (t == kBuckets - 1) m[t][t - 1] = err;
            else m[t][t - 1] = m[t][t + 1] = err / 2.0;
        }
        return m;
    }
};

class NoisyOracleProvider final : public Provider {
public:
    NoisyOracleProvider(NoisyOracleConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)), confusion_(cfg_.effective_confusion()), rng_(seed)
    {
        cfg_.validate();
    }

    std::string_view name() const noexcept override { return "noisy"; }

    Prediction predict(const VmFeatures&, const GroundTruth& truth) override
    {
        Prediction p;
        const double keep = is_uf(truth.label) ? cfg_.uf_recall : cfg_.nuf_recall;
        const bool flip = unit() >= keep;
        p.label = flip ? other(truth.label) : truth.label;
        p.confidence_label = draw_confidence(cfg_.label_high_conf_fraction);

        const auto& row = confusion_.at(static_cast<std::size_t>(truth.p95_bucket - 1));
        double u = unit();
        int predicted = kBuckets;
        for (int b = 0; b < kBuckets; ++b) {
            u -= row[static_cast<std::size_t>(b)];
            if (u < 0.0) {
                predicted = b + 1;
                break;
            }
        }
        p.p95_bucket = predicted;
        p.confidence_bucket = draw_confidence(cfg_.bucket_high_conf_fraction);
        return p;
    }

private:
    static WorkloadLabel other(WorkloadLabel l)
    {
        return is_uf(l) ? WorkloadLabel::NonUserFacing : WorkloadLabel::UserFacing;
    }

    double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    double draw_confidence(double high_fraction)
    {
        if (unit() < high_fraction) return cfg_.high_conf_floor + (1.0 - cfg_.high_conf_floor) * unit();
        double c = cfg_.low_conf_floor + (cfg_.high_conf_floor - cfg_.low_conf_floor) * unit();
        return std::min(c, std::nextafter(cfg_.high_conf_floor, 0.0));
    }

    NoisyOracleConfig cfg_;
    std::array<std::array<double, kBuckets>, kBuckets> confusion_;
    std::mt19937_64 rng_;
};

/// Majority vote over the subscription's observed history.
class HistoryFrequencyProvider final : public Provider {
public:
    std::string_view name() const noexcept override { return "history"; }

    Prediction predict(const VmFeatures& f, const GroundTruth&) override
    {
        Prediction p;
        const bool uf = f.pct_uf_in_subscription >= 0.5;
        p.label = uf ? WorkloadLabel::UserFacing : WorkloadLabel::NonUserFacing;
        p.confidence_label = uf ? f.pct_uf_in_subscription : 1.0 - f.pct_uf_in_subscription;
        const auto it = std::max_element(f.pct_vms_per_util_bucket.begin(), f.pct_vms_per_util_bucket.end());
        p.p95_bucket = static_cast<int>(it - f.pct_vms_per_util_bucket.begin()) + 1;
        p.confidence_bucket = *it;
        return p;
    }
};

struct ProviderConfig {
    std::string kind = "noisy";
    NoisyOracleConfig noisy;
    double min_confidence = kDefaultMinConfidence;
};

inline std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg, std::uint64_t seed)
{
    if (cfg.kind == "oracle") return std::make_unique<OracleProvider>();
    if (cfg.kind == "noisy") return std::make_unique<NoisyOracleProvider>(cfg.noisy, seed);
    if (cfg.kind == "history") return std::make_unique<HistoryFrequencyProvider>();
    throw UnknownProvider("unknown prediction provider '" + cfg.kind + "'");
}

} // namespace vmpower::predict
