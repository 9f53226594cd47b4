#include "vmpower/predict.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vmpower;
using namespace vmpower::predict;

TEST(Buckets, BoundariesAndMidpoints)
{
    EXPECT_EQ(bucket_of(0.0), 1);
    EXPECT_EQ(bucket_of(0.25), 1);
    EXPECT_EQ(bucket_of(0.2501), 2);
    EXPECT_EQ(bucket_of(0.75), 3);
    EXPECT_EQ(bucket_of(1.0), 4);
    EXPECT_DOUBLE_EQ(bucket_midpoint(1), 0.125);
    EXPECT_DOUBLE_EQ(bucket_midpoint(2), 0.375);
    EXPECT_DOUBLE_EQ(bucket_midpoint(3), 0.625);
    EXPECT_DOUBLE_EQ(bucket_midpoint(4), 0.875);
    EXPECT_THROW(bucket_midpoint(5), InvalidArgument);
}

TEST(Features, ValidateBucketSum)
{
    VmFeatures f;
    EXPECT_NO_THROW(f.validate());
    f.pct_vms_per_util_bucket = {0.5, 0.5, 0.5, 0.0};
    EXPECT_THROW(f.validate(), InvalidArgument);
}

TEST(Oracle, ReturnsTruthWithFullConfidence)
{
    OracleProvider o;
    const Prediction p = o.predict({}, GroundTruth{WorkloadLabel::UserFacing, 3});
    EXPECT_EQ(p.label, WorkloadLabel::UserFacing);
    EXPECT_EQ(p.p95_bucket, 3);
    EXPECT_EQ(p.confidence_label, 1.0);
    EXPECT_EQ(p.confidence_bucket, 1.0);
}

TEST(Oracle, ComposedWithResolveIsIdentity)
{
    OracleProvider o;
    for (WorkloadLabel l : {WorkloadLabel::UserFacing, WorkloadLabel::NonUserFacing})
        for (int b = 1; b <= 4; ++b) {
            const EffectiveAttributes e = resolve(o.predict({}, GroundTruth{l, b}));
            EXPECT_EQ(e.label, l);
            EXPECT_DOUBLE_EQ(e.p95_util, bucket_midpoint(b));
        }
}

TEST(HistoryFrequency, ArgmaxRule)
{
    HistoryFrequencyProvider h;
    VmFeatures f;
    f.pct_uf_in_subscription = 0.8;
    f.pct_vms_per_util_bucket = {0.1, 0.2, 0.6, 0.1};
    const Prediction p = h.predict(f, {});
    EXPECT_EQ(p.label, WorkloadLabel::UserFacing);
    EXPECT_EQ(p.p95_bucket, 3);
    EXPECT_DOUBLE_EQ(p.confidence_label, 0.8);
    EXPECT_DOUBLE_EQ(p.confidence_bucket, 0.6);
}

TEST(HistoryFrequency, MinorityUfIsNonUserFacing)
{
    HistoryFrequencyProvider h;
    VmFeatures f;
    f.pct_uf_in_subscription = 0.3;
    const Prediction p = h.predict(f, {});
    EXPECT_EQ(p.label, WorkloadLabel::NonUserFacing);
    EXPECT_DOUBLE_EQ(p.confidence_label, 0.7);
}

TEST(Resolve, LowLabelConfidenceFallsBackToUserFacing)
{
    const EffectiveAttributes e = resolve(Prediction{WorkloadLabel::NonUserFacing, 1, 0.4, 0.9});
    EXPECT_EQ(e.label, WorkloadLabel::UserFacing);
    EXPECT_DOUBLE_EQ(e.p95_util, 0.125);
}

TEST(Resolve, BothConfident)
{
    const EffectiveAttributes e = resolve(Prediction{WorkloadLabel::UserFacing, 4, 0.9, 0.9});
    EXPECT_EQ(e.label, WorkloadLabel::UserFacing);
    EXPECT_DOUBLE_EQ(e.p95_util, 0.875);
}

TEST(Resolve, LowBucketConfidenceAssumesFullUtilization)
{
    const EffectiveAttributes e = resolve(Prediction{WorkloadLabel::UserFacing, 2, 0.9, 0.3});
    EXPECT_DOUBLE_EQ(e.p95_util, 1.0);
}

TEST(Resolve, MissingPredictionIsConservative)
{
    const EffectiveAttributes e = resolve(Prediction{});
    EXPECT_EQ(e.label, WorkloadLabel::UserFacing);
    EXPECT_DOUBLE_EQ(e.p95_util, 1.0);
}

TEST(Resolve, ThresholdIsInclusive)
{
    const EffectiveAttributes e = resolve(Prediction{WorkloadLabel::NonUserFacing, 2, 0.6, 0.6});
    EXPECT_EQ(e.label, WorkloadLabel::NonUserFacing);
    EXPECT_DOUBLE_EQ(e.p95_util, 0.375);
}

TEST(NoisyOracle, UfRecallWithinBinomialBand)
{
    NoisyOracleProvider p(NoisyOracleConfig{}, 42);
    int uf = 0;
    for (int i = 0; i < 10000; ++i)
        if (p.predict({}, GroundTruth{WorkloadLabel::UserFacing, 2}).label == WorkloadLabel::UserFacing) ++uf;
    EXPECT_NEAR(uf, 9900, 60);
}

TEST(NoisyOracle, RatesConvergeAtLargeN)
{
    const NoisyOracleConfig cfg;
    NoisyOracleProvider p(cfg, 7);
    const int n = 100000;
    int nuf_kept = 0, high_label = 0, high_bucket = 0, bucket_right = 0;
    for (int i = 0; i < n; ++i) {
        const Prediction q = p.predict({}, GroundTruth{WorkloadLabel::NonUserFacing, 2});
        if (q.label == WorkloadLabel::NonUserFacing) ++nuf_kept;
        if (q.confidence_label >= kDefaultMinConfidence) ++high_label;
        if (q.confidence_bucket >= kDefaultMinConfidence) ++high_bucket;
        if (q.p95_bucket == 2) ++bucket_right;
    }
    auto within = [&](int count, double rate) {
        const double sd = std::sqrt(n * rate * (1.0 - rate));
        return std::abs(count - n * rate) <= 3.0 * sd;
    };
    EXPECT_TRUE(within(nuf_kept, cfg.nuf_recall)) << nuf_kept;
    EXPECT_TRUE(within(high_label, cfg.label_high_conf_fraction)) << high_label;
    EXPECT_TRUE(within(high_bucket, cfg.bucket_high_conf_fraction)) << high_bucket;
    EXPECT_TRUE(within(bucket_right, cfg.bucket_accuracy)) << bucket_right;
}

TEST(NoisyOracle, ExplicitConfusionMatrix)
{
    NoisyOracleConfig cfg;
    cfg.confusion = std::array<std::array<double, 4>, 4>{{{0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}, {1, 0, 0, 0}}};
    NoisyOracleProvider p(cfg, 1);
    for (int b = 1; b <= 4; ++b) EXPECT_EQ(p.predict({}, GroundTruth{WorkloadLabel::UserFacing, b}).p95_bucket, b % 4 + 1);
}

TEST(NoisyOracle, DefaultConfusionSplitsErrorsToNeighbours)
{
    const auto m = NoisyOracleConfig{}.effective_confusion();
    EXPECT_DOUBLE_EQ(m[0][1], 0.16);
    EXPECT_DOUBLE_EQ(m[1][0], 0.08);
    EXPECT_DOUBLE_EQ(m[1][2], 0.08);
    EXPECT_DOUBLE_EQ(m[1][3], 0.0);
}

TEST(NoisyOracle, RejectsBadConfusionRows)
{
    NoisyOracleConfig cfg;
    cfg.confusion = std::array<std::array<double, 4>, 4>{{{0.5, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(MakeProvider, KnownAndUnknown)
{
    ProviderConfig cfg;
    for (const char* k : {"oracle", "noisy", "history"}) {
        cfg.kind = k;
        EXPECT_EQ(make_provider(cfg, 1)->name(), k);
    }
    cfg.kind = "forest";
    EXPECT_THROW(make_provider(cfg, 1), UnknownProvider);
}
