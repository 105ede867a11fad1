#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cdnb/metrics/distance.hpp"
#include "cdnb/metrics/iob.hpp"
#include "cdnb/metrics/measure.hpp"
#include "dcov_oracle.hpp"

using namespace cdnb;
using namespace cdnb::metrics;
using cdnb::testing::Samples;

namespace {

Samples random_samples(std::mt19937_64& rng, std::size_t n, std::size_t d) {
    std::normal_distribution<double> g;
    Samples s(n, std::vector<double>(d));
    for (auto& row : s)
        for (auto& v : row) v = g(rng);
    return s;
}

SignalBatch batch(const Samples& s, SignalName name = SignalName::X) { return SignalBatch::from_rows(name, s); }

Samples random_rotation(std::mt19937_64& rng, std::size_t d) {
    Samples q = random_samples(rng, d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < d; ++k) dot += q[i][k] * q[j][k];
            for (std::size_t k = 0; k < d; ++k) q[i][k] -= dot * q[j][k];
        }
        double nrm = 0;
        for (double v : q[i]) nrm += v * v;
        nrm = std::sqrt(nrm);
        for (double& v : q[i]) v /= nrm;
    }
    return q;
}

// Gaussian bumps at two random spots on an 8x8 canvas.
Samples two_blob_images(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> pos(1.0, 6.0);
    Samples out(n, std::vector<double>(64));
    for (auto& img : out) {
        for (int b = 0; b < 2; ++b) {
            const double r = pos(rng), c = pos(rng);
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j)
                    img[i * 8 + j] += std::exp(-((i - r) * (i - r) + (j - c) * (j - c)) / 2.0);
        }
    }
    return out;
}

}  // namespace

TEST(PairwiseDistances, ScalarPair) {
    auto D = pairwise_distances(batch({{0.0}, {3.0}}));
    EXPECT_EQ(D.values, (std::vector<double>{0, 3, 3, 0}));
    EXPECT_FALSE(D.centered);
}

TEST(PairwiseDistances, IdenticalSamplesGiveZeros) {
    auto D = pairwise_distances(batch({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}));
    for (double v : D.values) EXPECT_EQ(v, 0.0);
}

TEST(PairwiseDistances, ThreeFourFiveTriangle) {
    auto D = pairwise_distances(batch({{0, 0}, {3, 4}, {0, 4}}));
    EXPECT_DOUBLE_EQ(D(0, 1), 5.0);
    EXPECT_DOUBLE_EQ(D(0, 2), 4.0);
    EXPECT_DOUBLE_EQ(D(1, 2), 3.0);
    EXPECT_DOUBLE_EQ(D(2, 1), 3.0);
}

TEST(PairwiseDistances, RejectsShapeMismatchAndTinyBatches) {
    EXPECT_THROW((void)SignalBatch::from_rows(SignalName::X, {{1.0}, {1.0, 2.0}}), std::invalid_argument);
    EXPECT_THROW((void)pairwise_distances(batch({{1.0}})), std::invalid_argument);
}

TEST(DoubleCenter, HandComputedPair) {
    auto A = double_center(pairwise_distances(batch({{0.0}, {3.0}})));
    EXPECT_EQ(A.values, (std::vector<double>{-1.5, 1.5, 1.5, -1.5}));
    EXPECT_TRUE(A.centered);
}

TEST(DoubleCenter, ConstantMatrixBecomesZero) {
    DistanceMatrix D{3, std::vector<double>(9, 2.5), false};
    for (double v : double_center(D).values) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(DoubleCenter, RowColumnGrandMeansVanishAndIdempotent) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto A = double_center(pairwise_distances(batch(random_samples(rng, 12, 3))));
        double grand = 0;
        for (std::size_t i = 0; i < A.n; ++i) {
            double row = 0, col = 0;
            for (std::size_t j = 0; j < A.n; ++j) {
                row += A(i, j);
                col += A(j, i);
            }
            EXPECT_NEAR(row / A.n, 0.0, 1e-9);
            EXPECT_NEAR(col / A.n, 0.0, 1e-9);
            grand += row;
        }
        EXPECT_NEAR(grand, 0.0, 1e-9);
        auto twice = double_center(A);
        for (std::size_t k = 0; k < A.values.size(); ++k) EXPECT_NEAR(twice.values[k], A.values[k], 1e-12);
    }
}

TEST(DistanceCovariance, HandComputedPair) {
    auto A = double_center(pairwise_distances(batch({{0.0}, {3.0}})));
    EXPECT_DOUBLE_EQ(distance_covariance(A, A), 1.5);
    DistanceMatrix Z{2, std::vector<double>(4, 0.0), true};
    EXPECT_EQ(distance_covariance(A, Z), 0.0);
}

TEST(DistanceCovariance, RequiresCenteredSameSize) {
    auto D = pairwise_distances(batch({{0.0}, {3.0}}));
    EXPECT_THROW((void)distance_covariance(D, D), std::invalid_argument);
    auto A = double_center(D);
    auto B = double_center(pairwise_distances(batch({{0.0}, {1.0}, {2.0}})));
    EXPECT_THROW((void)distance_covariance(A, B), std::invalid_argument);
}

TEST(DistanceCovariance, MatchesDirectOracle) {
    std::mt19937_64 rng(8);
    for (std::size_t n = 2; n <= 10; ++n) {
        for (int trial = 0; trial < 20; ++trial) {
            const auto u = random_samples(rng, n, 3);
            const auto v = random_samples(rng, n, 2);
            const double got = distance_covariance(double_center(pairwise_distances(batch(u))),
                                                   double_center(pairwise_distances(batch(v))));
            EXPECT_NEAR(got, cdnb::testing::oracle_dcov(u, v), 1e-10) << "n=" << n;
        }
    }
}

TEST(DistanceCorrelation, SelfIsOneAndSymmetric) {
    std::mt19937_64 rng(21);
    const auto u = batch(random_samples(rng, 30, 4));
    const auto v = batch(random_samples(rng, 30, 2));
    EXPECT_NEAR(distance_correlation(u, u), 1.0, 1e-12);
    EXPECT_EQ(distance_correlation(u, v), distance_correlation(v, u));
}

TEST(DistanceCorrelation, ConstantBatchIsZero) {
    const auto u = batch({{1.0}, {2.0}, {4.0}});
    const auto c = batch({{7.0}, {7.0}, {7.0}});
    EXPECT_EQ(distance_correlation(u, c), 0.0);
}

TEST(DistanceCorrelation, RejectsUnpairedOrTiny) {
    EXPECT_THROW((void)distance_correlation(batch({{1.0}, {2.0}}), batch({{1.0}, {2.0}, {3.0}})),
                 std::invalid_argument);
    EXPECT_THROW((void)distance_correlation(batch({{1.0}}), batch({{1.0}})), std::invalid_argument);
}

TEST(DistanceCorrelation, InvariantUnderShiftScaleRotation) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 3;
        const auto u = random_samples(rng, 25, d);
        Samples v = random_samples(rng, 25, 2);
        for (std::size_t i = 0; i < v.size(); ++i) v[i][0] += u[i][0] * u[i][1];  // dependence
        const double base = distance_correlation(batch(u), batch(v));
        const auto R = random_rotation(rng, d);
        Samples shifted = u, scaled = u, rotated = u;
        for (std::size_t i = 0; i < u.size(); ++i)
            for (std::size_t k = 0; k < d; ++k) {
                shifted[i][k] = u[i][k] + 3.0 * (k + 1);
                scaled[i][k] = -2.5 * u[i][k];
                double r = 0;
                for (std::size_t l = 0; l < d; ++l) r += R[k][l] * u[i][l];
                rotated[i][k] = r;
            }
        EXPECT_NEAR(distance_correlation(batch(shifted), batch(v)), base, 1e-9);
        EXPECT_NEAR(distance_correlation(batch(scaled), batch(v)), base, 1e-9);
        EXPECT_NEAR(distance_correlation(batch(rotated), batch(v)), base, 1e-9);
        EXPECT_NEAR(distance_correlation(batch(u), batch(scaled)), 1.0, 1e-9);
        EXPECT_NEAR(base, cdnb::testing::oracle_dc(u, v), 1e-10);
    }
}

// The biased estimator sits near 0.24 at N=1000 for 16-dim inputs and drops
// below 0.2 around N=2000.
TEST(DistanceCorrelation, IndependentNormalsSmallAndShrinking) {
    std::mt19937_64 rng(1234);
    double prev = 1.0;
    for (std::size_t n : {50, 200, 1000, 2000}) {
        const double dc = distance_correlation(batch(random_samples(rng, n, 16)), batch(random_samples(rng, n, 16)));
        EXPECT_LT(dc, prev) << "n=" << n;
        if (n == 1000) EXPECT_LT(dc, 0.26);
        prev = dc;
    }
    EXPECT_LT(prev, 0.2);
}

TEST(PairwiseSum, OrderFixedAndAccurate) {
    std::vector<double> v(1000, 0.1);
    EXPECT_NEAR(pairwise_sum(v), 100.0, 1e-12);
    EXPECT_EQ(pairwise_sum(v), pairwise_sum(v));
}

namespace {

IobConfig quick_iob(std::uint64_t seed) {
    IobConfig c;
    c.max_epochs = 40;
    c.patience = 10;
    c.hidden = 64;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(Iob, IdentitySignalBeatsBiasDecoder) {
    std::mt19937_64 rng(6);
    const auto train = batch(two_blob_images(rng, 1000));
    const auto test = batch(two_blob_images(rng, 200));
    IobConfig cfg;
    cfg.seed = 1;
    const auto pair = train_iob_decoders(train, train, cfg);
    EXPECT_LT(pair.log_z.best_val, pair.log_ones.best_val);
    EXPECT_GT(iob(test, test, pair).iob, 2.0);
}

TEST(Iob, ConstantSignalIsUninformative) {
    std::mt19937_64 rng(7);
    const auto train = batch(two_blob_images(rng, 400));
    const auto test = batch(two_blob_images(rng, 200));
    const auto zc = SignalBatch(SignalName::Z, {4}, std::vector<double>(400 * 4, 0.3));
    const auto zt = SignalBatch(SignalName::Z, {4}, std::vector<double>(200 * 4, 0.3));
    const auto pair = train_iob_decoders(train, zc, quick_iob(2));
    EXPECT_NEAR(pair.log_z.best_val / pair.log_ones.best_val, 1.0, 0.05);
    const auto v = iob(test, zt, pair);
    EXPECT_NEAR(v.iob, 1.0, 0.15);
    EXPECT_DOUBLE_EQ(v.boi, 1.0 / v.iob);
}

TEST(Iob, SeededTrainingIsDeterministic) {
    std::mt19937_64 rng(9);
    const auto x = batch(two_blob_images(rng, 60));
    auto cfg = quick_iob(3);
    cfg.max_epochs = 5;
    const auto a = train_iob_decoders(x, x, cfg);
    const auto b = train_iob_decoders(x, x, cfg);
    EXPECT_EQ(a.log_z, b.log_z);
    EXPECT_EQ(a.log_ones, b.log_ones);
    cfg.concurrent = true;
    const auto c = train_iob_decoders(x, x, cfg);
    EXPECT_EQ(a.log_z, c.log_z);
    EXPECT_EQ(a.log_ones, c.log_ones);
}

TEST(Iob, PatienceStopsEarlyAndSplitIsHeldOut) {
    std::mt19937_64 rng(10);
    const auto x = batch(two_blob_images(rng, 100));
    auto cfg = quick_iob(4);
    cfg.max_epochs = 200;
    cfg.patience = 3;
    const auto pair = train_iob_decoders(x, SignalBatch(SignalName::Z, {2}, std::vector<double>(200, 1.0)), cfg);
    EXPECT_LT(pair.log_ones.epochs_run(), 200u);
    EXPECT_EQ(pair.val_indices.size(), 20u);
    for (auto v : pair.val_indices)
        EXPECT_FALSE(std::binary_search(pair.train_indices.begin(), pair.train_indices.end(), v));
}

TEST(Iob, TooFewSamplesAndPerfectReconstructionAreErrors) {
    const auto tiny = SignalBatch(SignalName::X, {1}, std::vector<double>(9, 0.5));
    EXPECT_THROW((void)train_iob_decoders(tiny, tiny, quick_iob(0)), std::invalid_argument);

    // Constant targets are reproduced exactly by a zero-weight decoder with the right bias.
    std::vector<double> same(20, 0.0);
    const auto x = SignalBatch(SignalName::X, {2}, same);
    auto cfg = quick_iob(0);
    cfg.max_epochs = 1;
    auto pair = train_iob_decoders(x, x, cfg);
    for (const auto& e : pair.decoder_z.params().entries()) {
        Tensor t = e.tensor;
        for (auto& v : t.mutable_data()) v = 0.0;
    }
    EXPECT_THROW((void)iob(x, x, pair), std::domain_error);
}

TEST(Iob, BoiAlgebra) {
    EXPECT_DOUBLE_EQ(clamp_unit(1.0 - 1.0 / 1.0), 0.0);
    EXPECT_GT(clamp_unit(1.0 - 1.0 / 1e9), 0.999999);
}

namespace {

TapExtractor random_taps(bool same, std::uint64_t seed) {
    return [same, seed](const Tensor& images, std::span<const int>) {
        const std::size_t n = images.dim(0);
        std::vector<double> c(n * 3), s(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            // Per-sample stream keyed on the first pixel keeps the taps a function of the input.
            Rng r(derive_seed(seed, static_cast<std::uint64_t>(images.data()[i * images.numel() / n] * 1e9)));
            std::normal_distribution<double> g;
            for (std::size_t k = 0; k < 3; ++k) {
                c[i * 3 + k] = g(r);
                s[i * 3 + k] = same ? c[i * 3 + k] : g(r);
            }
        }
        return SignalTaps{images, Tensor({n, 3}, c), Tensor({n, 3}, s)};
    };
}

Dataset noise_dataset(std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.name = "noise";
    d.height = d.width = 4;
    d.classes = 2;
    Rng r(seed);
    std::uniform_real_distribution<double> u;
    d.pixels.resize(n * 16);
    for (auto& p : d.pixels) p = u(r);
    d.labels.assign(n, 0);
    return d;
}

MetricsConfig quick_metrics() {
    MetricsConfig m;
    m.iob = quick_iob(0);
    m.iob.max_epochs = 5;
    m.seed = 17;
    return m;
}

}  // namespace

TEST(MeasureAll, IdenticalSignalsHaveNoSeparation) {
    const auto rec = measure_all(random_taps(true, 1), noise_dataset(100, 1), noise_dataset(80, 2), quick_metrics(),
                                 "toy", "noise");
    EXPECT_NEAR(rec.m1, 0.0, 1e-12);
    EXPECT_EQ(rec.n, 80u);
}

TEST(MeasureAll, IndependentSignalsAreSeparatedAndInUnitRange) {
    const auto rec =
        measure_all(random_taps(false, 2), noise_dataset(200, 3), noise_dataset(1000, 4), quick_metrics());
    EXPECT_GT(rec.m1, 0.8);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_GE(rec.value(i), 0.0);
        EXPECT_LE(rec.value(i), 1.0);
    }
}

TEST(MeasureAll, SubsamplesToCap) {
    auto cfg = quick_metrics();
    cfg.n_max = 50;
    const auto rec = measure_all(random_taps(false, 2), noise_dataset(100, 3), noise_dataset(120, 4), cfg);
    EXPECT_EQ(rec.n, 50u);
}

TEST(MeasurementRecord, CsvAndJsonShareKeys) {
    MeasurementRecord r;
    r.model = "caam";
    r.dataset = "synthetic";
    r.n = 10;
    r.m1 = 0.5;
    r.m5 = 1.0 / 3.0;
    EXPECT_EQ(measurement_csv_header(), "model,dataset,n,m1,m2,m3,m4,m5");
    EXPECT_EQ(to_csv_row(r), "caam,synthetic,10,0.500000,0.000000,0.000000,0.000000,0.333333");
    const auto j = to_json(r);
    for (const char* k : {"model", "dataset", "n", "m1", "m2", "m3", "m4", "m5"}) EXPECT_TRUE(j.contains(k)) << k;
}
