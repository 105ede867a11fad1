#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cdnb/data/idx.hpp"
#include "cdnb/data/sources.hpp"
#include "cdnb/harness.hpp"
#include "cdnb/metrics/distance.hpp"
#include "toy_models.hpp"

using namespace cdnb;
using namespace cdnb::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cdnb_harness_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Dataset small_synthetic(std::size_t n, double rho, std::uint64_t seed) {
    SyntheticSpec s;
    s.samples = n;
    s.rho = rho;
    s.seed = seed;
    return generate_synthetic(s, "synthetic");
}

Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
    const auto t = cdnb::testing::toy_data(n, seed);
    Dataset d;
    d.name = "toy";
    d.height = d.width = 4;
    d.classes = 3;
    d.pixels.assign(t.images.data().begin(), t.images.data().end());
    d.labels = t.labels;
    return d;
}

double pearson_r(const std::vector<double>& a, const std::vector<double>& b) { return pearson(a, b).r; }

}  // namespace

// ---------------------------------------------------------------- IDX

TEST(Idx, SingleImageMaxByteDecodesToOne) {
    idx::Array img{{1, 28, 28}, std::vector<std::uint8_t>(784, 0)};
    img.bytes[0] = 255;
    img.bytes[783] = 128;
    idx::Array lab{{1}, {7}};
    const Dataset d = idx::from_arrays(idx::parse(idx::encode(idx::image_magic, img), idx::image_magic),
                                       idx::parse(idx::encode(idx::label_magic, lab), idx::label_magic), 10, "one");
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.height, 28u);
    EXPECT_EQ(d.width, 28u);
    EXPECT_EQ(d.image(0)[0], 1.0);
    EXPECT_EQ(d.image(0)[1], 0.0);
    EXPECT_DOUBLE_EQ(d.image(0)[783], 128.0 / 255.0);
    EXPECT_EQ(d.labels[0], 7);
}

TEST(Idx, CountMismatchIsReported) {
    const idx::Array img{{2, 2, 2}, std::vector<std::uint8_t>(8, 1)};
    const idx::Array lab{{3}, {0, 1, 2}};
    try {
        (void)idx::from_arrays(img, lab, 10, "bad");
        FAIL() << "expected FormatError";
    } catch (const idx::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("2 images, 3 labels"), std::string::npos) << e.what();
    }
}

TEST(Idx, BadMagicNamesBothValues) {
    auto bytes = idx::encode(idx::image_magic, {{1, 2, 2}, {0, 0, 0, 0}});
    bytes[3] = 0x04;
    try {
        (void)idx::parse(bytes, idx::image_magic, "x.idx");
        FAIL() << "expected FormatError";
    } catch (const idx::FormatError& e) {
        const std::string w = e.what();
        EXPECT_NE(w.find("0x00000804"), std::string::npos) << w;
        EXPECT_NE(w.find("0x00000803"), std::string::npos) << w;
    }
}

TEST(Idx, TruncationReportsByteOffset) {
    auto bytes = idx::encode(idx::image_magic, {{2, 3, 3}, std::vector<std::uint8_t>(18, 9)});
    bytes.resize(bytes.size() - 5);  // 16 header + 13 data bytes remain
    try {
        (void)idx::parse(bytes, idx::image_magic);
        FAIL() << "expected FormatError";
    } catch (const idx::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated at byte offset 29"), std::string::npos) << e.what();
    }
    std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 6);
    EXPECT_THROW((void)idx::parse(header_only, idx::image_magic), idx::FormatError);
}

TEST(Idx, TrailingBytesAreRejected) {
    auto bytes = idx::encode(idx::label_magic, {{2}, {1, 2}});
    bytes.push_back(0);
    EXPECT_THROW((void)idx::parse(bytes, idx::label_magic), idx::FormatError);
}

TEST(Idx, FileRoundTripIsBitwise) {
    const auto dir = scratch("idx_roundtrip");
    const Dataset d = small_synthetic(300, 0.5, 11);
    idx::write_mnist(d, dir / "img", dir / "lab");
    const std::string img1 = slurp(dir / "img"), lab1 = slurp(dir / "lab");
    const Dataset back = idx::load_mnist(dir / "img", dir / "lab", 10, "back");
    EXPECT_EQ(back.pixels, d.pixels);  // synthetic pixels are already k/255
    EXPECT_EQ(back.labels, d.labels);
    idx::write_mnist(back, dir / "img2", dir / "lab2");
    EXPECT_EQ(slurp(dir / "img2"), img1);
    EXPECT_EQ(slurp(dir / "lab2"), lab1);
    EXPECT_EQ(img1.size(), 16u + 300u * 256u);
}

TEST(Idx, MnistSourceReadsWhatGenDataWrites) {
    const auto dir = scratch("idx_source");
    DatasetSpec spec;
    spec.train = 160;
    spec.val = 40;
    spec.test = 50;
    const auto src = load_sources(spec);
    idx::write_mnist(src.pool, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    idx::write_mnist(src.test, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    DatasetSpec m = spec;
    m.source = DataSource::mnist_idx;
    m.dir = dir;
    const auto a = load_splits(spec);
    const auto b = load_splits(m);
    EXPECT_EQ(a.train.pixels, b.train.pixels);
    EXPECT_EQ(a.val.labels, b.val.labels);
    EXPECT_EQ(a.test.pixels, b.test.pixels);
}

// ---------------------------------------------------------- synthetic

TEST(Synthetic, FullCorrelationMakesBackgroundAFunctionOfLabel) {
    const Dataset d = small_synthetic(2000, 1.0, 3);
    std::vector<double> bg(10, -1.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& f = d.factors[i];
        EXPECT_EQ(f.confounder_level, d.labels[i]);
        auto& slot = bg[static_cast<std::size_t>(d.labels[i])];
        if (slot < 0) slot = f.background;
        EXPECT_EQ(f.background, slot);
    }
}

TEST(Synthetic, ZeroCorrelationLeavesLevelUncorrelated) {
    const Dataset d = small_synthetic(10000, 0.0, 5);
    std::vector<double> lv, lb;
    for (std::size_t i = 0; i < d.size(); ++i) {
        lv.push_back(d.factors[i].confounder_level);
        lb.push_back(d.labels[i]);
    }
    EXPECT_LT(std::abs(pearson_r(lv, lb)), 0.05);
}

TEST(Synthetic, IntermediateCorrelationIsMonotone) {
    double prev = -1.0;
    for (double rho : {0.0, 0.5, 0.9}) {
        const Dataset d = small_synthetic(4000, rho, 8);
        std::vector<double> lv, lb;
        for (std::size_t i = 0; i < d.size(); ++i) {
            lv.push_back(d.factors[i].confounder_level);
            lb.push_back(d.labels[i]);
        }
        const double r = pearson_r(lv, lb);
        EXPECT_GT(r, prev);
        prev = r;
    }
    EXPECT_GT(prev, 0.85);
}

TEST(Synthetic, SameSeedSameBytes) {
    const Dataset a = small_synthetic(500, 0.9, 42), b = small_synthetic(500, 0.9, 42), c = small_synthetic(500, 0.9, 43);
    EXPECT_EQ(idx::encode_dataset(a), idx::encode_dataset(b));
    EXPECT_NE(idx::encode_dataset(a), idx::encode_dataset(c));
}

TEST(Synthetic, IndependentConfounderHasLowDcAgainstLabel) {
    const Dataset d = small_synthetic(1000, 0.0, 21);
    std::vector<std::vector<double>> f, y;
    for (std::size_t i = 0; i < d.size(); ++i) {
        f.push_back({d.factors[i].background});
        std::vector<double> oh(10, 0.0);
        oh[static_cast<std::size_t>(d.labels[i])] = 1.0;
        y.push_back(oh);
    }
    using metrics::SignalBatch;
    using metrics::SignalName;
    const double dc = metrics::distance_correlation(SignalBatch::from_rows(SignalName::S, f),
                                                    SignalBatch::from_rows(SignalName::C, y));
    EXPECT_LT(dc, 0.2);
    // The same generator with full correlation is strongly dependent.
    const Dataset e = small_synthetic(1000, 1.0, 21);
    f.clear();
    y.clear();
    for (std::size_t i = 0; i < e.size(); ++i) {
        f.push_back({e.factors[i].background});
        std::vector<double> oh(10, 0.0);
        oh[static_cast<std::size_t>(e.labels[i])] = 1.0;
        y.push_back(oh);
    }
    EXPECT_GT(metrics::distance_correlation(SignalBatch::from_rows(SignalName::S, f), SignalBatch::from_rows(SignalName::C, y)),
              0.6);
}

TEST(Sources, SplitIsFourToOneAndDisjoint) {
    DatasetSpec s;
    s.train = 400;
    s.val = 100;
    s.test = 60;
    const auto sp = load_splits(s);
    EXPECT_EQ(sp.train.size(), 400u);
    EXPECT_EQ(sp.val.size(), 100u);
    EXPECT_EQ(sp.test.size(), 60u);
    s.val = 99;
    EXPECT_THROW((void)load_splits(s), std::invalid_argument);
}

// ------------------------------------------------------------ training

namespace {

DatasetSplits tiny_splits(std::uint64_t seed = 1) {
    DatasetSpec s;
    s.train = 160;
    s.val = 40;
    s.test = 40;
    s.seed = seed;
    return load_splits(s);
}

}  // namespace

TEST(Train, BudgetOneReturnsEpochOneModel) {
    const auto sp = tiny_splits();
    auto m = models::make_model(models::Variant::caam, models::ModelSpec::for_dataset(sp.train), 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    const auto r = train_model(*m, sp.train, sp.val, cfg);
    ASSERT_EQ(r.log.size(), 1u);
    EXPECT_EQ(r.best_epoch, 1u);
    EXPECT_EQ(clean_accuracy(*m, sp.val), r.log[0].val_acc);
    EXPECT_THROW((void)train_model(*m, sp.train, sp.val, TrainConfig{.epochs = 0}), std::invalid_argument);
}

TEST(Train, ReturnsBestValidationEpoch) {
    const auto sp = tiny_splits();
    auto m = models::make_model(models::Variant::causaladv, models::ModelSpec::for_dataset(sp.train), 3);
    TrainConfig cfg;
    cfg.epochs = 4;
    const auto r = train_model(*m, sp.train, sp.val, cfg);
    double best = -1;
    std::size_t at = 0;
    for (const auto& e : r.log)
        if (e.val_acc > best) best = e.val_acc, at = e.epoch;
    EXPECT_EQ(r.best_epoch, at);
    EXPECT_EQ(r.best_val_acc, best);
    EXPECT_EQ(clean_accuracy(*m, sp.val), best);
}

TEST(Train, SameSeedSameLog) {
    const auto sp = tiny_splits();
    auto run = [&] {
        auto m = models::make_model(models::Variant::dice, models::ModelSpec::for_dataset(sp.train), 9);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.seed = 17;
        auto r = train_model(*m, sp.train, sp.val, cfg);
        return std::make_pair(r, models::serialize_checkpoint(*m));
    };
    const auto [a, ca] = run();
    const auto [b, cb] = run();
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
        EXPECT_EQ(a.log[i].val_acc, b.log[i].val_acc);
    }
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    EXPECT_EQ(ca, cb);
}

TEST(Train, NanReportsDivergenceEpoch) {
    const auto sp = tiny_splits();
    auto m = models::make_model(models::Variant::caam, models::ModelSpec::for_dataset(sp.train), 3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.on_epoch = [&](std::size_t e, double) {
        if (e == 2) {
            Tensor w = m->params().entries().front().tensor;  // shares storage
            w.mutable_data()[0] = std::nan("");
        }
    };
    try {
        (void)train_model(*m, sp.train, sp.val, cfg);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.epoch(), 3u);
        EXPECT_NE(std::string(e.what()).find("epoch 3"), std::string::npos);
    }
}

TEST(Train, TrackingFillsEverySeries) {
    const auto sp = tiny_splits();
    auto m = models::make_model(models::Variant::causaladv, models::ModelSpec::for_dataset(sp.train), 3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.tracking = true;
    cfg.tracking_samples = 20;
    const auto r = train_model(*m, sp.train, sp.val, cfg);
    for (const auto& e : r.log) {
        EXPECT_TRUE(std::isfinite(e.m1));
        EXPECT_TRUE(std::isfinite(e.clean_acc));
        EXPECT_TRUE(std::isfinite(e.pgd40_acc));
        EXPECT_LE(e.pgd40_acc, e.clean_acc);
    }
}

// --------------------------------------------------------- robustness

TEST(Robustness, ZeroBudgetAttacksLeaveAccuracyUnchanged) {
    const auto model = cdnb::testing::trained_toy_model();
    const Dataset d = toy_dataset(300, 77);
    std::vector<attacks::AttackConfig> zero{
        attacks::pgd_config("pgd_linf0", attacks::Norm::linf, 0.0, 10, 0.01),
        attacks::pgd_config("pgd_l2_0", attacks::Norm::l2, 0.0, 10, 0.05),
        attacks::fgsm_config("fgsm0", 0.0),
        attacks::cw_config("cw0", 0.0, 10),
    };
    const auto r = evaluate_robustness(model, model.params, d, zero);
    for (const auto& a : r.attacks) EXPECT_EQ(a.accuracy, r.clean) << a.attack;
    EXPECT_EQ(r.delta_abs, 0.0);
    EXPECT_EQ(r.delta_rel, 0.0);
    EXPECT_GT(r.clean, 0.9);
}

TEST(Robustness, DropIdentitiesHold) {
    const auto model = cdnb::testing::trained_toy_model();
    const Dataset d = toy_dataset(200, 78);
    const auto r = evaluate_robustness(model, model.params, d, attacks::table2_suite(), {}, "toy", "toy");
    ASSERT_EQ(r.attacks.size(), 7u);
    double s = 0;
    for (const auto& a : r.attacks) s += a.accuracy;
    EXPECT_NEAR(r.mean_adv, s / 7.0, 1e-12);
    EXPECT_NEAR(r.delta_abs, r.clean - r.mean_adv, 1e-12);
    EXPECT_NEAR(r.delta_rel, r.delta_abs / r.clean, 1e-12);
    EXPECT_NE(to_csv_row(r).find("toy,toy,200,"), std::string::npos);
    EXPECT_THROW((void)evaluate_robustness(model, model.params, d, {}), std::invalid_argument);
}

TEST(Robustness, PublishedCausalAdvRowGivesRelativeDrop) {
    RobustnessRecord r;
    r.clean = 0.993;
    for (int i = 0; i < 7; ++i) r.attacks.push_back({"a" + std::to_string(i), 0.974, 0});
    r.finalize();
    EXPECT_NEAR(r.mean_adv, 0.974, 1e-12);
    EXPECT_NEAR(std::round(1000.0 * r.delta_rel) / 10.0, 1.9, 1e-9);
}

TEST(Robustness, UntrainedModelsSitNearChance) {
    SyntheticSpec g;
    g.samples = 2000;
    g.rho = 0.0;
    g.seed = 31;
    const Dataset d = generate_synthetic(g, "synthetic");
    for (auto v : models::all_variants()) {
        auto m = models::make_model(v, models::ModelSpec::for_dataset(d), 4);
        // An untrained DICE has an empty buffer; a zero sample leaves inputs unchanged.
        if (v == models::Variant::dice) static_cast<models::DiceLite&>(*m).push_samples(Tensor::zeros({1, 1, 16, 16}), 1);
        const double acc = clean_accuracy(*m, d);
        EXPECT_NEAR(acc, 0.1, 0.03) << models::to_string(v);
    }
}

// --------------------------------------------------------------- stats

TEST(Stats, IncompleteBetaMatchesBoost) {
    double worst = 0;
    for (double a : {0.5, 1.0, 2.5, 5.0, 17.0, 60.0})
        for (double b : {0.5, 1.0, 3.0, 9.5})
            for (double x : {1e-6, 0.01, 0.2, 0.5, 0.77, 0.95, 0.999}) {
                const double ref = boost::math::ibeta(a, b, x);
                if (ref < 1e-300) continue;
                worst = std::max(worst, std::abs(incomplete_beta(a, b, x) - ref) / ref);
            }
    EXPECT_LT(worst, 1e-8);
}

TEST(Stats, StudentTailMatchesBoost) {
    double worst = 0;
    for (double df : {1.0, 2.0, 5.0, 10.0, 30.0, 200.0})
        for (double t : {0.0, 0.3, 1.0, 2.2, 4.5, 9.0}) {
            boost::math::students_t dist(df);
            const double ref = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
            worst = std::max(worst, std::abs(student_t_two_sided(t, df) - ref) / ref);
            worst = std::max(worst, std::abs(student_t_two_sided(-t, df) - ref) / ref);
        }
    EXPECT_LT(worst, 1e-8);
}

TEST(Stats, PearsonPValuesMatchBoostOverRandomData) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 20);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = g(rng);
            y[i] = 0.6 * x[i] + g(rng);
        }
        const auto c = pearson(x, y);
        const double df = static_cast<double>(n - 2);
        const double t = c.r * std::sqrt(df / (1 - c.r * c.r));
        boost::math::students_t dist(df);
        const double ref = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
        EXPECT_NEAR(c.p, ref, 1e-8 * ref) << n;
    }
}

TEST(Stats, PublishedPValuesAtTwelvePoints) {
    EXPECT_NEAR(pearson_p_value(-0.820, 12), 0.0011, 0.0002);
    EXPECT_NEAR(pearson_p_value(0.741, 12), 0.0058, 0.0005);
    EXPECT_NEAR(pearson_p_value(-0.720, 12), 0.0083, 0.0005);
    EXPECT_NEAR(pearson_p_value(0.597, 12), 0.0404, 0.0010);
}

TEST(Stats, AffineInvariance) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> x(40), y(40);
    for (std::size_t i = 0; i < 40; ++i) {
        x[i] = u(rng);
        y[i] = x[i] * x[i] + 0.3 * u(rng);
    }
    const double r = pearson(x, y).r;
    for (auto [a, b] : {std::pair{2.0, 5.0}, {0.001, -3.0}, {1e4, 1e3}}) {
        std::vector<double> ax(x), by(y);
        for (auto& v : ax) v = a * v + b;
        for (auto& v : by) v = a * v - b;
        EXPECT_NEAR(pearson(ax, y).r, r, 1e-12);
        EXPECT_NEAR(pearson(x, by).r, r, 1e-12);
        EXPECT_NEAR(pearson(ax, by).r, r, 1e-12);
    }
}

TEST(Stats, PerfectCorrelation) {
    std::vector<double> x{1, 2, 3, 5, 8};
    const auto c = pearson(x, x);
    EXPECT_EQ(c.r, 1.0);
    EXPECT_GT(c.p, 0.0);
    EXPECT_LT(c.p, 1e-300);
    EXPECT_EQ(format_p(c.p), "<.0001");
}

TEST(Stats, DegenerateInputsAreErrors) {
    std::vector<double> x{1, 2, 3, 4}, flat{2, 2, 2, 2};
    EXPECT_THROW((void)pearson(x, flat), std::invalid_argument);
    EXPECT_THROW((void)pearson(flat, x), std::invalid_argument);
    std::vector<double> short_x{1, 2}, three{1, 2, 3};
    EXPECT_THROW((void)pearson(short_x, short_x), std::invalid_argument);
    EXPECT_THROW((void)pearson(x, three), std::invalid_argument);
}

TEST(Stats, PValueFormatting) {
    EXPECT_EQ(format_p(0.00583), "0.0058");
    EXPECT_EQ(format_p(0.5), "0.5000");
    EXPECT_EQ(format_p(9.9e-5), "<.0001");
}

// --------------------------------------------------------- paper check

TEST(PaperCheck, AllEntriesMatch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = paper_table_check();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(rep.entries.size(), 20u);
    for (const auto& e : rep.entries) {
        EXPECT_TRUE(e.r_ok()) << e.computed.measurement << " vs " << e.computed.target << ": " << e.computed.r;
        EXPECT_TRUE(e.significance_ok()) << e.computed.measurement << " vs " << e.computed.target;
    }
    EXPECT_TRUE(rep.all_ok());
    EXPECT_LT(secs, 1.0);
}

TEST(PaperCheck, HeadlineValues) {
    const auto rep = paper_table_check();
    EXPECT_NEAR(rep.at(2, 0).computed.r, -0.820, 0.01);
    EXPECT_NEAR(rep.at(3, 0).computed.r, -0.720, 0.02);
    EXPECT_NEAR(rep.at(0, 1).computed.r, 0.741, 0.02);
    EXPECT_NEAR(rep.at(3, 4).computed.r, 0.597, 0.03);
    EXPECT_EQ(rep.at(2, 0).computed.n, 12u);
    const std::string text = format_paper_check(rep);
    EXPECT_NE(text.find("20/20"), std::string::npos);
}

TEST(PaperCheck, AbsoluteDropIsRebuiltFromCleanMinusAdversarial) {
    const auto d = paper_target(2);
    EXPECT_NEAR(d[2], 99.3 - 97.4, 1e-12);
    EXPECT_NEAR(d[5], 83.6 - 4.5, 1e-12);
}

// -------------------------------------------------------------- config

TEST(Config, ParsesSectionsCommentsAndQuotes) {
    const auto c = parse_config(R"(
seed = 4   # trailing comment
[dataset]
name = "with # hash"
rho = 0.5
[attack.mine]
family = pgd
)");
    EXPECT_EQ(c.get("").count("seed", 0), 4u);
    EXPECT_EQ(c.get("dataset").str("name", ""), "with # hash");
    EXPECT_DOUBLE_EQ(c.get("dataset").real("rho", 0), 0.5);
    ASSERT_EQ(c.with_prefix("attack").size(), 1u);
    EXPECT_EQ(c.with_prefix("attack")[0]->name, "attack.mine");
}

TEST(Config, ErrorsCarryLineNumbers) {
    try {
        (void)parse_config("a = 1\n[x]\nb = 2\nb = 3\n", "f.toml");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("f.toml:4"), std::string::npos) << e.what();
    }
    EXPECT_THROW((void)parse_config("[open\n"), ConfigError);
    EXPECT_THROW((void)parse_config("novalue\n"), ConfigError);
    EXPECT_THROW((void)parse_config("[a]\n[a]\n"), ConfigError);
}

TEST(Config, ExperimentDefaultsAndOverrides) {
    const auto e = experiment_from(parse_config(R"(
seed = 9
[dataset]
rho = 0.3
train = 80
val = 20
test = 10
[models]
variants = caam, dice
epochs = 3
dice_q = 0.5
[attacks]
preset = none
[attack.quick]
family = fgsm
eps = 4/255
[metrics]
iob_epochs = 7
[output]
dir = somewhere
)"));
    EXPECT_EQ(e.seed, 9u);
    ASSERT_EQ(e.datasets.size(), 1u);
    EXPECT_EQ(e.datasets[0].name, "synthetic");
    EXPECT_DOUBLE_EQ(e.datasets[0].rho, 0.3);
    ASSERT_EQ(e.variants.size(), 2u);
    EXPECT_EQ(e.variants[1], models::Variant::dice);
    EXPECT_EQ(e.train.epochs, 3u);
    EXPECT_DOUBLE_EQ(e.model.dice_q, 0.5);
    ASSERT_EQ(e.attacks.size(), 1u);
    EXPECT_DOUBLE_EQ(e.attacks[0].epsilon, 4.0 / 255.0);
    EXPECT_EQ(e.metrics.iob.max_epochs, 7u);
    EXPECT_EQ(e.out_dir, std::filesystem::path("somewhere"));

    const auto d = experiment_from(parse_config(""));
    EXPECT_EQ(d.variants.size(), 4u);
    EXPECT_EQ(d.attacks.size(), 7u);
    EXPECT_EQ(d.datasets[0].train, 3200u);
    EXPECT_DOUBLE_EQ(d.datasets[0].rho, 0.9);
}

TEST(Config, InvalidExperimentsAreRejected) {
    EXPECT_THROW((void)experiment_from(parse_config("[models]\nvariants = resnet\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[models]\nepocs = 3\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[model]\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[dataset]\ntrain = 10\nval = 5\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[dataset]\nrho = 2\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[dataset]\nsource = mnist_idx\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[attacks]\npreset = all\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[attack.x]\nfamily = pgd\nnorm = l3\n")), ConfigError);
    EXPECT_THROW((void)experiment_from(parse_config("[attack.fgsm]\nfamily = fgsm\n")), ConfigError);  // name clash
    EXPECT_THROW((void)experiment_from(parse_config("[models]\nepochs = -1\n")), ConfigError);
}

// ---------------------------------------------------------- experiment

namespace {

const char* tiny_config = R"(
seed = 5
[dataset]
train = 80
val = 20
test = 30
[models]
epochs = 1
[attacks]
preset = none
[attack.fgsm_small]
family = fgsm
eps = 8/255
[attack.pgd_small]
family = pgd
steps = 3
[metrics]
n_max = 30
train_samples = 60
iob_epochs = 3
iob_hidden = 16
)";

ExperimentConfig tiny_experiment(const std::filesystem::path& out, const std::string& extra = "") {
    auto e = experiment_from(parse_config(std::string(tiny_config) + extra));
    e.out_dir = out;
    return e;
}

CellResult fake_cell(const std::string& model, double m0, double clean, double adv) {
    CellResult c;
    c.ok = true;
    c.model = model;
    c.dataset = "d";
    c.measurement.model = model;
    c.measurement.dataset = "d";
    c.measurement.m1 = m0;
    c.measurement.m2 = 1 - m0;
    c.measurement.m3 = m0 * m0;
    c.measurement.m4 = 0.5 * m0 + clean;
    c.measurement.m5 = adv - m0;
    c.test_clean = clean;
    RobustnessRecord r;
    r.model = model;
    r.dataset = "d";
    r.clean = clean;
    r.attacks.push_back({"a", adv, 0});
    r.finalize();
    c.robustness = r;
    return c;
}

}  // namespace

TEST(Experiment, FourCellsGiveTwentyCorrelations) {
    ExperimentResult res;
    res.cells = {fake_cell("cama", 0.9, 0.95, 0.80), fake_cell("caam", 0.1, 0.99, 0.20),
                 fake_cell("causaladv", 0.7, 0.98, 0.90), fake_cell("dice", 0.5, 0.97, 0.85)};
    correlate_cells(res);
    EXPECT_EQ(res.correlations.size(), 20u);
    EXPECT_TRUE(res.skipped.empty());
    EXPECT_EQ(res.correlations.front().measurement, "m1");
    EXPECT_EQ(res.correlations.front().target, "clean_acc");
    EXPECT_EQ(res.correlations.back().target, "delta_rel");
    const auto text = format_summary(res);
    EXPECT_NE(text.find("99.0*"), std::string::npos) << text;  // best clean
    EXPECT_NE(text.find("90.0*"), std::string::npos) << text;  // best adversarial
}

TEST(Experiment, ZeroVarianceCorrelationsAreSkippedNotFatal) {
    ExperimentResult res;
    res.cells = {fake_cell("a", 0.9, 0.95, 0.80), fake_cell("b", 0.1, 0.95, 0.20), fake_cell("c", 0.7, 0.95, 0.90)};
    correlate_cells(res);
    EXPECT_EQ(res.correlations.size() + res.skipped.size(), 20u);
    EXPECT_EQ(res.skipped.size(), 5u);  // clean accuracy is constant
    for (const auto& s : res.skipped) EXPECT_EQ(s.target, "clean_acc");
}

TEST(Experiment, EndToEndArtifactsAndDeterminism) {
    const auto a = scratch("exp_a"), b = scratch("exp_b");
    const auto ca = tiny_experiment(a), cb = tiny_experiment(b);
    const auto ra = run_experiment(ca);
    write_reports(ca, ra);
    ASSERT_EQ(ra.failed(), 0u) << ra.cells[0].error;
    EXPECT_EQ(ra.cells.size(), 4u);
    EXPECT_EQ(ra.correlations.size() + ra.skipped.size(), 20u);
    for (const char* f : {"measurements.csv", "robustness.csv", "correlations.csv", "tracking.csv", "experiment.json"})
        EXPECT_TRUE(std::filesystem::exists(a / f)) << f;
    for (auto v : models::all_variants()) {
        const std::string stem = cell_stem("synthetic", std::string(models::to_string(v)));
        EXPECT_TRUE(std::filesystem::exists(a / "cells" / (stem + ".json")));
        EXPECT_TRUE(std::filesystem::exists(a / "models" / (stem + ".ckpt")));
    }
    // 1 header + 4 rows each.
    for (const char* f : {"measurements.csv", "robustness.csv"}) {
        const auto text = slurp(a / f);
        EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5) << f;
    }
    const auto rb = run_experiment(cb);
    write_reports(cb, rb);
    for (const char* f : {"measurements.csv", "robustness.csv", "correlations.csv", "tracking.csv", "experiment.json"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    for (const auto& e : std::filesystem::directory_iterator(a))
        EXPECT_NE(e.path().extension(), ".tmp") << e.path();
}

TEST(Experiment, NoAttacksSkipsRobustness) {
    const auto dir = scratch("exp_noattack");
    auto cfg = tiny_experiment(dir);
    cfg.attacks.clear();
    cfg.variants = {models::Variant::caam, models::Variant::causaladv, models::Variant::dice};
    const auto res = run_experiment(cfg);
    write_reports(cfg, res);
    for (const auto& c : res.cells) EXPECT_FALSE(c.robustness.has_value());
    EXPECT_EQ(res.correlations.size() + res.skipped.size(), 5u);
    for (const auto& c : res.correlations) EXPECT_EQ(c.target, "clean_acc");
    EXPECT_EQ(slurp(dir / "robustness.csv"), robustness_csv_header({}) + "\n");
}

TEST(Experiment, FailingCellIsIsolated) {
    const auto dir = scratch("exp_fail");
    // A zero-capacity confounder buffer is only fatal to the DICE cell.
    auto cfg = tiny_experiment(dir);
    cfg.model.dice_buffer = 0;
    const auto res = run_experiment(cfg);
    write_reports(cfg, res);
    EXPECT_EQ(res.failed(), 1u);
    for (const auto& c : res.cells) {
        if (c.model == "dice") {
            EXPECT_FALSE(c.ok);
            EXPECT_FALSE(c.error.empty());
        } else {
            EXPECT_TRUE(c.ok) << c.model << ": " << c.error;
        }
    }
    const auto json = nlohmann::json::parse(slurp(dir / "experiment.json"));
    EXPECT_EQ(json["failed_cells"], 1);
    const auto text = slurp(dir / "measurements.csv");
    EXPECT_EQ(text.find("dice,"), std::string::npos);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Experiment, ParallelCellsMatchSerialOutput) {
    const auto a = scratch("exp_serial"), b = scratch("exp_parallel");
    auto ca = tiny_experiment(a), cb = tiny_experiment(b);
    ca.variants = cb.variants = {models::Variant::caam, models::Variant::causaladv, models::Variant::dice};
    cb.threads = 3;
    const auto ra = run_experiment(ca);
    const auto rb = run_experiment(cb);
    EXPECT_EQ(measurements_csv(ra), measurements_csv(rb));
    EXPECT_EQ(robustness_csv(ra), robustness_csv(rb));
    EXPECT_EQ(correlations_csv(ra.correlations), correlations_csv(rb.correlations));
}

TEST(Reports, EmptyResultGivesHeaderOnlyFiles) {
    const auto dir = scratch("reports_empty");
    ExperimentConfig cfg;
    cfg.out_dir = dir;
    ExperimentResult res;
    res.attack_names = {"fgsm"};
    write_reports(cfg, res);
    EXPECT_EQ(slurp(dir / "measurements.csv"), "model,dataset,n,m1,m2,m3,m4,m5\n");
    EXPECT_EQ(slurp(dir / "robustness.csv"), "model,dataset,n,clean,acc_fgsm,mean_adv,delta_abs,delta_rel\n");
    EXPECT_EQ(slurp(dir / "correlations.csv"), "measurement,target,n,r,p\n");
    EXPECT_EQ(slurp(dir / "tracking.csv"), "model,dataset,epoch,m1,clean_acc,pgd40_acc\n");
}

TEST(Reports, RewriteReplacesFiles) {
    const auto dir = scratch("reports_rewrite");
    ExperimentConfig cfg;
    cfg.out_dir = dir;
    ExperimentResult res;
    res.cells = {fake_cell("a", 0.9, 0.95, 0.80), fake_cell("b", 0.1, 0.99, 0.20), fake_cell("c", 0.7, 0.98, 0.90)};
    correlate_cells(res);
    write_reports(cfg, res);
    const auto first = slurp(dir / "measurements.csv");
    res.cells.pop_back();
    correlate_cells(res);
    write_reports(cfg, res);
    const auto second = slurp(dir / "measurements.csv");
    EXPECT_NE(first, second);
    EXPECT_EQ(std::count(second.begin(), second.end(), '\n'), 3);
    for (const auto& e : std::filesystem::directory_iterator(dir)) EXPECT_NE(e.path().extension(), ".tmp");
}
