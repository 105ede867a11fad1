#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdnb/autograd.hpp"
#include "cdnb/data/dataset.hpp"
#include "cdnb/metrics/distance.hpp"
#include "cdnb/metrics/iob.hpp"
#include "cdnb/metrics/signal.hpp"
#include "cdnb/random.hpp"

namespace cdnb::metrics {

/// The (x, c, s) signals a model exposes for one batch of inputs.
struct SignalTaps {
    Tensor x;
    Tensor c;
    Tensor s;
};

/// Maps a batch of images (and their labels) to the model's signals.
using TapExtractor = std::function<SignalTaps(const Tensor& images, std::span<const int> labels)>;

struct MetricsConfig {
    std::size_t n_max = 2000;  // DC sample cap
    IobConfig iob;
    std::uint64_t seed = 0;
    std::size_t tap_batch = 256;
};

struct MeasurementRecord {
    std::string model;
    std::string dataset;
    std::size_t n = 0;  // samples used for DC
    double m1 = 0, m2 = 0, m3 = 0, m4 = 0, m5 = 0;

    // Diagnostics, not part of the CSV row.
    double iob_c = 1, iob_s = 1;              // held-out
    double iob_c_train = 1, iob_s_train = 1;  // on decoder training pairs, logged only
    DecoderLog log_c_signal, log_c_ones, log_s_signal, log_s_ones;

    [[nodiscard]] double value(std::size_t i) const {
        const double v[] = {m1, m2, m3, m4, m5};
        return v[i];
    }
};

inline const char* measurement_label(std::size_t i) {
    static const char* names[] = {"1-DC(C,S)", "DC(X,C)", "DC(X,S)", "1-BoI(X,C)", "1-BoI(X,S)"};
    return names[i];
}
inline const char* measurement_key(std::size_t i) {
    static const char* keys[] = {"m1", "m2", "m3", "m4", "m5"};
    return keys[i];
}

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

inline std::string measurement_csv_header() { return "model,dataset,n,m1,m2,m3,m4,m5"; }

inline std::string to_csv_row(const MeasurementRecord& r) {
    std::ostringstream os;
    os << r.model << ',' << r.dataset << ',' << r.n << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < 5; ++i) os << ',' << r.value(i);
    return os.str();
}

inline nlohmann::json to_json(const MeasurementRecord& r) {
    nlohmann::json j{{"model", r.model}, {"dataset", r.dataset}, {"n", r.n}};
    for (std::size_t i = 0; i < 5; ++i) j[measurement_key(i)] = r.value(i);
    return j;
}

/// json with the CSV keys plus held-out/train IoB and decoder training logs.
inline nlohmann::json to_json_detailed(const MeasurementRecord& r) {
    auto j = to_json(r);
    auto log_json = [](const DecoderLog& l) {
        return nlohmann::json{{"train_loss", l.train_loss}, {"val_loss", l.val_loss},
                              {"best_epoch", l.best_epoch}, {"epochs_run", l.epochs_run()}};
    };
    j["iob"] = {{"c_heldout", r.iob_c}, {"s_heldout", r.iob_s}, {"c_train", r.iob_c_train},
                {"s_train", r.iob_s_train}};
    j["decoder_logs"] = {{"c_signal", log_json(r.log_c_signal)}, {"c_ones", log_json(r.log_c_ones)},
                         {"s_signal", log_json(r.log_s_signal)}, {"s_ones", log_json(r.log_s_ones)}};
    return j;
}

struct TapSignals {
    SignalBatch x, c, s;
};

/// Runs `taps` over `data` in batches with recording disabled.
inline TapSignals extract_signals(const TapExtractor& taps, const Dataset& data, std::size_t batch = 256) {
    NoGradGuard ng;
    std::vector<double> xs, cs, ss;
    Shape xshape, cshape, sshape;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        const std::size_t m = std::min(batch, data.size() - start);
        std::vector<std::size_t> idx(m);
        for (std::size_t k = 0; k < m; ++k) idx[k] = start + k;
        const auto labels = data.labels_at(idx);
        SignalTaps t = taps(data.images(idx), labels);
        auto append = [](std::vector<double>& dst, Shape& shape, const Tensor& src) {
            Shape s(src.shape().begin() + 1, src.shape().end());
            if (shape.empty()) shape = s;
            else if (shape != s) throw std::invalid_argument("extract_signals: tap shape changed between batches");
            dst.insert(dst.end(), src.data().begin(), src.data().end());
        };
        append(xs, xshape, t.x);
        append(cs, cshape, t.c);
        append(ss, sshape, t.s);
    }
    if (cshape.empty()) cshape = {1};
    if (sshape.empty()) sshape = {1};
    return {SignalBatch(SignalName::X, xshape, std::move(xs)), SignalBatch(SignalName::C, cshape, std::move(cs)),
            SignalBatch(SignalName::S, sshape, std::move(ss))};
}

/// Seeded uniform subsample of min(n, cap) indices, returned in increasing order.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t cap, std::uint64_t seed) {
    auto idx = iota_indices(n);
    if (n <= cap) return idx;
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// 1 - DC(C, S) on the given signals.
inline double separation_m1(const SignalBatch& c, const SignalBatch& s) {
    return clamp_unit(1.0 - distance_correlation(c, s));
}

/// M1..M5. DC uses the evaluation split; IoB decoders train on `train` and
/// are scored on `eval`.
inline MeasurementRecord measure_all(const TapExtractor& taps, const Dataset& train, const Dataset& eval,
                                     const MetricsConfig& cfg, std::string model_id = {},
                                     std::string dataset_id = {}) {
    MeasurementRecord r;
    r.model = std::move(model_id);
    r.dataset = std::move(dataset_id);

    const auto dc_idx = subsample_indices(eval.size(), cfg.n_max, derive_seed(cfg.seed, {"metrics", "dc"}));
    const Dataset dc_set = eval.subset(dc_idx);
    const TapSignals ev = extract_signals(taps, dc_set, cfg.tap_batch);
    r.n = dc_set.size();
    {
        const auto A = double_center(pairwise_distances(ev.x));
        const auto B = double_center(pairwise_distances(ev.c));
        const auto S = double_center(pairwise_distances(ev.s));
        r.m1 = clamp_unit(1.0 - distance_correlation(B, S));
        r.m2 = clamp_unit(distance_correlation(A, B));
        r.m3 = clamp_unit(distance_correlation(A, S));
    }

    const TapSignals tr = extract_signals(taps, train, cfg.tap_batch);
    const TapSignals te = ev.x.size() == eval.size() ? ev : extract_signals(taps, eval, cfg.tap_batch);
    IobConfig ic = cfg.iob;
    ic.seed = derive_seed(cfg.seed, {"metrics", "iob", "c"});
    const auto pair_c = train_iob_decoders(tr.x, tr.c, ic);
    ic.seed = derive_seed(cfg.seed, {"metrics", "iob", "s"});
    const auto pair_s = train_iob_decoders(tr.x, tr.s, ic);

    r.iob_c = iob(te.x, te.c, pair_c).iob;
    r.iob_s = iob(te.x, te.s, pair_s).iob;
    r.iob_c_train = iob(tr.x, tr.c, pair_c).iob;
    r.iob_s_train = iob(tr.x, tr.s, pair_s).iob;
    r.m4 = clamp_unit(1.0 - 1.0 / r.iob_c);
    r.m5 = clamp_unit(1.0 - 1.0 / r.iob_s);
    r.log_c_signal = pair_c.log_z;
    r.log_c_ones = pair_c.log_ones;
    r.log_s_signal = pair_s.log_z;
    r.log_s_ones = pair_s.log_ones;
    return r;
}

}  // namespace cdnb::metrics
