#pragma once

// Training loop with best-validation selection. Tracking mode also records,
// per epoch, the causal/confounder separation and accuracy under PGD40.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdnb/metrics/measure.hpp"
#include "cdnb/models.hpp"

namespace cdnb::harness {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;
    std::uint64_t seed = 1;
    bool tracking = false;
    std::size_t tracking_samples = 200;  // validation samples used for per-epoch M1 and PGD40
    /// Invoked after each epoch's log entry is complete.
    std::function<void(std::size_t epoch, double val_acc)> on_epoch;
    /// Invoked after every optimizer step.
    std::function<void()> after_step;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_acc = 0.0;
    // Tracking mode only; NaN otherwise.
    double m1 = std::nan("");
    double clean_acc = std::nan("");
    double pgd40_acc = std::nan("");
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, const std::string& what)
        : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
    [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// Wraps a model's taps as a metrics extractor; tap noise draws come from one
/// seeded stream consumed in batch order.
inline metrics::TapExtractor tap_extractor(const models::Model& m, std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [&m, rng](const Tensor& x, std::span<const int> y) {
        const models::CausalTaps t = m.taps(x, y, *rng);
        return metrics::SignalTaps{t.x, t.c, t.s};
    };
}

inline double clean_accuracy(const models::Model& m, const Dataset& d) {
    NoGradGuard ng;
    return attacks::accuracy(m, d.all_images(), d.labels);
}

/// M1 = 1 - DC(C, S) over `d`.
inline double tracked_m1(const models::Model& m, const Dataset& d, std::uint64_t seed) {
    const auto sig = metrics::extract_signals(tap_extractor(m, seed), d);
    return metrics::separation_m1(sig.c, sig.s);
}

inline double attacked_accuracy(const models::Model& m, const Dataset& d, const attacks::AttackConfig& cfg,
                                std::uint64_t seed) {
    nn::FreezeGuard frozen(m.params());
    attacks::AttackOptions opt;
    opt.seed = seed;
    return attacks::run_attack(m, d.all_images(), d.labels, cfg, opt).accuracy();
}

inline attacks::AttackConfig tracking_attack() { return attacks::pgd_config("pgd40_linf", attacks::Norm::linf, 8.0 / 255.0, 40, 4.0 / 255.0); }

/// Trains `m` for `cfg.epochs` and leaves it at the epoch with the highest
/// clean validation accuracy (earliest on ties).
inline TrainResult train_model(models::Model& m, const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
    if (cfg.epochs == 0) throw std::invalid_argument("train_model: budget must be at least one epoch");
    if (cfg.batch_size == 0) throw std::invalid_argument("train_model: batch size must be positive");
    if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("train_model: empty train or validation split");

    models::TrainContext ctx;
    ctx.optimizer = OptimizerState::adam(cfg.learning_rate);
    ctx.rng = Rng(derive_seed(cfg.seed, {"train", m.name()}));
    ctx.after_step = cfg.after_step;
    Rng order_rng(derive_seed(cfg.seed, {"train", m.name(), "order"}));

    Dataset track_set;
    if (cfg.tracking) {
        const auto idx = metrics::subsample_indices(val.size(), cfg.tracking_samples,
                                                    derive_seed(cfg.seed, {"train", "tracking", "subset"}));
        track_set = val.subset(idx);
    }

    TrainResult res;
    nn::ParameterSet::Snapshot best;
    auto order = iota_indices(train.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        ctx.epoch = epoch;
        EpochLog row;
        row.epoch = epoch;
        try {
            {
                Tape tape;
                TapeScope scope(tape);
                m.begin_epoch(train, ctx);
            }
            std::shuffle(order.begin(), order.end(), order_rng);
            double loss_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
                const std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, order.size() - s));
                const auto y = train.labels_at(idx);
                Tape tape;
                TapeScope scope(tape);
                const double loss = m.train_batch(train.images(idx), y, idx, ctx);
                if (!std::isfinite(loss)) throw std::domain_error("batch loss is " + std::to_string(loss));
                loss_sum += loss;
                ++batches;
            }
            row.train_loss = loss_sum / static_cast<double>(batches);
            for (const auto& e : m.params().entries())
                for (double v : e.tensor.data())
                    if (!std::isfinite(v)) throw std::domain_error("parameter " + e.name + " is not finite");
        } catch (const std::domain_error& e) {
            throw DivergenceError(epoch, e.what());
        }

        row.val_acc = clean_accuracy(m, val);
        if (cfg.tracking) {
            row.m1 = tracked_m1(m, track_set, derive_seed(cfg.seed, {"train", "tracking", "taps"}, epoch));
            row.clean_acc = clean_accuracy(m, track_set);
            row.pgd40_acc = attacked_accuracy(m, track_set, tracking_attack(),
                                              derive_seed(cfg.seed, {"train", "tracking", "attack"}, epoch));
        }
        if (res.log.empty() || row.val_acc > res.best_val_acc) {
            res.best_val_acc = row.val_acc;
            res.best_epoch = epoch;
            best = m.params().snapshot();
        }
        res.log.push_back(row);
        if (cfg.on_epoch) cfg.on_epoch(epoch, row.val_acc);
    }
    m.params().restore(best);
    return res;
}

inline nlohmann::json to_json(const EpochLog& e) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"epoch", e.epoch}, {"train_loss", num(e.train_loss)}, {"val_acc", e.val_acc},
            {"m1", num(e.m1)}, {"clean_acc", num(e.clean_acc)}, {"pgd40_acc", num(e.pgd40_acc)}};
}

inline nlohmann::json to_json(const TrainResult& r) {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : r.log) log.push_back(to_json(e));
    return {{"best_epoch", r.best_epoch}, {"best_val_acc", r.best_val_acc}, {"epochs", std::move(log)}};
}

}  // namespace cdnb::harness
