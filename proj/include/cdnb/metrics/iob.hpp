#pragma once

// Information over Bias: how much better a decoder reconstructs X from a
// signal Z than a decoder of identical architecture fed a constant ones
// vector. Both decoders are trained; the ratio is averaged per sample.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cdnb/autograd.hpp"
#include "cdnb/metrics/signal.hpp"
#include "cdnb/nn/layers.hpp"
#include "cdnb/random.hpp"

namespace cdnb::metrics {

struct IobConfig {
    std::size_t max_epochs = 50;
    std::size_t patience = 40;
    double val_fraction = 0.2;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::size_t hidden = 256;
    std::uint64_t seed = 0;
    bool concurrent = false;  // train the two decoders on separate threads

    /// Settings used while tracking metrics across a training run.
    static IobConfig tracking(std::uint64_t seed = 0) {
        IobConfig c;
        c.patience = 5;
        c.max_epochs = 50;
        c.seed = seed;
        return c;
    }
};

struct DecoderLog {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;  // 1-based
    double best_val = std::numeric_limits<double>::infinity();

    [[nodiscard]] std::size_t epochs_run() const noexcept { return val_loss.size(); }
    bool operator==(const DecoderLog&) const = default;
};

/// Two fully connected layers (relu hidden) mapping a flat signal to a flat
/// reconstruction. Inputs are standardised with statistics frozen at training time.
class Decoder {
public:
    Decoder() = default;
    Decoder(std::size_t in_dim, std::size_t out_dim, std::size_t hidden, Rng& rng)
        : in_mean_(in_dim, 0.0), in_scale_(in_dim, 1.0) {
        l1_ = nn::Linear::create(params_, "fc1", in_dim, hidden, rng);
        l2_ = nn::Linear::create(params_, "fc2", hidden, out_dim, rng);
    }

    void set_standardization(std::vector<double> mean, std::vector<double> scale) {
        in_mean_ = std::move(mean);
        in_scale_ = std::move(scale);
    }

    [[nodiscard]] std::size_t in_dim() const { return l1_.in_features(); }
    [[nodiscard]] std::size_t out_dim() const { return l2_.out_features(); }
    [[nodiscard]] nn::ParameterSet& params() { return params_; }

    /// rows: n x in_dim, row-major.
    [[nodiscard]] Tensor forward(std::span<const double> rows, std::size_t n) const {
        const std::size_t d = in_dim();
        std::vector<double> z(rows.begin(), rows.end());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) z[i * d + k] = (z[i * d + k] - in_mean_[k]) / in_scale_[k];
        Tensor input({n, d}, std::move(z));
        return l2_(ops::relu(l1_(input)));
    }

private:
    nn::ParameterSet params_;
    nn::Linear l1_, l2_;
    std::vector<double> in_mean_, in_scale_;
};

struct IobDecoderPair {
    Decoder decoder_z;
    Decoder decoder_ones;
    DecoderLog log_z;
    DecoderLog log_ones;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

namespace detail {

inline std::vector<double> gather_rows(std::span<const double> m, std::size_t d,
                                       std::span<const std::size_t> idx) {
    std::vector<double> out;
    out.reserve(idx.size() * d);
    for (auto i : idx) out.insert(out.end(), m.begin() + static_cast<std::ptrdiff_t>(i * d),
                                  m.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    return out;
}

inline double mean_mse(const Decoder& dec, std::span<const double> in, std::span<const double> target,
                       std::size_t n) {
    NoGradGuard ng;
    const std::size_t chunk = 512;
    double total = 0.0;
    for (std::size_t s = 0; s < n; s += chunk) {
        const std::size_t m = std::min(chunk, n - s);
        Tensor pred = dec.forward(in.subspan(s * dec.in_dim(), m * dec.in_dim()), m);
        const auto p = pred.data();
        const double* t = target.data() + s * dec.out_dim();
        for (std::size_t k = 0; k < m * dec.out_dim(); ++k) {
            const double e = p[k] - t[k];
            total += e * e;
        }
    }
    return total / static_cast<double>(n * dec.out_dim());
}

/// Adam on MSE with early stopping on the validation split; returns the best-validation weights.
inline DecoderLog fit_decoder(Decoder& dec, std::span<const double> in_train, std::span<const double> y_train,
                              std::size_t n_train, std::span<const double> in_val, std::span<const double> y_val,
                              std::size_t n_val, const IobConfig& cfg, Rng rng) {
    auto params = dec.params().trainable();
    auto opt = OptimizerState::adam(cfg.learning_rate);
    DecoderLog log;
    nn::ParameterSet::Snapshot best = dec.params().snapshot();
    std::vector<std::size_t> order = std::vector<std::size_t>(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    const std::size_t din = dec.in_dim(), dout = dec.out_dim();
    std::size_t since_best = 0;
    Tape tape;
    TapeScope scope(tape);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t s = 0; s < n_train; s += cfg.batch_size) {
            const std::size_t m = std::min(cfg.batch_size, n_train - s);
            std::span<const std::size_t> idx(order.data() + s, m);
            auto xin = gather_rows(in_train, din, idx);
            Tensor target({m, dout}, gather_rows(y_train, dout, idx));
            Tensor loss = ops::mse(dec.forward(xin, m), target);
            loss_sum += loss.item();
            ++batches;
            backward(loss);
            optimizer_step(params, opt);
        }
        const double val = mean_mse(dec, in_val, y_val, n_val);
        log.train_loss.push_back(loss_sum / static_cast<double>(batches));
        log.val_loss.push_back(val);
        if (val < log.best_val) {
            log.best_val = val;
            log.best_epoch = epoch;
            best = dec.params().snapshot();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    dec.params().restore(best);
    return log;
}

}  // namespace detail

/// Trains the signal decoder g(z) and the bias decoder g(1) on paired (X, Z).
inline IobDecoderPair train_iob_decoders(const SignalBatch& X, const SignalBatch& Z, const IobConfig& cfg) {
    const std::size_t n = X.size();
    if (n < 10) {
        throw std::invalid_argument("train_iob_decoders: need at least 10 samples, got " + std::to_string(n));
    }
    if (Z.size() != n) {
        throw std::invalid_argument("train_iob_decoders: X and Z are not paired (" + std::to_string(n) +
                                    " vs " + std::to_string(Z.size()) + " samples)");
    }
    Rng split_rng(derive_seed(cfg.seed, {"iob", "split"}));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), split_rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(cfg.val_fraction * n)));
    IobDecoderPair pair;
    pair.val_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    pair.train_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(pair.val_indices.begin(), pair.val_indices.end());
    std::sort(pair.train_indices.begin(), pair.train_indices.end());
    const std::size_t n_train = pair.train_indices.size();

    const std::size_t dz = Z.dim(), dx = X.dim();
    const auto z_train = detail::gather_rows(Z.values(), dz, pair.train_indices);
    const auto z_val = detail::gather_rows(Z.values(), dz, pair.val_indices);
    const auto x_train = detail::gather_rows(X.values(), dx, pair.train_indices);
    const auto x_val = detail::gather_rows(X.values(), dx, pair.val_indices);
    const std::vector<double> ones_train(n_train * dz, 1.0), ones_val(n_val * dz, 1.0);

    Rng init_z(derive_seed(cfg.seed, {"iob", "init"}));
    Rng init_ones(derive_seed(cfg.seed, {"iob", "init"}));
    pair.decoder_z = Decoder(dz, dx, cfg.hidden, init_z);
    pair.decoder_ones = Decoder(dz, dx, cfg.hidden, init_ones);

    // Standardise the signal with training-split statistics.
    std::vector<double> mu(dz, 0.0), sd(dz, 0.0);
    for (std::size_t i = 0; i < n_train; ++i)
        for (std::size_t k = 0; k < dz; ++k) mu[k] += z_train[i * dz + k];
    for (auto& m : mu) m /= static_cast<double>(n_train);
    for (std::size_t i = 0; i < n_train; ++i)
        for (std::size_t k = 0; k < dz; ++k) {
            const double e = z_train[i * dz + k] - mu[k];
            sd[k] += e * e;
        }
    for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(n_train)), 1e-6);
    pair.decoder_z.set_standardization(std::move(mu), std::move(sd));

    const Rng shuffle_z(derive_seed(cfg.seed, {"iob", "shuffle", "z"}));
    const Rng shuffle_ones(derive_seed(cfg.seed, {"iob", "shuffle", "ones"}));
    auto train_z = [&] {
        pair.log_z = detail::fit_decoder(pair.decoder_z, z_train, x_train, n_train, z_val, x_val, n_val, cfg, shuffle_z);
    };
    auto train_ones = [&] {
        pair.log_ones = detail::fit_decoder(pair.decoder_ones, ones_train, x_train, n_train, ones_val, x_val, n_val,
                                            cfg, shuffle_ones);
    };
    if (cfg.concurrent) {
        std::thread worker(train_ones);
        train_z();
        worker.join();
    } else {
        train_z();
        train_ones();
    }
    return pair;
}

struct IobValue {
    double iob = 1.0;
    double boi = 1.0;
    std::vector<double> ratios;
};

/// Mean over samples of MSE(x_i, g(1)) / MSE(x_i, g(z_i)).
inline IobValue iob(const SignalBatch& X, const SignalBatch& Z, const IobDecoderPair& pair) {
    const std::size_t n = X.size();
    if (Z.size() != n) throw std::invalid_argument("iob: X and Z are not paired");
    if (n == 0) throw std::invalid_argument("iob: empty evaluation set");
    const std::size_t dx = X.dim(), dz = Z.dim();
    if (pair.decoder_z.in_dim() != dz || pair.decoder_z.out_dim() != dx) {
        throw std::invalid_argument("iob: decoder dimensions do not match the signals");
    }
    NoGradGuard ng;
    const std::vector<double> ones(dz, 1.0);
    const Tensor bias_pred = pair.decoder_ones.forward(ones, 1);
    const auto b = bias_pred.data();
    const Tensor pred = pair.decoder_z.forward(Z.values(), n);
    const auto p = pred.data();
    IobValue out;
    out.ratios.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = X.sample(i);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < dx; ++k) {
            const double eb = x[k] - b[k];
            const double ez = x[k] - p[i * dx + k];
            num += eb * eb;
            den += ez * ez;
        }
        if (den == 0.0) {
            throw std::domain_error("iob: perfect reconstruction of sample " + std::to_string(i) +
                                    " (zero MSE denominator)");
        }
        out.ratios[i] = num / den;
    }
    double s = 0.0;
    for (double r : out.ratios) s += r;
    out.iob = s / static_cast<double>(n);
    out.boi = 1.0 / out.iob;
    return out;
}

}  // namespace cdnb::metrics
