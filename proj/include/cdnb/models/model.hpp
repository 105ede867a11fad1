#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cdnb/attacks/attacks.hpp"
#include "cdnb/autograd.hpp"
#include "cdnb/data/dataset.hpp"
#include "cdnb/nn/layers.hpp"
#include "cdnb/random.hpp"

namespace cdnb::models {

enum class Variant : std::uint8_t { cama = 1, caam = 2, causaladv = 3, dice = 4 };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::cama: return "cama";
        case Variant::caam: return "caam";
        case Variant::causaladv: return "causaladv";
        case Variant::dice: return "dice";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    for (Variant v : {Variant::cama, Variant::caam, Variant::causaladv, Variant::dice})
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown model variant '" + std::string(s) +
                                "' (expected cama, caam, causaladv or dice)");
}

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::cama, Variant::caam, Variant::causaladv, Variant::dice};
    return v;
}

/// Input geometry plus every variant hyperparameter. Unused fields are ignored.
struct ModelSpec {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t classes = 10;

    // CaaM-lite
    std::size_t caam_splits = 4;
    std::size_t caam_refresh = 5;
    std::size_t caam_kmeans_iters = 10;

    // CausalAdv-lite
    std::size_t causal_dim = 16;
    double causaladv_sigma = 1.0;
    double causaladv_alpha = 1.0;
    double causaladv_beta = 0.5;

    // DICE-lite
    double dice_q = 0.2;
    std::size_t dice_buffer = 20;
    std::size_t dice_ref_epochs = 3;
    std::size_t dice_push = 4;  // saliency-masked samples pushed per batch

    // CAMA-lite
    std::size_t cama_latent = 16;
    std::size_t cama_label = 16;
    std::size_t cama_m = 8;
    double cama_lambda = 12.5;
    double cama_shift = 0.2;

    [[nodiscard]] std::size_t pixels() const { return channels * height * width; }
    [[nodiscard]] Shape input_shape() const { return {channels, height, width}; }

    static ModelSpec for_dataset(const Dataset& d) {
        ModelSpec s;
        s.channels = d.channels;
        s.height = d.height;
        s.width = d.width;
        s.classes = d.classes;
        return s;
    }
};

/// Signals from one forward pass. Leading axis is the sample.
struct CausalTaps {
    Tensor x;
    Tensor c;
    Tensor s;
    Tensor logits;
};

struct TrainContext {
    OptimizerState optimizer = OptimizerState::adam(1e-3);
    Rng rng;
    std::size_t epoch = 1;  // 1-based
    attacks::AttackConfig adversary = attacks::training_pgd10();
    /// Called after every optimizer step.
    std::function<void()> after_step;
};

/// Two conv layers (8 and 16 channels, 3x3, zero pad 1), each followed by
/// relu and a 2x2 mean pool.
struct Backbone {
    nn::Conv2d conv1, conv2;

    static Backbone create(nn::ParameterSet& p, const std::string& prefix, std::size_t channels, Rng& rng) {
        return {nn::Conv2d::create(p, prefix + ".conv1", channels, 8, 3, 1, rng),
                nn::Conv2d::create(p, prefix + ".conv2", 8, 16, 3, 1, rng)};
    }

    /// [N, C, H, W] -> [N, 16, H/4, W/4].
    [[nodiscard]] Tensor features(const Tensor& x) const {
        return ops::avg_pool2d(ops::relu(conv2(ops::avg_pool2d(ops::relu(conv1(x))))));
    }
    [[nodiscard]] Tensor flat(const Tensor& x) const { return ops::flatten(features(x)); }

    static Shape feature_shape(const ModelSpec& s) { return {16, s.height / 4, s.width / 4}; }
    static std::size_t feature_dim(const ModelSpec& s) { return 16 * (s.height / 4) * (s.width / 4); }
};

inline void check_spec(const ModelSpec& s) {
    if (s.height % 4 != 0 || s.width % 4 != 0 || s.height == 0 || s.width == 0) {
        throw std::invalid_argument("model input must have height and width divisible by 4, got " +
                                    std::to_string(s.height) + "x" + std::to_string(s.width));
    }
    if (s.classes < 2) throw std::invalid_argument("model needs at least 2 classes");
}

/// Range checks on the hyperparameters `v` actually reads.
inline void check_hyperparameters(const ModelSpec& s, Variant v) {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("model hyperparameter out of range: ") + what);
    };
    switch (v) {
        case Variant::caam:
            need(s.caam_splits >= 1, "caam_splits >= 1");
            need(s.caam_kmeans_iters >= 1, "caam_kmeans_iters >= 1");
            break;
        case Variant::causaladv:
            need(s.causal_dim >= 1, "causal_dim >= 1");
            need(s.causaladv_sigma >= 0.0, "causaladv_sigma >= 0");
            break;
        case Variant::dice:
            need(s.dice_q >= 0.0 && s.dice_q <= 1.0, "dice_q in [0, 1]");
            need(s.dice_buffer >= 1, "dice_buffer >= 1");
            break;
        case Variant::cama:
            need(s.cama_latent >= 1 && s.cama_label >= 1 && s.cama_m >= 1, "cama_latent, cama_label, cama_m >= 1");
            need(s.cama_lambda >= 0.0, "cama_lambda >= 0");
            break;
    }
}

class Model {
public:
    explicit Model(ModelSpec spec) : spec_(spec) { check_spec(spec_); }
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    [[nodiscard]] virtual Variant variant() const = 0;
    [[nodiscard]] std::string_view name() const { return to_string(variant()); }

    /// Evaluation-mode class scores [N, classes].
    [[nodiscard]] virtual Tensor logits(const Tensor& x) const = 0;

    /// Evaluation-mode signal taps. `rng` feeds variants whose taps are stochastic.
    [[nodiscard]] virtual CausalTaps taps(const Tensor& x, std::span<const int> labels, Rng& rng) const = 0;

    /// Per-sample tap shapes (c, s).
    [[nodiscard]] virtual std::pair<Shape, Shape> tap_shapes() const = 0;

    /// Hook run before each epoch's batches (partition refresh, reference pre-training).
    virtual void begin_epoch(const Dataset& /*train*/, TrainContext& /*ctx*/) {}

    /// Called after parameters are loaded from a checkpoint.
    virtual void on_restored() {}

    /// One optimisation step; returns the batch loss. `indices` are the
    /// samples' positions in the training set.
    virtual double train_batch(const Tensor& x, std::span<const int> y, std::span<const std::size_t> indices,
                               TrainContext& ctx) = 0;

    [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] nn::ParameterSet& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParameterSet& params() const noexcept { return params_; }

protected:
    /// Backward on `loss` and one step over the trainable parameters.
    double step(const Tensor& loss, TrainContext& ctx) {
        const double v = loss.item();
        backward(loss);
        auto p = params_.trainable();
        optimizer_step(p, ctx.optimizer);
        if (ctx.after_step) ctx.after_step();
        return v;
    }

    ModelSpec spec_;
    nn::ParameterSet params_;
};

/// Adversarial copy of a batch against the model's own logits, with weight
/// gradients switched off during the attack.
inline Tensor adversarial_batch(const Model& m, const Tensor& x, std::span<const int> y, TrainContext& ctx) {
    nn::FreezeGuard frozen(m.params());
    attacks::AttackOptions opt;
    opt.seed = ctx.rng();
    opt.chunk = x.dim(0);
    return attacks::run_attack(m, x, y, ctx.adversary, opt).perturbed;
}

// ---------------------------------------------------------------------------

/// FIFO store of confounder samples with uniform weights 1/K.
class ConfounderBuffer {
public:
    ConfounderBuffer(std::size_t capacity, Shape sample_shape)
        : capacity_(capacity), shape_(std::move(sample_shape)) {
        if (capacity_ == 0) throw std::invalid_argument("ConfounderBuffer: capacity must be positive");
    }

    void push(std::span<const double> sample) {
        if (sample.size() != shape_numel(shape_)) {
            throw std::invalid_argument("ConfounderBuffer: sample has " + std::to_string(sample.size()) +
                                        " values, expected " + std::to_string(shape_numel(shape_)));
        }
        if (items_.size() == capacity_) items_.erase(items_.begin());
        items_.emplace_back(sample.begin(), sample.end());
    }

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
    [[nodiscard]] bool empty() const noexcept { return items_.empty(); }
    [[nodiscard]] const std::vector<std::vector<double>>& items() const noexcept { return items_; }
    [[nodiscard]] const Shape& sample_shape() const noexcept { return shape_; }

    /// Sum over stored samples weighted by P(s) = 1/size.
    [[nodiscard]] std::vector<double> weighted_mean() const {
        if (items_.empty()) throw std::logic_error("ConfounderBuffer: backdoor adjustment needs a non-empty buffer");
        std::vector<double> m(shape_numel(shape_), 0.0);
        for (const auto& it : items_)
            for (std::size_t k = 0; k < m.size(); ++k) m[k] += it[k];
        const double w = 1.0 / static_cast<double>(items_.size());
        for (double& v : m) v *= w;
        return m;
    }

    /// x_c = x + sum_s P(s) s, broadcast over the batch.
    [[nodiscard]] Tensor adjust(const Tensor& x) const {
        const auto m = weighted_mean();
        const std::size_t d = m.size();
        if (x.numel() % d != 0 || x.dim(0) * d != x.numel()) {
            throw std::invalid_argument("ConfounderBuffer::adjust: batch shape " + shape_str(x.shape()) +
                                        " does not match buffer samples " + shape_str(shape_));
        }
        std::vector<double> tiled(x.numel());
        for (std::size_t i = 0; i < x.dim(0); ++i) std::copy(m.begin(), m.end(), tiled.begin() + i * d);
        return ops::add(x, Tensor(x.shape(), std::move(tiled)));
    }

    void clear() { items_.clear(); }

private:
    std::size_t capacity_;
    Shape shape_;
    std::vector<std::vector<double>> items_;
};

// ---------------------------------------------------------------------------

struct Partition {
    std::vector<std::size_t> assignment;  // stratum of each sample
    std::vector<std::size_t> counts;      // samples per stratum
    std::vector<double> weights;          // P(t) = |t| / N
};

/// Lloyd iterations over rows of `features` [n x d] into `splits` strata.
/// Centroids start at `splits` distinct seeded sample picks; ties go to the
/// lowest stratum index and empty strata keep their previous centroid.
inline Partition kmeans_partition(std::span<const double> features, std::size_t n, std::size_t splits,
                                  std::size_t iterations, std::uint64_t seed) {
    if (splits == 0) throw std::invalid_argument("kmeans_partition: need at least one split");
    if (splits > n) {
        throw std::invalid_argument("kmeans_partition: " + std::to_string(splits) + " splits for " +
                                    std::to_string(n) + " samples");
    }
    const std::size_t d = features.size() / n;
    Rng rng(seed);
    auto order = iota_indices(n);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> centroids(splits * d);
    for (std::size_t t = 0; t < splits; ++t)
        std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(order[t] * d), d, centroids.begin() + t * d);

    Partition p;
    p.assignment.assign(n, 0);
    for (std::size_t it = 0; it < std::max<std::size_t>(1, iterations); ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < splits; ++t) {
                double dist = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double e = features[i * d + k] - centroids[t * d + k];
                    dist += e * e;
                }
                if (dist < best) {
                    best = dist;
                    p.assignment[i] = t;
                }
            }
        }
        std::vector<double> sums(splits * d, 0.0);
        std::vector<std::size_t> cnt(splits, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[p.assignment[i]];
            for (std::size_t k = 0; k < d; ++k) sums[p.assignment[i] * d + k] += features[i * d + k];
        }
        for (std::size_t t = 0; t < splits; ++t)
            if (cnt[t] > 0)
                for (std::size_t k = 0; k < d; ++k) centroids[t * d + k] = sums[t * d + k] / static_cast<double>(cnt[t]);
    }
    p.counts.assign(splits, 0);
    for (auto a : p.assignment) ++p.counts[a];
    // P(t) = |t| / N, except that the last non-empty stratum takes 1 minus the
    // running sum of the others, so summing the weights in order gives exactly 1.
    p.weights.assign(splits, 0.0);
    std::size_t last = 0;
    for (std::size_t t = 0; t < splits; ++t)
        if (p.counts[t] > 0) last = t;
    double before = 0.0;
    for (std::size_t t = 0; t < last; ++t) {
        p.weights[t] = static_cast<double>(p.counts[t]) / static_cast<double>(n);
        before += p.weights[t];
    }
    p.weights[last] = 1.0 - before;
    return p;
}

}  // namespace cdnb::models
