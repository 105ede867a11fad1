#pragma once

// Attention-complement split on the backbone feature map: an attention
// head produces z, c keeps sigma(z) of each unit and s the remainder.
// Training reweights the loss over confounder strata found by clustering s.

#include <string>
#include <utility>
#include <vector>

#include "cdnb/models/model.hpp"

namespace cdnb::models {

class CaamLite final : public Model {
public:
    CaamLite(const ModelSpec& spec, std::uint64_t seed) : Model(spec) {
        check_hyperparameters(spec, Variant::caam);
        Rng rng(derive_seed(seed, {"init", "caam"}));
        backbone_ = Backbone::create(params_, "backbone", spec.channels, rng);
        attention_ = nn::Conv2d::create(params_, "attention", 16, 16, 3, 1, rng);
        head_ = nn::Linear::create(params_, "head", head_dim(spec), spec.classes, rng);
    }

    [[nodiscard]] Variant variant() const override { return Variant::caam; }

    struct Split {
        Tensor features;  // x^
        Tensor attention;  // z
        Tensor c;
        Tensor s;
    };

    /// s = x^ - sigma(z) x^ and c = x^ - s, so c + s reproduces x^ bit for bit.
    [[nodiscard]] Split split(const Tensor& x) const {
        Split r;
        r.features = backbone_.features(x);
        r.attention = attention_(r.features);
        const Tensor kept = ops::mul(ops::sigmoid(r.attention), r.features);
        r.s = ops::sub(r.features, kept);
        r.c = ops::sub(r.features, r.s);
        return r;
    }

    /// Linear head over the flattened causal map, so the spatial layout of where
    /// causal units fire reaches the classifier.
    [[nodiscard]] Tensor classify(const Tensor& c) const { return head_(ops::flatten(c)); }

    static std::size_t head_dim(const ModelSpec& s) { return 16 * (s.height / 4) * (s.width / 4); }

    [[nodiscard]] Tensor logits(const Tensor& x) const override { return classify(split(x).c); }

    [[nodiscard]] CausalTaps taps(const Tensor& x, std::span<const int>, Rng&) const override {
        Split p = split(x);
        Tensor z = classify(p.c);
        return {x, p.c, p.s, z};
    }

    [[nodiscard]] std::pair<Shape, Shape> tap_shapes() const override {
        return {Backbone::feature_shape(spec_), Backbone::feature_shape(spec_)};
    }

    void begin_epoch(const Dataset& train, TrainContext& ctx) override {
        if (spec_.caam_refresh == 0 || (ctx.epoch - 1) % spec_.caam_refresh != 0) return;
        NoGradGuard ng;
        const std::size_t d = shape_numel(Backbone::feature_shape(spec_));
        std::vector<double> feats;
        feats.reserve(train.size() * d);
        for (std::size_t s = 0; s < train.size(); s += 256) {
            std::vector<std::size_t> idx;
            for (std::size_t i = s; i < std::min(train.size(), s + 256); ++i) idx.push_back(i);
            const Tensor sf = split(train.images(idx)).s;
            feats.insert(feats.end(), sf.data().begin(), sf.data().end());
        }
        partition_ = kmeans_partition(feats, train.size(), std::min(spec_.caam_splits, train.size()),
                                      spec_.caam_kmeans_iters, ctx.rng());
    }

    /// Per-sample CE weights: P(t) / (batch members of t), renormalised over the strata present.
    [[nodiscard]] std::vector<double> stratum_weights(std::span<const std::size_t> indices) const {
        const std::size_t n = indices.size();
        if (partition_.assignment.empty()) return std::vector<double>(n, 1.0 / static_cast<double>(n));
        std::vector<std::size_t> in_batch(partition_.counts.size(), 0);
        for (auto i : indices) ++in_batch.at(partition_.assignment.at(i));
        double present = 0.0;
        for (std::size_t t = 0; t < in_batch.size(); ++t)
            if (in_batch[t] > 0) present += partition_.weights[t];
        std::vector<double> w(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t t = partition_.assignment[indices[k]];
            w[k] = partition_.weights[t] / (present * static_cast<double>(in_batch[t]));
        }
        return w;
    }

    double train_batch(const Tensor& x, std::span<const int> y, std::span<const std::size_t> indices,
                       TrainContext& ctx) override {
        const auto w = stratum_weights(indices);
        return step(ops::softmax_cross_entropy(logits(x), y, w), ctx);
    }

    [[nodiscard]] const Partition& partition() const noexcept { return partition_; }

private:
    Backbone backbone_;
    nn::Conv2d attention_;
    nn::Linear head_;
    Partition partition_;
};

}  // namespace cdnb::models
