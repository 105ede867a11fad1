#pragma once

// Backdoor adjustment in pixel space. A reference classifier's input
// saliency picks the pixels to erase, giving confounder samples s_x; a
// FIFO buffer of them is averaged and added to every input before the
// classifier sees it.

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cdnb/models/model.hpp"

namespace cdnb::models {

/// Pixels zeroed across all channels, one flag per (i, j).
struct PixelMask {
    std::size_t height = 0, width = 0;
    std::vector<bool> masked;
    [[nodiscard]] std::size_t count() const {
        return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
    }
};

/// Number of pixels a fraction q of an H x W image covers.
inline std::size_t mask_cardinality(double q, std::size_t h, std::size_t w) {
    return static_cast<std::size_t>(std::llround(std::clamp(q, 0.0, 1.0) * static_cast<double>(h * w)));
}

/// Marks the top round(q HW) pixels by saliency; equal saliencies are taken
/// in increasing pixel index order.
inline PixelMask top_fraction_mask(std::span<const double> saliency, std::size_t h, std::size_t w, double q) {
    PixelMask m{h, w, std::vector<bool>(h * w, false)};
    std::vector<std::size_t> order(h * w);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
    const std::size_t k = mask_cardinality(q, h, w);
    for (std::size_t i = 0; i < k; ++i) m.masked[order[i]] = true;
    return m;
}

/// max over channels of |g| at each pixel, for one [C, H, W] sample.
inline std::vector<double> pixel_saliency(std::span<const double> grad, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<double> s(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p) s[p] = std::max(s[p], std::abs(grad[ch * h * w + p]));
    return s;
}

struct MaskedBatch {
    Tensor masked;  // s_x
    std::vector<PixelMask> masks;
};

/// s_x for a batch given a differentiable reference logits function.
template <class RefLogits>
MaskedBatch saliency_mask(const Tensor& x, std::span<const int> y, const RefLogits& ref, double q) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> g;
    {
        EnableGradGuard eg;
        Tape tape;
        TapeScope scope(tape);
        Tensor xt(x.shape(), x.values(), true);
        const std::vector<double> ones(n, 1.0);
        g = grad(ops::softmax_cross_entropy(ref(xt), y, ones)).dense(xt);
    }
    MaskedBatch out;
    std::vector<double> v = x.values();
    const std::size_t d = c * h * w;
    for (std::size_t i = 0; i < n; ++i) {
        const auto sal = pixel_saliency(std::span<const double>(g).subspan(i * d, d), c, h, w);
        PixelMask m = top_fraction_mask(sal, h, w, q);
        for (std::size_t p = 0; p < h * w; ++p)
            if (m.masked[p])
                for (std::size_t ch = 0; ch < c; ++ch) v[i * d + ch * h * w + p] = 0.0;
        out.masks.push_back(std::move(m));
    }
    out.masked = Tensor(x.shape(), std::move(v));
    return out;
}

class DiceLite final : public Model {
public:
    DiceLite(const ModelSpec& spec, std::uint64_t seed)
        : Model(spec) {
        check_hyperparameters(spec, Variant::dice);
        Rng rng(derive_seed(seed, {"init", "dice"}));
        backbone_ = Backbone::create(params_, "backbone", spec.channels, rng);
        head_ = nn::Linear::create(params_, "head", Backbone::feature_dim(spec), spec.classes, rng);
        ref_backbone_ = Backbone::create(ref_params_, "ref.backbone", spec.channels, rng);
        ref_head_ = nn::Linear::create(ref_params_, "ref.head", Backbone::feature_dim(spec), spec.classes, rng);
        // The reference net is persisted with the model but never trained by the main optimiser.
        for (const auto& e : ref_params_.entries()) params_.add(e.name, e.tensor, false);
        buffer_param_ = params_.add("buffer", Tensor::zeros(buffer_shape()), false);
        buffer_size_ = params_.add("buffer.size", Tensor::zeros({1}), false);
    }

    [[nodiscard]] Variant variant() const override { return Variant::dice; }

    [[nodiscard]] Tensor ref_logits(const Tensor& x) const { return ref_head_(ref_backbone_.flat(x)); }

    [[nodiscard]] MaskedBatch confounder_samples(const Tensor& x, std::span<const int> y) const {
        return saliency_mask(x, y, [this](const Tensor& t) { return ref_logits(t); }, spec_.dice_q);
    }

    [[nodiscard]] Tensor logits(const Tensor& x) const override {
        return head_(backbone_.flat(buffer().adjust(x)));
    }

    [[nodiscard]] CausalTaps taps(const Tensor& x, std::span<const int> y, Rng&) const override {
        const Tensor xc = buffer().adjust(x);
        const Tensor c = backbone_.flat(xc);
        const Tensor s = backbone_.flat(confounder_samples(x, y).masked);
        return {x, c, s, head_(c)};
    }

    [[nodiscard]] std::pair<Shape, Shape> tap_shapes() const override {
        const std::size_t d = Backbone::feature_dim(spec_);
        return {{d}, {d}};
    }

    /// Epoch 1 pre-trains the reference net on clean data and seeds the buffer.
    void begin_epoch(const Dataset& train, TrainContext& ctx) override {
        if (ctx.epoch != 1 || ref_trained_) return;
        auto ref = ref_params_.trainable();
        for (auto& t : ref) t.set_requires_grad(true);
        auto opt = OptimizerState::adam(1e-3);
        auto order = iota_indices(train.size());
        for (std::size_t e = 0; e < spec_.dice_ref_epochs; ++e) {
            std::shuffle(order.begin(), order.end(), ctx.rng);
            for (std::size_t s = 0; s < order.size(); s += 64) {
                std::span<const std::size_t> idx(order.data() + s, std::min<std::size_t>(64, order.size() - s));
                const auto y = train.labels_at(idx);
                backward(ops::softmax_cross_entropy(ref_logits(train.images(idx)), y));
                optimizer_step(ref, opt);
            }
        }
        for (auto& t : ref) t.set_requires_grad(false);
        ref_trained_ = true;

        std::shuffle(order.begin(), order.end(), ctx.rng);
        std::span<const std::size_t> first(order.data(), std::min(spec_.dice_buffer, order.size()));
        const auto y = train.labels_at(first);
        push_samples(confounder_samples(train.images(first), y).masked, first.size());
    }

    double train_batch(const Tensor& x, std::span<const int> y, std::span<const std::size_t>,
                       TrainContext& ctx) override {
        const Tensor adv = adversarial_batch(*this, x, y, ctx);
        const Tensor loss = ops::add(ops::softmax_cross_entropy(logits(x), y), ops::softmax_cross_entropy(logits(adv), y));
        const double v = step(loss, ctx);

        // Refresh the buffer with a seeded pick of this batch's confounder samples.
        const std::size_t n = x.dim(0), k = std::min(spec_.dice_push, n);
        std::vector<std::size_t> pick(n);
        std::iota(pick.begin(), pick.end(), 0);
        std::shuffle(pick.begin(), pick.end(), ctx.rng);
        pick.resize(k);
        std::sort(pick.begin(), pick.end());
        const std::size_t d = spec_.pixels();
        std::vector<double> sub;
        std::vector<int> ys;
        for (auto i : pick) {
            sub.insert(sub.end(), x.data().begin() + i * d, x.data().begin() + (i + 1) * d);
            ys.push_back(y[i]);
        }
        Shape sh = x.shape();
        sh[0] = k;
        push_samples(confounder_samples(Tensor(sh, std::move(sub)), ys).masked, k);
        return v;
    }

    /// The buffer rebuilt from the persisted parameter tensor.
    [[nodiscard]] ConfounderBuffer buffer() const {
        ConfounderBuffer b(spec_.dice_buffer, spec_.input_shape());
        const auto size = static_cast<std::size_t>(buffer_size_.data()[0]);
        const std::size_t d = spec_.pixels();
        for (std::size_t i = 0; i < size; ++i) b.push(buffer_param_.data().subspan(i * d, d));
        return b;
    }

    void push_samples(const Tensor& samples, std::size_t count) {
        ConfounderBuffer b = buffer();
        const std::size_t d = spec_.pixels();
        for (std::size_t i = 0; i < count; ++i) b.push(samples.data().subspan(i * d, d));
        store(b);
    }

    void store(const ConfounderBuffer& b) {
        auto dst = buffer_param_.mutable_data();
        std::fill(dst.begin(), dst.end(), 0.0);
        const std::size_t d = spec_.pixels();
        for (std::size_t i = 0; i < b.size(); ++i) std::copy(b.items()[i].begin(), b.items()[i].end(), dst.begin() + i * d);
        buffer_size_.mutable_data()[0] = static_cast<double>(b.size());
    }

    void on_restored() override { ref_trained_ = true; }

private:
    [[nodiscard]] Shape buffer_shape() const {
        Shape s{spec_.dice_buffer};
        for (auto v : spec_.input_shape()) s.push_back(v);
        return s;
    }

    nn::ParameterSet ref_params_;
    Backbone backbone_, ref_backbone_;
    nn::Linear head_, ref_head_;
    Tensor buffer_param_, buffer_size_;
    bool ref_trained_ = false;
};

}  // namespace cdnb::models
