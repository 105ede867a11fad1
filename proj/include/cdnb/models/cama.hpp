#pragma once

// Generative classifier: a label branch h_y, a style latent S inferred by
// q(S | x, y, m) and a decoder p(x | y, S, m). Class scores are the ELBO of
// the input under each candidate label. A manipulation code m, null on
// clean data, is inferred from horizontally shifted copies during training.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cdnb/models/model.hpp"

namespace cdnb::models {

/// Shifts every image right by `k` columns, filling with zeros.
inline Tensor shift_right(const Tensor& x, std::size_t k) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out(x.numel(), 0.0);
    const auto v = x.data();
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = k; j < w; ++j) out[(p * h + i) * w + j] = v[(p * h + i) * w + j - k];
    return Tensor(x.shape(), std::move(out));
}

/// KL(N(mu, exp(logvar)) || N(0, I)) per row, [N, 1].
inline Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    Tensor t = ops::sub(ops::add(ops::mul(mu, mu), ops::exp(logvar)), logvar);
    return ops::scale(nn::row_sum(ops::add_scalar(t, -1.0)), 0.5);
}

/// [n*k, n] (or [n*k, k]) 0/1 matrix selecting row n (or k) for the row n*k+j.
inline Tensor repeat_selector(std::size_t n, std::size_t k, bool by_sample) {
    std::vector<double> v(n * k * (by_sample ? n : k), 0.0);
    const std::size_t cols = by_sample ? n : k;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) v[(i * k + j) * cols + (by_sample ? i : j)] = 1.0;
    return Tensor({n * k, cols}, std::move(v));
}

class CamaLite final : public Model {
public:
    CamaLite(const ModelSpec& spec, std::uint64_t seed) : Model(spec) {
        check_hyperparameters(spec, Variant::cama);
        Rng rng(derive_seed(seed, {"init", "cama"}));
        const std::size_t d = Backbone::feature_dim(spec), L = spec.cama_latent, H = spec.cama_label,
                          M = spec.cama_m, P = spec.pixels();
        encoder_ = Backbone::create(params_, "encoder", spec.channels, rng);
        label_ = nn::Linear::create(params_, "label", spec.classes, H, rng);
        mcode_ = nn::Linear::create(params_, "mcode", d, M, rng);
        q_mu_ = nn::Linear::create(params_, "q.mu", d, L, rng);
        q_lv_ = nn::Linear::create(params_, "q.logvar", d, L, rng);
        q_mu_h_ = weight("q.mu.h", H, L, rng);
        q_mu_m_ = weight("q.mu.m", M, L, rng);
        q_lv_h_ = weight("q.logvar.h", H, L, rng);
        q_lv_m_ = weight("q.logvar.m", M, L, rng);
        dec1_ = nn::Linear::create(params_, "dec1", L, 64, rng);
        dec1_h_ = weight("dec1.h", H, 64, rng);
        dec1_m_ = weight("dec1.m", M, 64, rng);
        dec2_ = nn::Linear::create(params_, "dec2", 64, 128, rng);
        dec3_ = nn::Linear::create(params_, "dec3", 128, P, rng);
    }

    [[nodiscard]] Variant variant() const override { return Variant::cama; }

    struct Posterior {
        Tensor h;       // label state [N, H]
        Tensor mu;      // [N, L]
        Tensor logvar;  // [N, L]
    };

    /// h_y for labels given as a one-hot or soft [N, K] matrix.
    [[nodiscard]] Tensor label_state(const Tensor& onehot) const { return ops::relu(label_(onehot)); }

    /// m = tanh(W_m e(x)); callers pass a null (zero) code for clean data.
    [[nodiscard]] Tensor manipulation_code(const Tensor& x) const { return ops::tanh(mcode_(encoder_.flat(x))); }

    [[nodiscard]] Posterior posterior(const Tensor& x, std::span<const int> y, const Tensor* m) const {
        const Tensor e = encoder_.flat(x);
        Posterior p;
        p.h = label_state(nn::one_hot(y, spec_.classes));
        Tensor mu = ops::add(q_mu_(e), ops::matmul(p.h, q_mu_h_));
        Tensor lv = ops::add(q_lv_(e), ops::matmul(p.h, q_lv_h_));
        if (m) {
            mu = ops::add(mu, ops::matmul(*m, q_mu_m_));
            lv = ops::add(lv, ops::matmul(*m, q_lv_m_));
        }
        p.mu = mu;
        p.logvar = bounded_logvar(lv);
        return p;
    }

    [[nodiscard]] Tensor decode(const Tensor& h, const Tensor& s, const Tensor* m) const {
        Tensor a = ops::add(dec1_(s), ops::matmul(h, dec1_h_));
        if (m) a = ops::add(a, ops::matmul(*m, dec1_m_));
        return ops::sigmoid(dec3_(ops::relu(dec2_(ops::relu(a)))));
    }

    /// Per-sample ELBO [N, 1] = -lambda * SSE(x, decode) - KL, with s sampled by
    /// reparameterisation when `rng` is given, else s = mu.
    [[nodiscard]] Tensor elbo(const Tensor& x, std::span<const int> y, const Tensor* m, Rng* rng) const {
        const Posterior p = posterior(x, y, m);
        const Tensor s = rng ? sample(p, *rng) : p.mu;
        const Tensor recon = decode(p.h, s, m);
        const Tensor diff = ops::sub(ops::flatten(x), recon);
        const Tensor sse = nn::row_sum(ops::mul(diff, diff));
        return ops::neg(ops::add(ops::scale(sse, spec_.cama_lambda), gaussian_kl(p.mu, p.logvar)));
    }

    /// ELBO of x under every label with s = mu and a null code, as [N, K].
    [[nodiscard]] Tensor logits(const Tensor& x) const override {
        const std::size_t n = x.dim(0), K = spec_.classes;
        const Tensor e = encoder_.flat(x);
        const Tensor h_all = label_state(identity(K));
        const Tensor rn = repeat_selector(n, K, true), rk = repeat_selector(n, K, false);
        const Tensor h = ops::matmul(rk, h_all);
        const Tensor mu = ops::add(ops::matmul(rn, q_mu_(e)), ops::matmul(rk, ops::matmul(h_all, q_mu_h_)));
        const Tensor lv =
            bounded_logvar(ops::add(ops::matmul(rn, q_lv_(e)), ops::matmul(rk, ops::matmul(h_all, q_lv_h_))));
        const Tensor recon = decode(h, mu, nullptr);
        const Tensor diff = ops::sub(ops::matmul(rn, ops::flatten(x)), recon);
        const Tensor sse = nn::row_sum(ops::mul(diff, diff));
        const Tensor score = ops::neg(ops::add(ops::scale(sse, spec_.cama_lambda), gaussian_kl(mu, lv)));
        return ops::reshape(score, {n, K});
    }

    /// c = h of the predicted label; s = one reparameterised draw from q(S | x, y^, null).
    [[nodiscard]] CausalTaps taps(const Tensor& x, std::span<const int>, Rng& rng) const override {
        const Tensor z = logits(x);
        const auto pred = nn::argmax_rows(z);
        const Posterior p = posterior(x, pred, nullptr);
        return {x, p.h, sample(p, rng), z};
    }

    [[nodiscard]] std::pair<Shape, Shape> tap_shapes() const override {
        return {{spec_.cama_label}, {spec_.cama_latent}};
    }

    [[nodiscard]] std::size_t shift_pixels() const {
        return static_cast<std::size_t>(std::llround(spec_.cama_shift * static_cast<double>(spec_.width)));
    }

    /// CE(logits) - (ELBO(x, y, null) + ELBO(shift(x), y, m)) / pixels, batch-averaged.
    [[nodiscard]] Tensor loss(const Tensor& x, std::span<const int> y, Rng& rng) const {
        const double n = static_cast<double>(x.dim(0)), P = static_cast<double>(spec_.pixels());
        const Tensor ce = ops::softmax_cross_entropy(logits(x), y);
        const Tensor xm = shift_right(x, shift_pixels());
        const Tensor m = manipulation_code(xm);
        const Tensor e_clean = ops::sum(elbo(x, y, nullptr, &rng));
        const Tensor e_manip = ops::sum(elbo(xm, y, &m, &rng));
        return ops::sub(ce, ops::scale(ops::add(e_clean, e_manip), 1.0 / (n * P)));
    }

    double train_batch(const Tensor& x, std::span<const int> y, std::span<const std::size_t>,
                       TrainContext& ctx) override {
        return step(loss(x, y, ctx.rng), ctx);
    }

    /// Mean clean ELBO per sample with s = mu.
    [[nodiscard]] double mean_elbo(const Tensor& x, std::span<const int> y) const {
        NoGradGuard ng;
        const Tensor e = elbo(x, y, nullptr, nullptr);
        double s = 0.0;
        for (double v : e.data()) s += v;
        return s / static_cast<double>(x.dim(0));
    }

private:
    Tensor weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        return params_.add(name, nn::uniform_init(rng, {in, out}, std::sqrt(6.0 / static_cast<double>(in))));
    }

    static Tensor identity(std::size_t k) {
        std::vector<double> v(k * k, 0.0);
        for (std::size_t i = 0; i < k; ++i) v[i * k + i] = 1.0;
        return Tensor({k, k}, std::move(v));
    }

    /// logvar kept in [-4, 4] so the variance stays well conditioned.
    static Tensor bounded_logvar(const Tensor& raw) { return ops::scale(ops::tanh(ops::scale(raw, 0.25)), 4.0); }

    static Tensor sample(const Posterior& p, Rng& rng) {
        std::normal_distribution<double> g;
        std::vector<double> eps(p.mu.numel());
        for (double& v : eps) v = g(rng);
        const Tensor sd = ops::exp(ops::scale(p.logvar, 0.5));
        return ops::add(p.mu, ops::mul(sd, Tensor(p.mu.shape(), std::move(eps))));
    }

    Backbone encoder_;
    nn::Linear label_, mcode_, q_mu_, q_lv_, dec1_, dec2_, dec3_;
    Tensor q_mu_h_, q_mu_m_, q_lv_h_, q_lv_m_, dec1_h_, dec1_m_;
};

}  // namespace cdnb::models
