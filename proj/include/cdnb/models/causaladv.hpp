#pragma once

// Orthogonal causal/confounder heads over the flattened backbone output h:
// c = h W_c, and s reads only the part of h orthogonal to the columns of W_c.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cdnb/models/model.hpp"

namespace cdnb::models {

/// Orthonormal basis of span(columns of a), a is [rows, cols] row-major.
/// Modified Gram-Schmidt with one re-orthogonalisation pass; columns whose
/// remainder falls below 1e-10 of their original norm are dropped.
struct OrthoBasis {
    std::vector<double> q;  // [rows, rank]
    std::size_t rows = 0;
    std::size_t rank = 0;
    std::size_t dropped = 0;
};

inline OrthoBasis orthonormal_columns(std::span<const double> a, std::size_t rows, std::size_t cols) {
    std::vector<std::vector<double>> basis;
    OrthoBasis out;
    out.rows = rows;
    for (std::size_t j = 0; j < cols; ++j) {
        std::vector<double> v(rows);
        double n0 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            v[i] = a[i * cols + j];
            n0 += v[i] * v[i];
        }
        n0 = std::sqrt(n0);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                double dot = 0.0;
                for (std::size_t i = 0; i < rows; ++i) dot += b[i] * v[i];
                for (std::size_t i = 0; i < rows; ++i) v[i] -= dot * b[i];
            }
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n0 == 0.0 || n <= 1e-10 * n0) {
            ++out.dropped;
            continue;
        }
        for (double& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    out.rank = basis.size();
    out.q.assign(rows * out.rank, 0.0);
    for (std::size_t k = 0; k < out.rank; ++k)
        for (std::size_t i = 0; i < rows; ++i) out.q[i * out.rank + k] = basis[k][i];
    return out;
}

class CausalAdvLite final : public Model {
public:
    CausalAdvLite(const ModelSpec& spec, std::uint64_t seed) : Model(spec) {
        check_hyperparameters(spec, Variant::causaladv);
        Rng rng(derive_seed(seed, {"init", "causaladv"}));
        backbone_ = Backbone::create(params_, "backbone", spec.channels, rng);
        const std::size_t d = Backbone::feature_dim(spec);
        const double b = std::sqrt(6.0 / static_cast<double>(d));
        wc_ = params_.add("wc", nn::uniform_init(rng, {d, spec.causal_dim}, b));
        ws_raw_ = params_.add("ws_raw", nn::uniform_init(rng, {d, spec.causal_dim}, b));
        head_c_ = nn::Linear::create(params_, "head_c", spec.causal_dim, spec.classes, rng);
        head_s_ = nn::Linear::create(params_, "head_s", spec.causal_dim, spec.classes, rng);
    }

    [[nodiscard]] Variant variant() const override { return Variant::causaladv; }

    /// Basis of W_c's column space, recomputed from the current weights (no gradient).
    [[nodiscard]] OrthoBasis causal_basis() const {
        return orthonormal_columns(wc_.data(), wc_.dim(0), wc_.dim(1));
    }

    struct Heads {
        Tensor h;
        Tensor c;
        Tensor s;  // before noise
    };

    [[nodiscard]] Heads heads(const Tensor& x) const {
        Heads r;
        r.h = backbone_.flat(x);
        r.c = ops::matmul(r.h, wc_);
        const OrthoBasis basis = causal_basis();
        Tensor hp = r.h;
        if (basis.rank > 0) {
            const Tensor q({basis.rows, basis.rank}, basis.q);
            const Tensor qt = transpose(q);
            hp = ops::sub(r.h, ops::matmul(ops::matmul(r.h, q), qt));
        }
        r.s = ops::matmul(hp, ws_raw_);
        return r;
    }

    [[nodiscard]] Tensor logits(const Tensor& x) const override { return head_c_(heads(x).c); }

    [[nodiscard]] CausalTaps taps(const Tensor& x, std::span<const int>, Rng&) const override {
        Heads hd = heads(x);
        Tensor z = head_c_(hd.c);
        return {x, hd.c, hd.s, z};
    }

    [[nodiscard]] std::pair<Shape, Shape> tap_shapes() const override {
        return {{spec_.causal_dim}, {spec_.causal_dim}};
    }

    /// s + N(0, sigma^2) per element; sigma = 0 returns s itself.
    [[nodiscard]] Tensor noisy(const Tensor& s, Rng& rng) const {
        if (spec_.causaladv_sigma == 0.0) return s;
        std::normal_distribution<double> g(0.0, spec_.causaladv_sigma);
        std::vector<double> n(s.numel());
        for (double& v : n) v = g(rng);
        return ops::add(s, Tensor(s.shape(), std::move(n)));
    }

    /// alpha CE(h(c), y) + beta CE(g(s^), y), summed over the clean and adversarial batches.
    [[nodiscard]] Tensor loss(const Tensor& x, const Tensor& x_adv, std::span<const int> y, Rng& rng) const {
        Tensor total = Tensor::scalar(0.0);
        for (const Tensor* batch : {&x, &x_adv}) {
            if (!batch->defined()) continue;
            Heads hd = heads(*batch);
            Tensor lc = ops::softmax_cross_entropy(head_c_(hd.c), y);
            Tensor ls = ops::softmax_cross_entropy(head_s_(noisy(hd.s, rng)), y);
            total = ops::add(total, ops::add(ops::scale(lc, spec_.causaladv_alpha), ops::scale(ls, spec_.causaladv_beta)));
        }
        return total;
    }

    double train_batch(const Tensor& x, std::span<const int> y, std::span<const std::size_t>,
                       TrainContext& ctx) override {
        const Tensor adv = adversarial_batch(*this, x, y, ctx);
        return step(loss(x, adv, y, ctx.rng), ctx);
    }

    /// max over (causal column i, confounder column j) of |<W_c[:,i], W_s[:,j]>| relative to
    /// the column norms, where W_s = (I - QQ^T) W_s~ is the effective confounder map.
    [[nodiscard]] double orthogonality_residual() const {
        const OrthoBasis b = causal_basis();
        const std::size_t d = wc_.dim(0), k = wc_.dim(1), m = ws_raw_.dim(1);
        const auto wc = wc_.data();
        auto ws = effective_ws(b);
        double worst = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double ni = 0.0;
            for (std::size_t r = 0; r < d; ++r) ni += wc[r * k + i] * wc[r * k + i];
            for (std::size_t j = 0; j < m; ++j) {
                double dot = 0.0, nj = 0.0;
                for (std::size_t r = 0; r < d; ++r) {
                    dot += wc[r * k + i] * ws[r * m + j];
                    nj += ws[r * m + j] * ws[r * m + j];
                }
                const double denom = std::sqrt(ni * nj);
                if (denom > 0) worst = std::max(worst, std::abs(dot) / denom);
            }
        }
        return worst;
    }

    /// (I - QQ^T) W_s~ as a [d, causal_dim] row-major matrix.
    [[nodiscard]] std::vector<double> effective_ws(const OrthoBasis& b) const {
        const std::size_t d = ws_raw_.dim(0), m = ws_raw_.dim(1);
        std::vector<double> ws(ws_raw_.data().begin(), ws_raw_.data().end());
        for (std::size_t t = 0; t < b.rank; ++t) {
            for (std::size_t j = 0; j < m; ++j) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += b.q[r * b.rank + t] * ws[r * m + j];
                for (std::size_t r = 0; r < d; ++r) ws[r * m + j] -= dot * b.q[r * b.rank + t];
            }
        }
        return ws;
    }

    [[nodiscard]] Tensor causal_weight() const { return wc_; }
    [[nodiscard]] Tensor confounder_weight_raw() const { return ws_raw_; }

    static Tensor transpose(const Tensor& a) {
        const std::size_t r = a.dim(0), c = a.dim(1);
        std::vector<double> t(r * c);
        const auto v = a.data();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) t[j * r + i] = v[i * c + j];
        return Tensor({c, r}, std::move(t));
    }

private:
    Backbone backbone_;
    Tensor wc_, ws_raw_;
    nn::Linear head_c_, head_s_;
};

}  // namespace cdnb::models
