#pragma once

// White-box evasion attacks over any model exposing `logits(x) const`.
// Every sample is optimised independently, so work is split into chunks
// that may run on separate threads, each on its own tape.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cdnb/attacks/config.hpp"
#include "cdnb/autograd.hpp"
#include "cdnb/random.hpp"

namespace cdnb::attacks {

template <class M>
concept Classifier = requires(const M& m, const Tensor& x) {
    { m.logits(x) } -> std::convertible_to<Tensor>;
};

/// One observed iterate. `clean` and `iterate` hold `count` flat samples.
struct StepEvent {
    std::size_t step;   // 0 is the starting point
    std::size_t first;  // index of the chunk's first sample
    std::size_t count;
    std::span<const double> clean;
    std::span<const double> iterate;
};

struct AttackOptions {
    std::uint64_t seed = 0;
    std::size_t chunk = 64;
    std::size_t threads = 1;
    /// Called for every iterate of every chunk, possibly from worker threads.
    std::function<void(const StepEvent&)> observer;
};

struct AttackResult {
    Tensor perturbed;
    std::vector<bool> success;  // prediction != label on the perturbed input
    std::vector<double> norms;  // ||x~ - x|| under the attack norm
    std::size_t projected = 0;  // CW samples pulled back onto the epsilon ball
    std::size_t backward_passes = 0;

    [[nodiscard]] double accuracy() const {
        if (success.empty()) return 0.0;
        return 1.0 - static_cast<double>(std::count(success.begin(), success.end(), true)) /
                         static_cast<double>(success.size());
    }
};

// ---------------------------------------------------------------------------
// Norm helpers on flat samples.

inline double norm_of(std::span<const double> v, Norm norm) {
    double r = 0.0;
    if (norm == Norm::linf) {
        for (double x : v) r = std::max(r, std::abs(x));
        return r;
    }
    for (double x : v) r += x * x;
    return std::sqrt(r);
}

/// l-inf clamps each coordinate; l2 rescales only when outside the ball.
/// Returns true when `delta` changed.
inline bool project_to_ball(std::span<double> delta, Norm norm, double eps) {
    bool changed = false;
    if (norm == Norm::linf) {
        for (double& d : delta) {
            const double c = std::clamp(d, -eps, eps);
            changed |= c != d;
            d = c;
        }
        return changed;
    }
    const double n = norm_of(delta, Norm::l2);
    if (n > eps) {
        const double s = eps / n;
        for (double& d : delta) d *= s;
        changed = true;
    }
    return changed;
}

inline std::vector<double> project_to_ball(std::vector<double> delta, Norm norm, double eps) {
    project_to_ball(std::span<double>(delta), norm, eps);
    return delta;
}

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// ---------------------------------------------------------------------------
// Core iterations over a chunk of flat samples. `grad_fn(iterate)` returns the
// gradient of the summed per-sample loss to be increased.

using GradFn = std::function<std::vector<double>(std::span<const double> iterate)>;

namespace detail {

inline void clip_unit(std::span<double> v) {
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

inline void notify(const AttackOptions& opt, std::size_t step, std::size_t first, std::size_t count,
                   std::span<const double> clean, std::span<const double> it) {
    if (opt.observer) opt.observer({step, first, count, clean, it});
}

/// Uniform point in the epsilon ball around the origin.
inline void random_start(std::span<double> delta, Norm norm, double eps, Rng& rng) {
    if (norm == Norm::linf) {
        std::uniform_real_distribution<double> u(-eps, eps);
        for (double& d : delta) d = u(rng);
        return;
    }
    std::normal_distribution<double> g;
    for (double& d : delta) d = g(rng);
    const double n = norm_of(delta, Norm::l2);
    const double r = eps * std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng),
                                    1.0 / static_cast<double>(delta.size()));
    for (double& d : delta) d = n > 0 ? d * r / n : 0.0;
}

}  // namespace detail

/// x~ = clip(x + eps * sign(grad), 0, 1) from a single gradient evaluation.
inline std::vector<double> fgsm_iterate(std::span<const double> x, std::size_t count, const GradFn& grad_fn,
                                        const AttackConfig& cfg, const AttackOptions& opt = {},
                                        std::size_t first = 0) {
    std::vector<double> out(x.begin(), x.end());
    detail::notify(opt, 0, first, count, x, out);
    const auto g = grad_fn(x);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += cfg.epsilon * sign(g[k]);
    detail::clip_unit(out);
    detail::notify(opt, 1, first, count, x, out);
    return out;
}

/// Projected gradient ascent. `rngs` holds one stream per sample.
inline std::vector<double> pgd_iterate(std::span<const double> x, std::size_t count, const GradFn& grad_fn,
                                       const AttackConfig& cfg, std::span<Rng> rngs, const AttackOptions& opt = {},
                                       std::size_t first = 0) {
    const std::size_t d = x.size() / count;
    std::vector<double> adv(x.begin(), x.end());
    std::vector<double> delta(d);
    auto sample = [&](std::vector<double>& v, std::size_t i) { return std::span<double>(v.data() + i * d, d); };

    if (cfg.random_init) {
        for (std::size_t i = 0; i < count; ++i) {
            detail::random_start(delta, cfg.norm, cfg.epsilon, rngs[i]);
            auto a = sample(adv, i);
            for (std::size_t k = 0; k < d; ++k) a[k] = x[i * d + k] + delta[k];
        }
        detail::clip_unit(adv);
    }
    detail::notify(opt, 0, first, count, x, adv);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const auto g = grad_fn(adv);
        for (std::size_t i = 0; i < count; ++i) {
            auto a = sample(adv, i);
            const std::span<const double> gi(g.data() + i * d, d);
            if (cfg.norm == Norm::linf) {
                for (std::size_t k = 0; k < d; ++k) a[k] += cfg.step_size * sign(gi[k]);
            } else {
                const double n = norm_of(gi, Norm::l2);
                if (n > 0)
                    for (std::size_t k = 0; k < d; ++k) a[k] += cfg.step_size * gi[k] / n;
            }
            for (std::size_t k = 0; k < d; ++k) delta[k] = a[k] - x[i * d + k];
            project_to_ball(std::span<double>(delta), cfg.norm, cfg.epsilon);
            for (std::size_t k = 0; k < d; ++k) a[k] = std::clamp(x[i * d + k] + delta[k], 0.0, 1.0);
        }
        detail::notify(opt, step, first, count, x, adv);
    }
    return adv;
}

// ---------------------------------------------------------------------------
// Model-facing attacks.

namespace detail {

inline Shape chunk_shape(const Tensor& x, std::size_t count) {
    Shape s = x.shape();
    s[0] = count;
    return s;
}

/// Input gradient of the summed cross-entropy, on the calling thread's active tape.
template <Classifier M>
GradFn ce_gradient(const M& model, const Shape& shape, std::span<const int> labels) {
    return [&model, shape, labels](std::span<const double> it) {
        Tensor xt(shape, std::vector<double>(it.begin(), it.end()));
        xt.set_requires_grad(true);
        const std::vector<double> ones(labels.size(), 1.0);
        Tensor loss = ops::softmax_cross_entropy(model.logits(xt), labels, ones);
        return grad(loss).dense(xt);
    };
}

template <Classifier M>
std::vector<int> predict_chunk(const M& model, const Shape& shape, std::span<const double> values) {
    NoGradGuard ng;
    Tensor z = model.logits(Tensor(shape, std::vector<double>(values.begin(), values.end())));
    const std::size_t n = z.dim(0), k = z.dim(1);
    std::vector<int> out(n);
    const auto zv = z.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = zv.data() + i * k;
        out[i] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

/// Carlini-Wagner l2 in tanh space with Adam; keeps the smallest successful iterate.
template <Classifier M>
std::vector<double> cw_chunk(const M& model, const Shape& shape, std::span<const double> x,
                             std::span<const int> labels, const AttackConfig& cfg, const AttackOptions& opt,
                             std::size_t first) {
    const std::size_t count = labels.size();
    const std::size_t d = x.size() / count;
    std::vector<double> w0(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) w0[k] = std::atanh(std::clamp(2.0 * x[k] - 1.0, -1.0 + 1e-6, 1.0 - 1e-6));
    Tensor w(shape, w0);
    w.set_requires_grad(true);
    auto adam = OptimizerState::adam(cfg.cw_lr);
    std::vector<Tensor> params{w};

    std::vector<double> best(x.begin(), x.end());
    std::vector<double> best_l2(count, std::numeric_limits<double>::infinity());
    const Tensor x_t(shape, std::vector<double>(x.begin(), x.end()));

    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        Tensor adv = ops::scale(ops::add_scalar(ops::tanh(w), 1.0), 0.5);
        Tensor diff = ops::sub(adv, x_t);
        Tensor logits = model.logits(adv);
        const std::size_t k = logits.dim(1);
        const auto z = logits.data();

        // Margin Z_y - max_{i != y} Z_i through a +-1 selection mask.
        std::vector<double> mask(count * k, 0.0);
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = z.data() + i * k;
            const auto y = static_cast<std::size_t>(labels[i]);
            std::size_t j = y == 0 ? 1 : 0;
            for (std::size_t c = 0; c < k; ++c)
                if (c != y && row[c] > row[j]) j = c;
            const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
            const auto a = adv.data().subspan(i * d, d);
            double l2 = 0.0;
            for (std::size_t q = 0; q < d; ++q) l2 += (a[q] - x[i * d + q]) * (a[q] - x[i * d + q]);
            l2 = std::sqrt(l2);
            if (step == 0) l2 = 0.0;  // the start is x itself up to atanh clamping
            if (arg != y && l2 < best_l2[i]) {
                best_l2[i] = l2;
                if (step == 0) std::copy(x.begin() + i * d, x.begin() + (i + 1) * d, best.begin() + i * d);
                else std::copy(a.begin(), a.end(), best.begin() + i * d);
            }
            if (row[y] - row[j] > -cfg.cw_kappa) {
                mask[i * k + y] = 1.0;
                mask[i * k + j] = -1.0;
            }
        }
        notify(opt, step, first, count, x, step == 0 ? x : adv.data());
        if (step == cfg.steps) break;

        Tensor margin = ops::sum(ops::mul(logits, Tensor({count, k}, std::move(mask))));
        Tensor loss = ops::add(ops::sum(ops::mul(diff, diff)), ops::scale(margin, cfg.cw_c));
        const Gradients g = grad(loss);
        const std::vector<std::vector<double>> grads{g.dense(w)};
        adam_step(params, grads, adam);
    }
    return best;
}

template <class Work>
void run_chunks(std::size_t n, const AttackOptions& opt, Work&& work) {
    const std::size_t chunk = std::max<std::size_t>(1, opt.chunk);
    const std::size_t chunks = (n + chunk - 1) / chunk;
    const std::size_t threads = std::clamp<std::size_t>(opt.threads, 1, std::max<std::size_t>(1, chunks));
    if (threads == 1) {
        for (std::size_t c = 0; c < chunks; ++c) work(c * chunk, std::min(chunk, n - c * chunk));
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t c = t; c < chunks; c += threads) work(c * chunk, std::min(chunk, n - c * chunk));
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Runs `cfg` against `model` on images x [N, ...] with labels y.
template <Classifier M>
AttackResult run_attack(const M& model, const Tensor& x, std::span<const int> y, const AttackConfig& cfg,
                        const AttackOptions& opt = {}) {
    cfg.validate();
    const std::size_t n = x.dim(0);
    if (y.size() != n) {
        throw std::invalid_argument("attack '" + cfg.name + "': " + std::to_string(n) + " inputs but " +
                                    std::to_string(y.size()) + " labels");
    }
    const std::size_t d = n == 0 ? 0 : x.numel() / n;
    const auto xv = x.data();
    for (double v : xv) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("attack '" + cfg.name + "': inputs must lie in [0, 1]");
    }
    std::vector<double> out(x.numel());
    AttackResult res;
    res.success.assign(n, false);
    res.norms.assign(n, 0.0);
    std::mutex stats;

    detail::run_chunks(n, opt, [&](std::size_t first, std::size_t count) {
        Tape tape;
        TapeScope scope(tape);
        const Shape shape = detail::chunk_shape(x, count);
        const std::span<const double> xs = xv.subspan(first * d, count * d);
        const std::span<const int> ys = y.subspan(first, count);
        std::vector<double> adv;
        std::size_t projected = 0;
        switch (cfg.family) {
            case Family::fgsm:
                adv = fgsm_iterate(xs, count, detail::ce_gradient(model, shape, ys), cfg, opt, first);
                break;
            case Family::pgd: {
                std::vector<Rng> rngs;
                rngs.reserve(count);
                for (std::size_t i = 0; i < count; ++i)
                    rngs.emplace_back(derive_seed(opt.seed, {"attack", cfg.name}, first + i));
                adv = pgd_iterate(xs, count, detail::ce_gradient(model, shape, ys), cfg, rngs, opt, first);
                break;
            }
            case Family::cw: {
                adv = detail::cw_chunk(model, shape, xs, ys, cfg, opt, first);
                std::vector<double> delta(d);
                for (std::size_t i = 0; i < count; ++i) {
                    for (std::size_t k = 0; k < d; ++k) delta[k] = adv[i * d + k] - xs[i * d + k];
                    if (project_to_ball(std::span<double>(delta), Norm::l2, cfg.epsilon)) ++projected;
                    for (std::size_t k = 0; k < d; ++k)
                        adv[i * d + k] = std::clamp(xs[i * d + k] + delta[k], 0.0, 1.0);
                }
                break;
            }
        }
        const auto pred = detail::predict_chunk(model, shape, adv);
        std::vector<double> delta(d);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t k = 0; k < d; ++k) delta[k] = adv[i * d + k] - xs[i * d + k];
            res.norms[first + i] = norm_of(delta, cfg.norm);
            res.success[first + i] = pred[i] != ys[i];
        }
        std::copy(adv.begin(), adv.end(), out.begin() + static_cast<std::ptrdiff_t>(first * d));
        std::lock_guard lock(stats);
        res.projected += projected;
        res.backward_passes += tape.backward_passes();
    });
    res.perturbed = Tensor(x.shape(), std::move(out));
    return res;
}

template <Classifier M>
AttackResult fgsm(const M& model, const Tensor& x, std::span<const int> y, double eps, const AttackOptions& opt = {}) {
    return run_attack(model, x, y, fgsm_config("fgsm", eps), opt);
}

/// Argmax predictions, evaluated in chunks without recording.
template <Classifier M>
std::vector<int> predict(const M& model, const Tensor& x, std::size_t chunk = 256) {
    const std::size_t n = x.dim(0);
    const std::size_t d = n == 0 ? 0 : x.numel() / n;
    std::vector<int> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; s += chunk) {
        const std::size_t m = std::min(chunk, n - s);
        const auto p = detail::predict_chunk(model, detail::chunk_shape(x, m), x.data().subspan(s * d, m * d));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <Classifier M>
double accuracy(const M& model, const Tensor& x, std::span<const int> y, std::size_t chunk = 256) {
    const auto p = predict(model, x, chunk);
    if (p.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == y[i];
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

}  // namespace cdnb::attacks
