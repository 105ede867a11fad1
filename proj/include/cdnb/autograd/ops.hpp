#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cdnb/autograd/tape.hpp"
#include "cdnb/autograd/tensor.hpp"

namespace cdnb::ops {

namespace detail {

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, std::string_view why) {
    throw std::invalid_argument(std::string(op) + ": invalid shape " + shape_str(a) + " (" +
                                std::string(why) + ")");
}

inline void check_finite(std::string_view op, std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::domain_error(std::string(op) + ": non-finite result");
        }
    }
}

/// Builds the output tensor and, when any input tracks gradients, records it.
inline Tensor emit(std::string_view op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    check_finite(op, data);
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool track = false;
    for (const Tensor* t : inputs) track = track || t->requires_grad();
    if (!track) return out;
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<cdnb::detail::TensorImpl>> impls;
    impls.reserve(inputs.size());
    for (const Tensor* t : inputs) impls.push_back(t->impl());
    active_tape().record(op, std::move(impls), out.impl(), std::move(fn));
    return out;
}

enum class Bin { add, sub, mul };

inline Tensor binary(std::string_view op, Bin kind, const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (a.shape() != b.shape() && !a_scalar && !b_scalar) shape_error(op, a.shape(), b.shape());
    const Shape& out_shape = (a.shape() == b.shape() || b_scalar) ? a.shape() : b.shape();
    const std::size_t n = shape_numel(out_shape);
    const auto av = a.data();
    const auto bv = b.data();
    const std::size_t sa = a.numel() == n ? 1 : 0;
    const std::size_t sb = b.numel() == n ? 1 : 0;
    std::vector<double> out(n);
    switch (kind) {
        case Bin::add:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] + bv[i * sb];
            break;
        case Bin::sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] - bv[i * sb];
            break;
        case Bin::mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] * bv[i * sb];
            break;
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return emit(op, out_shape, std::move(out), {&a, &b},
                [ai, bi, kind, sa, sb, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                    if (auto* ga = gi[0]) {
                        for (std::size_t i = 0; i < n; ++i) {
                            const double d = kind == Bin::mul ? g[i] * bi->data[i * sb] : g[i];
                            (*ga)[i * sa] += d;
                        }
                    }
                    if (auto* gb = gi[1]) {
                        for (std::size_t i = 0; i < n; ++i) {
                            double d = g[i];
                            if (kind == Bin::sub) d = -d;
                            if (kind == Bin::mul) d *= ai->data[i * sa];
                            (*gb)[i * sb] += d;
                        }
                    }
                });
}

template <class F, class DF>
Tensor unary(std::string_view op, const Tensor& x, F f, DF df_from_in_out) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    std::vector<double> local;
    if (grad_enabled() && x.requires_grad()) {
        local.resize(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) local[i] = df_from_in_out(xv[i], out[i]);
    }
    return emit(op, x.shape(), std::move(out), {&x},
                [local = std::move(local)](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                    auto& gx = *gi[0];
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * local[i];
                });
}

inline double stable_sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace detail

/// Elementwise sum. Shapes must match, or one operand must hold a single element.
inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary("add", detail::Bin::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary("sub", detail::Bin::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary("mul", detail::Bin::mul, a, b); }

inline Tensor scale(const Tensor& x, double s) { return mul(x, Tensor::scalar(s)); }
inline Tensor add_scalar(const Tensor& x, double s) { return add(x, Tensor::scalar(s)); }
inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

/// [m, k] x [k, n] -> [m, n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        detail::shape_error("matmul", a.shape(), b.shape());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            if (s == 0.0) continue;
            const double* brow = bv + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
        }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return detail::emit("matmul", {m, n}, std::move(out), {&a, &b},
                        [ai, bi, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            if (auto* ga = gi[0]) {
                                // dA = G * B^T
                                const double* bv = bi->data.data();
                                for (std::size_t i = 0; i < m; ++i) {
                                    const double* grow = g.data() + i * n;
                                    for (std::size_t p = 0; p < k; ++p) {
                                        const double* brow = bv + p * n;
                                        double s = 0.0;
                                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                        (*ga)[i * k + p] += s;
                                    }
                                }
                            }
                            if (auto* gb = gi[1]) {
                                // dB = A^T * G
                                const double* av = ai->data.data();
                                for (std::size_t i = 0; i < m; ++i) {
                                    const double* grow = g.data() + i * n;
                                    for (std::size_t p = 0; p < k; ++p) {
                                        const double s = av[i * k + p];
                                        if (s == 0.0) continue;
                                        double* dst = gb->data() + p * n;
                                        for (std::size_t j = 0; j < n; ++j) dst[j] += s * grow[j];
                                    }
                                }
                            }
                        });
}

/// Stride-1 convolution with zero padding.
/// input [N, C, H, W], kernel [O, C, K, K] -> [N, O, H + 2p - K + 1, W + 2p - K + 1].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t pad = 0) {
    if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1) ||
        kernel.dim(2) != kernel.dim(3)) {
        detail::shape_error("conv2d", input.shape(), kernel.shape());
    }
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t O = kernel.dim(0), K = kernel.dim(2);
    if (H + 2 * pad < K || W + 2 * pad < K) detail::shape_error("conv2d", input.shape(), kernel.shape());
    const std::size_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
    const long P = static_cast<long>(pad);

    // Output column range [lo, hi) for which input column oj + kj - pad lies inside [0, W).
    auto col_range = [=](std::size_t kj, std::size_t& lo, std::size_t& hi) {
        const long shift = static_cast<long>(kj) - P;
        lo = static_cast<std::size_t>(std::max<long>(0, -shift));
        hi = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(W) - shift, 0, static_cast<long>(OW)));
    };

    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    std::vector<double> out(N * O * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            double* oplane = out.data() + (n * O + o) * OH * OW;
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = in + (n * C + c) * H * W;
                const double* kp = ker + (o * C + c) * K * K;
                for (std::size_t ki = 0; ki < K; ++ki) {
                    for (std::size_t kj = 0; kj < K; ++kj) {
                        const double w = kp[ki * K + kj];
                        std::size_t lo, hi;
                        col_range(kj, lo, hi);
                        const long cshift = static_cast<long>(kj) - P;
                        for (std::size_t oi = 0; oi < OH; ++oi) {
                            const long ii = static_cast<long>(oi + ki) - P;
                            if (ii < 0 || ii >= static_cast<long>(H)) continue;
                            const double* irow = iplane + ii * static_cast<long>(W) + cshift;
                            double* orow = oplane + oi * OW;
                            for (std::size_t oj = lo; oj < hi; ++oj) orow[oj] += w * irow[oj];
                        }
                    }
                }
            }
        }
    }
    auto ii_ = input.impl();
    auto ki_ = kernel.impl();
    return detail::emit(
        "conv2d", {N, O, OH, OW}, std::move(out), {&input, &kernel},
        [=](std::span<const double> g, std::span<std::vector<double>* const> gi) {
            const double* in = ii_->data.data();
            const double* ker = ki_->data.data();
            auto* gin = gi[0];
            auto* gker = gi[1];
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t o = 0; o < O; ++o) {
                    const double* gplane = g.data() + (n * O + o) * OH * OW;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* iplane = in + (n * C + c) * H * W;
                        double* giplane = gin ? gin->data() + (n * C + c) * H * W : nullptr;
                        const double* kp = ker + (o * C + c) * K * K;
                        double* gkp = gker ? gker->data() + (o * C + c) * K * K : nullptr;
                        for (std::size_t ki = 0; ki < K; ++ki) {
                            for (std::size_t kj = 0; kj < K; ++kj) {
                                std::size_t lo, hi;
                                col_range(kj, lo, hi);
                                const long cshift = static_cast<long>(kj) - P;
                                const double w = kp[ki * K + kj];
                                double acc = 0.0;
                                for (std::size_t oi = 0; oi < OH; ++oi) {
                                    const long row = static_cast<long>(oi + ki) - P;
                                    if (row < 0 || row >= static_cast<long>(H)) continue;
                                    const double* grow = gplane + oi * OW;
                                    const long base = row * static_cast<long>(W) + cshift;
                                    if (gkp) {
                                        const double* irow = iplane + base;
                                        for (std::size_t oj = lo; oj < hi; ++oj) acc += grow[oj] * irow[oj];
                                    }
                                    if (giplane) {
                                        double* girow = giplane + base;
                                        for (std::size_t oj = lo; oj < hi; ++oj) girow[oj] += w * grow[oj];
                                    }
                                }
                                if (gkp) gkp[ki * K + kj] += acc;
                            }
                        }
                    }
                }
            }
        });
}

/// Non-overlapping mean pool with a square window. [N, C, H, W] -> [N, C, H/k, W/k].
inline Tensor avg_pool2d(const Tensor& x, std::size_t k = 2) {
    if (x.rank() != 4 || k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
        detail::shape_error("avg_pool2d", x.shape(), "spatial dims must be divisible by the window");
    }
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / k, OW = W / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    const double* xv = x.data().data();
    std::vector<double> out(N * C * OH * OW, 0.0);
    for (std::size_t p = 0; p < N * C; ++p) {
        const double* ip = xv + p * H * W;
        double* op = out.data() + p * OH * OW;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) op[(i / k) * OW + j / k] += ip[i * W + j] * inv;
    }
    return detail::emit("avg_pool2d", {N, C, OH, OW}, std::move(out), {&x},
                        [=](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            auto& gx = *gi[0];
                            for (std::size_t p = 0; p < N * C; ++p) {
                                const double* gp = g.data() + p * OH * OW;
                                double* dst = gx.data() + p * H * W;
                                for (std::size_t i = 0; i < H; ++i)
                                    for (std::size_t j = 0; j < W; ++j) dst[i * W + j] += gp[(i / k) * OW + j / k] * inv;
                            }
                        });
}

/// Adds bias[c] to every element whose axis-1 index is c. x is [N, C, ...], bias is [C].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        detail::shape_error("add_bias", x.shape(), bias.shape());
    }
    const std::size_t N = x.dim(0), C = x.dim(1);
    const std::size_t inner = x.numel() / (N * C);
    const double* xv = x.data().data();
    const double* bv = bias.data().data();
    std::vector<double> out(x.numel());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t r = 0; r < inner; ++r) {
                const std::size_t idx = (n * C + c) * inner + r;
                out[idx] = xv[idx] + bv[c];
            }
    return detail::emit("add_bias", x.shape(), std::move(out), {&x, &bias},
                        [=](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            if (auto* gx = gi[0])
                                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                            if (auto* gb = gi[1])
                                for (std::size_t n = 0; n < N; ++n)
                                    for (std::size_t c = 0; c < C; ++c) {
                                        double s = 0.0;
                                        const double* gp = g.data() + (n * C + c) * inner;
                                        for (std::size_t r = 0; r < inner; ++r) s += gp[r];
                                        (*gb)[c] += s;
                                    }
                        });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        "relu", x, [](double v) { return v > 0 ? v : 0.0; },
        [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary("sigmoid", x, detail::stable_sigmoid,
                         [](double, double out) { return out * (1.0 - out); });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double out) { return 1.0 - out * out; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw std::domain_error("log: argument must be positive");
    }
    return detail::unary(
        "log", x, [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::emit("sum", {1}, {s}, {&x},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            for (auto& v : *gi[0]) v += g[0];
                        });
}

inline Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::emit("mean", {1}, {s * inv}, {&x},
                        [inv](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            for (auto& v : *gi[0]) v += g[0] * inv;
                        });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) detail::shape_error("reshape", x.shape(), shape);
    return detail::emit("reshape", std::move(shape), x.values(), {&x},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            auto& gx = *gi[0];
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

/// Collapses every axis after the first: [N, ...] -> [N, rest].
inline Tensor flatten(const Tensor& x) {
    return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

/// Weighted softmax cross-entropy: sum_i w_i * CE(logits_i, labels_i).
/// logits [N, K]; weights default to 1/N (the batch mean).
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                    std::span<const double> weights = {}) {
    if (logits.rank() != 2 || labels.size() != logits.dim(0) ||
        (!weights.empty() && weights.size() != labels.size())) {
        detail::shape_error("softmax_cross_entropy", logits.shape(),
                            "expects [N, K] logits with N labels");
    }
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    std::vector<double> w(N, 1.0 / static_cast<double>(N));
    if (!weights.empty()) w.assign(weights.begin(), weights.end());
    const double* z = logits.data().data();
    std::vector<double> probs(N * K);
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= K) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) +
                                    " outside [0, " + std::to_string(K) + ")");
        }
        const double* row = z + i * K;
        const double mx = *std::max_element(row, row + K);
        double se = 0.0;
        for (std::size_t k = 0; k < K; ++k) se += std::exp(row[k] - mx);
        const double lse = mx + std::log(se);
        for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(row[k] - lse);
        loss += w[i] * (lse - row[y]);
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return detail::emit("softmax_cross_entropy", {1}, {loss}, {&logits},
                        [probs = std::move(probs), ys = std::move(ys), w = std::move(w), N, K](
                            std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            auto& gz = *gi[0];
                            for (std::size_t i = 0; i < N; ++i) {
                                const double s = g[0] * w[i];
                                for (std::size_t k = 0; k < K; ++k) {
                                    const double t = static_cast<std::size_t>(ys[i]) == k ? 1.0 : 0.0;
                                    gz[i * K + k] += s * (probs[i * K + k] - t);
                                }
                            }
                        });
}

/// Mean squared error over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) detail::shape_error("mse", a.shape(), b.shape());
    const std::size_t n = a.numel();
    const double inv = 1.0 / static_cast<double>(n);
    const auto av = a.data();
    const auto bv = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return detail::emit("mse", {1}, {s * inv}, {&a, &b},
                        [ai, bi, inv, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
                            for (std::size_t i = 0; i < n; ++i) {
                                const double d = 2.0 * inv * g[0] * (ai->data[i] - bi->data[i]);
                                if (gi[0]) (*gi[0])[i] += d;
                                if (gi[1]) (*gi[1])[i] -= d;
                            }
                        });
}

}  // namespace cdnb::ops
