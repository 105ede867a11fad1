#pragma once

// Small hand-built and trained classifiers shared by the attack tests and
// the acceptance run.

#include <random>
#include <vector>

#include "cdnb/autograd.hpp"
#include "cdnb/nn/layers.hpp"

namespace cdnb::testing {

/// logits = flatten(x) W + b with fixed weights.
struct LinearModel {
    Tensor w;  // [d, k]
    Tensor b;  // [k]

    LinearModel(std::size_t d, std::size_t k, std::vector<double> weights, std::vector<double> bias)
        : w({d, k}, std::move(weights)), b({k}, std::move(bias)) {}

    [[nodiscard]] Tensor logits(const Tensor& x) const { return ops::add_bias(ops::matmul(ops::flatten(x), w), b); }
};

struct Mlp {
    nn::ParameterSet params;
    nn::Linear l1, l2;

    Mlp(std::size_t in, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
        Rng rng(seed);
        l1 = nn::Linear::create(params, "fc1", in, hidden, rng);
        l2 = nn::Linear::create(params, "fc2", hidden, classes, rng);
    }
    [[nodiscard]] Tensor logits(const Tensor& x) const { return l2(ops::relu(l1(ops::flatten(x)))); }
};

struct ToyData {
    Tensor images;  // [n, 1, 4, 4]
    std::vector<int> labels;
};

/// Three noisy 4x4 templates, clipped to [0, 1].
inline ToyData toy_data(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.42, 0.58);
    Rng trng(99);
    std::vector<std::vector<double>> templates(3, std::vector<double>(16));
    for (auto& t : templates)
        for (auto& v : t) v = u(trng);
    std::normal_distribution<double> noise(0.0, 0.08);
    std::uniform_int_distribution<int> cls(0, 2);
    ToyData d;
    std::vector<double> px(n * 16);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = cls(rng);
        d.labels.push_back(y);
        for (std::size_t k = 0; k < 16; ++k) px[i * 16 + k] = std::clamp(templates[y][k] + noise(rng), 0.0, 1.0);
    }
    d.images = Tensor({n, 1, 4, 4}, std::move(px));
    return d;
}

/// An Mlp fitted to toy_data with Adam.
inline Mlp trained_toy_model(std::uint64_t seed = 5) {
    Mlp m(16, 32, 3, seed);
    const ToyData d = toy_data(600, seed + 1);
    auto params = m.params.trainable();
    auto opt = OptimizerState::adam(1e-2);
    const std::size_t n = d.labels.size(), bs = 50;
    for (int epoch = 0; epoch < 40; ++epoch) {
        for (std::size_t s = 0; s < n; s += bs) {
            std::vector<double> v(d.images.data().begin() + s * 16, d.images.data().begin() + (s + bs) * 16);
            Tensor xb({bs, 1, 4, 4}, std::move(v));
            std::span<const int> yb(d.labels.data() + s, bs);
            backward(ops::softmax_cross_entropy(m.logits(xb), yb));
            optimizer_step(params, opt);
        }
    }
    return m;
}

}  // namespace cdnb::testing
