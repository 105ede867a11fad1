#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/autograd/tensor.hpp"

namespace cdnb {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    // Velocity (sgd) or first moment (adam), and second moment (adam only).
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;

    static OptimizerState sgd(double lr, double momentum = 0.0) {
        OptimizerState s;
        s.kind = OptimizerKind::sgd;
        s.learning_rate = lr;
        s.momentum = momentum;
        return s;
    }
    static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        OptimizerState s;
        s.kind = OptimizerKind::adam;
        s.learning_rate = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = eps;
        return s;
    }
};

namespace detail {

inline void prepare_moments(std::span<Tensor> params, std::span<const std::vector<double>> grads,
                            OptimizerState& state, bool second_moment) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("optimizer: " + std::to_string(params.size()) + " params but " +
                                    std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel()) {
            throw std::invalid_argument("optimizer: gradient " + std::to_string(i) + " has " +
                                        std::to_string(grads[i].size()) + " elements, parameter has " +
                                        std::to_string(params[i].numel()));
        }
    }
    if (state.first.empty()) {
        for (const auto& p : params) {
            state.first.emplace_back(p.numel(), 0.0);
            if (second_moment) state.second.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.first.size() != params.size()) {
        throw std::invalid_argument("optimizer: state was built for a different parameter list");
    }
}

}  // namespace detail

/// v <- momentum * v + g;  p <- p - lr * v.
inline void sgd_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
                     OptimizerState& state) {
    if (state.kind != OptimizerKind::sgd) throw std::invalid_argument("sgd_step: state is not sgd");
    detail::prepare_moments(params, grads, state, false);
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        auto& v = state.first[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j];
            p[j] -= state.learning_rate * v[j];
        }
    }
}

/// Bias-corrected Adam.
inline void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
                      OptimizerState& state) {
    if (state.kind != OptimizerKind::adam) throw std::invalid_argument("adam_step: state is not adam");
    detail::prepare_moments(params, grads, state, true);
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        auto& m = state.first[i];
        auto& v = state.second[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

/// Steps using each parameter's accumulated grad buffer (missing buffers count as zero),
/// then clears the buffers.
inline void optimizer_step(std::span<Tensor> params, OptimizerState& state) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) {
        auto g = p.grad();
        if (g.empty()) grads.emplace_back(p.numel(), 0.0);
        else grads.emplace_back(g.begin(), g.end());
    }
    if (state.kind == OptimizerKind::sgd) sgd_step(params, grads, state);
    else adam_step(params, grads, state);
    for (auto& p : params) p.zero_grad();
}

}  // namespace cdnb
