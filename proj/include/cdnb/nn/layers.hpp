#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdnb/autograd.hpp"
#include "cdnb/random.hpp"

namespace cdnb::nn {

/// Ordered, named parameters of a model. Non-trainable entries (buffers)
/// are persisted with the model but never handed to an optimizer.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable = true;
    };
    using Snapshot = std::vector<std::vector<double>>;

    Tensor add(std::string name, Tensor t, bool trainable = true) {
        for (const auto& e : entries_) {
            if (e.name == name) throw std::invalid_argument("ParameterSet: duplicate name " + name);
        }
        t.set_requires_grad(trainable);
        entries_.push_back({std::move(name), t, trainable});
        return t;
    }

    [[nodiscard]] Tensor get(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw std::out_of_range("ParameterSet: no parameter named " + std::string(name));
    }
    [[nodiscard]] bool contains(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return true;
        return false;
    }

    [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }

    [[nodiscard]] std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (const auto& e : entries_)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    [[nodiscard]] std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    [[nodiscard]] Snapshot snapshot() const {
        Snapshot s;
        s.reserve(entries_.size());
        for (const auto& e : entries_) s.push_back(e.tensor.values());
        return s;
    }

    void restore(const Snapshot& s) {
        if (s.size() != entries_.size()) throw std::invalid_argument("ParameterSet::restore: size mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            auto dst = entries_[i].tensor.mutable_data();
            if (dst.size() != s[i].size()) {
                throw std::invalid_argument("ParameterSet::restore: shape mismatch for " + entries_[i].name);
            }
            std::copy(s[i].begin(), s[i].end(), dst.begin());
        }
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
};

/// Turns off gradient tracking on every parameter for the guard's lifetime,
/// so input-gradient passes skip weight gradients. Not thread-safe against
/// concurrent training of the same parameters.
class FreezeGuard {
public:
    explicit FreezeGuard(const ParameterSet& params) {
        for (const auto& e : params.entries()) {
            tensors_.push_back(e.tensor);
            flags_.push_back(e.tensor.requires_grad());
            tensors_.back().set_requires_grad(false);
        }
    }
    ~FreezeGuard() {
        for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].set_requires_grad(flags_[i]);
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<Tensor> tensors_;
    std::vector<bool> flags_;
};

inline Tensor uniform_init(Rng& rng, Shape shape, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v));
}

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                         Rng& rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        Linear l;
        l.weight = params.add(name + ".weight", uniform_init(rng, {in, out}, bound));
        l.bias = params.add(name + ".bias", Tensor::zeros({out}));
        return l;
    }
    static Linear bind(const ParameterSet& params, const std::string& name) {
        return {params.get(name + ".weight"), params.get(name + ".bias")};
    }

    [[nodiscard]] Tensor operator()(const Tensor& x) const {
        return ops::add_bias(ops::matmul(x, weight), bias);
    }
    [[nodiscard]] std::size_t in_features() const { return weight.dim(0); }
    [[nodiscard]] std::size_t out_features() const { return weight.dim(1); }
};

struct Conv2d {
    Tensor kernel;  // [out, in, k, k]
    Tensor bias;    // [out]
    std::size_t pad = 1;

    static Conv2d create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t k, std::size_t pad, Rng& rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
        Conv2d c;
        c.kernel = params.add(name + ".kernel", uniform_init(rng, {out, in, k, k}, bound));
        c.bias = params.add(name + ".bias", Tensor::zeros({out}));
        c.pad = pad;
        return c;
    }
    static Conv2d bind(const ParameterSet& params, const std::string& name, std::size_t pad) {
        return {params.get(name + ".kernel"), params.get(name + ".bias"), pad};
    }

    [[nodiscard]] Tensor operator()(const Tensor& x) const {
        return ops::add_bias(ops::conv2d(x, kernel, pad), bias);
    }
};

/// Labels as a one-hot [N, K] constant.
inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
    std::vector<double> v(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " out of range");
        }
        v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor({labels.size(), classes}, std::move(v));
}

/// Per-row sums of a [N, D] tensor as [N, 1], differentiable.
inline Tensor row_sum(const Tensor& x) {
    return ops::matmul(x, Tensor::ones({x.dim(1), 1}));
}

/// Row-wise argmax of a [N, K] tensor.
inline std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const auto v = logits.data();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (v[i * k + j] > v[i * k + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace cdnb::nn
