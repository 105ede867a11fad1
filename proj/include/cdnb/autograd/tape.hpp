#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cdnb/autograd/tensor.hpp"

namespace cdnb {

/// Receives the output gradient and one accumulator per input (nullptr when
/// that input does not need a gradient). Implementations must add into the
/// accumulators, never overwrite.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

/// Ordered record of primitive operations on one thread.
///
/// Records are appended as operations execute, so the list is always in
/// topological order. A backward pass walks it in reverse exactly once and
/// then clears it.
class Tape {
public:
    struct Record {
        std::string_view op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        BackwardFn backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
    [[nodiscard]] bool empty() const noexcept { return records_.empty(); }
    [[nodiscard]] std::uint64_t generation() const noexcept { return generation_; }
    [[nodiscard]] std::span<const Record> records() const noexcept { return records_; }

    /// Number of backward passes replayed over this tape since construction.
    [[nodiscard]] std::size_t backward_passes() const noexcept { return backward_passes_; }

    void clear() {
        records_.clear();
        ++generation_;
    }

    void record(std::string_view op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                const std::shared_ptr<detail::TensorImpl>& output, BackwardFn fn) {
        output->producer = this;
        output->generation = generation_;
        output->record_index = records_.size();
        records_.push_back(Record{op, std::move(inputs), output, std::move(fn)});
    }

    /// True when `t` was produced by an operation recorded in the current generation.
    [[nodiscard]] bool owns(const Tensor& t) const {
        const auto& impl = *t.impl();
        return impl.producer == this && impl.generation == generation_ &&
               impl.record_index < records_.size() && records_[impl.record_index].output.get() == &impl;
    }

private:
    friend class BackwardPass;

    std::vector<Record> records_;
    std::uint64_t generation_ = 1;
    std::size_t backward_passes_ = 0;
};

namespace detail {

inline thread_local Tape default_tape;
inline thread_local Tape* active_tape_ptr = nullptr;
inline thread_local bool grad_enabled_flag = true;

}  // namespace detail

inline Tape& active_tape() {
    return detail::active_tape_ptr ? *detail::active_tape_ptr : detail::default_tape;
}

inline bool grad_enabled() { return detail::grad_enabled_flag; }

/// Routes recording on this thread to `tape` for the guard's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : previous_(detail::active_tape_ptr) {
        detail::active_tape_ptr = &tape;
    }
    ~TapeScope() { detail::active_tape_ptr = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Disables recording on this thread (evaluation-only forwards).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag) { detail::grad_enabled_flag = false; }
    ~NoGradGuard() { detail::grad_enabled_flag = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Re-enables recording inside a NoGradGuard region (e.g. input saliency
/// during evaluation).
class EnableGradGuard {
public:
    EnableGradGuard() : previous_(detail::grad_enabled_flag) { detail::grad_enabled_flag = true; }
    ~EnableGradGuard() { detail::grad_enabled_flag = previous_; }
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

/// Gradients of one scalar with respect to the leaves that fed it.
class Gradients {
public:
    [[nodiscard]] std::span<const double> of(const Tensor& t) const {
        auto it = grads_.find(t.impl().get());
        if (it == grads_.end()) return {};
        return it->second;
    }
    /// Gradient of `t`, or zeros when `t` did not influence the output.
    [[nodiscard]] std::vector<double> dense(const Tensor& t) const {
        auto g = of(t);
        if (g.empty()) return std::vector<double>(t.numel(), 0.0);
        return {g.begin(), g.end()};
    }
    [[nodiscard]] std::size_t size() const noexcept { return grads_.size(); }

private:
    friend class BackwardPass;
    std::unordered_map<const detail::TensorImpl*, std::vector<double>> grads_;
    std::vector<std::shared_ptr<detail::TensorImpl>> leaves_;
};

class BackwardPass {
public:
    static Gradients run(const Tensor& output, Tape& tape) {
        if (!output.defined()) throw std::invalid_argument("backward: undefined output");
        if (output.numel() != 1) {
            throw std::invalid_argument("backward: output must be a scalar, got shape " +
                                        shape_str(output.shape()));
        }
        if (!tape.owns(output)) {
            throw std::logic_error("backward: output is detached from the active tape");
        }

        std::unordered_map<const detail::TensorImpl*, std::vector<double>> acc;
        acc.emplace(output.impl().get(), std::vector<double>{1.0});

        Gradients result;
        std::vector<std::vector<double>*> slots;
        for (std::size_t i = output.impl()->record_index + 1; i-- > 0;) {
            auto& rec = tape.records_[i];
            auto it = acc.find(rec.output.get());
            if (it == acc.end()) continue;
            std::vector<double> grad_out = std::move(it->second);
            acc.erase(it);

            slots.assign(rec.inputs.size(), nullptr);
            for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
                auto& in = rec.inputs[k];
                if (!in->requires_grad) continue;
                auto [slot, inserted] = acc.try_emplace(in.get());
                if (inserted) {
                    slot->second.assign(in->data.size(), 0.0);
                    const bool produced_here = in->producer == &tape && in->generation == tape.generation_;
                    if (!produced_here) result.leaves_.push_back(in);
                }
                slots[k] = &slot->second;
            }
            rec.backward(grad_out, slots);
        }

        // Everything left over is a leaf of this pass.
        result.grads_ = std::move(acc);
        ++tape.backward_passes_;
        tape.clear();
        return result;
    }

    static const std::vector<std::shared_ptr<detail::TensorImpl>>& leaves(const Gradients& g) {
        return g.leaves_;
    }
};

/// Functional gradient: returns d(output)/d(leaf) for every leaf reached,
/// leaving the leaves' grad buffers untouched. Consumes the active tape.
inline Gradients grad(const Tensor& output) { return BackwardPass::run(output, active_tape()); }

/// Reverse pass that accumulates into each requires_grad leaf's grad buffer.
/// Returns the number of leaves updated. Consumes the active tape.
inline std::size_t backward(const Tensor& output) {
    Gradients g = BackwardPass::run(output, active_tape());
    const auto& leaves = BackwardPass::leaves(g);
    for (const auto& leaf : leaves) {
        auto src = g.of(Tensor::from_impl(leaf));
        if (!leaf->grad) leaf->grad.emplace(leaf->data.size(), 0.0);
        auto& dst = *leaf->grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    return leaves.size();
}

}  // namespace cdnb
