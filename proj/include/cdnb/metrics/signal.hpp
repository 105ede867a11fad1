#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/autograd/tensor.hpp"

namespace cdnb::metrics {

enum class SignalName { X, C, S, Z };

inline const char* to_string(SignalName n) {
    switch (n) {
        case SignalName::X: return "X";
        case SignalName::C: return "C";
        case SignalName::S: return "S";
        case SignalName::Z: return "Z";
    }
    return "?";
}

/// N samples of one signal, each flattened to `dim` values in row-major order.
class SignalBatch {
public:
    SignalBatch(SignalName name, Shape sample_shape, std::vector<double> values)
        : name_(name), sample_shape_(std::move(sample_shape)), values_(std::move(values)) {
        dim_ = shape_numel(sample_shape_);
        if (dim_ == 0 || values_.size() % dim_ != 0) {
            throw std::invalid_argument(std::string("SignalBatch ") + to_string(name_) +
                                        ": values do not tile the sample shape " + shape_str(sample_shape_));
        }
        count_ = values_.size() / dim_;
    }

    /// Leading axis of `t` indexes samples.
    static SignalBatch from_tensor(SignalName name, const Tensor& t) {
        if (t.rank() < 1) throw std::invalid_argument("SignalBatch: tensor needs a sample axis");
        Shape sample(t.shape().begin() + 1, t.shape().end());
        if (sample.empty()) sample = {1};
        return SignalBatch(name, std::move(sample), t.values());
    }

    /// Builds from per-sample vectors; every sample must have the same length.
    static SignalBatch from_rows(SignalName name, const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw std::invalid_argument("SignalBatch: no samples");
        std::vector<double> v;
        const std::size_t d = rows.front().size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != d) {
                throw std::invalid_argument("SignalBatch: sample " + std::to_string(i) + " has " +
                                            std::to_string(rows[i].size()) + " values, expected " +
                                            std::to_string(d));
            }
            v.insert(v.end(), rows[i].begin(), rows[i].end());
        }
        return SignalBatch(name, {d}, std::move(v));
    }

    [[nodiscard]] SignalName name() const noexcept { return name_; }
    [[nodiscard]] std::size_t size() const noexcept { return count_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] const Shape& sample_shape() const noexcept { return sample_shape_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<const double> sample(std::size_t i) const {
        return std::span<const double>(values_).subspan(i * dim_, dim_);
    }

    [[nodiscard]] SignalBatch subset(std::span<const std::size_t> indices) const {
        std::vector<double> v;
        v.reserve(indices.size() * dim_);
        for (auto i : indices) {
            auto s = sample(i);
            v.insert(v.end(), s.begin(), s.end());
        }
        return SignalBatch(name_, sample_shape_, std::move(v));
    }

    [[nodiscard]] Tensor as_tensor() const {
        Shape s{count_};
        s.insert(s.end(), sample_shape_.begin(), sample_shape_.end());
        return Tensor(std::move(s), values_);
    }

private:
    SignalName name_;
    Shape sample_shape_;
    std::vector<double> values_;
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
};

}  // namespace cdnb::metrics
