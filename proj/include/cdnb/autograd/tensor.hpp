#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cdnb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class Tape;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    // Set when a recorded operation produced this tensor.
    const Tape* producer = nullptr;
    std::uint64_t generation = 0;
    std::size_t record_index = 0;
};

}  // namespace detail

/// Dense row-major float64 array.
///
/// A Tensor is a shared handle: copies refer to the same storage, the way
/// parameters are shared between a model and its optimizer. Use clone() or
/// detach() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl>()) {
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " holds " +
                                        std::to_string(shape_numel(shape)) + " elements, got " +
                                        std::to_string(data.size()));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 1.0, requires_grad);
    }
    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }
    static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

    [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
    [[nodiscard]] const Shape& shape() const { return checked().shape; }
    [[nodiscard]] std::size_t rank() const { return checked().shape.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const {
        const auto& s = checked().shape;
        if (i >= s.size()) throw std::out_of_range("Tensor::dim: axis out of range");
        return s[i];
    }
    [[nodiscard]] std::size_t numel() const { return checked().data.size(); }

    [[nodiscard]] std::span<const double> data() const { return checked().data; }
    /// In-place access. Only meaningful on leaves (parameters, attack iterates).
    [[nodiscard]] std::span<double> mutable_data() { return checked().data; }
    [[nodiscard]] const std::vector<double>& values() const { return checked().data; }

    [[nodiscard]] double item() const {
        const auto& d = checked().data;
        if (d.size() != 1) {
            throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(d.size()) +
                                        " elements");
        }
        return d[0];
    }
    [[nodiscard]] double operator[](std::size_t i) const { return checked().data.at(i); }

    [[nodiscard]] bool requires_grad() const { return checked().requires_grad; }
    Tensor& set_requires_grad(bool on) {
        checked().requires_grad = on;
        return *this;
    }

    [[nodiscard]] bool has_grad() const { return checked().grad.has_value(); }
    [[nodiscard]] std::span<const double> grad() const {
        const auto& g = checked().grad;
        if (!g) return {};
        return *g;
    }
    [[nodiscard]] std::span<double> mutable_grad() {
        auto& impl = checked();
        if (!impl.grad) impl.grad.emplace(impl.data.size(), 0.0);
        return *impl.grad;
    }
    void zero_grad() { checked().grad.reset(); }

    /// Fresh leaf with copied data and no gradient tracking.
    [[nodiscard]] Tensor detach() const { return Tensor(shape(), values(), false); }
    /// Fresh leaf with copied data, keeping the requires_grad flag.
    [[nodiscard]] Tensor clone() const { return Tensor(shape(), values(), requires_grad()); }

    [[nodiscard]] const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    detail::TensorImpl& checked() const {
        if (!impl_) throw std::logic_error("Tensor: use of an undefined tensor");
        return *impl_;
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace cdnb
