#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/autograd/tensor.hpp"

namespace cdnb {

/// Ground-truth generating factors for one synthetic sample.
struct SampleFactors {
    int shape_id = 0;
    int confounder_level = 0;
    double background = 0.0;
    int row = 0;
    int col = 0;
};

/// Labelled images, pixels in [0, 1], stored [N, C, H, W].
struct Dataset {
    std::string name;
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t classes = 0;
    std::vector<double> pixels;
    std::vector<int> labels;
    std::vector<SampleFactors> factors;  // empty for real data

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t sample_size() const noexcept { return channels * height * width; }
    [[nodiscard]] Shape sample_shape() const { return {channels, height, width}; }

    [[nodiscard]] std::span<const double> image(std::size_t i) const {
        return std::span<const double>(pixels).subspan(i * sample_size(), sample_size());
    }

    /// Images at `indices` as a [n, C, H, W] tensor.
    [[nodiscard]] Tensor images(std::span<const std::size_t> indices) const {
        const std::size_t d = sample_size();
        std::vector<double> v(indices.size() * d);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            if (indices[k] >= size()) throw std::out_of_range("Dataset::images: index out of range");
            std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[k] * d), d,
                        v.begin() + static_cast<std::ptrdiff_t>(k * d));
        }
        return Tensor({indices.size(), channels, height, width}, std::move(v));
    }
    [[nodiscard]] Tensor all_images() const {
        return Tensor({size(), channels, height, width}, pixels);
    }
    [[nodiscard]] std::vector<int> labels_at(std::span<const std::size_t> indices) const {
        std::vector<int> out(indices.size());
        for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels.at(indices[k]);
        return out;
    }

    [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.name = name;
        out.channels = channels;
        out.height = height;
        out.width = width;
        out.classes = classes;
        const std::size_t d = sample_size();
        out.pixels.reserve(indices.size() * d);
        for (auto i : indices) {
            auto img = image(i);
            out.pixels.insert(out.pixels.end(), img.begin(), img.end());
            out.labels.push_back(labels.at(i));
            if (!factors.empty()) out.factors.push_back(factors.at(i));
        }
        return out;
    }

    void validate() const {
        if (pixels.size() != labels.size() * sample_size()) {
            throw std::invalid_argument("Dataset " + name + ": pixel count does not match label count");
        }
        for (int l : labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= classes) {
                throw std::invalid_argument("Dataset " + name + ": label " + std::to_string(l) +
                                            " outside class range");
            }
        }
    }
};

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

/// Train / validation / test partition of one dataset.
struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

}  // namespace cdnb
