#pragma once

// Shapes-on-backgrounds images with known generating factors. The label
// picks a 5x5 foreground template placed at a jittered position; the
// background intensity level copies the label with probability rho and is
// drawn uniformly otherwise, so corr(level, label) = rho.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/data/dataset.hpp"
#include "cdnb/random.hpp"

namespace cdnb {

struct SyntheticSpec {
    std::size_t samples = 1000;
    std::size_t classes = 10;
    std::size_t size = 16;
    double rho = 0.0;
    std::uint64_t seed = 1;
    std::uint64_t template_seed = 7;  // shared by every split so they depict the same shapes
    std::size_t template_size = 5;
    int jitter = 2;
    double foreground = 0.95;
    double background_lo = 0.05;
    double background_hi = 0.45;
    double noise = 0.04;

    void validate() const {
        if (classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
        if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("synthetic rho must lie in [0, 1]");
        if (template_size + 2 * static_cast<std::size_t>(jitter) > size) {
            throw std::invalid_argument("synthetic template plus jitter does not fit the image");
        }
    }
};

/// Background intensity of confounder level `l` out of `levels`.
inline double background_intensity(const SyntheticSpec& s, int level) {
    return s.background_lo + (s.background_hi - s.background_lo) * level / static_cast<double>(s.classes - 1);
}

/// Pixels where two templates differ when `b` is offset by (dr, dc) against
/// `a` on a zero canvas.
inline std::size_t shifted_difference(const std::vector<bool>& a, const std::vector<bool>& b, int size, int dr,
                                      int dc) {
    std::size_t diff = 0;
    for (int r = std::min(0, dr); r < size + std::max(0, dr); ++r)
        for (int c = std::min(0, dc); c < size + std::max(0, dc); ++c) {
            const bool in_a = r >= 0 && c >= 0 && r < size && c < size && a[static_cast<std::size_t>(r * size + c)];
            const int br = r - dr, bc = c - dc;
            const bool in_b = br >= 0 && bc >= 0 && br < size && bc < size && b[static_cast<std::size_t>(br * size + bc)];
            diff += in_a != in_b;
        }
    return diff;
}

/// `classes` binary templates, roughly half filled. Every pair differs in at
/// least a quarter of the template's pixels under any relative placement the
/// jitter can produce, so no class is a shifted copy of another.
inline std::vector<std::vector<bool>> synthetic_templates(const SyntheticSpec& s) {
    Rng rng(derive_seed(s.template_seed, {"templates"}));
    const int size = static_cast<int>(s.template_size);
    const std::size_t p = s.template_size * s.template_size;
    const std::size_t min_diff = p / 4;
    const int reach = 2 * s.jitter;
    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<bool>> out;
    for (std::size_t attempt = 0; out.size() < s.classes; ++attempt) {
        if (attempt > 1000000) throw std::runtime_error("could not draw distinct synthetic templates");
        std::vector<bool> t(p);
        for (std::size_t k = 0; k < p; ++k) t[k] = coin(rng);
        const auto on = static_cast<std::size_t>(std::count(t.begin(), t.end(), true));
        if (on < p / 3 || on > 2 * p / 3) continue;
        bool ok = true;
        for (std::size_t u = 0; u < out.size() && ok; ++u)
            for (int dr = -reach; dr <= reach && ok; ++dr)
                for (int dc = -reach; dc <= reach && ok; ++dc) ok = shifted_difference(out[u], t, size, dr, dc) >= min_diff;
        if (ok) out.push_back(std::move(t));
    }
    return out;
}

/// Pixels are quantised to multiples of 1/255 so the set survives IDX export exactly.
inline Dataset generate_synthetic(const SyntheticSpec& s, std::string name = "synthetic") {
    s.validate();
    const auto templates = synthetic_templates(s);
    Rng rng(derive_seed(s.seed, {"synthetic"}));
    std::uniform_int_distribution<int> label_dist(0, static_cast<int>(s.classes) - 1);
    std::uniform_int_distribution<int> jit(-s.jitter, s.jitter);
    std::bernoulli_distribution copy_label(s.rho);
    std::normal_distribution<double> noise(0.0, s.noise);

    Dataset d;
    d.name = std::move(name);
    d.channels = 1;
    d.height = d.width = s.size;
    d.classes = s.classes;
    d.pixels.resize(s.samples * s.size * s.size);
    const int base = static_cast<int>((s.size - s.template_size) / 2);
    for (std::size_t i = 0; i < s.samples; ++i) {
        SampleFactors f;
        f.shape_id = label_dist(rng);
        const int other = label_dist(rng);
        f.confounder_level = copy_label(rng) ? f.shape_id : other;
        f.background = background_intensity(s, f.confounder_level);
        f.row = base + jit(rng);
        f.col = base + jit(rng);
        const auto& t = templates[static_cast<std::size_t>(f.shape_id)];
        double* img = d.pixels.data() + i * s.size * s.size;
        for (std::size_t r = 0; r < s.size; ++r)
            for (std::size_t c = 0; c < s.size; ++c) {
                const long tr = static_cast<long>(r) - f.row, tc = static_cast<long>(c) - f.col;
                const long ts = static_cast<long>(s.template_size);
                const bool fg = tr >= 0 && tc >= 0 && tr < ts && tc < ts &&
                                t[static_cast<std::size_t>(tr * ts + tc)];
                const double v = std::clamp((fg ? s.foreground : f.background) + noise(rng), 0.0, 1.0);
                img[r * s.size + c] = std::round(v * 255.0) / 255.0;
            }
        d.labels.push_back(f.shape_id);
        d.factors.push_back(f);
    }
    return d;
}

}  // namespace cdnb
