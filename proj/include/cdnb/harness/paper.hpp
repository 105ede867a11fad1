#pragma once

// Published measurements and robustness numbers for twelve (model, dataset)
// pairs, with a recomputation of the measurement-vs-robustness correlation
// grid from them. The absolute drop is rebuilt as clean - mean a_p because
// only the relative drop is printed; the relative drop is taken as printed.

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "cdnb/harness/stats.hpp"

namespace cdnb::harness {

struct PaperRow {
    const char* dataset;
    const char* model;
    std::array<double, 5> m;  // 1-DC(C,S), DC(X,C), DC(X,S), 1-BoI(X,C), 1-BoI(X,S)
    double clean;             // percent
    double mean_adv;          // percent
    double drop_rel;          // percent, as printed
};

inline const std::array<PaperRow, 12>& paper_rows() {
    static const std::array<PaperRow, 12> rows{{
        {"MNIST", "CAMA", {0.916, 0.689, 0.508, 0.215, 0.115}, 95.6, 81.8, 14.5},
        {"MNIST", "CaaM", {0.016, 0.692, 0.689, 0.505, 0.529}, 99.6, 18.3, 81.7},
        {"MNIST", "CausalAdv", {0.715, 0.681, 0.209, 0.069, 0.002}, 99.3, 97.4, 1.9},
        {"MNIST", "DICE", {0.743, 0.692, 0.296, 0.495, 0.060}, 99.1, 97.0, 2.1},
        {"CIFAR10", "CAMA", {0.930, 0.331, 0.808, 0.042, 0.507}, 35.1, 23.3, 33.6},
        {"CIFAR10", "CaaM", {0.064, 0.427, 0.441, 0.403, 0.441}, 83.6, 4.5, 94.6},
        {"CIFAR10", "CausalAdv", {0.845, 0.420, 0.092, 0.184, 0.015}, 80.5, 45.4, 43.6},
        {"CIFAR10", "DICE", {0.332, 0.528, 0.705, 0.432, 0.385}, 79.3, 39.7, 49.9},
        {"CIFAR100", "CAMA", {0.905, 0.307, 0.816, 0.212, 0.481}, 15.2, 9.2, 39.3},
        {"CIFAR100", "CaaM", {0.315, 0.416, 0.349, 0.336, 0.409}, 54.7, 1.7, 96.8},
        {"CIFAR100", "CausalAdv", {0.896, 0.470, 0.083, 0.317, 0.002}, 52.4, 23.7, 54.8},
        {"CIFAR100", "DICE", {0.196, 0.681, 0.761, 0.438, 0.382}, 52.1, 22.3, 57.2},
    }};
    return rows;
}

inline const std::array<const char*, 4>& robustness_targets() {
    static const std::array<const char*, 4> t{"clean_acc", "adv_acc", "delta_abs", "delta_rel"};
    return t;
}

inline const std::array<const char*, 4>& robustness_target_labels() {
    static const std::array<const char*, 4> t{"Clean acc.", "Adv acc.", "Delta_abs", "Delta_rel"};
    return t;
}

/// Published correlation grid: rows follow robustness_targets(), columns the five measurements.
struct PublishedCorrelation {
    double r;
    bool significant;  // bold in the published grid (p <= 0.05)
};

inline const std::array<std::array<PublishedCorrelation, 5>, 4>& published_correlations() {
    static const std::array<std::array<PublishedCorrelation, 5>, 4> g{{
        {{{-0.275, false}, {0.741, true}, {-0.410, false}, {0.299, false}, {-0.430, false}}},
        {{{0.429, false}, {0.638, true}, {-0.377, false}, {-0.189, false}, {-0.725, true}}},
        {{{-0.820, true}, {-0.048, false}, {0.056, false}, {0.543, false}, {0.476, false}}},
        {{{-0.720, true}, {-0.343, false}, {0.135, false}, {0.437, false}, {0.597, true}}},
    }};
    return g;
}

/// Robustness target values over the twelve rows.
inline std::vector<double> paper_target(std::size_t target) {
    std::vector<double> v;
    for (const auto& r : paper_rows()) {
        switch (target) {
            case 0: v.push_back(r.clean); break;
            case 1: v.push_back(r.mean_adv); break;
            case 2: v.push_back(r.clean - r.mean_adv); break;
            default: v.push_back(r.drop_rel); break;
        }
    }
    return v;
}

inline std::vector<double> paper_measurement(std::size_t m) {
    std::vector<double> v;
    for (const auto& r : paper_rows()) v.push_back(r.m[m]);
    return v;
}

struct PaperCheckEntry {
    std::size_t target = 0, measurement = 0;
    CorrelationResult computed;
    PublishedCorrelation published{};
    double tolerance = 0.03;
    [[nodiscard]] bool r_ok() const { return std::abs(computed.r - published.r) <= tolerance; }
    [[nodiscard]] bool significance_ok() const { return computed.significant() == published.significant; }
    [[nodiscard]] bool ok() const { return r_ok() && significance_ok(); }
};

struct PaperCheckReport {
    std::vector<PaperCheckEntry> entries;  // target-major, 4 x 5
    [[nodiscard]] bool all_ok() const {
        for (const auto& e : entries)
            if (!e.ok()) return false;
        return true;
    }
    [[nodiscard]] const PaperCheckEntry& at(std::size_t target, std::size_t measurement) const {
        return entries.at(target * 5 + measurement);
    }
};

inline PaperCheckReport paper_table_check(double tolerance = 0.03) {
    static const char* keys[] = {"m1", "m2", "m3", "m4", "m5"};
    PaperCheckReport rep;
    for (std::size_t t = 0; t < 4; ++t) {
        const auto ys = paper_target(t);
        for (std::size_t m = 0; m < 5; ++m) {
            PaperCheckEntry e;
            e.target = t;
            e.measurement = m;
            e.computed = pearson(paper_measurement(m), ys, keys[m], robustness_targets()[t]);
            e.published = published_correlations()[t][m];
            e.tolerance = tolerance;
            rep.entries.push_back(e);
        }
    }
    return rep;
}

/// The grid as text, one row per robustness target; `*` marks p <= 0.05.
inline std::string format_paper_check(const PaperCheckReport& rep) {
    static const char* cols[] = {"1-DC(C,S)", "DC(X,C)", "DC(X,S)", "1-BoI(X,C)", "1-BoI(X,S)"};
    std::ostringstream os;
    os << std::left << std::setw(11) << "";
    for (const char* c : cols) os << std::setw(24) << c;
    os << '\n';
    for (std::size_t t = 0; t < 4; ++t) {
        os << std::setw(11) << robustness_target_labels()[t];
        for (std::size_t m = 0; m < 5; ++m) {
            const auto& e = rep.at(t, m);
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(3) << std::showpos << e.computed.r << std::noshowpos
                 << (e.computed.significant() ? "*" : " ") << " p=" << format_p(e.computed.p)
                 << (e.ok() ? "" : " !");
            os << std::setw(24) << cell.str();
        }
        os << '\n';
    }
    std::size_t ok = 0;
    double worst = 0.0;
    for (const auto& e : rep.entries) {
        ok += e.ok();
        worst = std::max(worst, std::abs(e.computed.r - e.published.r));
    }
    os << ok << "/" << rep.entries.size() << " entries match the published grid (max |r diff| " << std::fixed
       << std::setprecision(4) << worst << ")\n";
    return os.str();
}

}  // namespace cdnb::harness
