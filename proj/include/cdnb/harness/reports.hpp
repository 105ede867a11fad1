#pragma once

// Report files for an experiment:
//
//   measurements.csv  model,dataset,n,m1,m2,m3,m4,m5
//   robustness.csv    model,dataset,n,clean,acc_<attack>...,mean_adv,delta_abs,delta_rel
//   correlations.csv  measurement,target,n,r,p
//   tracking.csv      model,dataset,epoch,m1,clean_acc,pgd40_acc
//   experiment.json   config, seeds, epoch logs, per-cell detail, correlations
//
// Accuracies are fractions in [0, 1]. Only successful cells appear in the
// CSVs; failed cells keep their error in experiment.json. Every file is
// written to a temporary name and renamed into place.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdnb/harness/experiment.hpp"

namespace cdnb::harness {

inline std::string tracking_csv_header() { return "model,dataset,epoch,m1,clean_acc,pgd40_acc"; }

inline std::string measurements_csv(const ExperimentResult& res) {
    std::string out = metrics::measurement_csv_header() + "\n";
    for (const auto& c : res.cells)
        if (c.ok) out += metrics::to_csv_row(c.measurement) + "\n";
    return out;
}

inline std::string robustness_csv(const ExperimentResult& res) {
    std::string out = robustness_csv_header(res.attack_names) + "\n";
    for (const auto& c : res.cells)
        if (c.ok && c.robustness) out += to_csv_row(*c.robustness) + "\n";
    return out;
}

inline std::string correlations_csv(const std::vector<CorrelationResult>& cs) {
    std::string out = correlation_csv_header() + "\n";
    for (const auto& c : cs) out += to_csv_row(c) + "\n";
    return out;
}

inline std::string tracking_csv(const ExperimentResult& res) {
    std::ostringstream os;
    os << tracking_csv_header() << '\n' << std::fixed << std::setprecision(6);
    for (const auto& c : res.cells) {
        if (!c.ok) continue;
        for (const auto& e : c.train.log) {
            if (std::isnan(e.m1)) continue;
            os << c.model << ',' << c.dataset << ',' << e.epoch << ',' << e.m1 << ',' << e.clean_acc << ','
               << e.pgd40_acc << '\n';
        }
    }
    return os.str();
}

inline nlohmann::json experiment_json(const ExperimentConfig& cfg, const ExperimentResult& res) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : res.cells) cells.push_back(to_json(c));
    nlohmann::json corr = nlohmann::json::array();
    for (const auto& c : res.correlations) corr.push_back(to_json(c));
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& s : res.skipped) skipped.push_back({{"measurement", s.measurement}, {"target", s.target}, {"reason", s.reason}});
    return {{"config", to_json(cfg)},
            {"cells", std::move(cells)},
            {"failed_cells", res.failed()},
            {"correlations", std::move(corr)},
            {"skipped_correlations", std::move(skipped)}};
}

inline void write_reports(const ExperimentConfig& cfg, const ExperimentResult& res) {
    const auto& dir = cfg.out_dir;
    std::filesystem::create_directories(dir);
    write_text_atomic(dir / "measurements.csv", measurements_csv(res));
    write_text_atomic(dir / "robustness.csv", robustness_csv(res));
    write_text_atomic(dir / "correlations.csv", correlations_csv(res.correlations));
    write_text_atomic(dir / "tracking.csv", tracking_csv(res));
    write_text_atomic(dir / "experiment.json", experiment_json(cfg, res).dump(2) + "\n");
}

namespace detail {

inline std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

inline std::string fixed3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

}  // namespace detail

/// Text tables shaped like the published ones: per-dataset accuracy rows,
/// the five measurements, then the correlation grid. `*` marks the best value
/// of a column within a dataset (highest accuracy, lowest drop), and in the
/// grid a correlation with p <= 0.05.
inline std::string format_summary(const ExperimentResult& res) {
    std::ostringstream os;
    std::vector<std::string> datasets;
    for (const auto& c : res.cells)
        if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end()) datasets.push_back(c.dataset);

    os << std::left << std::setw(12) << "dataset" << std::setw(11) << "model" << std::setw(10) << "clean %"
       << std::setw(10) << "adv %" << std::setw(10) << "drop %";
    for (std::size_t m = 0; m < 5; ++m) os << std::setw(12) << metrics::measurement_label(m);
    os << '\n';
    for (const auto& ds : datasets) {
        std::vector<const CellResult*> rows;
        for (const auto& c : res.cells)
            if (c.dataset == ds) rows.push_back(&c);
        double best_clean = -1, best_adv = -1, best_drop = 2;
        std::array<double, 5> best_m{-1, -1, -1, -1, -1};
        for (const auto* c : rows) {
            if (!c->ok) continue;
            best_clean = std::max(best_clean, c->test_clean);
            if (c->robustness) {
                best_adv = std::max(best_adv, c->robustness->mean_adv);
                best_drop = std::min(best_drop, c->robustness->delta_rel);
            }
            for (std::size_t m = 0; m < 5; ++m) best_m[m] = std::max(best_m[m], c->measurement.value(m));
        }
        for (const auto* c : rows) {
            os << std::setw(12) << c->dataset << std::setw(11) << c->model;
            if (!c->ok) {
                os << "failed: " << c->error << '\n';
                continue;
            }
            auto mark = [](bool b) { return b ? "*" : ""; };
            os << std::setw(10) << detail::pct(c->test_clean) + mark(c->test_clean == best_clean);
            if (c->robustness) {
                os << std::setw(10) << detail::pct(c->robustness->mean_adv) + mark(c->robustness->mean_adv == best_adv)
                   << std::setw(10) << detail::pct(c->robustness->delta_rel) + mark(c->robustness->delta_rel == best_drop);
            } else {
                os << std::setw(10) << "-" << std::setw(10) << "-";
            }
            for (std::size_t m = 0; m < 5; ++m) {
                const double v = c->measurement.value(m);
                os << std::setw(12) << detail::fixed3(v) + mark(v == best_m[m]);
            }
            os << '\n';
        }
    }

    if (!res.correlations.empty() || !res.skipped.empty()) {
        os << '\n' << std::setw(11) << "";
        for (std::size_t m = 0; m < 5; ++m) os << std::setw(22) << metrics::measurement_label(m);
        os << '\n';
        for (std::size_t t = 0; t < 4; ++t) {
            const std::string tk = robustness_targets()[t];
            bool any = false;
            std::ostringstream line;
            line << std::left << std::setw(11) << robustness_target_labels()[t];
            for (std::size_t m = 0; m < 5; ++m) {
                const std::string mk = metrics::measurement_key(m);
                auto it = std::find_if(res.correlations.begin(), res.correlations.end(),
                                       [&](const CorrelationResult& c) { return c.measurement == mk && c.target == tk; });
                auto sk = std::find_if(res.skipped.begin(), res.skipped.end(),
                                       [&](const SkippedCorrelation& s) { return s.measurement == mk && s.target == tk; });
                std::ostringstream cell;
                if (it != res.correlations.end()) {
                    any = true;
                    cell << std::fixed << std::setprecision(3) << std::showpos << it->r << std::noshowpos
                         << (it->significant() ? "*" : " ") << " p=" << format_p(it->p);
                } else if (sk != res.skipped.end()) {
                    any = true;
                    cell << "n/a";
                }
                line << std::setw(22) << cell.str();
            }
            if (any) os << line.str() << '\n';
        }
    }
    if (res.failed() > 0) os << '\n' << res.failed() << " of " << res.cells.size() << " cells failed\n";
    return os.str();
}

}  // namespace cdnb::harness
