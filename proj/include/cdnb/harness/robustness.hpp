#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdnb/attacks/attacks.hpp"
#include "cdnb/data/dataset.hpp"
#include "cdnb/nn/layers.hpp"

namespace cdnb::harness {

struct AttackOutcome {
    std::string attack;
    double accuracy = 0.0;
    std::size_t projected = 0;  // samples whose final perturbation was pulled back into the ball
};

struct RobustnessRecord {
    std::string model;
    std::string dataset;
    std::size_t n = 0;
    double clean = 0.0;
    std::vector<AttackOutcome> attacks;
    double mean_adv = 0.0;
    double delta_abs = 0.0;
    double delta_rel = 0.0;

    /// Fills mean_adv and the two drops from `clean` and `attacks`.
    void finalize() {
        if (attacks.empty()) throw std::invalid_argument("RobustnessRecord: no attack results");
        double s = 0.0;
        for (const auto& a : attacks) s += a.accuracy;
        mean_adv = s / static_cast<double>(attacks.size());
        delta_abs = clean - mean_adv;
        delta_rel = clean > 0.0 ? delta_abs / clean : 0.0;
    }
};

struct RobustnessOptions {
    std::uint64_t seed = 0;
    std::size_t chunk = 64;
    std::size_t threads = 1;
};

/// Clean and per-attack accuracy over all of `test`.
template <attacks::Classifier M>
RobustnessRecord evaluate_robustness(const M& model, const nn::ParameterSet& params, const Dataset& test,
                                     const std::vector<attacks::AttackConfig>& configs,
                                     const RobustnessOptions& opt = {}, std::string model_id = {},
                                     std::string dataset_id = {}) {
    if (configs.empty()) throw std::invalid_argument("evaluate_robustness: need at least one attack configuration");
    RobustnessRecord r;
    r.model = std::move(model_id);
    r.dataset = std::move(dataset_id);
    r.n = test.size();
    const Tensor x = test.all_images();
    {
        NoGradGuard ng;
        r.clean = attacks::accuracy(model, x, test.labels);
    }
    nn::FreezeGuard frozen(params);
    for (const auto& cfg : configs) {
        attacks::AttackOptions ao;
        ao.seed = derive_seed(opt.seed, {"robustness", cfg.name});
        ao.chunk = opt.chunk;
        ao.threads = opt.threads;
        const auto res = attacks::run_attack(model, x, test.labels, cfg, ao);
        r.attacks.push_back({cfg.name, res.accuracy(), res.projected});
    }
    r.finalize();
    return r;
}

inline std::string robustness_csv_header(const std::vector<std::string>& attack_names) {
    std::string h = "model,dataset,n,clean";
    for (const auto& a : attack_names) h += ",acc_" + a;
    return h + ",mean_adv,delta_abs,delta_rel";
}

inline std::string to_csv_row(const RobustnessRecord& r) {
    std::ostringstream os;
    os << r.model << ',' << r.dataset << ',' << r.n << std::fixed << std::setprecision(6) << ',' << r.clean;
    for (const auto& a : r.attacks) os << ',' << a.accuracy;
    os << ',' << r.mean_adv << ',' << r.delta_abs << ',' << r.delta_rel;
    return os.str();
}

inline nlohmann::json to_json(const RobustnessRecord& r) {
    nlohmann::json atk = nlohmann::json::array();
    for (const auto& a : r.attacks) atk.push_back({{"attack", a.attack}, {"accuracy", a.accuracy}, {"projected", a.projected}});
    return {{"model", r.model},         {"dataset", r.dataset},     {"n", r.n},
            {"clean", r.clean},         {"attacks", std::move(atk)}, {"mean_adv", r.mean_adv},
            {"delta_abs", r.delta_abs}, {"delta_rel", r.delta_rel}};
}

}  // namespace cdnb::harness
