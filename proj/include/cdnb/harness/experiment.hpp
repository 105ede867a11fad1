#pragma once

// Config-driven pipeline: for every (dataset, variant) cell, train, measure
// M1..M5 and attack; then correlate the measurements with the robustness
// numbers across cells. Cells are independent. Each finished cell is written
// to its own file and the merged reports are built in config order after all
// cells are done, so the outputs do not depend on scheduling.
//
// Config schema (all keys optional unless noted):
//
//   seed = 1                   master seed; every stage derives its own stream
//   threads = 1                cells run concurrently on this many workers
//
//   [dataset] or [dataset.NAME]   one or more; NAME defaults to "synthetic"
//   source = synthetic         synthetic | mnist_idx
//   dir = path                 mnist_idx: directory with the four IDX files
//   rho = 0.9                  synthetic background/label correlation
//   image_size = 16, classes = 10, train = 3200, val = 800, test = 500
//
//   [models]
//   variants = cama, caam, causaladv, dice
//   epochs = 30, batch_size = 32, learning_rate = 0.003
//   tracking = false           per-epoch M1, clean and PGD40 accuracy
//   tracking_samples = 200
//   caam_splits, causaladv_beta, dice_q, cama_lambda, ...   model hyperparameters
//
//   [attacks]
//   preset = table2            table2 | none
//   samples = 0                cap on attacked test samples, 0 = all
//   chunk = 64
//   [attack.NAME]              extra attacks: family, norm, eps, steps, alpha,
//                              random_init, c, kappa, lr
//
//   [metrics]
//   n_max = 2000               DC sample cap
//   train_samples = 1000       IoB decoder training samples, 0 = whole train split
//   iob_epochs = 50, iob_patience = 40, iob_hidden = 256, iob_batch = 64,
//   iob_lr = 0.001, iob_val_fraction = 0.2
//
//   [output]
//   dir = results
//   checkpoints = true         save the selected model of every cell

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdnb/attacks/config.hpp"
#include "cdnb/data/sources.hpp"
#include "cdnb/harness/config.hpp"
#include "cdnb/harness/paper.hpp"
#include "cdnb/harness/robustness.hpp"
#include "cdnb/harness/stats.hpp"
#include "cdnb/harness/train.hpp"
#include "cdnb/metrics/measure.hpp"
#include "cdnb/models.hpp"

namespace cdnb::harness {

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::vector<DatasetSpec> datasets;
    std::vector<models::Variant> variants;
    models::ModelSpec model;  // hyperparameters; geometry comes from each dataset
    TrainConfig train;
    std::vector<attacks::AttackConfig> attacks;
    std::size_t attack_samples = 0;
    std::size_t attack_chunk = 64;
    metrics::MetricsConfig metrics;
    std::size_t metric_train_samples = 1000;
    std::filesystem::path out_dir = "results";
    bool checkpoints = true;
};

namespace detail {

inline DatasetSpec dataset_from(const ConfigSection& s, std::string name, std::uint64_t seed) {
    DatasetSpec d;
    d.name = std::move(name);
    d.seed = seed;
    try {
        d.source = parse_data_source(s.str("source", "synthetic"));
    } catch (const std::invalid_argument& e) {
        throw s.error("source", e.what());
    }
    d.dir = s.str("dir", "");
    d.rho = s.real("rho", d.rho);
    d.image_size = s.count("image_size", d.image_size);
    d.classes = s.count("classes", d.classes);
    d.train = s.count("train", d.train);
    d.val = s.count("val", d.val);
    d.test = s.count("test", d.test);
    if (!(d.rho >= 0.0 && d.rho <= 1.0)) throw s.error("rho", "must lie in [0, 1]");
    if (d.source == DataSource::mnist_idx && d.dir.empty()) throw s.error("dir", "mnist_idx needs a directory");
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config [") + s.name + "]: " + e.what());
    }
    s.reject_unread();
    return d;
}

}  // namespace detail

/// Reads and validates every section; nothing is touched on disk.
inline ExperimentConfig experiment_from(const Config& c) {
    ExperimentConfig e;
    const auto& root = c.get("");
    e.seed = root.count("seed", e.seed);
    e.threads = std::max<std::size_t>(1, root.count("threads", e.threads));
    root.reject_unread();

    std::set<std::string> known{"", "dataset", "models", "attacks", "metrics", "output"};
    for (const auto& s : c.sections) {
        const bool prefixed = s.name.rfind("dataset.", 0) == 0 || s.name.rfind("attack.", 0) == 0;
        if (!known.count(s.name) && !prefixed) throw ConfigError("config: unknown section [" + s.name + "]");
    }

    if (const auto* s = c.find("dataset")) {
        e.datasets.push_back(detail::dataset_from(*s, s->str("name", "synthetic"), e.seed));
    }
    for (const auto* s : c.with_prefix("dataset")) e.datasets.push_back(detail::dataset_from(*s, s->name.substr(8), e.seed));
    if (e.datasets.empty()) e.datasets.push_back(DatasetSpec{});
    std::set<std::string> names;
    for (const auto& d : e.datasets)
        if (!names.insert(d.name).second) throw ConfigError("config: dataset '" + d.name + "' defined twice");

    const auto& m = c.get("models");
    for (const auto& v : m.list("variants", {"cama", "caam", "causaladv", "dice"})) {
        try {
            e.variants.push_back(models::parse_variant(v));
        } catch (const std::exception& ex) {
            throw m.error("variants", ex.what());
        }
    }
    if (e.variants.empty()) throw m.error("variants", "need at least one variant");
    e.train.epochs = m.count("epochs", e.train.epochs);
    e.train.batch_size = m.count("batch_size", e.train.batch_size);
    e.train.learning_rate = m.real("learning_rate", e.train.learning_rate);
    e.train.tracking = m.flag("tracking", e.train.tracking);
    e.train.tracking_samples = m.count("tracking_samples", e.train.tracking_samples);
    if (e.train.epochs == 0) throw m.error("epochs", "must be at least 1");
    if (e.train.batch_size == 0) throw m.error("batch_size", "must be positive");
    if (!(e.train.learning_rate > 0.0)) throw m.error("learning_rate", "must be positive");
    for (const auto& f : models::detail::spec_fields()) {
        const std::string key = f.key;
        if (key == "channels" || key == "height" || key == "width" || key == "classes") continue;
        if (f.real) e.model.*(f.real) = m.real(key, e.model.*(f.real));
        else e.model.*(f.count) = m.count(key, e.model.*(f.count));
    }
    m.reject_unread();

    const auto& a = c.get("attacks");
    const std::string preset = a.str("preset", "table2");
    if (preset == "table2") e.attacks = attacks::table2_suite();
    else if (preset != "none") throw a.error("preset", "expected table2 or none, got '" + preset + "'");
    e.attack_samples = a.count("samples", e.attack_samples);
    e.attack_chunk = a.count("chunk", e.attack_chunk);
    if (e.attack_chunk == 0) throw a.error("chunk", "must be positive");
    a.reject_unread();
    for (const auto* s : c.with_prefix("attack")) {
        const std::string name = s->name.substr(7);
        try {
            e.attacks.push_back(attacks::parse_attack_config(name, s->values));
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(std::string("config [") + s->name + "]: " + ex.what());
        }
        for (const auto& [k, v] : s->values) s->read.insert(k);
    }
    std::set<std::string> attack_names;
    for (const auto& atk : e.attacks)
        if (!attack_names.insert(atk.name).second) throw ConfigError("config: attack '" + atk.name + "' defined twice");

    const auto& mt = c.get("metrics");
    e.metrics.n_max = mt.count("n_max", e.metrics.n_max);
    e.metric_train_samples = mt.count("train_samples", e.metric_train_samples);
    e.metrics.iob.max_epochs = mt.count("iob_epochs", e.metrics.iob.max_epochs);
    e.metrics.iob.patience = mt.count("iob_patience", e.metrics.iob.patience);
    e.metrics.iob.hidden = mt.count("iob_hidden", e.metrics.iob.hidden);
    e.metrics.iob.batch_size = mt.count("iob_batch", e.metrics.iob.batch_size);
    e.metrics.iob.learning_rate = mt.real("iob_lr", e.metrics.iob.learning_rate);
    e.metrics.iob.val_fraction = mt.real("iob_val_fraction", e.metrics.iob.val_fraction);
    if (e.metrics.n_max < 3) throw mt.error("n_max", "must be at least 3");
    if (e.metrics.iob.max_epochs == 0) throw mt.error("iob_epochs", "must be at least 1");
    if (!(e.metrics.iob.val_fraction > 0.0 && e.metrics.iob.val_fraction < 1.0)) {
        throw mt.error("iob_val_fraction", "must lie strictly between 0 and 1");
    }
    mt.reject_unread();

    const auto& o = c.get("output");
    e.out_dir = o.str("dir", e.out_dir.string());
    e.checkpoints = o.flag("checkpoints", e.checkpoints);
    o.reject_unread();
    return e;
}

inline nlohmann::json to_json(const attacks::AttackConfig& a) {
    return {{"name", a.name},       {"family", attacks::to_string(a.family)},
            {"norm", attacks::to_string(a.norm)},
            {"eps", a.epsilon},     {"steps", a.steps},
            {"alpha", a.step_size}, {"random_init", a.random_init},
            {"c", a.cw_c},          {"kappa", a.cw_kappa},
            {"lr", a.cw_lr}};
}

inline nlohmann::json to_json(const ExperimentConfig& e) {
    nlohmann::json ds = nlohmann::json::array();
    for (const auto& d : e.datasets) {
        ds.push_back({{"name", d.name}, {"source", to_string(d.source)}, {"dir", d.dir.string()},
                      {"rho", d.rho}, {"image_size", d.image_size}, {"classes", d.classes},
                      {"train", d.train}, {"val", d.val}, {"test", d.test}});
    }
    nlohmann::json vs = nlohmann::json::array();
    for (auto v : e.variants) vs.push_back(std::string(models::to_string(v)));
    nlohmann::json hp;
    for (const auto& f : models::detail::spec_fields()) {
        const std::string key = f.key;
        if (key == "channels" || key == "height" || key == "width" || key == "classes") continue;
        hp[key] = f.real ? nlohmann::json(e.model.*(f.real)) : nlohmann::json(e.model.*(f.count));
    }
    nlohmann::json atk = nlohmann::json::array();
    for (const auto& a : e.attacks) atk.push_back(to_json(a));
    const auto& iob = e.metrics.iob;
    return {{"seed", e.seed},
            {"datasets", std::move(ds)},
            {"models", {{"variants", std::move(vs)},
                        {"epochs", e.train.epochs},
                        {"batch_size", e.train.batch_size},
                        {"learning_rate", e.train.learning_rate},
                        {"tracking", e.train.tracking},
                        {"tracking_samples", e.train.tracking_samples},
                        {"hyperparameters", std::move(hp)}}},
            {"attacks", {{"configs", std::move(atk)}, {"samples", e.attack_samples}, {"chunk", e.attack_chunk}}},
            {"metrics", {{"n_max", e.metrics.n_max},
                         {"train_samples", e.metric_train_samples},
                         {"iob_epochs", iob.max_epochs},
                         {"iob_patience", iob.patience},
                         {"iob_hidden", iob.hidden},
                         {"iob_batch", iob.batch_size},
                         {"iob_lr", iob.learning_rate},
                         {"iob_val_fraction", iob.val_fraction}}}};
}

/// Seeds of one cell, all derived from the master seed by a stage-named path.
struct CellSeeds {
    std::uint64_t init, train, metrics, taps, attacks;

    static CellSeeds derive(std::uint64_t master, const std::string& dataset, const std::string& model) {
        return {derive_seed(master, {"init", dataset, model}), derive_seed(master, {"train", dataset, model}),
                derive_seed(master, {"metrics", dataset, model}), derive_seed(master, {"taps", dataset, model}),
                derive_seed(master, {"attacks", dataset, model})};
    }
};

struct CellResult {
    std::string dataset;
    std::string model;
    CellSeeds seeds{};
    bool ok = false;
    std::string error;
    TrainResult train;
    metrics::MeasurementRecord measurement;
    std::optional<RobustnessRecord> robustness;
    double test_clean = 0.0;  // clean accuracy on the evaluated test samples
    std::size_t test_n = 0;
};

struct SkippedCorrelation {
    std::string measurement, target, reason;
};

struct ExperimentResult {
    std::vector<CellResult> cells;  // dataset-major, config order
    std::vector<CorrelationResult> correlations;
    std::vector<SkippedCorrelation> skipped;
    std::vector<std::string> attack_names;

    [[nodiscard]] std::size_t failed() const {
        std::size_t n = 0;
        for (const auto& c : cells) n += !c.ok;
        return n;
    }
};

inline nlohmann::json to_json(const CellResult& c) {
    nlohmann::json j{{"dataset", c.dataset},
                     {"model", c.model},
                     {"status", c.ok ? "ok" : "failed"},
                     {"seeds", {{"init", c.seeds.init}, {"train", c.seeds.train}, {"metrics", c.seeds.metrics},
                                {"taps", c.seeds.taps}, {"attacks", c.seeds.attacks}}}};
    if (!c.ok) {
        j["error"] = c.error;
        return j;
    }
    j["train"] = to_json(c.train);
    j["test_clean"] = c.test_clean;
    j["test_n"] = c.test_n;
    j["measurements"] = metrics::to_json_detailed(c.measurement);
    j["robustness"] = c.robustness ? to_json(*c.robustness) : nlohmann::json(nullptr);
    return j;
}

/// Writes `text` next to `path` and renames it into place.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::vector<std::uint8_t> bytes(text.begin(), text.end());
    idx::write_bytes_atomic(path, bytes);
}

inline std::string cell_stem(const std::string& dataset, const std::string& model) { return dataset + "__" + model; }

/// Train, measure and attack one cell. Throws on any failure.
inline CellResult run_cell(const ExperimentConfig& cfg, const DatasetSpec& ds, const DatasetSplits& splits,
                           models::Variant variant) {
    CellResult r;
    r.dataset = ds.name;
    r.model = std::string(models::to_string(variant));
    r.seeds = CellSeeds::derive(cfg.seed, r.dataset, r.model);

    models::ModelSpec spec = cfg.model;
    const auto geometry = models::ModelSpec::for_dataset(splits.train);
    spec.channels = geometry.channels;
    spec.height = geometry.height;
    spec.width = geometry.width;
    spec.classes = geometry.classes;
    auto model = models::make_model(variant, spec, r.seeds.init);

    TrainConfig tc = cfg.train;
    tc.seed = r.seeds.train;
    r.train = train_model(*model, splits.train, splits.val, tc);

    const auto test_idx = metrics::subsample_indices(splits.test.size(), cfg.attack_samples == 0 ? splits.test.size() : cfg.attack_samples,
                                                     derive_seed(cfg.seed, {"attacks", ds.name, "subset"}));
    const Dataset test = splits.test.subset(test_idx);
    r.test_n = test.size();
    r.test_clean = clean_accuracy(*model, test);

    metrics::MetricsConfig mc = cfg.metrics;
    mc.seed = r.seeds.metrics;
    const std::size_t cap = cfg.metric_train_samples == 0 ? splits.train.size() : cfg.metric_train_samples;
    const Dataset metric_train =
        splits.train.subset(metrics::subsample_indices(splits.train.size(), cap, derive_seed(cfg.seed, {"metrics", ds.name, "subset"})));
    r.measurement = metrics::measure_all(tap_extractor(*model, r.seeds.taps), metric_train, test, mc, r.model, r.dataset);

    if (!cfg.attacks.empty()) {
        RobustnessOptions ro;
        ro.seed = r.seeds.attacks;
        ro.chunk = cfg.attack_chunk;
        r.robustness = evaluate_robustness(*model, model->params(), test, cfg.attacks, ro, r.model, r.dataset);
    }
    if (cfg.checkpoints) {
        const auto dir = cfg.out_dir / "models";
        std::filesystem::create_directories(dir);
        models::save_checkpoint(*model, dir / (cell_stem(r.dataset, r.model) + ".ckpt"));
    }
    r.ok = true;
    return r;
}

/// The published grid layout: each measurement against each robustness target, target-major.
/// Without robustness records only the clean-accuracy row is produced.
inline void correlate_cells(ExperimentResult& res) {
    res.correlations.clear();
    res.skipped.clear();
    std::vector<const CellResult*> ok;
    for (const auto& c : res.cells)
        if (c.ok) ok.push_back(&c);
    const bool attacked = !ok.empty() && ok.front()->robustness.has_value();
    const std::size_t targets = attacked ? 4 : 1;
    for (std::size_t t = 0; t < targets; ++t) {
        std::vector<double> ys;
        for (const auto* c : ok) {
            if (t == 0) ys.push_back(attacked ? c->robustness->clean : c->test_clean);
            else if (t == 1) ys.push_back(c->robustness->mean_adv);
            else if (t == 2) ys.push_back(c->robustness->delta_abs);
            else ys.push_back(c->robustness->delta_rel);
        }
        for (std::size_t m = 0; m < 5; ++m) {
            std::vector<double> xs;
            for (const auto* c : ok) xs.push_back(c->measurement.value(m));
            const std::string mk = metrics::measurement_key(m), tk = robustness_targets()[t];
            try {
                res.correlations.push_back(pearson(xs, ys, mk, tk));
            } catch (const std::invalid_argument& e) {
                res.skipped.push_back({mk, tk, e.what()});
            }
        }
    }
}

struct RunOptions {
    /// Progress lines; called from worker threads under a lock.
    std::function<void(const std::string&)> progress;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
    std::filesystem::create_directories(cfg.out_dir / "cells");
    std::mutex log_mu;
    auto say = [&](const std::string& s) {
        if (!opt.progress) return;
        std::lock_guard lk(log_mu);
        opt.progress(s);
    };

    ExperimentResult res;
    for (const auto& a : cfg.attacks) res.attack_names.push_back(a.name);

    struct Job {
        std::size_t dataset;
        models::Variant variant;
    };
    std::vector<Job> jobs;
    std::vector<std::optional<DatasetSplits>> splits(cfg.datasets.size());
    std::vector<std::string> split_errors(cfg.datasets.size());
    for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
        try {
            splits[d] = load_splits(cfg.datasets[d]);
            say("dataset " + cfg.datasets[d].name + ": " + std::to_string(splits[d]->train.size()) + " train, " +
                std::to_string(splits[d]->val.size()) + " val, " + std::to_string(splits[d]->test.size()) + " test");
        } catch (const std::exception& e) {
            split_errors[d] = e.what();
            say("dataset " + cfg.datasets[d].name + " failed: " + e.what());
        }
        for (auto v : cfg.variants) jobs.push_back({d, v});
    }

    res.cells.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& ds = cfg.datasets[jobs[j].dataset];
            CellResult& out = res.cells[j];
            const std::string model = std::string(models::to_string(jobs[j].variant));
            try {
                if (!splits[jobs[j].dataset]) throw std::runtime_error("dataset unavailable: " + split_errors[jobs[j].dataset]);
                say("cell " + cell_stem(ds.name, model) + ": start");
                out = run_cell(cfg, ds, *splits[jobs[j].dataset], jobs[j].variant);
                say("cell " + cell_stem(ds.name, model) + ": done, best val " + std::to_string(out.train.best_val_acc));
            } catch (const std::exception& e) {
                out = CellResult{};
                out.dataset = ds.name;
                out.model = model;
                out.seeds = CellSeeds::derive(cfg.seed, ds.name, model);
                out.error = e.what();
                say("cell " + cell_stem(ds.name, model) + ": failed: " + e.what());
            }
            try {
                write_text_atomic(cfg.out_dir / "cells" / (cell_stem(out.dataset, out.model) + ".json"),
                                  to_json(out).dump(2) + "\n");
            } catch (const std::exception& e) {
                say("cell " + cell_stem(out.dataset, out.model) + ": could not persist: " + e.what());
            }
        }
    };
    const std::size_t n_workers = std::min(cfg.threads, std::max<std::size_t>(1, jobs.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    }

    correlate_cells(res);
    return res;
}

}  // namespace cdnb::harness
