#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage
// error, 3 experiment finished with failed cells. Human-readable summaries
// go to `out`; diagnostics and progress go to `err`; data goes to files.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdnb/harness.hpp"

namespace cdnb::cli {

namespace detail {

inline constexpr const char* config_schema =
    "Config file: `key = value` lines under [dataset] (or [dataset.NAME]), [models],\n"
    "[attacks] / [attack.NAME], [metrics] and [output]; a top-level `seed` and `threads`.\n"
    "Unknown sections or keys are rejected.";

inline constexpr const char* run_outputs =
    "Writes to the output directory:\n"
    "  measurements.csv  model,dataset,n,m1,m2,m3,m4,m5\n"
    "  robustness.csv    model,dataset,n,clean,acc_<attack>...,mean_adv,delta_abs,delta_rel\n"
    "  correlations.csv  measurement,target,n,r,p\n"
    "  tracking.csv      model,dataset,epoch,m1,clean_acc,pgd40_acc\n"
    "  experiment.json   config, seeds, epoch logs and per-cell detail\n"
    "  cells/*.json      one record per (dataset, model) cell\n"
    "  models/*.ckpt     selected checkpoint per cell\n"
    "Exit status 3 when some cells failed and the rest completed.";

struct Common {
    std::string config;
    std::string out;
    std::string dataset;
    std::optional<std::uint64_t> seed;
};

inline harness::ExperimentConfig load_experiment(const Common& c) {
    harness::Config raw;
    if (!c.config.empty()) raw = harness::load_config(c.config);
    harness::ExperimentConfig cfg = harness::experiment_from(raw);
    if (c.seed) {
        cfg.seed = *c.seed;
        for (auto& d : cfg.datasets) d.seed = *c.seed;
    }
    if (!c.out.empty()) cfg.out_dir = c.out;
    return cfg;
}

inline const DatasetSpec& pick_dataset(const harness::ExperimentConfig& cfg, const std::string& name) {
    if (name.empty()) return cfg.datasets.front();
    for (const auto& d : cfg.datasets)
        if (d.name == name) return d;
    throw std::runtime_error("dataset '" + name + "' is not defined in the config");
}

inline void add_common(CLI::App* app, Common& c, bool with_dataset = true) {
    app->add_option("--config", c.config, "Experiment config file (defaults apply when omitted)");
    app->add_option("--out", c.out, "Output directory");
    app->add_option("--seed", c.seed, "Master seed, overrides the config");
    if (with_dataset) app->add_option("--dataset", c.dataset, "Dataset section name (default: the first one)");
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    harness::write_text_atomic(p, text);
}

/// Splits one CSV file into header names and rows of fields.
inline std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_csv(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        return f;
    };
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(p.string() + " is empty");
    auto header = split(line);
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto row = split(line);
        if (row.size() != header.size()) {
            throw std::runtime_error(p.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    return {std::move(header), std::move(rows)};
}

inline std::size_t column(const std::vector<std::string>& header, const std::string& name, const std::filesystem::path& p) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::runtime_error(p.string() + ": missing column " + name);
}

inline double number(const std::string& s, const std::filesystem::path& p) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw std::runtime_error(p.string() + ": not a number: '" + s + "'");
}

inline std::unique_ptr<models::Model> model_from(const std::string& path) {
    if (path.empty()) throw std::runtime_error("--model needs a checkpoint path");
    return models::load_checkpoint(path);
}

}  // namespace detail

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Causal disentanglement benchmark: train, measure, attack and correlate", "cdnb"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit");
    app.set_help_all_flag("--help-all", "Help for every command");
    app.allow_windows_style_options(false);

    detail::Common gen_c, train_c, measure_c, attack_c, run_c;
    std::string train_model_name, measure_model, attack_model, attack_name, correlate_in, correlate_out;

    auto* gen = app.add_subcommand("gen-data", "Write a dataset as IDX files");
    detail::add_common(gen, gen_c);
    gen->footer(std::string("Writes train-images-idx3-ubyte, train-labels-idx1-ubyte (the train+val pool),\n"
                            "t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte. A [dataset] with\n"
                            "source = mnist_idx and dir = <out> reads them back.\n") + detail::config_schema);

    auto* train = app.add_subcommand("train", "Train one model variant and save its checkpoint");
    detail::add_common(train, train_c);
    train->add_option("--model", train_model_name, "Variant: cama, caam, causaladv or dice")->required();
    train->footer(std::string("Writes <dataset>__<model>.ckpt and <dataset>__<model>.train.json (epoch log).\n") +
                  detail::config_schema);

    auto* measure = app.add_subcommand("measure", "Compute M1..M5 for a checkpoint");
    detail::add_common(measure, measure_c);
    measure->add_option("--model", measure_model, "Checkpoint file")->required();
    measure->footer(std::string("Writes measurements.csv (model,dataset,n,m1,m2,m3,m4,m5) and measurements.json.\n") +
                    detail::config_schema);

    auto* attack = app.add_subcommand("attack", "Evaluate a checkpoint under the configured attacks");
    detail::add_common(attack, attack_c);
    attack->add_option("--model", attack_model, "Checkpoint file")->required();
    attack->add_option("--attack", attack_name, "Run only this configured attack");
    attack->footer(std::string("Writes robustness.csv (model,dataset,n,clean,acc_<attack>...,mean_adv,delta_abs,delta_rel)\n"
                               "and robustness.json.\n") + detail::config_schema);

    auto* correlate = app.add_subcommand("correlate", "Correlate measurements.csv with robustness.csv");
    correlate->add_option("--in", correlate_in, "Directory holding measurements.csv and robustness.csv")->required();
    correlate->add_option("--out", correlate_out, "Output directory (default: the input directory)");
    correlate->footer("Rows are joined on (model, dataset); at least three are needed.\n"
                      "Writes correlations.csv (measurement,target,n,r,p).");

    auto* run = app.add_subcommand("run", "Run the whole pipeline from a config");
    detail::add_common(run, run_c, false);
    run->footer(std::string(detail::run_outputs) + "\n" + detail::config_schema);

    auto* paper = app.add_subcommand("paper-check", "Recompute the published correlation grid from the embedded tables");
    paper->footer("Prints the grid; exits 0 when every r is within 0.03 and every significance call matches.");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (paper->parsed()) {
            const auto rep = harness::paper_table_check();
            out << harness::format_paper_check(rep);
            return rep.all_ok() ? 0 : 1;
        }

        if (run->parsed()) {
            const auto cfg = detail::load_experiment(run_c);
            harness::RunOptions ro;
            ro.progress = [&err](const std::string& s) { err << s << std::endl; };
            const auto res = harness::run_experiment(cfg, ro);
            harness::write_reports(cfg, res);
            out << harness::format_summary(res);
            if (res.failed() == res.cells.size()) return 1;
            return res.failed() > 0 ? 3 : 0;
        }

        if (gen->parsed()) {
            const auto cfg = detail::load_experiment(gen_c);
            const auto& ds = detail::pick_dataset(cfg, gen_c.dataset);
            const auto dir = gen_c.out.empty() ? std::filesystem::path(ds.name) : std::filesystem::path(gen_c.out);
            std::filesystem::create_directories(dir);
            const auto src = load_sources(ds);
            idx::write_mnist(src.pool, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
            idx::write_mnist(src.test, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
            out << "wrote " << src.pool.size() << " pool and " << src.test.size() << " test images of dataset " << ds.name
                << " to " << dir.string() << "\n";
            return 0;
        }

        if (train->parsed()) {
            const auto variant = models::parse_variant(train_model_name);
            auto cfg = detail::load_experiment(train_c);
            const auto& ds = detail::pick_dataset(cfg, train_c.dataset);
            const auto dir = train_c.out.empty() ? std::filesystem::path(".") : std::filesystem::path(train_c.out);
            std::filesystem::create_directories(dir);
            const auto splits = load_splits(ds);
            const std::string model_name(models::to_string(variant));
            const auto seeds = harness::CellSeeds::derive(cfg.seed, ds.name, model_name);
            models::ModelSpec spec = cfg.model;
            const auto g = models::ModelSpec::for_dataset(splits.train);
            spec.channels = g.channels;
            spec.height = g.height;
            spec.width = g.width;
            spec.classes = g.classes;
            auto model = models::make_model(variant, spec, seeds.init);
            auto tc = cfg.train;
            tc.seed = seeds.train;
            tc.on_epoch = [&err](std::size_t e, double acc) { err << "epoch " << e << " val " << acc << std::endl; };
            const auto res = harness::train_model(*model, splits.train, splits.val, tc);
            const auto stem = harness::cell_stem(ds.name, model_name);
            models::save_checkpoint(*model, dir / (stem + ".ckpt"));
            detail::write_text(dir / (stem + ".train.json"), harness::to_json(res).dump(2) + "\n");
            out << stem << ": best epoch " << res.best_epoch << ", val acc " << harness::detail::pct(res.best_val_acc)
                << "%\n";
            return 0;
        }

        if (measure->parsed()) {
            auto cfg = detail::load_experiment(measure_c);
            const auto& ds = detail::pick_dataset(cfg, measure_c.dataset);
            auto model = detail::model_from(measure_model);
            const auto splits = load_splits(ds);
            const auto seeds = harness::CellSeeds::derive(cfg.seed, ds.name, std::string(model->name()));
            metrics::MetricsConfig mc = cfg.metrics;
            mc.seed = seeds.metrics;
            const std::size_t cap = cfg.metric_train_samples == 0 ? splits.train.size() : cfg.metric_train_samples;
            const Dataset mtrain = splits.train.subset(
                metrics::subsample_indices(splits.train.size(), cap, derive_seed(cfg.seed, {"metrics", ds.name, "subset"})));
            const auto rec =
                metrics::measure_all(harness::tap_extractor(*model, seeds.taps), mtrain, splits.test, mc, std::string(model->name()), ds.name);
            const auto dir = measure_c.out.empty() ? std::filesystem::path(".") : std::filesystem::path(measure_c.out);
            detail::write_text(dir / "measurements.csv", metrics::measurement_csv_header() + "\n" + metrics::to_csv_row(rec) + "\n");
            detail::write_text(dir / "measurements.json", metrics::to_json_detailed(rec).dump(2) + "\n");
            for (std::size_t m = 0; m < 5; ++m)
                out << metrics::measurement_label(m) << " = " << harness::detail::fixed3(rec.value(m)) << "\n";
            return 0;
        }

        if (attack->parsed()) {
            auto cfg = detail::load_experiment(attack_c);
            const auto& ds = detail::pick_dataset(cfg, attack_c.dataset);
            std::vector<attacks::AttackConfig> chosen;
            for (const auto& a : cfg.attacks)
                if (attack_name.empty() || a.name == attack_name) chosen.push_back(a);
            if (chosen.empty()) {
                throw std::runtime_error(attack_name.empty() ? "no attacks configured"
                                                             : "attack '" + attack_name + "' is not configured");
            }
            auto model = detail::model_from(attack_model);
            const auto splits = load_splits(ds);
            const auto seeds = harness::CellSeeds::derive(cfg.seed, ds.name, std::string(model->name()));
            const auto idx = metrics::subsample_indices(
                splits.test.size(), cfg.attack_samples == 0 ? splits.test.size() : cfg.attack_samples,
                derive_seed(cfg.seed, {"attacks", ds.name, "subset"}));
            harness::RobustnessOptions ro;
            ro.seed = seeds.attacks;
            ro.chunk = cfg.attack_chunk;
            const auto rec = harness::evaluate_robustness(*model, model->params(), splits.test.subset(idx), chosen, ro,
                                                          std::string(model->name()), ds.name);
            std::vector<std::string> names;
            for (const auto& a : chosen) names.push_back(a.name);
            const auto dir = attack_c.out.empty() ? std::filesystem::path(".") : std::filesystem::path(attack_c.out);
            detail::write_text(dir / "robustness.csv", harness::robustness_csv_header(names) + "\n" + harness::to_csv_row(rec) + "\n");
            detail::write_text(dir / "robustness.json", harness::to_json(rec).dump(2) + "\n");
            out << "clean " << harness::detail::pct(rec.clean) << "%";
            for (const auto& a : rec.attacks) out << ", " << a.attack << " " << harness::detail::pct(a.accuracy) << "%";
            out << "\nmean adversarial " << harness::detail::pct(rec.mean_adv) << "%, relative drop "
                << harness::detail::pct(rec.delta_rel) << "%\n";
            return 0;
        }

        if (correlate->parsed()) {
            const std::filesystem::path in(correlate_in);
            const std::filesystem::path dst = correlate_out.empty() ? in : std::filesystem::path(correlate_out);
            const auto mpath = in / "measurements.csv", rpath = in / "robustness.csv";
            const auto [mh, mrows] = detail::read_csv(mpath);
            const auto [rh, rrows] = detail::read_csv(rpath);
            const std::size_t mm = detail::column(mh, "model", mpath), md = detail::column(mh, "dataset", mpath);
            const std::size_t rm = detail::column(rh, "model", rpath), rd = detail::column(rh, "dataset", rpath);
            harness::ExperimentResult res;
            for (const auto& row : mrows) {
                auto hit = std::find_if(rrows.begin(), rrows.end(),
                                        [&](const auto& r) { return r[rm] == row[mm] && r[rd] == row[md]; });
                if (hit == rrows.end()) {
                    err << "no robustness row for " << row[mm] << "/" << row[md] << ", skipped\n";
                    continue;
                }
                harness::CellResult c;
                c.ok = true;
                c.model = row[mm];
                c.dataset = row[md];
                c.measurement.model = c.model;
                c.measurement.dataset = c.dataset;
                c.measurement.m1 = detail::number(row[detail::column(mh, "m1", mpath)], mpath);
                c.measurement.m2 = detail::number(row[detail::column(mh, "m2", mpath)], mpath);
                c.measurement.m3 = detail::number(row[detail::column(mh, "m3", mpath)], mpath);
                c.measurement.m4 = detail::number(row[detail::column(mh, "m4", mpath)], mpath);
                c.measurement.m5 = detail::number(row[detail::column(mh, "m5", mpath)], mpath);
                harness::RobustnessRecord r;
                r.clean = detail::number((*hit)[detail::column(rh, "clean", rpath)], rpath);
                r.mean_adv = detail::number((*hit)[detail::column(rh, "mean_adv", rpath)], rpath);
                r.delta_abs = detail::number((*hit)[detail::column(rh, "delta_abs", rpath)], rpath);
                r.delta_rel = detail::number((*hit)[detail::column(rh, "delta_rel", rpath)], rpath);
                c.test_clean = r.clean;
                c.robustness = r;
                res.cells.push_back(std::move(c));
            }
            if (res.cells.size() < 3) {
                throw std::runtime_error("need at least 3 joined (model, dataset) rows, got " + std::to_string(res.cells.size()));
            }
            harness::correlate_cells(res);
            detail::write_text(dst / "correlations.csv", harness::correlations_csv(res.correlations));
            for (const auto& s : res.skipped) err << "skipped " << s.measurement << " vs " << s.target << ": " << s.reason << "\n";
            out << harness::format_summary(res);
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

inline int dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, out, err);
}

}  // namespace cdnb::cli
