#pragma once

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cdnb/data/idx.hpp"
#include "cdnb/data/synthetic.hpp"

namespace cdnb {

enum class DataSource { synthetic, mnist_idx };

inline std::string to_string(DataSource s) { return s == DataSource::synthetic ? "synthetic" : "mnist_idx"; }

inline DataSource parse_data_source(const std::string& s) {
    if (s == "synthetic") return DataSource::synthetic;
    if (s == "mnist_idx" || s == "mnist") return DataSource::mnist_idx;
    throw std::invalid_argument("unknown dataset source '" + s + "' (expected synthetic or mnist_idx)");
}

/// Where a dataset comes from and how it is split. Train and validation are
/// carved 4:1 out of one shuffled training pool; the test split is separate.
struct DatasetSpec {
    std::string name = "synthetic";
    DataSource source = DataSource::synthetic;
    std::size_t image_size = 16;
    std::size_t classes = 10;
    std::size_t train = 3200;
    std::size_t val = 800;
    std::size_t test = 500;
    std::uint64_t seed = 1;
    double rho = 0.9;           // synthetic only
    std::filesystem::path dir;  // mnist_idx only: holds the four standard IDX files

    void validate() const {
        if (train == 0 || val == 0 || test == 0) throw std::invalid_argument("dataset " + name + ": split sizes must be positive");
        if (train != 4 * val) {
            throw std::invalid_argument("dataset " + name + ": train:val must be 4:1, got " + std::to_string(train) +
                                        ":" + std::to_string(val));
        }
        if (classes < 2) throw std::invalid_argument("dataset " + name + ": need at least 2 classes");
    }
};

/// Shuffles `pool` with `seed` and returns the first train+val indices split 4:1.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& pool, std::size_t train, std::size_t val,
                                                   std::uint64_t seed) {
    if (train + val > pool.size()) {
        throw std::invalid_argument("dataset " + pool.name + " has " + std::to_string(pool.size()) +
                                    " training samples, " + std::to_string(train + val) + " requested");
    }
    auto order = iota_indices(pool.size());
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::span<const std::size_t> all(order);
    return {pool.subset(all.subspan(0, train)), pool.subset(all.subspan(train, val))};
}

/// The training pool (train + val, before the split) and the test split.
struct DatasetSources {
    Dataset pool;
    Dataset test;
};

inline DatasetSources load_sources(const DatasetSpec& spec) {
    spec.validate();
    DatasetSources s;
    if (spec.source == DataSource::synthetic) {
        SyntheticSpec g;
        g.classes = spec.classes;
        g.size = spec.image_size;
        g.rho = spec.rho;
        g.samples = spec.train + spec.val;
        g.seed = derive_seed(spec.seed, {"data", spec.name, "train"});
        s.pool = generate_synthetic(g, spec.name);
        g.samples = spec.test;
        g.seed = derive_seed(spec.seed, {"data", spec.name, "test"});
        s.test = generate_synthetic(g, spec.name);
    } else {
        s.pool = idx::load_mnist(spec.dir / "train-images-idx3-ubyte", spec.dir / "train-labels-idx1-ubyte",
                                 spec.classes, spec.name);
        const Dataset test = idx::load_mnist(spec.dir / "t10k-images-idx3-ubyte", spec.dir / "t10k-labels-idx1-ubyte",
                                             spec.classes, spec.name);
        auto order = iota_indices(test.size());
        Rng rng(derive_seed(spec.seed, {"data", spec.name, "test"}));
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(std::min(spec.test, order.size()));
        std::sort(order.begin(), order.end());
        s.test = test.subset(order);
    }
    return s;
}

inline DatasetSplits load_splits(const DatasetSpec& spec) {
    const DatasetSources src = load_sources(spec);
    DatasetSplits s;
    s.test = src.test;
    std::tie(s.train, s.val) = split_train_val(src.pool, spec.train, spec.val, derive_seed(spec.seed, {"data", spec.name, "split"}));
    s.train.validate();
    s.val.validate();
    s.test.validate();
    return s;
}

}  // namespace cdnb
