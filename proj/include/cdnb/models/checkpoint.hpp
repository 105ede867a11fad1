#pragma once

// Flat binary checkpoints. Layout, all integers little-endian:
//   "CDNB" | u16 version | u8 variant
//   repeated: u32 name length | name | u32 rank | u32 dims[rank] | f64 data
// Model geometry and hyperparameters travel as rank-1 records named meta.*.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/models/registry.hpp"

namespace cdnb::models {

inline constexpr char checkpoint_magic[4] = {'C', 'D', 'N', 'B'};
inline constexpr std::uint16_t checkpoint_version = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
public:
    Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    template <class T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > bytes_.size()) fail(std::string("truncated ") + what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        T v;
        std::memcpy(&v, b, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) fail(std::string("truncated ") + what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& why) const {
        throw std::runtime_error("checkpoint " + path_ + ": " + why + " at byte offset " + std::to_string(pos_));
    }

private:
    std::string bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

struct Field {
    const char* key;
    double ModelSpec::* real = nullptr;
    std::size_t ModelSpec::* count = nullptr;
};

inline const std::vector<Field>& spec_fields() {
    static const std::vector<Field> f{
        {"channels", nullptr, &ModelSpec::channels},
        {"height", nullptr, &ModelSpec::height},
        {"width", nullptr, &ModelSpec::width},
        {"classes", nullptr, &ModelSpec::classes},
        {"caam_splits", nullptr, &ModelSpec::caam_splits},
        {"caam_refresh", nullptr, &ModelSpec::caam_refresh},
        {"caam_kmeans_iters", nullptr, &ModelSpec::caam_kmeans_iters},
        {"causal_dim", nullptr, &ModelSpec::causal_dim},
        {"causaladv_sigma", &ModelSpec::causaladv_sigma, nullptr},
        {"causaladv_alpha", &ModelSpec::causaladv_alpha, nullptr},
        {"causaladv_beta", &ModelSpec::causaladv_beta, nullptr},
        {"dice_q", &ModelSpec::dice_q, nullptr},
        {"dice_buffer", nullptr, &ModelSpec::dice_buffer},
        {"dice_ref_epochs", nullptr, &ModelSpec::dice_ref_epochs},
        {"dice_push", nullptr, &ModelSpec::dice_push},
        {"cama_latent", nullptr, &ModelSpec::cama_latent},
        {"cama_label", nullptr, &ModelSpec::cama_label},
        {"cama_m", nullptr, &ModelSpec::cama_m},
        {"cama_lambda", &ModelSpec::cama_lambda, nullptr},
        {"cama_shift", &ModelSpec::cama_shift, nullptr},
    };
    return f;
}

inline void put_record(std::ostream& os, const std::string& name, const Shape& shape, std::span<const double> data) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : data) put_le<double>(os, v);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model& m) {
    std::ostringstream os(std::ios::binary);
    os.write(checkpoint_magic, 4);
    detail::put_le<std::uint16_t>(os, checkpoint_version);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(m.variant()));
    const ModelSpec& s = m.spec();
    for (const auto& f : detail::spec_fields()) {
        const double v = f.real ? s.*(f.real) : static_cast<double>(s.*(f.count));
        detail::put_record(os, std::string("meta.") + f.key, {1}, std::span<const double>(&v, 1));
    }
    for (const auto& e : m.params().entries()) detail::put_record(os, e.name, e.tensor.shape(), e.tensor.data());
    return os.str();
}

inline std::unique_ptr<Model> deserialize_checkpoint(std::string bytes, const std::string& origin = "<memory>") {
    detail::Reader r(std::move(bytes), origin);
    const std::string magic = r.take(4, "header");
    if (std::memcmp(magic.data(), checkpoint_magic, 4) != 0) r.fail("bad magic (expected \"CDNB\")");
    const auto version = r.get<std::uint16_t>("header");
    if (version != checkpoint_version) {
        r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(checkpoint_version) + ")");
    }
    const auto vid = r.get<std::uint8_t>("header");
    if (vid < 1 || vid > 4) r.fail("unknown variant id " + std::to_string(vid));

    std::map<std::string, std::pair<Shape, std::vector<double>>> records;
    std::vector<std::string> order;
    while (!r.done()) {
        const auto len = r.get<std::uint32_t>("record name length");
        std::string name = r.take(len, "record name");
        const auto rank = r.get<std::uint32_t>("record rank");
        if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for " + name);
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>("record dims"));
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = r.get<double>("record data");
        order.push_back(name);
        if (!records.emplace(name, std::make_pair(std::move(shape), std::move(data))).second) {
            r.fail("duplicate record " + name);
        }
    }

    ModelSpec spec;
    for (const auto& f : detail::spec_fields()) {
        auto it = records.find(std::string("meta.") + f.key);
        if (it == records.end()) r.fail(std::string("missing meta.") + f.key);
        const double v = it->second.second.at(0);
        if (f.real) spec.*(f.real) = v;
        else spec.*(f.count) = static_cast<std::size_t>(v);
        records.erase(it);
    }
    auto model = make_model(static_cast<Variant>(vid), spec, 0);
    for (const auto& e : model->params().entries()) {
        auto it = records.find(e.name);
        if (it == records.end()) r.fail("missing parameter " + e.name);
        if (it->second.first != e.tensor.shape()) {
            r.fail("shape mismatch for " + e.name + ": stored " + shape_str(it->second.first) + ", model " +
                   shape_str(e.tensor.shape()));
        }
        Tensor t = e.tensor;
        std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_data().begin());
        records.erase(it);
    }
    if (!records.empty()) r.fail("unexpected record " + records.begin()->first);
    model->on_restored();
    return model;
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(m);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace cdnb::models
