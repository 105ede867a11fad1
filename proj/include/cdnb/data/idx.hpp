#pragma once

// IDX files as used by MNIST: a big-endian u32 magic (0x00000803 for u8
// images, 0x00000801 for u8 labels), big-endian u32 dims, then raw bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/data/dataset.hpp"

namespace cdnb::idx {

inline constexpr std::uint32_t image_magic = 0x00000803;
inline constexpr std::uint32_t label_magic = 0x00000801;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Array {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> bytes;
};

namespace detail {

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << v;
    return os.str();
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open IDX file " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::filesystem::path& path,
                          const char* what) {
    if (off + 4 > b.size()) {
        throw FormatError("IDX file " + path.string() + " truncated at byte offset " + std::to_string(b.size()) +
                          " while reading " + what + " (needed bytes " + std::to_string(off) + ".." +
                          std::to_string(off + 3) + ")");
    }
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

/// Parses an IDX array whose magic must equal `expected_magic`.
inline Array parse(const std::vector<std::uint8_t>& b, std::uint32_t expected_magic,
                   const std::filesystem::path& path = "<memory>") {
    const std::uint32_t magic = detail::be32(b, 0, path, "magic");
    if (magic != expected_magic) {
        throw FormatError("IDX file " + path.string() + ": bad magic, found " + detail::hex32(magic) + ", expected " +
                          detail::hex32(expected_magic));
    }
    const std::size_t rank = magic & 0xFF;
    Array a;
    std::size_t count = 1;
    for (std::size_t k = 0; k < rank; ++k) {
        a.dims.push_back(detail::be32(b, 4 + 4 * k, path, "dimensions"));
        count *= a.dims.back();
    }
    const std::size_t header = 4 + 4 * rank;
    if (b.size() < header + count) {
        throw FormatError("IDX file " + path.string() + " truncated at byte offset " + std::to_string(b.size()) +
                          ": header promises " + std::to_string(count) + " data bytes ending at offset " +
                          std::to_string(header + count));
    }
    if (b.size() > header + count) {
        throw FormatError("IDX file " + path.string() + " has " + std::to_string(b.size() - header - count) +
                          " trailing bytes after offset " + std::to_string(header + count));
    }
    a.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(header), b.end());
    return a;
}

inline std::vector<std::uint8_t> encode(std::uint32_t magic, const Array& a) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 * a.dims.size() + a.bytes.size());
    detail::put32(out, magic);
    for (auto d : a.dims) detail::put32(out, d);
    out.insert(out.end(), a.bytes.begin(), a.bytes.end());
    return out;
}

/// Pixel v in [0, 1] stored as round(255 v).
inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

/// Dataset from an image file ([N, H, W]) and a label file ([N]).
inline Dataset from_arrays(const Array& images, const Array& labels, std::size_t classes, std::string name) {
    if (images.dims.size() != 3) throw FormatError("IDX images must have 3 dimensions");
    if (labels.dims.size() != 1) throw FormatError("IDX labels must have 1 dimension");
    if (images.dims[0] != labels.dims[0]) {
        throw FormatError("IDX image/label count mismatch: " + std::to_string(images.dims[0]) + " images, " +
                          std::to_string(labels.dims[0]) + " labels");
    }
    Dataset d;
    d.name = std::move(name);
    d.channels = 1;
    d.height = images.dims[1];
    d.width = images.dims[2];
    d.classes = classes;
    d.pixels.reserve(images.bytes.size());
    for (auto b : images.bytes) d.pixels.push_back(from_byte(b));
    for (auto b : labels.bytes) {
        if (b >= classes) throw FormatError("IDX label " + std::to_string(b) + " outside " + std::to_string(classes) + " classes");
        d.labels.push_back(b);
    }
    return d;
}

inline Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                          std::size_t classes = 10, std::string name = "mnist") {
    return from_arrays(parse(detail::read_file(images), image_magic, images),
                       parse(detail::read_file(labels), label_magic, labels), classes, std::move(name));
}

inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_dataset(const Dataset& d) {
    if (d.channels != 1) throw std::invalid_argument("IDX export supports single-channel datasets only");
    Array img{{static_cast<std::uint32_t>(d.size()), static_cast<std::uint32_t>(d.height),
               static_cast<std::uint32_t>(d.width)},
              {}};
    img.bytes.reserve(d.pixels.size());
    for (double v : d.pixels) img.bytes.push_back(to_byte(v));
    Array lab{{static_cast<std::uint32_t>(d.size())}, {}};
    for (int l : d.labels) lab.bytes.push_back(static_cast<std::uint8_t>(l));
    return {encode(image_magic, img), encode(label_magic, lab)};
}

inline void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp);
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline void write_mnist(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto [img, lab] = encode_dataset(d);
    write_bytes_atomic(images, img);
    write_bytes_atomic(labels, lab);
}

}  // namespace cdnb::idx
