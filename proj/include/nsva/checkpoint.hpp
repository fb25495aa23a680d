#pragma once

// Named-array checkpoint files.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "NSVATNSR"
//   version u32      currently 1
//   count   u64      number of named arrays
//   per array:
//     name_len u32, name bytes, rank u32, extents u64[rank],
//     data     f64[product(extents)] raw little-endian
//
// Round-trips are bit-exact: doubles are written and read as raw IEEE-754
// bytes, never formatted.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsva/tensor.hpp"

namespace nsva {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'N', 'S', 'V', 'A', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

inline void save_arrays(const std::string& path, const NamedArrays& arrays) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_arrays: cannot open " + path);
    f.write(kCheckpointMagic, 8);
    std::uint32_t ver = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    std::uint64_t count = arrays.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, t] : arrays) {
        std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        f.write(name.data(), name_len);
        std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
        f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
        for (std::size_t e : t.shape()) {
            std::uint64_t ext = e;
            f.write(reinterpret_cast<const char*>(&ext), sizeof(ext));
        }
        f.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("save_arrays: write failed for " + path);
}

inline NamedArrays load_arrays(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_arrays: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("load_arrays: " + path + " is not a checkpoint file");
    }
    std::uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kCheckpointVersion) {
        throw std::runtime_error("load_arrays: unsupported version " + std::to_string(ver));
    }
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    NamedArrays arrays;
    arrays.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        std::uint32_t rank = 0;
        f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
        Shape shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint64_t ext = 0;
            f.read(reinterpret_cast<char*>(&ext), sizeof(ext));
            shape[r] = static_cast<std::size_t>(ext);
        }
        std::vector<double> data(shape_numel(shape));
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!f) throw std::runtime_error("load_arrays: truncated file " + path);
        arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return arrays;
}

}  // namespace nsva
