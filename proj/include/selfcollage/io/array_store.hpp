#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "selfcollage/core/error.hpp"

namespace selfcollage {

// Flat named-array container used for backbone weights, cluster models and
// training checkpoints.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "SCARRAY1"
//   count   u64
//   entry*  u32 name_len | name bytes | u32 ndim | u64 dims[ndim] | f32 data[prod(dims)]
struct ArrayF32 {
    std::vector<std::int64_t> shape;
    std::vector<float> v;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

using ArrayStore = std::vector<std::pair<std::string, ArrayF32>>;

inline const ArrayF32* find_array(const ArrayStore& store, const std::string& name) {
    for (const auto& [k, a] : store)
        if (k == name) return &a;
    return nullptr;
}

inline const ArrayF32& require_array(const ArrayStore& store, const std::string& name,
                                     const std::string& path) {
    const ArrayF32* a = find_array(store, name);
    if (!a) throw IoError("array store " + path + ": missing entry '" + name + "'");
    return *a;
}

namespace detail {
template <typename T>
void write_le(std::ofstream& f, T v) {
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    f.write(buf, sizeof(T));
}
template <typename T>
T read_le(std::ifstream& f) {
    unsigned char buf[sizeof(T)];
    f.read(reinterpret_cast<char*>(buf), sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}
}  // namespace detail

inline void save_arrays(const std::string& path, const ArrayStore& store) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_arrays: cannot open " + path);
    f.write("SCARRAY1", 8);
    detail::write_le<std::uint64_t>(f, store.size());
    for (const auto& [name, arr] : store) {
        if (arr.numel() != static_cast<std::int64_t>(arr.v.size()))
            throw InvalidInput("save_arrays: shape/data mismatch for '" + name + "'");
        detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(arr.shape.size()));
        for (auto d : arr.shape) detail::write_le<std::uint64_t>(f, static_cast<std::uint64_t>(d));
        static_assert(sizeof(float) == 4);
        // assumes little-endian float layout (all supported targets)
        f.write(reinterpret_cast<const char*>(arr.v.data()),
                static_cast<std::streamsize>(arr.v.size() * sizeof(float)));
    }
    if (!f) throw IoError("save_arrays: write failed for " + path);
}

inline ArrayStore load_arrays(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_arrays: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "SCARRAY1")
        throw IoError("load_arrays: bad magic in " + path);
    const auto count = detail::read_le<std::uint64_t>(f);
    ArrayStore store;
    store.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_le<std::uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto ndim = detail::read_le<std::uint32_t>(f);
        ArrayF32 arr;
        arr.shape.resize(ndim);
        for (auto& d : arr.shape) d = static_cast<std::int64_t>(detail::read_le<std::uint64_t>(f));
        const auto n = arr.numel();
        if (!f || n < 0) throw IoError("load_arrays: corrupt entry in " + path);
        arr.v.resize(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(arr.v.data()),
               static_cast<std::streamsize>(arr.v.size() * sizeof(float)));
        if (!f) throw IoError("load_arrays: truncated file " + path);
        store.emplace_back(std::move(name), std::move(arr));
    }
    return store;
}

}  // namespace selfcollage
