#pragma once

// Binary checkpoint container, format "ckpt v1":
//   bytes 0..7   ASCII "ckpt v1\n"
//   u64          tensor count
//   per tensor:  u32 name length, name bytes, u32 rank,
//                u64 dims[rank], f64 values[prod(dims)]
// All integers and floats little-endian. Values round-trip bit-exactly.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "betaspec/nn.hpp"

namespace betaspec {

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated stream");
    return v;
}

}  // namespace detail

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

inline void save_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write("ckpt v1\n", 8);
    detail::write_pod<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        std::size_t expect = 1;
        for (auto d : t.shape) {
            detail::write_pod<std::uint64_t>(out, d);
            expect *= d;
        }
        if (expect != t.values.size())
            throw std::invalid_argument("checkpoint: shape/value mismatch for " + t.name);
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline std::vector<NamedTensor> load_checkpoint(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "ckpt v1\n", 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const auto count = detail::read_pod<std::uint64_t>(in);
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        NamedTensor t;
        const auto name_len = detail::read_pod<std::uint32_t>(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const auto rank = detail::read_pod<std::uint32_t>(in);
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::read_pod<std::uint64_t>(in);
            t.shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        t.values.resize(n);
        in.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor payload");
        tensors.push_back(std::move(t));
    }
    return tensors;
}

// Atomic file write: temp file in the same directory, then rename.
inline void save_checkpoint_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
        save_checkpoint(out, tensors);
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<NamedTensor> load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    return load_checkpoint(in);
}

inline std::vector<NamedTensor> snapshot(const ParameterSet& params) {
    std::vector<NamedTensor> tensors;
    tensors.reserve(params.size());
    for (const auto& [name, var] : params.items())
        tensors.push_back({name, var->shape, var->values});
    return tensors;
}

// Restore values into an existing ParameterSet; shapes must match.
inline void restore(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
    for (const auto& t : tensors) {
        if (!params.contains(t.name)) continue;
        auto var = params.get(t.name);
        if (var->shape != t.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
        var->values = t.values;
    }
}

}  // namespace betaspec
