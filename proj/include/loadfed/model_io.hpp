#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "loadfed/nn.hpp"

namespace loadfed {

// Binary model layout, all little-endian:
//   u32 number of widths, u32 width[...], f64 parameter[parameter_count(spec)]

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("model file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace detail

inline void write_model(std::ostream& out, const ModelParams& params) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.spec.widths.size()));
    for (std::size_t w : params.spec.widths) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    for (double v : params.values) detail::write_le<double>(out, v);
}

inline ModelParams read_model(std::istream& in) {
    const auto count = detail::read_le<std::uint32_t>(in);
    if (count < 2 || count > 64) throw std::runtime_error("model file: implausible layer count");
    LayerSpec spec;
    for (std::uint32_t i = 0; i < count; ++i) spec.widths.push_back(detail::read_le<std::uint32_t>(in));
    spec.validate();
    ModelParams p = zero_params(spec);
    for (double& v : p.values) v = detail::read_le<double>(in);
    return p;
}

inline void save_model(const std::filesystem::path& path, const ModelParams& params, std::uint64_t seed,
                       std::size_t round) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        write_model(out, params);
    }
    nlohmann::json sidecar = {{"spec", params.spec.widths}, {"seed", seed}, {"round", round}};
    std::ofstream side(std::filesystem::path(path) += ".json");
    side << sidecar.dump(2) << '\n';
}

inline ModelParams load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return read_model(in);
}

}  // namespace loadfed
