// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

namespace splatkern::io {

/// Thrown by the readers below when the stream ends early.
class TruncatedStream : public Error {
  public:
    using Error::Error;
};

namespace detail {

template <typename U> U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U out{};
        auto *src = reinterpret_cast<const unsigned char *>(&v);
        auto *dst = reinterpret_cast<unsigned char *>(&out);
        for (size_t i = 0; i < sizeof(U); ++i) {
            dst[i] = src[sizeof(U) - 1 - i];
        }
        return out;
    } else {
        return v;
    }
}

} // namespace detail

inline void write_u32(std::ostream &os, std::uint32_t v) {
    v = detail::to_little(v);
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

inline void write_f32(std::ostream &os, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    write_u32(os, bits);
}

inline void write_f64(std::ostream &os, double v) {
    std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(v));
    os.write(reinterpret_cast<const char *>(&bits), sizeof bits);
}

inline std::uint32_t read_u32(std::istream &is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v)) {
        throw TruncatedStream("unexpected end of stream");
    }
    return detail::to_little(v);
}

inline float read_f32(std::istream &is) { return std::bit_cast<float>(read_u32(is)); }

inline double read_f64(std::istream &is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v)) {
        throw TruncatedStream("unexpected end of stream");
    }
    return std::bit_cast<double>(detail::to_little(v));
}

} // namespace splatkern::io
