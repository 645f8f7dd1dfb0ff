#ifndef DRIVEGEN_SERIALIZE_HPP
#define DRIVEGEN_SERIALIZE_HPP

// Little-endian binary IO helpers. All on-disk integer/float fields go
// through these so the formats stay byte-identical across platforms.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "common.hpp"

namespace dg {

namespace detail {

template <typename T>
inline T byteswap_if_be(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        T out;
        auto* src = reinterpret_cast<const uint8_t*>(&v);
        auto* dst = reinterpret_cast<uint8_t*>(&out);
        for (size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
        return out;
    }
}

}  // namespace detail

template <typename T>
inline void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
        using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
        U bits;
        std::memcpy(&bits, &v, sizeof(T));
        bits = detail::byteswap_if_be(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    } else {
        T le = detail::byteswap_if_be(v);
        os.write(reinterpret_cast<const char*>(&le), sizeof(le));
    }
}

template <typename T>
inline T read_le(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
        using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
        U bits;
        is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
        require(bool(is), ErrorKind::Io, "unexpected end of stream");
        bits = detail::byteswap_if_be(bits);
        T v;
        std::memcpy(&v, &bits, sizeof(T));
        return v;
    } else {
        T v;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        require(bool(is), ErrorKind::Io, "unexpected end of stream");
        return detail::byteswap_if_be(v);
    }
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<uint64_t>(os, s.size());
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_string(std::istream& is) {
    uint64_t n = read_le<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), std::streamsize(n));
    require(bool(is), ErrorKind::Io, "unexpected end of stream");
    return s;
}

template <typename T>
inline void write_array_le(std::ostream& os, const T* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(T)));
    } else {
        for (size_t i = 0; i < n; ++i) write_le(os, data[i]);
    }
}

template <typename T>
inline void read_array_le(std::istream& is, T* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(T)));
        require(bool(is), ErrorKind::Io, "unexpected end of stream");
    } else {
        for (size_t i = 0; i < n; ++i) data[i] = read_le<T>(is);
    }
}

}  // namespace dg

#endif
