#pragma once

#include "cardioem/common.hpp"

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <type_traits>
#include <vector>

// Little-endian binary helpers for checkpoints. The host is assumed little-endian (checked at
// compile time) so values are written as raw bytes.
namespace cardioem::bin {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

template <class T>
void put(std::ostream& os, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw InputError("checkpoint truncated");
    return v;
}

template <class T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
    put<std::uint64_t>(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
std::vector<T> get_vec(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    if (n > (std::uint64_t{1} << 34)) throw InputError("checkpoint array length implausible");
    std::vector<T> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw InputError("checkpoint truncated");
    return v;
}

inline void put_eigen(std::ostream& os, const Vector& v) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline Vector get_eigen(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    if (n > (std::uint64_t{1} << 34)) throw InputError("checkpoint array length implausible");
    Vector v(static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw InputError("checkpoint truncated");
    return v;
}

}  // namespace cardioem::bin
